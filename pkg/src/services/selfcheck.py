"""Seeded oracle suites run by `self-check` and before `train --self-check`."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
from scipy import stats

from src.errors import ConfigurationError
from src.models.head import PARAM_NAMES, HeadParams
from src.schemas.config import HeadConfig
from src.services.diagnostics import spearman
from src.services.gradcheck import central_difference, relative_error
from src.services.head import forward_views, head_backward
from src.services.loss import LossBatch, loss_and_grad, loss_forward
from src.services.noise import NoiseBank, init_noise, noise_gradient, nonuniformity_loss
from src.services.similarity import cosine_sim, cosine_sim_grad_b
from src.services.weighting import WeightMask

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


@dataclass
class SelfCheckReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> List[str]:
        return [
            f"{'ok  ' if r.passed else 'FAIL'} {r.name}: worst {r.worst:.3e} < {r.tolerance:.0e} over {r.cases} cases"
            for r in self.results
        ]


def random_mask(rng: np.random.Generator, batch_size: int, q: int, m: int, keep: float = 0.7) -> WeightMask:
    return WeightMask((rng.random((batch_size, q + m)) < keep).astype(np.float64), num_in_batch=q)


def check_cosine_gradient(rng: np.random.Generator, d: int = 16) -> float:
    a = rng.standard_normal(d)
    b = rng.standard_normal(d)
    numeric = central_difference(lambda v: cosine_sim(a, v), b)
    return relative_error(cosine_sim_grad_b(a, b), numeric)


def check_noise_gradient(
    rng: np.random.Generator, d: int = 16, m: int = 8, batch_size: int = 4, tau_u: float = 0.05
) -> float:
    anchors = rng.standard_normal((batch_size, d))
    positives = anchors + 0.1 * rng.standard_normal((batch_size, d))
    bank = init_noise(rng, m, d, 1.0)
    numeric = central_difference(
        lambda v: nonuniformity_loss(anchors, positives, NoiseBank(v), tau_u), bank.vectors, eps=1e-4
    )
    return relative_error(noise_gradient(anchors, positives, bank, tau_u), numeric)


def check_loss_gradient(
    rng: np.random.Generator, d: int = 8, batch_size: int = 4, m: int = 4, tau: float = 0.05
) -> float:
    anchors = rng.standard_normal((batch_size, d))
    positives = anchors + 0.3 * rng.standard_normal((batch_size, d))
    bank = NoiseBank(rng.standard_normal((m, d)))
    mask = random_mask(rng, batch_size, 2 * (batch_size - 1), m)

    def loss_of(a: np.ndarray, p: np.ndarray) -> float:
        return loss_forward(LossBatch(a, p, mask, tau, bank))

    _, d_anchor, d_positive = loss_and_grad(LossBatch(anchors, positives, mask, tau, bank))
    numeric_anchor = central_difference(lambda v: loss_of(v, positives), anchors)
    numeric_positive = central_difference(lambda v: loss_of(anchors, v), positives)
    return max(relative_error(d_anchor, numeric_anchor), relative_error(d_positive, numeric_positive))


def check_head_gradient(
    rng: np.random.Generator,
    d: int = 8,
    d_hidden: int = 8,
    batch_size: int = 4,
    m: int = 4,
    tau: float = 0.05,
    dropout: float = 0.1,
) -> float:
    """
    Finite differences through dropout views, the debiased loss and the head,
    with dropout masks, noise bank and weights held fixed
    """
    head_cfg = HeadConfig(hidden_dim=d_hidden, out_dim=d, dropout=dropout, init_scale=0.3)
    params = HeadParams.init(rng, d, head_cfg)
    x = rng.standard_normal((batch_size, d))
    bank = NoiseBank(rng.standard_normal((m, d)))
    mask = random_mask(rng, batch_size, 2 * (batch_size - 1), m)
    dropout_seed = int(rng.integers(2**31))

    def pipeline(p: HeadParams):
        h, h_plus, cache = forward_views(p, x, np.random.default_rng(dropout_seed))
        return LossBatch(h, h_plus, mask, tau, bank), cache

    batch, cache = pipeline(params)
    _, grad_h, grad_h_plus = loss_and_grad(batch)
    grads = head_backward(params, cache, grad_h, grad_h_plus)

    worst = 0.0
    arrays = params.arrays()
    for name in PARAM_NAMES:
        def loss_at(value: np.ndarray, name=name) -> float:
            return loss_forward(pipeline(params.replace({**arrays, name: value}, bump=False))[0])

        worst = max(worst, relative_error(grads[name], central_difference(loss_at, arrays[name])))
    return worst


def naive_spearman(pred: np.ndarray, gold: np.ndarray) -> float:
    ranks_a = stats.rankdata(pred)
    ranks_b = stats.rankdata(gold)
    a = ranks_a - ranks_a.mean()
    b = ranks_b - ranks_b.mean()
    return float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b)))


def check_spearman(rng: np.random.Generator, n: int = 50) -> float:
    pred = rng.integers(0, 10, size=n).astype(float)
    gold = rng.integers(0, 6, size=n).astype(float)
    return abs(spearman(pred, gold) - naive_spearman(pred, gold))


SUITES: Dict[str, tuple] = {
    "cosine gradient": (check_cosine_gradient, 1e-4, 100),
    "noise gradient": (check_noise_gradient, 1e-4, 50),
    "loss gradient": (check_loss_gradient, 1e-4, 50),
    "head gradient": (check_head_gradient, 1e-3, 50),
    "spearman oracle": (check_spearman, 1e-9, 100),
}


def run_self_check(seed: int = 0, scale: float = 1.0) -> SelfCheckReport:
    """
    Run every suite on seeded random cases; `scale` shrinks the case counts
    """
    if not scale > 0:
        raise ConfigurationError(f"self-check scale must be positive, got {scale}")
    report = SelfCheckReport()
    for index, (name, (check, tolerance, cases)) in enumerate(SUITES.items()):
        count = max(1, int(cases * scale))
        rng = np.random.default_rng([seed, index])
        worst = max(check(rng) for _ in range(count))
        result = CheckResult(name=name, worst=worst, tolerance=tolerance, cases=count)
        logger.info("self-check %s: worst %.3e (%s)", name, worst, "ok" if result.passed else "FAIL")
        report.results.append(result)
    return report
