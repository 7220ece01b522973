"""DCLR training: noise negatives, instance weighting, dropout views, Adam."""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigurationError
from src.models.checkpoint import AdamState, Checkpoint
from src.models.embeddings import EmbeddingMatrix, PairDataset
from src.models.head import HeadParams
from src.schemas.config import TrainConfig
from src.services.diagnostics import alignment_loss, dev_uniformity, evaluate_many, uniformity_loss
from src.services.head import encode, forward_views, head_backward
from src.services.loss import LossBatch, in_batch_negative_indices, loss_and_grad
from src.services.noise import NoiseBank, init_noise, optimize_noise
from src.services.optimizer import adam_step
from src.services.progress import TrainingProgress
from src.services.weighting import ComplementaryScorer, WeightMask, compute_weights

logger = logging.getLogger(__name__)

# SeedSequence streams: every random draw is keyed by (seed, stream, counter)
INIT_STREAM = 0
SUBSET_STREAM = 1
SHUFFLE_STREAM = 2
STEP_STREAM = 3


def stream_rng(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, counter])


@dataclass(frozen=True)
class StepMetrics:
    loss: float
    uniformity: float
    alignment: float
    masked_fraction: float
    noise_count: int


@dataclass
class TrainingResult:
    best: Checkpoint
    final: Checkpoint
    progress: TrainingProgress


def init_head(corpus: EmbeddingMatrix, cfg: TrainConfig) -> Tuple[HeadParams, AdamState]:
    params = HeadParams.init(stream_rng(cfg.seed, INIT_STREAM), corpus.d, cfg.head)
    return params, AdamState.for_config(params, cfg)


def build_noise_bank(
    rng: np.random.Generator, h: np.ndarray, h_plus: np.ndarray, cfg: TrainConfig
) -> Optional[NoiseBank]:
    """
    Fresh Gaussian bank for this batch, pushed towards non-uniform points
    unless the update is disabled
    """
    if not cfg.uses_noise:
        return None
    bank = init_noise(rng, cfg.noise.bank_size(h.shape[0]), h.shape[1], cfg.sigma)
    if not cfg.no_noise_update:
        bank = optimize_noise(bank, h, h_plus, cfg.noise)
    return bank


def batch_weights(
    params: HeadParams,
    x: np.ndarray,
    batch_indices: np.ndarray,
    scorer: Optional[ComplementaryScorer],
    bank: Optional[NoiseBank],
    cfg: TrainConfig,
) -> WeightMask:
    B = len(batch_indices)
    negative_index = in_batch_negative_indices(B, cfg.single_view_negatives)
    num_noise = 0 if bank is None else bank.m
    if cfg.weighting == "off":
        return WeightMask.ones(B, negative_index.shape[1], num_noise)
    if cfg.weighting == "self":
        scorer = ComplementaryScorer.from_representations(encode(params, x), batch_indices, cfg.phi)
    elif scorer is None:
        raise ConfigurationError("reference weighting needs reference embeddings")
    negative_sentences = batch_indices[negative_index % B]
    return compute_weights(scorer, batch_indices, negative_sentences, bank)


def train_step(
    corpus: EmbeddingMatrix,
    batch_indices: Sequence[int],
    params: HeadParams,
    state: AdamState,
    scorer: Optional[ComplementaryScorer],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[HeadParams, AdamState, StepMetrics]:
    """
    (1) noise bank, (2) weights for in-batch and noise negatives,
    (3) dropout views, debiased loss, backprop and one Adam update
    """
    batch_indices = np.asarray(batch_indices, dtype=np.int64)
    if len(batch_indices) < 2:
        raise ConfigurationError("a training batch needs at least two sentences")
    x = corpus.rows(batch_indices)
    h, h_plus, cache = forward_views(params, x, rng)

    bank = build_noise_bank(rng, h, h_plus, cfg)
    weights = batch_weights(params, x, batch_indices, scorer, bank, cfg)
    batch = LossBatch(
        anchors=h,
        positives=h_plus,
        weights=weights,
        tau=cfg.tau,
        bank=bank,
        single_view=cfg.single_view_negatives,
        literal=cfg.literal_eq6,
    )
    loss, grad_h, grad_h_plus = loss_and_grad(batch)
    grads = head_backward(params, cache, grad_h, grad_h_plus)
    new_params, new_state = adam_step(params, grads, state, cfg.lr)

    metrics = StepMetrics(
        loss=loss,
        uniformity=uniformity_loss(h),
        alignment=alignment_loss(h, h_plus),
        masked_fraction=weights.masked_fraction,
        noise_count=0 if bank is None else bank.m,
    )
    return new_params, new_state, metrics


def training_pool(n: int, cfg: TrainConfig) -> np.ndarray:
    """
    Corpus rows used for training: all of them, or a seeded subset of
    ceil(n * data_fraction) rows
    """
    if cfg.data_fraction >= 1.0:
        return np.arange(n)
    count = max(1, math.ceil(n * cfg.data_fraction))
    return np.sort(stream_rng(cfg.seed, SUBSET_STREAM).choice(n, size=count, replace=False))


def run_training(
    corpus: EmbeddingMatrix,
    dev: Union[PairDataset, Sequence[PairDataset]],
    cfg: TrainConfig,
    scorer: Optional[ComplementaryScorer] = None,
    resume: Optional[Checkpoint] = None,
) -> TrainingResult:
    """
    Train for cfg.epochs epochs, evaluate every cfg.eval_every steps and at
    the last step, and keep the checkpoint with the best mean dev Spearman
    """
    devs: List[PairDataset] = [dev] if isinstance(dev, PairDataset) else list(dev)
    if not devs or any(len(d) == 0 for d in devs):
        raise ConfigurationError("training needs a non-empty development set")
    for d in devs:
        d.validate_against(corpus)
    if cfg.weighting == "reference" and scorer is None:
        raise ConfigurationError("reference weighting needs reference embeddings")
    if scorer is not None and scorer.phi != cfg.phi:
        scorer = replace(scorer, phi=cfg.phi)

    pool = training_pool(corpus.n, cfg)
    B = cfg.batch_size
    steps_per_epoch = len(pool) // B
    if B < 2 or steps_per_epoch == 0:
        raise ConfigurationError(
            f"{len(pool)} training sentences cannot fill one batch of {B} (need batch size >= 2)"
        )
    total_steps = steps_per_epoch * cfg.epochs

    if resume is not None:
        params, state, step = resume.params, resume.optimizer, resume.step
    else:
        params, state = init_head(corpus, cfg)
        step = 0
    progress = TrainingProgress()
    best: Optional[Checkpoint] = resume
    last_metric = resume.dev_metric if resume is not None else None
    logger.info(
        "training on %d sentences: %d steps (%d per epoch), batch %d, weighting=%s, noise=%s",
        len(pool), total_steps, steps_per_epoch, B, cfg.weighting,
        "off" if not cfg.uses_noise else ("random" if cfg.no_noise_update else "optimized"),
    )

    while step < total_steps:
        epoch, offset = divmod(step, steps_per_epoch)
        order = stream_rng(cfg.seed, SHUFFLE_STREAM, epoch).permutation(pool)
        for b in range(offset, steps_per_epoch):
            batch_indices = order[b * B:(b + 1) * B]
            params, state, metrics = train_step(
                corpus, batch_indices, params, state, scorer, cfg, stream_rng(cfg.seed, STEP_STREAM, step)
            )
            step += 1
            progress.record_step(step, metrics.loss, metrics.uniformity, metrics.masked_fraction, metrics.alignment)
            logger.debug("step %d: loss=%.6f masked=%.3f", step, metrics.loss, metrics.masked_fraction)

            if step % cfg.eval_every == 0 or step == total_steps:
                rho, _ = evaluate_many(params, corpus, devs)
                uniformity = dev_uniformity(params, corpus, devs)
                progress.record_eval(step, rho, uniformity)
                last_metric = rho
                logger.info(
                    "step %d/%d: loss=%.5f uniformity=%.4f masked=%.3f dev_spearman=%.4f",
                    step, total_steps, metrics.loss, metrics.uniformity, metrics.masked_fraction, rho,
                )
                if best is None or best.dev_metric is None or rho > best.dev_metric:
                    best = Checkpoint(params=params, optimizer=state, step=step, config=cfg, dev_metric=rho)

    final = Checkpoint(params=params, optimizer=state, step=step, config=cfg, dev_metric=last_metric)
    if best is None:
        best = final
    return TrainingResult(best=best, final=final, progress=progress)
