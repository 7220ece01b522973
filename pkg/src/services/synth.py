"""
Desk-scale synthetic corpora: clustered latent sentences squeezed into a
narrow cone, with gold pair scores derived from the latent geometry.
"""
import logging
from typing import Any, Dict, Tuple

import numpy as np

from src.errors import ConfigurationError
from src.models.embeddings import GOLD_MAX, EmbeddingMatrix, PairDataset
from src.schemas.config import SynthConfig
from src.services.similarity import normalize_rows

logger = logging.getLogger(__name__)

ISOTROPIC_CONE_ANGLE = 90.0


def sphere_uniform(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return normalize_rows(rng.standard_normal((n, d)))


def squeeze_into_cone(z: np.ndarray, axis: np.ndarray, cone_angle: float) -> np.ndarray:
    """
    Scale every unit row's polar angle from `axis` by cone_angle / 90 degrees,
    keeping its azimuth. A high-dimensional cloud sits near 90 degrees, so its
    bulk lands at cone_angle; the rare rows near the antipode reach
    2 * cone_angle. A cone angle of 90 leaves the cloud unchanged.
    """
    ratio = min(cone_angle, ISOTROPIC_CONE_ANGLE) / ISOTROPIC_CONE_ANGLE
    if ratio == 1.0:
        return z.copy()
    cos_polar = np.clip(z @ axis, -1.0, 1.0)
    polar = np.arccos(cos_polar) * ratio
    ortho = z - cos_polar[:, None] * axis[None, :]
    ortho_norm = np.linalg.norm(ortho, axis=1, keepdims=True)
    # rows parallel to the axis have no azimuth; they stay on the axis
    ortho = np.divide(ortho, ortho_norm, out=np.zeros_like(ortho), where=ortho_norm > 1e-12)
    return np.cos(polar)[:, None] * axis[None, :] + np.sin(polar)[:, None] * ortho


def sample_pairs(
    rng: np.random.Generator, clusters: np.ndarray, num_pairs: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Half the pairs drawn within a cluster, the rest uniformly at random."""
    n = len(clusters)
    members: Dict[int, np.ndarray] = {
        int(k): np.flatnonzero(clusters == k) for k in np.unique(clusters)
    }
    eligible = [k for k, rows in members.items() if len(rows) >= 2]
    index_a = np.empty(num_pairs, dtype=np.int64)
    index_b = np.empty(num_pairs, dtype=np.int64)
    for pos in range(num_pairs):
        if pos % 2 == 0 and eligible:
            rows = members[eligible[int(rng.integers(len(eligible)))]]
            a, b = rng.choice(rows, size=2, replace=False)
        else:
            a, b = rng.choice(n, size=2, replace=False)
        index_a[pos], index_b[pos] = a, b
    return index_a, index_b


def generate_synthetic(
    cfg: SynthConfig,
) -> Tuple[EmbeddingMatrix, EmbeddingMatrix, PairDataset, Dict[str, Any]]:
    """
    Returns (observed embeddings, latent reference embeddings, scored pairs,
    generation recipe)
    """
    if cfg.clusters > cfg.n:
        raise ConfigurationError(f"{cfg.clusters} clusters cannot be drawn from {cfg.n} sentences")
    rng = np.random.default_rng(cfg.seed)

    centers = sphere_uniform(rng, cfg.clusters, cfg.d)
    clusters = rng.integers(cfg.clusters, size=cfg.n)
    spread = cfg.noise_level * rng.standard_normal((cfg.n, cfg.d)) / np.sqrt(cfg.d)
    latent = normalize_rows(centers[clusters] + spread)

    axis = sphere_uniform(rng, 1, cfg.d)[0]
    observed = squeeze_into_cone(latent, axis, cfg.cone_angle)
    if cfg.jitter > 0:
        observed = observed + cfg.jitter * rng.standard_normal(observed.shape) / np.sqrt(cfg.d)

    index_a, index_b = sample_pairs(rng, clusters, cfg.num_pairs)
    same_cluster = (clusters[index_a] == clusters[index_b]).astype(np.float64)
    latent_cos = np.clip(np.sum(latent[index_a] * latent[index_b], axis=1), 0.0, 1.0)
    half = GOLD_MAX / 2
    scores = np.clip(half * same_cluster + half * latent_cos, 0.0, GOLD_MAX)

    recipe = {
        "config": cfg.model_dump(),
        "latent": "normalize(center[cluster] + noise_level * N(0, I/d)), centers uniform on the sphere",
        "observed": "latent polar angle from a random axis scaled by cone_angle/90, plus jitter * N(0, I/d)",
        "gold": "2.5 * same_cluster + 2.5 * max(latent_cosine, 0)",
        "pairs": "even positions within one cluster, odd positions uniform",
    }
    logger.info(
        "synthetic corpus: n=%d d=%d cone_angle=%g clusters=%d pairs=%d",
        cfg.n, cfg.d, cfg.cone_angle, cfg.clusters, cfg.num_pairs,
    )
    pairs = PairDataset(index_a=index_a, index_b=index_b, scores=scores, name="synthetic")
    return EmbeddingMatrix(observed), EmbeddingMatrix(latent), pairs, recipe
