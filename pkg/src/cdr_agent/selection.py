"""Rule selection by embedding similarity and Gaussian anomaly detection.

For one note, every rule description is scored by cosine similarity against an
ensemble of random contiguous truncations of the note (the first variant is
always the full note). All (rule, variant) scores are pooled to fit a Gaussian;
a rule is selected when the upper-tail probability of its mean score under that
fit falls below the significance level. An empty selection means no rule
applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import EmbeddingError
from .providers import EmbeddingCache, EmbeddingProvider
from .registry import Registry, selection_text


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.05
    num_truncations: int = 10
    retention_ratio: float = 0.7
    rng_seed: int = 0
    include_keywords: bool = True
    sigma_floor: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.num_truncations < 1:
            raise ValueError("num_truncations must be >= 1")
        if not 0.0 < self.retention_ratio <= 1.0:
            raise ValueError("retention_ratio must be in (0, 1]")
        if self.sigma_floor <= 0.0:
            raise ValueError("sigma_floor must be positive")


@dataclass(frozen=True)
class CdrSimilarity:
    scores: tuple[float, ...]
    statistic: float
    zscore: float


@dataclass(frozen=True)
class SimilarityProfile:
    per_cdr: dict[str, CdrSimilarity]
    mu_hat: float
    sigma_hat: float
    selected: tuple[str, ...]


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embed one text, enforcing the non-empty and finite-vector contracts."""
    if not text.strip():
        raise EmbeddingError("cannot embed empty text")
    vec = np.asarray(provider.embed_many([text])[0], dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("provider returned a vector with NaN or Inf")
    return vec


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def truncate_note(note: str, retention_ratio: float, rng: np.random.Generator) -> str:
    """Keep a random contiguous span of ceil(ratio * tokens) whitespace tokens.

    A ratio of 1.0 returns the note byte-for-byte unchanged.
    """
    if not 0.0 < retention_ratio <= 1.0:
        raise ValueError("retention_ratio must be in (0, 1]")
    if not note.strip():
        raise ValueError("cannot truncate an empty note")
    if retention_ratio == 1.0:
        return note
    tokens = note.split()
    span = math.ceil(retention_ratio * len(tokens))
    start = int(rng.integers(0, len(tokens) - span + 1))
    return " ".join(tokens[start : start + span])


def fit_gaussian(scores: Sequence[float], sigma_floor: float = 1e-9) -> tuple[float, float]:
    """Sample mean and (n-1)-normalized standard deviation, floored below."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("fitting a Gaussian needs at least 2 scores")
    mu_hat = float(arr.mean())
    sigma_hat = float(arr.std(ddof=1))
    return mu_hat, max(sigma_hat, sigma_floor)


def upper_tail_pvalue(zscore: float) -> float:
    """P(Z >= z) for a standard normal; small values flag anomalously high scores."""
    return float(stats.norm.sf(zscore))


def select_cdrs(
    note: str,
    registry: Registry,
    config: SelectionConfig,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> SimilarityProfile:
    """Score every rule against the truncation ensemble and select anomalies.

    Selected ids are ordered by descending mean score (ties by ascending id).
    """
    if len(registry) == 0:
        raise ValueError("registry is empty")
    if not note.strip():
        raise ValueError("note is empty")
    cache = cache or EmbeddingCache()
    rng = np.random.default_rng(config.rng_seed)
    variants = [note] + [
        truncate_note(note, config.retention_ratio, rng) for _ in range(config.num_truncations - 1)
    ]
    cdr_texts = [selection_text(d, include_keywords=config.include_keywords) for d in registry]
    vectors = cache.get_or_embed(provider, variants + cdr_texts)
    variant_vecs = vectors[: len(variants)]
    cdr_vecs = vectors[len(variants) :]

    score_rows: dict[str, list[float]] = {}
    for d, cdr_vec in zip(registry, cdr_vecs):
        score_rows[d.id] = [cosine_similarity(v, cdr_vec) for v in variant_vecs]

    pooled = [s for row in score_rows.values() for s in row]
    mu_hat, sigma_hat = fit_gaussian(pooled, config.sigma_floor)

    per_cdr: dict[str, CdrSimilarity] = {}
    for cdr_id, row in score_rows.items():
        # Exact collapse when every variant scored identically (retention 1.0),
        # so the ensemble size cannot perturb the statistic by rounding.
        statistic = row[0] if min(row) == max(row) else float(np.mean(row))
        zscore = (statistic - mu_hat) / sigma_hat
        per_cdr[cdr_id] = CdrSimilarity(scores=tuple(row), statistic=statistic, zscore=zscore)

    selected = [cdr_id for cdr_id, sim in per_cdr.items() if upper_tail_pvalue(sim.zscore) < config.alpha]
    selected.sort(key=lambda cdr_id: (-per_cdr[cdr_id].statistic, cdr_id))
    return SimilarityProfile(per_cdr=per_cdr, mu_hat=mu_hat, sigma_hat=sigma_hat, selected=tuple(selected))


def qq_points(
    scores: Sequence[float],
    mu_hat: float | None = None,
    sigma_hat: float | None = None,
    sigma_floor: float = 1e-9,
) -> list[tuple[float, float]]:
    """Normal Q-Q pairs for checking the Gaussian fit of similarity scores.

    Pairs are (standard-normal quantile at position (k - 0.5)/n, sample value
    standardized by the fitted parameters). Pass the profile's (mu_hat,
    sigma_hat) to diagnose an existing fit; otherwise they are fitted here.
    """
    arr = np.sort(np.asarray(scores, dtype=np.float64))
    if arr.size < 3:
        raise ValueError("a Q-Q plot needs at least 3 scores")
    if mu_hat is None or sigma_hat is None:
        mu_hat, sigma_hat = fit_gaussian(arr, sigma_floor)
    positions = (np.arange(1, arr.size + 1) - 0.5) / arr.size
    theoretical = stats.norm.ppf(positions)
    standardized = (arr - mu_hat) / sigma_hat
    return list(zip(theoretical.tolist(), standardized.tolist()))
