"""Entropy, divergence and mutual-information estimators, plus layer selection.

All quantities are in bits (base-2 logarithms).  Mutual information between
two sample vectors is the plug-in estimate from a joint histogram with B
equal-width bins per axis over [0, 1]:

    I(X; Y) = H(X) + H(Y) - H(X, Y)

The layer selector picks the network layer whose cross-class features have
the least mean mutual information, read as the highest class separability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ShapeError, ValidationError, make_rng

PROB_TOL = 1e-9


def validate_prob_vector(p: np.ndarray, name: str = "p") -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a nonempty 1-D probability vector")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise ValidationError(f"{name} must contain finite nonnegative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise ValidationError(f"{name} must sum to 1 (got {total})")
    return arr


def shannon_entropy(p) -> float:
    """-sum p_i log2 p_i with 0 log 0 taken as 0."""
    arr = validate_prob_vector(p)
    nz = arr[arr > 0]
    return float(-np.sum(nz * np.log2(nz)))


def renyi_entropy(p, alpha: float) -> float:
    """Order-alpha entropy (1/(1-alpha)) log2 sum p_i^alpha; alpha=1 is Shannon."""
    if not math.isfinite(alpha) or alpha <= 0:
        raise ValidationError(f"alpha must be a positive real, got {alpha}")
    arr = validate_prob_vector(p)
    if alpha == 1.0:
        return shannon_entropy(arr)
    nz = arr[arr > 0]
    return float(np.log2(np.sum(nz**alpha)) / (1.0 - alpha))


def kl_divergence(p, q) -> float:
    """sum p_i log2(p_i / q_i); +inf when q lacks mass where p has some."""
    parr = validate_prob_vector(p, "p")
    qarr = validate_prob_vector(q, "q")
    if parr.shape != qarr.shape:
        raise ShapeError(f"p and q must have equal length ({parr.size} vs {qarr.size})")
    support = parr > 0
    if (qarr[support] == 0).any():
        return math.inf
    ps = parr[support]
    return float(np.sum(ps * np.log2(ps / qarr[support])))


@dataclass(frozen=True)
class JointHistogram:
    """B x B joint counts of paired samples over [0, 1] x [0, 1]."""

    counts: np.ndarray
    edges: np.ndarray

    @property
    def bins(self) -> int:
        return self.counts.shape[0]

    def joint_probs(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def marginal_x(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def marginal_y(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def joint_histogram(x: np.ndarray, y: np.ndarray, bins: int) -> JointHistogram:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ShapeError(f"x and y must be equal-length 1-D vectors ({x.shape} vs {y.shape})")
    if x.size < 2:
        raise ValidationError("need at least 2 paired samples")
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    for name, arr in (("x", x), ("y", y)):
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError(f"{name} values must lie in [0, 1]")
    counts, ex, _ = np.histogram2d(x, y, bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    return JointHistogram(counts=counts.astype(np.int64), edges=ex)


def _entropy_from_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def mutual_information(x, y, bins: int) -> float:
    """Plug-in histogram MI of two paired sample vectors, clamped at 0."""
    hist = joint_histogram(x, y, bins)
    h_x = _entropy_from_counts(hist.marginal_x())
    h_y = _entropy_from_counts(hist.marginal_y())
    h_xy = _entropy_from_counts(hist.counts.reshape(-1))
    mi = h_x + h_y - h_xy
    return max(mi, 0.0) if mi > -1e-12 else 0.0


def binned_entropy(x, bins: int) -> float:
    """Shannon entropy of one vector under the same [0, 1] equal-width binning."""
    x = np.asarray(x, dtype=float)
    counts, _ = np.histogram(x, bins=bins, range=(0.0, 1.0))
    return _entropy_from_counts(counts)


def mean_cross_class_mi(
    feats_a: Sequence[np.ndarray],
    feats_b: Sequence[np.ndarray],
    bins: int,
    max_pairs: int,
    seed: int,
    pairing: str = "cross",
) -> float:
    """Mean MI over pairs of feature vectors drawn from the two classes.

    With ``pairing="cross"`` every (a, b) combination is a candidate pair;
    ``pairing="matched"`` pairs equal indices only.  When there are more
    candidates than ``max_pairs``, a seeded uniform subset is evaluated, so
    the result is deterministic for a given seed.
    """
    if len(feats_a) == 0 or len(feats_b) == 0:
        raise ValidationError("both feature sets must be nonempty")
    if max_pairs < 1:
        raise ValidationError(f"max_pairs must be positive, got {max_pairs}")
    if pairing == "cross":
        pairs = [(i, j) for i in range(len(feats_a)) for j in range(len(feats_b))]
    elif pairing == "matched":
        pairs = [(k, k) for k in range(min(len(feats_a), len(feats_b)))]
    else:
        raise ValidationError(f"pairing must be 'cross' or 'matched', got {pairing!r}")
    if len(pairs) > max_pairs:
        rng = make_rng(seed)
        chosen = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[k] for k in sorted(chosen)]
    values = [mutual_information(feats_a[i], feats_b[j], bins) for i, j in pairs]
    return float(np.mean(values))


def select_layer(
    per_layer: Sequence[tuple],
    bins: int,
    max_pairs: int,
    seed: int,
    pairing: str = "cross",
):
    """Return the layer_id with the least mean cross-class MI.

    ``per_layer`` holds (layer_id, feats_class1, feats_class2) entries in
    shallow-to-deep order; ties go to the earliest (shallowest) layer.
    """
    if len(per_layer) == 0:
        raise ValidationError("select_layer needs at least one layer entry")
    best_id = None
    best_mi = math.inf
    for layer_id, feats_a, feats_b in per_layer:
        mi = mean_cross_class_mi(feats_a, feats_b, bins, max_pairs, seed, pairing)
        if mi < best_mi:
            best_id = layer_id
            best_mi = mi
    return best_id


def rank_layers(
    per_layer: Sequence[tuple],
    bins: int,
    max_pairs: int,
    seed: int,
    pairing: str = "cross",
) -> list[tuple]:
    """(layer_id, mean MI) for every layer, sorted ascending by MI (stable)."""
    if len(per_layer) == 0:
        raise ValidationError("rank_layers needs at least one layer entry")
    scored = [
        (layer_id, mean_cross_class_mi(fa, fb, bins, max_pairs, seed, pairing))
        for layer_id, fa, fb in per_layer
    ]
    return sorted(scored, key=lambda item: item[1])
