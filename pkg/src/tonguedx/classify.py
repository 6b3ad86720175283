"""SVM classification head and the clinical metric suite.

The SVM is trained with Sequential Minimal Optimization on the dual problem,
terminating when no training point violates the KKT conditions beyond the
tolerance.  The patient class is the positive (+1) class throughout, and any
metric whose denominator is zero is reported as None (undefined), never 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, ValidationError, make_rng


@dataclass(frozen=True)
class SvmModel:
    """Kernel SVM with class signs folded into the multipliers.

    ``alphas[i]`` stores alpha_i * y_i, so the decision function is
    sum_i alphas[i] * K(sv_i, x) + bias.
    """

    support_vectors: np.ndarray
    alphas: np.ndarray
    bias: float
    kernel: str
    gamma: float | None
    c: float

    def to_dict(self) -> dict:
        return {
            "format": "tonguedx-svm/1",
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "bias": float(self.bias),
            "kernel": self.kernel,
            "gamma": None if self.gamma is None else float(self.gamma),
            "c": float(self.c),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        if d.get("format") != "tonguedx-svm/1":
            raise ValidationError(f"unknown SVM checkpoint format {d.get('format')!r}")
        return cls(
            support_vectors=np.asarray(d["support_vectors"], dtype=float),
            alphas=np.asarray(d["alphas"], dtype=float),
            bias=float(d["bias"]),
            kernel=d["kernel"],
            gamma=None if d["gamma"] is None else float(d["gamma"]),
            c=float(d["c"]),
        )


def _kernel_matrix(kernel: str, gamma: float | None, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValidationError(f"kernel must be 'linear' or 'rbf', got {kernel!r}")


def svm_train(
    xs,
    ys,
    c: float = 1.0,
    kernel: str = "linear",
    gamma: float | None = None,
    tol: float = 1e-3,
    max_passes: int = 10,
    seed: int = 0,
    max_iter: int = 10_000,
) -> SvmModel:
    """Train by SMO until every point satisfies the KKT conditions within tol.

    ``ys`` holds labels in {-1, +1} with at least one sample of each class.
    For the rbf kernel, ``gamma`` defaults to 1 / n_features.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"xs must be (n, d) and ys (n,), got {x.shape} and {y.shape}")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValidationError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValidationError("training data must contain both classes")
    if c <= 0:
        raise ValidationError(f"c must be positive, got {c}")
    if kernel == "rbf" and gamma is None:
        gamma = 1.0 / x.shape[1]
    if kernel == "rbf" and (gamma is None or gamma <= 0):
        raise ValidationError(f"rbf gamma must be positive, got {gamma}")

    n = x.shape[0]
    k = _kernel_matrix(kernel, gamma, x, x)
    alphas = np.zeros(n)
    b = 0.0
    rng = make_rng(seed)

    def decision(i: int) -> float:
        return float((alphas * y) @ k[:, i] + b)

    passes = 0
    iters = 0
    while passes < max_passes and iters < max_iter:
        iters += 1
        num_changed = 0
        for i in range(n):
            e_i = decision(i) - y[i]
            r_i = e_i * y[i]
            if not ((r_i < -tol and alphas[i] < c) or (r_i > tol and alphas[i] > 0)):
                continue
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            e_j = decision(j) - y[j]
            a_i_old, a_j_old = alphas[i], alphas[j]
            if y[i] != y[j]:
                low = max(0.0, a_j_old - a_i_old)
                high = min(c, c + a_j_old - a_i_old)
            else:
                low = max(0.0, a_i_old + a_j_old - c)
                high = min(c, a_i_old + a_j_old)
            if low == high:
                continue
            eta = 2.0 * k[i, j] - k[i, i] - k[j, j]
            if eta >= 0:
                continue
            a_j = a_j_old - y[j] * (e_i - e_j) / eta
            a_j = min(max(a_j, low), high)
            if abs(a_j - a_j_old) < 1e-7:
                continue
            a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
            b1 = b - e_i - y[i] * (a_i - a_i_old) * k[i, i] - y[j] * (a_j - a_j_old) * k[i, j]
            b2 = b - e_j - y[i] * (a_i - a_i_old) * k[i, j] - y[j] * (a_j - a_j_old) * k[j, j]
            alphas[i], alphas[j] = a_i, a_j
            if 0.0 < a_i < c:
                b = b1
            elif 0.0 < a_j < c:
                b = b2
            else:
                b = (b1 + b2) / 2.0
            num_changed += 1
        passes = passes + 1 if num_changed == 0 else 0

    keep = alphas > 1e-12
    return SvmModel(
        support_vectors=x[keep].copy(),
        alphas=(alphas * y)[keep],
        bias=b,
        kernel=kernel,
        gamma=gamma,
        c=c,
    )


def svm_decision(m: SvmModel, xs) -> np.ndarray:
    """Decision values for an (n, d) batch."""
    x = np.atleast_2d(np.asarray(xs, dtype=float))
    if m.support_vectors.size == 0:
        return np.full(x.shape[0], m.bias)
    if x.shape[1] != m.support_vectors.shape[1]:
        raise ShapeError(
            f"input dimension {x.shape[1]} != support vector dimension {m.support_vectors.shape[1]}"
        )
    return m.alphas @ _kernel_matrix(m.kernel, m.gamma, m.support_vectors, x) + m.bias


def svm_predict(m: SvmModel, x) -> tuple[int, float]:
    """(label, decision value); a decision value of exactly 0 maps to +1."""
    value = float(svm_decision(m, np.asarray(x, dtype=float)[None, :])[0])
    return (1 if value >= 0 else -1), value


@dataclass(frozen=True)
class ConfusionMatrix:
    """tp/fp/tn/fn counts with patient (+1) as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds, truth) -> ConfusionMatrix:
    """Count agreement between predicted and true {-1, +1} labels."""
    p = np.asarray(preds)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise ShapeError(f"preds and truth must be equal-length vectors ({p.shape} vs {t.shape})")
    for name, arr in (("preds", p), ("truth", t)):
        if not set(np.unique(arr)) <= {-1, 1}:
            raise ValidationError(f"{name} must contain only -1/+1 labels")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == -1))),
        tn=int(np.sum((p == -1) & (t == -1))),
        fn=int(np.sum((p == -1) & (t == 1))),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """ACC, SEN, SPE, PPV, NPV and F1; zero-denominator cases come back None."""
    if cm.total == 0:
        raise ValidationError("confusion matrix is empty")
    acc = (cm.tp + cm.tn) / cm.total
    sen = _ratio(cm.tp, cm.tp + cm.fn)
    spe = _ratio(cm.tn, cm.tn + cm.fp)
    ppv = _ratio(cm.tp, cm.tp + cm.fp)
    npv = _ratio(cm.tn, cm.tn + cm.fn)
    if ppv is None or sen is None or ppv + sen == 0:
        f1 = None
    else:
        f1 = 2.0 * ppv * sen / (ppv + sen)
    return {"acc": acc, "sen": sen, "spe": spe, "ppv": ppv, "npv": npv, "f1": f1}
