"""From-scratch trainable networks.

Two model families, both trained by plain mini-batch gradient descent with
analytically derived backpropagation:

- a 1024 -> 31 -> 1 sigmoid network whose hidden activations serve as the
  per-region 31-entry feature vector;
- a small layered CNN (conv / sigmoid / max-pool / fully-connected / softmax)
  over 32x32x3 inputs, with per-layer activation taps for layer selection.

Everything is deterministic for a given seed (PCG64 streams, fixed batch
order after a seeded shuffle).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ShapeError, ValidationError, make_rng

LOSS_EPS = 1e-12  # probability clamp before logs

MLP_INPUT = 1024
MLP_HIDDEN = 31

DEFAULT_CNN_SPEC = (
    {"type": "conv", "kernel": [3, 3], "out_channels": 8, "stride": 1},
    {"type": "sigmoid"},
    {"type": "maxpool"},
    {"type": "conv", "kernel": [3, 3], "out_channels": 16, "stride": 1},
    {"type": "sigmoid"},
    {"type": "maxpool"},
    {"type": "fc", "out": 32},
    {"type": "sigmoid"},
    {"type": "fc", "out": 2},
    {"type": "softmax"},
)
DEFAULT_TAP_POINTS = (2, 5, 7)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_prime(z: np.ndarray) -> np.ndarray:
    s = sigmoid(z)
    return s * (1.0 - s)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive integers")


# ---------------------------------------------------------------------------
# MLP feature extractor: 1024 -> 31 -> 1, sigmoid everywhere
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpModel:
    w1: np.ndarray  # (31, 1024)
    b1: np.ndarray  # (31,)
    w2: np.ndarray  # (1, 31)
    b2: float

    def to_dict(self) -> dict:
        return {
            "format": "tonguedx-mlp/1",
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": float(self.b2),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format") != "tonguedx-mlp/1":
            raise ValidationError(f"unknown MLP checkpoint format {d.get('format')!r}")
        return cls(
            w1=np.asarray(d["w1"], dtype=float),
            b1=np.asarray(d["b1"], dtype=float),
            w2=np.asarray(d["w2"], dtype=float),
            b2=float(d["b2"]),
        )


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def mlp_init(seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases; deterministic in the seed."""
    rng = make_rng(seed)
    w1 = _glorot_uniform(rng, MLP_INPUT, MLP_HIDDEN, (MLP_HIDDEN, MLP_INPUT))
    w2 = _glorot_uniform(rng, MLP_HIDDEN, 1, (1, MLP_HIDDEN))
    return MlpModel(w1=w1, b1=np.zeros(MLP_HIDDEN), w2=w2, b2=0.0)


def _check_mlp_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (MLP_INPUT,):
        raise ShapeError(f"expected a {MLP_INPUT}-vector, got shape {x.shape}")
    return x


def mlp_forward(m: MlpModel, x) -> tuple[np.ndarray, float]:
    """Return (hidden activations, scalar output), both through sigmoids."""
    x = _check_mlp_input(x)
    hidden = sigmoid(m.w1 @ x + m.b1)
    out = sigmoid(m.w2 @ hidden + m.b2)
    return hidden, float(out[0])


def mlp_extract(m: MlpModel, x) -> np.ndarray:
    """The 31-entry hidden-layer feature vector for one input."""
    hidden, _ = mlp_forward(m, x)
    return hidden


def mlp_loss(out: float, label: int) -> float:
    """Logistic-regression cost -[y ln(out) + (1 - y) ln(1 - out)].

    Outputs at exactly 0 or 1 are clamped to [1e-12, 1 - 1e-12] before the log.
    """
    if label not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {label!r}")
    p = min(max(float(out), LOSS_EPS), 1.0 - LOSS_EPS)
    return float(-(label * np.log(p) + (1 - label) * np.log(1.0 - p)))


def _stack_pairs(data, item_shape_check: Callable[[np.ndarray], np.ndarray]):
    xs, ys = [], []
    for x, y in data:
        xs.append(item_shape_check(np.asarray(x, dtype=float)))
        if y not in (0, 1):
            raise ValidationError(f"labels must be 0 or 1, got {y!r}")
        ys.append(int(y))
    return np.stack(xs), np.array(ys, dtype=float)


def _mlp_batch_loss_grads(m: MlpModel, xb: np.ndarray, yb: np.ndarray):
    """Mean BCE over a batch and its gradients wrt all parameters."""
    n = xb.shape[0]
    hidden = sigmoid(xb @ m.w1.T + m.b1)          # (n, 31)
    out = sigmoid(hidden @ m.w2.T + m.b2)[:, 0]   # (n,)
    p = np.clip(out, LOSS_EPS, 1.0 - LOSS_EPS)
    loss = float(-np.mean(yb * np.log(p) + (1.0 - yb) * np.log(1.0 - p)))

    dz2 = (out - yb) / n                           # (n,)
    gw2 = (dz2 @ hidden)[None, :]                  # (1, 31)
    gb2 = float(dz2.sum())
    dh = dz2[:, None] * m.w2                       # (n, 31)
    dz1 = dh * hidden * (1.0 - hidden)
    gw1 = dz1.T @ xb                               # (31, 1024)
    gb1 = dz1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2)


def mlp_dataset_loss(m: MlpModel, xs: np.ndarray, ys: np.ndarray) -> float:
    loss, _ = _mlp_batch_loss_grads(m, xs, ys)
    return loss


def mlp_train(data, cfg: TrainConfig) -> MlpModel:
    """Mini-batch gradient descent on the mean logistic loss.

    ``data`` is a sequence of (1024-vector, label) pairs with both labels
    present.  Returns the final-epoch model.
    """
    xs, ys = _stack_pairs(data, _check_mlp_input)
    if xs.shape[0] == 0:
        raise ValidationError("training data is empty")
    if len(set(ys.tolist())) < 2:
        raise ValidationError("training data must contain both labels")
    rng = make_rng(cfg.seed)
    m = mlp_init(cfg.seed)
    n = xs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, (gw1, gb1, gw2, gb2) = _mlp_batch_loss_grads(m, xs[idx], ys[idx])
            m = MlpModel(
                w1=m.w1 - cfg.learning_rate * gw1,
                b1=m.b1 - cfg.learning_rate * gb1,
                w2=m.w2 - cfg.learning_rate * gw2,
                b2=m.b2 - cfg.learning_rate * gb2,
            )
    return m


# ---------------------------------------------------------------------------
# CNN stand-in with activation taps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CnnModel:
    spec: tuple
    params: tuple          # per-layer dict {"w": ..., "b": ...} or None
    tap_points: tuple
    input_shape: tuple = (32, 32, 3)

    def layer_shapes(self) -> list[tuple]:
        return cnn_layer_shapes(self.spec, self.input_shape)

    def to_dict(self) -> dict:
        ser = [
            None if p is None else {"w": p["w"].tolist(), "b": p["b"].tolist()}
            for p in self.params
        ]
        return {
            "format": "tonguedx-cnn/1",
            "spec": [dict(layer) for layer in self.spec],
            "tap_points": list(self.tap_points),
            "input_shape": list(self.input_shape),
            "params": ser,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CnnModel":
        if d.get("format") != "tonguedx-cnn/1":
            raise ValidationError(f"unknown CNN checkpoint format {d.get('format')!r}")
        params = tuple(
            None
            if p is None
            else {"w": np.asarray(p["w"], dtype=float), "b": np.asarray(p["b"], dtype=float)}
            for p in d["params"]
        )
        return cls(
            spec=tuple(dict(layer) for layer in d["spec"]),
            params=params,
            tap_points=tuple(d["tap_points"]),
            input_shape=tuple(d["input_shape"]),
        )


def cnn_layer_shapes(spec: Sequence[dict], input_shape=(32, 32, 3)) -> list[tuple]:
    """Output shape of every layer; raises ShapeError on an inconsistent spec."""
    shapes: list[tuple] = []
    cur: tuple = tuple(input_shape)
    for i, layer in enumerate(spec):
        kind = layer.get("type")
        if kind == "conv":
            if len(cur) != 3:
                raise ShapeError(f"layer {i}: conv needs a (H, W, C) input, got {cur}")
            h, w, c = cur
            kh, kw = layer["kernel"]
            stride = int(layer.get("stride", 1))
            if stride < 1:
                raise ShapeError(f"layer {i}: stride must be >= 1")
            if kh > h or kw > w:
                raise ShapeError(f"layer {i}: kernel {kh}x{kw} exceeds input {h}x{w}")
            expected_in = layer.get("in_channels")
            if expected_in is not None and int(expected_in) != c:
                raise ShapeError(f"layer {i}: in_channels {expected_in} != upstream {c}")
            cur = ((h - kh) // stride + 1, (w - kw) // stride + 1, int(layer["out_channels"]))
        elif kind == "sigmoid":
            pass
        elif kind == "maxpool":
            if len(cur) != 3:
                raise ShapeError(f"layer {i}: maxpool needs a (H, W, C) input, got {cur}")
            h, w, c = cur
            if h < 2 or w < 2:
                raise ShapeError(f"layer {i}: input {h}x{w} too small for 2x2 pooling")
            cur = (h // 2, w // 2, c)
        elif kind == "fc":
            in_dim = int(np.prod(cur))
            expected_in = layer.get("in")
            if expected_in is not None and int(expected_in) != in_dim:
                raise ShapeError(f"layer {i}: fc expects in={expected_in}, upstream gives {in_dim}")
            cur = (int(layer["out"]),)
        elif kind == "softmax":
            if len(cur) != 1:
                raise ShapeError(f"layer {i}: softmax needs a flat input, got {cur}")
            if i != len(spec) - 1:
                raise ShapeError("softmax must be the final layer")
        else:
            raise ShapeError(f"layer {i}: unknown layer type {kind!r}")
        shapes.append(cur)
    if not spec or spec[-1]["type"] != "softmax" or shapes[-1] != (2,):
        raise ShapeError("spec must end in a softmax over exactly 2 classes")
    return shapes


def cnn_init(
    spec: Sequence[dict] = DEFAULT_CNN_SPEC,
    seed: int = 0,
    input_shape=(32, 32, 3),
    tap_points: Sequence[int] | None = None,
) -> CnnModel:
    """Validate the layer spec, then draw Glorot-uniform parameters."""
    spec = tuple(dict(layer) for layer in spec)
    shapes = cnn_layer_shapes(spec, input_shape)
    if tap_points is None:
        tap_points = tuple(
            i for i, layer in enumerate(spec) if layer["type"] in ("sigmoid", "maxpool")
        )
    else:
        tap_points = tuple(int(i) for i in tap_points)
        for i in tap_points:
            if not 0 <= i < len(spec):
                raise ValidationError(f"tap point {i} out of range for {len(spec)} layers")
    rng = make_rng(seed)
    params: list = []
    cur = tuple(input_shape)
    for layer, out_shape in zip(spec, shapes):
        if layer["type"] == "conv":
            kh, kw = layer["kernel"]
            ic = cur[2]
            oc = int(layer["out_channels"])
            fan_in, fan_out = kh * kw * ic, kh * kw * oc
            params.append(
                {
                    "w": _glorot_uniform(rng, fan_in, fan_out, (kh, kw, ic, oc)),
                    "b": np.zeros(oc),
                }
            )
        elif layer["type"] == "fc":
            in_dim = int(np.prod(cur))
            out_dim = int(layer["out"])
            params.append(
                {
                    "w": _glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)),
                    "b": np.zeros(out_dim),
                }
            )
        else:
            params.append(None)
        cur = out_shape
    return CnnModel(spec=spec, params=tuple(params), tap_points=tap_points, input_shape=tuple(input_shape))


def _conv_forward(x, w, b, stride):
    batch, h, _, _ = x.shape
    kh, kw, _, oc = w.shape
    oh = (h - kh) // stride + 1
    ow = (x.shape[2] - kw) // stride + 1
    out = np.broadcast_to(b, (batch, oh, ow, oc)).copy()
    for di in range(kh):
        for dj in range(kw):
            xs = x[:, di : di + oh * stride : stride, dj : dj + ow * stride : stride, :]
            out += xs @ w[di, dj]
    return out


def _conv_backward(dout, x, w, stride):
    kh, kw, _, _ = w.shape
    _, oh, ow, _ = dout.shape
    dw = np.zeros_like(w)
    dx = np.zeros_like(x)
    db = dout.sum(axis=(0, 1, 2))
    for di in range(kh):
        for dj in range(kw):
            xs = x[:, di : di + oh * stride : stride, dj : dj + ow * stride : stride, :]
            dw[di, dj] = np.einsum("bhwi,bhwo->io", xs, dout)
            dx[:, di : di + oh * stride : stride, dj : dj + ow * stride : stride, :] += (
                dout @ w[di, dj].T
            )
    return dx, dw, db


def _pool_forward(x):
    batch, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xr = x[:, : h2 * 2, : w2 * 2, :].reshape(batch, h2, 2, w2, 2, c)
    return xr.max(axis=(2, 4))


def _pool_backward(dout, x):
    batch, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xr = x[:, : h2 * 2, : w2 * 2, :].reshape(batch, h2, 2, w2, 2, c)
    pooled = xr.max(axis=(2, 4), keepdims=True)
    mask = xr == pooled
    counts = mask.sum(axis=(2, 4), keepdims=True)
    spread = mask * (dout[:, :, None, :, None, :] / counts)
    dx = np.zeros_like(x)
    dx[:, : h2 * 2, : w2 * 2, :] = spread.reshape(batch, h2 * 2, w2 * 2, c)
    return dx


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cnn_forward_batch(m: CnnModel, x: np.ndarray, want_caches: bool = False):
    """Run the layer stack; returns (probs, per-layer activations)."""
    acts = [x]
    cur = x
    for layer, p in zip(m.spec, m.params):
        kind = layer["type"]
        if kind == "conv":
            cur = _conv_forward(cur, p["w"], p["b"], int(layer.get("stride", 1)))
        elif kind == "sigmoid":
            cur = sigmoid(cur)
        elif kind == "maxpool":
            cur = _pool_forward(cur)
        elif kind == "fc":
            cur = cur.reshape(cur.shape[0], -1) @ p["w"] + p["b"]
        elif kind == "softmax":
            cur = _softmax(cur)
        acts.append(cur)
    if want_caches:
        return acts[-1], acts
    return acts[-1], [acts[i + 1] for i in m.tap_points]


def _check_cnn_input(m: CnnModel, img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.shape != tuple(m.input_shape):
        raise ShapeError(f"expected input shape {tuple(m.input_shape)}, got {img.shape}")
    return img


def cnn_forward(m: CnnModel, img) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Class probabilities and flattened tap activations for one image."""
    img = _check_cnn_input(m, img)
    probs, taps = _cnn_forward_batch(m, img[None])
    tap_map = {i: t[0].reshape(-1).copy() for i, t in zip(m.tap_points, taps)}
    return probs[0], tap_map


def cnn_predict(m: CnnModel, img) -> int:
    probs, _ = cnn_forward(m, img)
    return int(np.argmax(probs))


def _cnn_loss_and_grads(m: CnnModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over a batch plus gradients for every parameter."""
    _, acts = _cnn_forward_batch(m, x, want_caches=True)
    probs = acts[-1]
    n = x.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y.astype(int)] = 1.0
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), y.astype(int)], LOSS_EPS, None))))

    grads: list = [None] * len(m.spec)
    # Softmax + cross-entropy combine to (p - onehot)/n at the logits.
    delta = (probs - onehot) / n
    for i in range(len(m.spec) - 2, -1, -1):
        layer = m.spec[i]
        kind = layer["type"]
        inp = acts[i]
        outp = acts[i + 1]
        if kind == "softmax":
            continue
        if kind == "fc":
            flat = inp.reshape(n, -1)
            grads[i] = {"w": flat.T @ delta, "b": delta.sum(axis=0)}
            delta = (delta @ m.params[i]["w"].T).reshape(inp.shape)
        elif kind == "sigmoid":
            delta = delta * outp * (1.0 - outp)
        elif kind == "maxpool":
            delta = _pool_backward(delta, inp)
        elif kind == "conv":
            delta, dw, db = _conv_backward(delta, inp, m.params[i]["w"], int(layer.get("stride", 1)))
            grads[i] = {"w": dw, "b": db}
    return loss, grads


def cnn_dataset_loss(m: CnnModel, xs: np.ndarray, ys: np.ndarray) -> float:
    loss, _ = _cnn_loss_and_grads(m, xs, ys)
    return loss


def cnn_train(data, cfg: TrainConfig, spec=DEFAULT_CNN_SPEC, tap_points=None) -> CnnModel:
    """Mini-batch gradient descent on mean cross-entropy over the spec'd stack."""
    pairs = list(data)
    if not pairs:
        raise ValidationError("training data is empty")
    input_shape = np.asarray(pairs[0][0], dtype=float).shape
    xs = np.stack([np.asarray(x, dtype=float) for x, _ in pairs])
    ys = np.array([int(y) for _, y in pairs])
    if set(ys.tolist()) != {0, 1}:
        raise ValidationError("training data must contain both labels")
    m = cnn_init(spec, seed=cfg.seed, input_shape=input_shape, tap_points=tap_points)
    rng = make_rng(cfg.seed)
    n = xs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = _cnn_loss_and_grads(m, xs[idx], ys[idx])
            new_params = []
            for p, g in zip(m.params, grads):
                if p is None:
                    new_params.append(None)
                else:
                    new_params.append(
                        {
                            "w": p["w"] - cfg.learning_rate * g["w"],
                            "b": p["b"] - cfg.learning_rate * g["b"],
                        }
                    )
            m = CnnModel(
                spec=m.spec,
                params=tuple(new_params),
                tap_points=m.tap_points,
                input_shape=m.input_shape,
            )
    return m


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def central_difference(f: Callable[[np.ndarray], float], theta: np.ndarray, idx: int, h: float) -> float:
    """(f(theta + h e_idx) - f(theta - h e_idx)) / 2h."""
    plus = theta.copy()
    plus[idx] += h
    minus = theta.copy()
    minus[idx] -= h
    return (f(plus) - f(minus)) / (2.0 * h)


def max_relative_gradient_error(
    f: Callable[[np.ndarray], float],
    grad: np.ndarray,
    theta: np.ndarray,
    indices: Sequence[int],
    h: float,
) -> float:
    """Worst relative disagreement between ``grad`` and central differences of ``f``."""
    worst = 0.0
    for idx in indices:
        fd = central_difference(f, theta, int(idx), h)
        bp = float(grad[int(idx)])
        err = abs(bp - fd) / max(abs(bp) + abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


def _mlp_flat_params(m: MlpModel) -> np.ndarray:
    return np.concatenate([m.w1.reshape(-1), m.b1, m.w2.reshape(-1), [m.b2]])


def _mlp_from_flat(theta: np.ndarray) -> MlpModel:
    i = 0
    w1 = theta[i : i + MLP_HIDDEN * MLP_INPUT].reshape(MLP_HIDDEN, MLP_INPUT)
    i += MLP_HIDDEN * MLP_INPUT
    b1 = theta[i : i + MLP_HIDDEN]
    i += MLP_HIDDEN
    w2 = theta[i : i + MLP_HIDDEN].reshape(1, MLP_HIDDEN)
    i += MLP_HIDDEN
    return MlpModel(w1=w1, b1=b1, w2=w2, b2=float(theta[i]))


def _cnn_flat_params(m: CnnModel) -> np.ndarray:
    chunks = []
    for p in m.params:
        if p is not None:
            chunks.append(p["w"].reshape(-1))
            chunks.append(p["b"].reshape(-1))
    return np.concatenate(chunks)


def _cnn_from_flat(m: CnnModel, theta: np.ndarray) -> CnnModel:
    params = []
    i = 0
    for p in m.params:
        if p is None:
            params.append(None)
            continue
        wn = int(np.prod(p["w"].shape))
        bn = int(np.prod(p["b"].shape))
        params.append(
            {"w": theta[i : i + wn].reshape(p["w"].shape), "b": theta[i + wn : i + wn + bn]}
        )
        i += wn + bn
    return CnnModel(spec=m.spec, params=tuple(params), tap_points=m.tap_points, input_shape=m.input_shape)


def grad_check(model, sample, step: float, n_params: int = 20, seed: int = 0) -> float:
    """Backprop vs central finite differences over a random parameter subset.

    ``sample`` is one (input, label) pair matching the model kind.  Returns the
    max relative error max|g_bp - g_fd| / max(|g_bp| + |g_fd|, 1e-8).
    """
    if step <= 0:
        raise ValidationError(f"step must be positive, got {step}")
    x, y = sample
    if isinstance(model, MlpModel):
        xb = np.asarray(x, dtype=float)[None, :]
        yb = np.array([float(y)])
        theta = _mlp_flat_params(model)
        _, (gw1, gb1, gw2, gb2) = _mlp_batch_loss_grads(model, xb, yb)
        grad = np.concatenate([gw1.reshape(-1), gb1, gw2.reshape(-1), [gb2]])

        def f(t: np.ndarray) -> float:
            return mlp_dataset_loss(_mlp_from_flat(t), xb, yb)

    elif isinstance(model, CnnModel):
        xb = np.asarray(x, dtype=float)[None]
        yb = np.array([int(y)])
        theta = _cnn_flat_params(model)
        _, grads = _cnn_loss_and_grads(model, xb, yb)
        chunks = []
        for g in grads:
            if g is not None:
                chunks.append(g["w"].reshape(-1))
                chunks.append(g["b"].reshape(-1))
        grad = np.concatenate(chunks)

        def f(t: np.ndarray) -> float:
            return cnn_dataset_loss(_cnn_from_flat(model, t), xb, yb)

    else:
        raise ValidationError(f"grad_check supports MlpModel or CnnModel, got {type(model)}")

    rng = make_rng(seed)
    count = min(max(n_params, 20), theta.size)
    indices = rng.choice(theta.size, size=count, replace=False)
    return max_relative_gradient_error(f, grad, theta, indices, step)
