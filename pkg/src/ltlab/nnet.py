"""Minimal dense-net numerics: forward, reverse-mode gradients, per-sample
gradient dot products, and the three optimizer rules the training loops use.

Everything is float64 and plain numpy. There is no general autodiff graph;
the backward passes below are hand-derived for this fixed layer structure
(affine -> {relu|identity|sigmoid}, optional cosine output head).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

NORM_EPS = 1e-12  # guard for cosine-head norms
SIG_CLAMP = 1e-12  # sigmoid outputs stay inside (0, 1) even under underflow

Grads = list[tuple[np.ndarray, np.ndarray]]  # (dW, db) per layer


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str  # "relu" | "identity" | "sigmoid"


@dataclass
class MLP:
    layers: list[Layer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    def param_count(self) -> int:
        return sum(l.w.size + l.b.size for l in self.layers)


@dataclass
class Classifier:
    """A dense net plus its output head. Linear heads read logits straight off
    the last affine layer; cosine heads renormalize features and class rows."""

    net: MLP
    head: str = "linear"  # "linear" | "cosine"
    scale: float = 16.0

    def __post_init__(self):
        if self.head not in ("linear", "cosine"):
            raise ValueError(f"unknown head {self.head!r}")


@dataclass(frozen=True)
class AccuracyVector:
    """Per-class accuracies plus a tag naming the set they came from."""

    per_class: np.ndarray  # (C,) float64 in [0, 1]
    evaluated_on: str = "eval"

    def __post_init__(self):
        a = np.ascontiguousarray(self.per_class, dtype=np.float64)
        if a.ndim != 1:
            raise ValueError("per_class must be a vector")
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("accuracies must lie in [0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "per_class", a)

    @property
    def mean(self) -> float:
        return float(self.per_class.mean())


def init_mlp(sizes: list[int], out_act: str, rng: np.random.Generator) -> MLP:
    """Scaled-uniform fan-in init, zero biases: W ~ U(-1/sqrt(in), 1/sqrt(in))."""
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError("sizes must list at least input and output widths, all >= 1")
    layers = []
    for k in range(len(sizes) - 1):
        fan_in, out = sizes[k], sizes[k + 1]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(out, fan_in))
        act = out_act if k == len(sizes) - 2 else "relu"
        layers.append(Layer(w, np.zeros(out), act))
    return MLP(layers)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_act(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "identity":
        return z
    if act == "sigmoid":
        return np.clip(sigmoid(z), SIG_CLAMP, 1.0 - SIG_CLAMP)
    raise ValueError(f"unknown activation {act!r}")


def _act_grad(z, act):
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "identity":
        return None  # multiply by 1: skip
    if act == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {act!r}")


def _cache_layers(layers, x):
    """Run a slice of layers, keeping (input, pre-activation) per layer."""
    h = np.ascontiguousarray(x, dtype=np.float64)
    steps = []
    for layer in layers:
        z = h @ layer.w.T + layer.b
        steps.append((h, z))
        h = _apply_act(z, layer.act)
    return steps, h


def forward(net: MLP, inputs: np.ndarray) -> np.ndarray:
    """Plain dense forward. inputs (n, in_dim) -> (n, out_dim)."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"inputs must be (n, {net.in_dim}), got {x.shape}")
    _, out = _cache_layers(net.layers, x)
    return out


def cosine_head_forward(net: MLP, inputs: np.ndarray, scale: float) -> np.ndarray:
    """Logits = scale * cos(feature, class row) using the last layer as
    prototypes; its bias plays no part. Norms are guarded at 1e-12."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"inputs must be (n, {net.in_dim}), got {x.shape}")
    _, feats = _cache_layers(net.layers[:-1], x)
    _, _, _, _, logits = _cosine_parts(net.layers[-1], feats, scale)
    return logits


def _cosine_parts(last: Layer, feats, scale):
    r_f = np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), NORM_EPS)
    f_hat = feats / r_f
    r_w = np.maximum(np.linalg.norm(last.w, axis=1, keepdims=True), NORM_EPS)
    w_hat = last.w / r_w
    return r_f, f_hat, r_w, w_hat, scale * f_hat @ w_hat.T


def _as_classifier(model) -> Classifier:
    return model if isinstance(model, Classifier) else Classifier(model)


def classifier_logits(model, inputs: np.ndarray) -> np.ndarray:
    clf = _as_classifier(model)
    if clf.head == "cosine":
        return cosine_head_forward(clf.net, inputs, clf.scale)
    return forward(clf.net, inputs)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def weighted_ce_loss(
    logits: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """(1/b) * sum_i w_i * CE_i and the per-sample terms w_i * CE_i."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be (n, C)")
    n = logits.shape[0]
    if labels.shape != (n,) or weights.shape != (n,):
        raise ValueError("labels and weights must be (n,) matching logits")
    if n == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("labels outside [0, C)")
    ce = -log_softmax(logits)[np.arange(n), labels]
    per_sample = weights * ce
    return float(per_sample.mean()), per_sample


def _logits_cache(model, x):
    clf = _as_classifier(model)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("batch must be 2-D")
    if clf.head == "cosine":
        steps, feats = _cache_layers(clf.net.layers[:-1], x)
        cos = _cosine_parts(clf.net.layers[-1], feats, clf.scale)
        logits = cos[4]
    else:
        steps, logits = _cache_layers(clf.net.layers, x)
        cos = None
    return clf, steps, cos, logits


def _ce_probs(model, x, labels):
    clf, steps, cos, logits = _logits_cache(model, x)
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be (n,)")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("labels outside [0, C)")
    return clf, steps, cos, logits, softmax(logits)


def _walk_grads(layers, steps, d_post) -> Grads:
    """Cotangent wrt a layer slice's post-activation output -> summed grads."""
    grads: Grads = []
    for k in reversed(range(len(layers))):
        h_in, z = steps[k]
        ag = _act_grad(z, layers[k].act)
        dz = d_post if ag is None else d_post * ag
        grads.append((dz.T @ h_in, dz.sum(axis=0)))
        d_post = dz @ layers[k].w
    grads.reverse()
    return grads


def _walk_dots(layers, steps, d_post, direction, dots):
    """Per-sample cotangent rows -> per-sample <grad_i, direction>, accumulated
    into dots. Per-sample weight grads are rank-one (dz_i outer h_i), so the
    dot collapses to (dz @ Vw) . h row-wise without materializing them."""
    for k in reversed(range(len(layers))):
        h_in, z = steps[k]
        ag = _act_grad(z, layers[k].act)
        dz = d_post if ag is None else d_post * ag
        vw, vb = direction[k]
        dots += ((h_in @ vw.T) * dz).sum(axis=1) + dz @ vb
        d_post = dz @ layers[k].w
    return dots


def _cosine_grads(last, cos, g):
    """Cotangent wrt cosine logits -> (dW_last, d_features)."""
    r_f, f_hat, r_w, w_hat, _ = cos
    d_w_hat = g.T @ f_hat
    # normalize() backward: project out the radial component, divide by norm
    dw = (d_w_hat - (d_w_hat * w_hat).sum(axis=1, keepdims=True) * w_hat) / r_w
    d_f_hat = g @ w_hat
    d_f = (d_f_hat - (d_f_hat * f_hat).sum(axis=1, keepdims=True) * f_hat) / r_f
    return dw, d_f


def _grads_from_logit_cot(clf, steps, cos, g) -> Grads:
    if clf.head == "cosine":
        last = clf.net.layers[-1]
        dw, d_f = _cosine_grads(last, cos, clf.scale * g)
        grads = _walk_grads(clf.net.layers[:-1], steps, d_f)
        grads.append((dw, np.zeros_like(last.b)))  # cosine head ignores bias
        return grads
    return _walk_grads(clf.net.layers, steps, g)


def backward_from_logit_cotangent(model, batch, cotangent: np.ndarray) -> Grads:
    """Parameter grads given dLoss/dlogits; shared by the CE and focal paths."""
    clf, steps, cos, logits = _logits_cache(model, batch)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != logits.shape:
        raise ValueError(f"cotangent must be {logits.shape}, got {cot.shape}")
    return _grads_from_logit_cot(clf, steps, cos, cot)


def backward(model, batch, labels, weights) -> Grads:
    """Gradient of (1/b) * sum_i w_i * CE_i wrt every layer's (W, b)."""
    weights = np.asarray(weights, dtype=np.float64)
    clf, steps, cos, _, probs = _ce_probs(model, batch, labels)
    n = probs.shape[0]
    if weights.shape != (n,):
        raise ValueError("weights must be (n,)")
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0  # d CE_i / d logits = p - onehot
    g *= (weights / n)[:, None]
    return _grads_from_logit_cot(clf, steps, cos, g)


def per_sample_grad_dots(model, batch, labels, direction: Grads) -> np.ndarray:
    """<grad_phi CE_i, direction> for every sample i, unweighted."""
    clf, steps, cos, _, probs = _ce_probs(model, batch, labels)
    n = probs.shape[0]
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    dots = np.zeros(n)
    if clf.head == "cosine":
        r_f, f_hat, r_w, w_hat, _ = cos
        vw, _ = direction[-1]  # bias carries no cosine gradient
        a = f_hat @ vw.T
        b = f_hat @ w_hat.T
        u = (w_hat * vw).sum(axis=1)
        gs = clf.scale * g
        dots += (gs * (a - b * u[None, :]) / r_w.T).sum(axis=1)
        d_f_hat = gs @ w_hat
        d_f = (d_f_hat - (d_f_hat * f_hat).sum(axis=1, keepdims=True) * f_hat) / r_f
        return _walk_dots(clf.net.layers[:-1], steps, d_f, direction[:-1], dots)
    return _walk_dots(clf.net.layers, steps, g, direction, dots)


def per_sample_grad_dot(model, sample, label, direction: Grads) -> float:
    """Single-sample case of per_sample_grad_dots."""
    x = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    y = np.asarray([label])
    return float(per_sample_grad_dots(model, x, y, direction)[0])


def output_vjp(net: MLP, inputs: np.ndarray, cotangent: np.ndarray) -> Grads:
    """Grads of <cotangent, net(inputs)> wrt params; cotangent sits on the
    post-activation output, so a sigmoid head is chained through here."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("inputs must be 2-D")
    cot = np.asarray(cotangent, dtype=np.float64)
    steps, out = _cache_layers(net.layers, x)
    if cot.shape != out.shape:
        raise ValueError(f"cotangent must be {out.shape}, got {cot.shape}")
    return _walk_grads(net.layers, steps, cot)


# ---------------------------------------------------------------------------
# gradient containers and optimizers


def zeros_like_grads(net: MLP) -> Grads:
    return [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]


def add_scaled(net: MLP, grads: Grads, coeff: float) -> MLP:
    """New net with params + coeff * grads; activations carried over."""
    layers = [
        Layer(l.w + coeff * dw, l.b + coeff * db, l.act)
        for l, (dw, db) in zip(net.layers, grads)
    ]
    return MLP(layers)


def grad_dot(a: Grads, b: Grads) -> float:
    total = 0.0
    for (aw, ab), (bw, bb) in zip(a, b):
        total += float(np.vdot(aw, bw)) + float(np.vdot(ab, bb))
    return total


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "momentum" | "adam"
    lr: float
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list | None = None  # velocity (momentum) or first moment (adam)
    v: list | None = None  # second moment (adam)


def make_optimizer(kind: str, lr: float, **kwargs) -> OptimizerState:
    if kind not in ("sgd", "momentum", "adam"):
        raise ValueError(f"unknown optimizer {kind!r}")
    if lr <= 0:
        raise ValueError("lr must be positive")
    return OptimizerState(kind=kind, lr=lr, **kwargs)


def optimizer_step(
    state: OptimizerState, net: MLP, grads: Grads
) -> tuple[MLP, OptimizerState]:
    """One update. Weight decay enters every rule as gradient += wd * param."""
    effective = [
        (dw + state.weight_decay * l.w, db + state.weight_decay * l.b)
        for l, (dw, db) in zip(net.layers, grads)
    ]
    t = state.step + 1
    if state.kind == "sgd":
        return add_scaled(net, effective, -state.lr), replace(state, step=t)
    if state.kind == "momentum":
        m_old = state.m or zeros_like_grads(net)
        m_new = [
            (state.momentum * mw + gw, state.momentum * mb + gb)
            for (mw, mb), (gw, gb) in zip(m_old, effective)
        ]
        return add_scaled(net, m_new, -state.lr), replace(state, step=t, m=m_new)
    # adam with bias correction
    m_old = state.m or zeros_like_grads(net)
    v_old = state.v or zeros_like_grads(net)
    b1, b2 = state.beta1, state.beta2
    m_new = [
        (b1 * mw + (1 - b1) * gw, b1 * mb + (1 - b1) * gb)
        for (mw, mb), (gw, gb) in zip(m_old, effective)
    ]
    v_new = [
        (b2 * vw + (1 - b2) * gw**2, b2 * vb + (1 - b2) * gb**2)
        for (vw, vb), (gw, gb) in zip(v_old, effective)
    ]
    c1, c2 = 1 - b1**t, 1 - b2**t
    update = [
        ((mw / c1) / (np.sqrt(vw / c2) + state.eps), (mb / c1) / (np.sqrt(vb / c2) + state.eps))
        for (mw, mb), (vw, vb) in zip(m_new, v_new)
    ]
    return add_scaled(net, update, -state.lr), replace(state, step=t, m=m_new, v=v_new)


# ---------------------------------------------------------------------------
# evaluation and checkpoints


def per_class_accuracy(model, eval_set, evaluated_on: str = "eval") -> AccuracyVector:
    """Argmax accuracy per class; ties go to the lowest class index."""
    missing = np.flatnonzero(eval_set.per_class_counts == 0)
    if missing.size:
        raise ValueError(f"missing classes in eval set: {missing.tolist()}")
    logits = classifier_logits(model, eval_set.features)
    pred = np.argmax(logits, axis=1)  # first max = lowest index on ties
    acc = np.empty(eval_set.class_count)
    for c in range(eval_set.class_count):
        sel = eval_set.labels == c
        acc[c] = float((pred[sel] == c).mean())
    return AccuracyVector(acc, evaluated_on)


_ACT_BYTE = {"identity": 0, "relu": 1, "sigmoid": 2}
_BYTE_ACT = {v: k for k, v in _ACT_BYTE.items()}
_MAGIC = b"LTNN1"


def save_checkpoint(net: MLP, path: str) -> None:
    """Little-endian binary: magic, layer count, then per layer rows, cols,
    row-major f64 weights, f64 biases, one activation tag byte."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            rows, cols = layer.w.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(layer.w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())
            fh.write(struct.pack("B", _ACT_BYTE[layer.act]))


def load_checkpoint(path: str) -> MLP:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != _MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    off = 5
    (n_layers,) = struct.unpack_from("<I", raw, off)
    off += 4
    layers = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
        off += 8 * rows * cols
        b = np.frombuffer(raw, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        tag = raw[off]
        off += 1
        if tag not in _BYTE_ACT:
            raise ValueError(f"unknown activation tag {tag}")
        layers.append(Layer(w.reshape(rows, cols).copy(), b.copy(), _BYTE_ACT[tag]))
    if off != len(raw):
        raise ValueError("trailing bytes after last layer")
    return MLP(layers)
