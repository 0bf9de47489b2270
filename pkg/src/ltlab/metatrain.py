"""Bilevel training: a classifier updated with difficulty-weighted CE while
the difficulty net learns from a one-step-lookahead meta objective.

One iteration does three updates in order:
  1. virtual step: phi_hat = phi - alpha * grad_phi of the weighted CE (plain
     SGD, whatever the classifier's real optimizer is),
  2. difficulty-net step on grad_theta of lam * driver + mean meta CE at
     phi_hat, through the configured optimizer,
  3. actual classifier step on the same batch, with the weights re-computed
     from the just-updated difficulty net.

Per-class accuracies feeding the difficulty net are refreshed once per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import focal_logit_cotangent, focal_loss
from .difficulty import (
    AbsDifficultyNet,
    DifficultyNet,
    SampleDifficultyNet,
    abs_dnet_forward,
    dnet_forward,
    driver_loss,
    difficulty_entropy,
    normalized_accuracy,
    pad_losses,
    sample_dnet_forward,
    sample_driver_targets,
    target_fit_loss,
    weights_from_difficulty,
)
from .nnet import (
    Classifier,
    OptimizerState,
    add_scaled,
    backward,
    backward_from_logit_cotangent,
    classifier_logits,
    make_optimizer,
    optimizer_step,
    output_vjp,
    per_class_accuracy,
    per_sample_grad_dots,
    weighted_ce_loss,
)
from .rng import consumer_rng

VARIANTS = ("dnet", "abs", "sample", "nodriver", "nometa")


class NumericError(ArithmeticError):
    """Training hit a non-finite loss. Carries whatever metrics accumulated."""

    def __init__(self, message: str, metrics: "RunMetrics | None" = None):
        super().__init__(message)
        self.metrics = metrics


@dataclass(frozen=True)
class OptSpec:
    """Optimizer settings; build() turns them into fresh mutable state."""

    kind: str = "momentum"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0

    def build(self) -> OptimizerState:
        return make_optimizer(
            self.kind, self.lr, momentum=self.momentum, weight_decay=self.weight_decay
        )


@dataclass(frozen=True)
class TrainConfig:
    T: int  # total iterations
    b: int  # train batch size
    m: int  # meta batch size
    alpha: float = 0.1  # virtual (and usually actual) classifier step size
    lam: float = 0.3  # driver loss coefficient; 0.3 is the recommended default
    variant: str = "dnet"
    seed: int = 0
    classifier_opt: OptSpec = field(default_factory=lambda: OptSpec("momentum", 0.1, 0.9, 1e-4))
    dnet_opt: OptSpec = field(default_factory=lambda: OptSpec("adam", 1e-3, 0.9, 1e-4))
    steps_per_epoch: int | None = None  # default: train_size // b
    trace_classes: tuple[int, ...] = ()
    many_min: int = 100
    few_max: int = 20
    record_losses: bool = False

    def __post_init__(self):
        if self.T < 0 or self.b < 1 or self.m < 1:
            raise ValueError("T must be >= 0 and batch sizes >= 1")
        if self.alpha <= 0 or self.lam < 0:
            raise ValueError("alpha must be positive and lam non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.many_min <= self.few_max:
            raise ValueError("many_min must exceed few_max")


@dataclass(frozen=True)
class SplitAccuracy:
    overall: float
    many: float | None
    medium: float | None
    few: float | None


def evaluate_splits(acc, counts, thresholds=(100, 20)) -> SplitAccuracy:
    """Unweighted split means: many (count > many_min), few (count < few_max),
    medium (in between, inclusive). Empty splits come back as None."""
    many_min, few_max = thresholds
    if many_min <= few_max:
        raise ValueError("many_min must exceed few_max")
    a = np.asarray(acc, dtype=np.float64)
    n = np.asarray(counts)
    if a.shape != n.shape or a.ndim != 1:
        raise ValueError("acc and counts must be matching vectors")
    many = n > many_min
    few = n < few_max
    medium = ~many & ~few

    def mean_of(mask):
        return float(a[mask].mean()) if mask.any() else None

    return SplitAccuracy(float(a.mean()), mean_of(many), mean_of(medium), mean_of(few))


@dataclass
class EpochRecord:
    epoch: int
    accuracy: np.ndarray  # (C,) per-class, on the meta/val set
    overall: float
    many: float | None
    medium: float | None
    few: float | None
    entropy: float | None
    difficulty: np.ndarray | None  # (C,) snapshot, class-level variants only


@dataclass
class RunMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    weight_trace: list[tuple[int, int, float]] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def _as_clf(model) -> Classifier:
    return model if isinstance(model, Classifier) else Classifier(model)


def virtual_step(model, batch_x, batch_y, weights, alpha: float):
    """One plain-SGD lookahead on the weighted CE; returns the same kind of
    model it was given and never touches optimizer state."""
    clf = _as_clf(model)
    grads = backward(clf, batch_x, batch_y, weights)
    net = add_scaled(clf.net, grads, -alpha)
    return replace(clf, net=net) if isinstance(model, Classifier) else net


def _lookahead_dots(model, weights, bx, by, mx, my, alpha):
    """<grad_phi CE_i, grad_phi_hat mean meta CE> for each train sample."""
    clf = _as_clf(model)
    looked = virtual_step(clf, bx, by, weights, alpha)
    g_meta = backward(looked, mx, my, np.ones(my.size))
    return per_sample_grad_dots(clf, bx, by, g_meta)


def meta_gradient(
    dnet: DifficultyNet, model, acc, batch_x, batch_y, meta_x, meta_y,
    alpha: float, lam: float,
):
    """Gradient wrt the difficulty net of lam * driver + mean meta CE at the
    virtual step phi_hat(theta).

    phi_hat depends on theta only through the per-sample weights d[y_i], so
    the whole meta term reduces to one backprop through the difficulty net
    with output cotangent v_c = -(alpha/b) * sum_{i: y_i = c} <g_i, g_meta>.
    """
    a = acc.per_class if hasattr(acc, "per_class") else np.asarray(acc, dtype=np.float64)
    d = dnet_forward(dnet, a)
    w = weights_from_difficulty(d, batch_y)
    dots = _lookahead_dots(model, w, batch_x, batch_y, meta_x, meta_y, alpha)
    v = np.zeros(d.size)
    np.add.at(v, batch_y, dots)
    v *= -(alpha / batch_y.size)
    _, driver_cot = driver_loss(d, a)
    u = lam * driver_cot + v
    return output_vjp(dnet.net, a[None, :], u[None, :])


def _meta_gradient_abs(adnet, model, acc, bx, by, mx, my, alpha, lam):
    a = acc.per_class if hasattr(acc, "per_class") else np.asarray(acc, dtype=np.float64)
    d = abs_dnet_forward(adnet, a)
    w = weights_from_difficulty(d, by)
    dots = _lookahead_dots(model, w, bx, by, mx, my, alpha)
    v = np.zeros(d.size)
    np.add.at(v, by, dots)
    v *= -(alpha / by.size)
    _, driver_cot = driver_loss(d, a)
    u = lam * driver_cot + v
    # each class is an independent row through the scalar net
    return output_vjp(adnet.net, a[:, None], u[:, None])


def _meta_gradient_sample(sdnet, model, losses, bx, by, mx, my, alpha, lam):
    n = losses.size
    d = sample_dnet_forward(sdnet, losses)
    dots = _lookahead_dots(model, d, bx, by, mx, my, alpha)
    v = -(alpha / n) * dots
    _, fit_cot = target_fit_loss(d, sample_driver_targets(losses))
    u = np.zeros(sdnet.batch_width)
    u[:n] = lam * fit_cot + v  # padding outputs are discarded: zero cotangent
    return output_vjp(sdnet.net, pad_losses(sdnet.batch_width, losses)[None, :], u[None, :])


def _run_epochs(cfg: TrainConfig, train_set, meta_set, current_model, step_fn, snap_fn):
    """Shared scaffolding: batching, per-epoch accuracy refresh, metric rows.

    step_fn(t, bx, by, mx, my, acc) -> (loss, class difficulty vector | None)
    snap_fn(acc) -> epoch-record difficulty vector | None
    """
    n = train_set.size
    spe = cfg.steps_per_epoch if cfg.steps_per_epoch is not None else n // cfg.b
    if spe < 1 or spe * cfg.b > n:
        raise ValueError("steps_per_epoch * b must fit inside the train set")
    if cfg.m > meta_set.size:
        raise ValueError("meta batch larger than the meta set")
    bad = [c for c in cfg.trace_classes if not 0 <= c < train_set.class_count]
    if bad:
        raise ValueError(f"trace classes outside [0, C): {bad}")

    rng = consumer_rng(cfg.seed, "batch")
    metrics = RunMetrics()
    acc = per_class_accuracy(current_model(), meta_set, "meta")
    perm = np.empty(0, dtype=np.int64)
    for t in range(cfg.T):
        pos = t % spe
        if pos == 0:
            perm = rng.permutation(n)
        idx = perm[pos * cfg.b : (pos + 1) * cfg.b]
        bx, by = train_set.features[idx], train_set.labels[idx]
        midx = rng.choice(meta_set.size, size=cfg.m, replace=False)
        mx, my = meta_set.features[midx], meta_set.labels[midx]

        loss, d_class = step_fn(t, bx, by, mx, my, acc)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at step {t}", metrics)
        if cfg.record_losses:
            metrics.step_losses.append(float(loss))
        if d_class is not None and cfg.trace_classes:
            norm = d_class / d_class.sum()
            for c in cfg.trace_classes:
                metrics.weight_trace.append((t, c, float(norm[c])))

        if pos == spe - 1 or t == cfg.T - 1:
            acc = per_class_accuracy(current_model(), meta_set, "meta")
            splits = evaluate_splits(
                acc.per_class, train_set.per_class_counts, (cfg.many_min, cfg.few_max)
            )
            d_snap = snap_fn(acc)
            metrics.epochs.append(
                EpochRecord(
                    epoch=t // spe,
                    accuracy=acc.per_class,
                    overall=splits.overall,
                    many=splits.many,
                    medium=splits.medium,
                    few=splits.few,
                    entropy=difficulty_entropy(d_snap) if d_snap is not None else None,
                    difficulty=d_snap,
                )
            )
    return metrics


def _nometa_difficulty(acc) -> np.ndarray:
    # direct target, no learned net; clamp keeps the entropy log finite
    return np.clip(1.0 - normalized_accuracy(acc), 1e-12, None)


def train(cfg: TrainConfig, train_set, meta_set, classifier, dnet=None):
    """Run cfg.T three-step iterations (or the variant's reduction of them).

    Returns (classifier, difficulty net or None, RunMetrics). T=0 returns the
    inputs untouched with empty metrics.
    """
    counts = meta_set.per_class_counts
    if counts.min() != counts.max():
        raise ValueError("meta set must be class-balanced")
    model = _as_clf(classifier)
    needs_net = cfg.variant in ("dnet", "abs", "sample", "nodriver")
    if needs_net and dnet is None:
        raise ValueError(f"variant {cfg.variant!r} requires a difficulty net")
    expected = {
        "dnet": DifficultyNet, "nodriver": DifficultyNet,
        "abs": AbsDifficultyNet, "sample": SampleDifficultyNet,
    }
    if needs_net and not isinstance(dnet, expected[cfg.variant]):
        raise ValueError(f"variant {cfg.variant!r} got {type(dnet).__name__}")
    if cfg.variant == "sample" and cfg.b > dnet.batch_width:
        raise ValueError("batch size exceeds the sample net width")

    clf_opt = cfg.classifier_opt.build()
    dn_opt = cfg.dnet_opt.build() if needs_net else None
    lam = 0.0 if cfg.variant == "nodriver" else cfg.lam

    def classifier_step(bx, by, w):
        nonlocal model, clf_opt
        loss, _ = weighted_ce_loss(classifier_logits(model, bx), by, w)
        grads = backward(model, bx, by, w)
        net, clf_opt = optimizer_step(clf_opt, model.net, grads)
        model = replace(model, net=net)
        return loss

    def step_class_level(t, bx, by, mx, my, acc):
        nonlocal dnet, dn_opt
        if cfg.variant == "abs":
            g_theta = _meta_gradient_abs(dnet, model, acc, bx, by, mx, my, cfg.alpha, lam)
        else:
            g_theta = meta_gradient(dnet, model, acc, bx, by, mx, my, cfg.alpha, lam)
        net, dn_opt = optimizer_step(dn_opt, dnet.net, g_theta)
        dnet = replace(dnet, net=net)
        # weights re-computed with the updated net before the actual step
        if cfg.variant == "abs":
            d = abs_dnet_forward(dnet, acc.per_class)
        else:
            d = dnet_forward(dnet, acc)
        loss = classifier_step(bx, by, weights_from_difficulty(d, by))
        return loss, d

    def step_sample(t, bx, by, mx, my, acc):
        nonlocal dnet, dn_opt
        _, ce = weighted_ce_loss(classifier_logits(model, bx), by, np.ones(by.size))
        g_theta = _meta_gradient_sample(dnet, model, ce, bx, by, mx, my, cfg.alpha, lam)
        net, dn_opt = optimizer_step(dn_opt, dnet.net, g_theta)
        dnet = replace(dnet, net=net)
        loss = classifier_step(bx, by, sample_dnet_forward(dnet, ce))
        return loss, None

    def step_nometa(t, bx, by, mx, my, acc):
        d = _nometa_difficulty(acc)
        loss = classifier_step(bx, by, weights_from_difficulty(d, by))
        return loss, d

    if cfg.variant == "sample":
        step_fn, snap_fn = step_sample, lambda acc: None
    elif cfg.variant == "nometa":
        step_fn, snap_fn = step_nometa, _nometa_difficulty
    elif cfg.variant == "abs":
        step_fn, snap_fn = step_class_level, lambda acc: abs_dnet_forward(dnet, acc.per_class)
    else:
        step_fn, snap_fn = step_class_level, lambda acc: dnet_forward(dnet, acc)

    metrics = _run_epochs(cfg, train_set, meta_set, lambda: model, step_fn, snap_fn)
    out_model = model if isinstance(classifier, Classifier) else model.net
    return out_model, dnet, metrics


def train_weighted(cfg: TrainConfig, train_set, meta_set, classifier,
                   class_weight_fn=None, focal_gamma: float | None = None):
    """Single-level comparison loop: same batching, accuracy refresh, and
    metrics as train(), but the weights come from a fixed scheme.

    class_weight_fn(acc, counts) -> (C,) class weights; None means plain CE.
    focal_gamma switches to the focal objective instead of weighted CE.
    """
    model = _as_clf(classifier)
    clf_opt = cfg.classifier_opt.build()

    def step_fn(t, bx, by, mx, my, acc):
        nonlocal model, clf_opt
        if focal_gamma is not None:
            logits = classifier_logits(model, bx)
            loss, _ = focal_loss(logits, by, focal_gamma)
            grads = backward_from_logit_cotangent(
                model, bx, focal_logit_cotangent(logits, by, focal_gamma)
            )
        else:
            if class_weight_fn is None:
                w = np.ones(by.size)
            else:
                w = class_weight_fn(acc, train_set.per_class_counts)[by]
            loss, _ = weighted_ce_loss(classifier_logits(model, bx), by, w)
            grads = backward(model, bx, by, w)
        net, clf_opt = optimizer_step(clf_opt, model.net, grads)
        model = replace(model, net=net)
        return loss, None

    metrics = _run_epochs(cfg, train_set, meta_set, lambda: model, step_fn, lambda acc: None)
    out_model = model if isinstance(classifier, Classifier) else model.net
    return out_model, metrics
