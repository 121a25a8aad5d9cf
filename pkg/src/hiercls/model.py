"""Small trainable softmax classifiers with two output heads, a from-scratch
Adam optimizer, a deterministic training loop, and validation-loss-based
checkpoint selection.

A model is affine by default (one weight matrix and bias); an optional
single hidden layer uses tanh, whose closed-form derivative keeps all
gradients analytic. The ``class`` head emits one logit per leaf; the
``conditional`` head emits one logit per non-root node and is normalized per
sibling group by the loss. Training is strictly single-threaded and seeded,
so identical inputs reproduce traces bitwise.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .fileio import fmt
from .metrics import MetricReport, report_from_indices
from .taxonomy import Taxonomy

__all__ = [
    "LossSpec",
    "build_objective",
    "ClassifierModel",
    "init_model",
    "forward",
    "AdamOptimizer",
    "TrainSchedule",
    "CheckpointRecord",
    "TrainingTrace",
    "TrainingDivergedError",
    "train",
    "fit_polynomial",
    "polynomial_minimum",
    "select_checkpoints",
    "evaluate_model",
    "evaluate_checkpoints",
    "AveragedReport",
    "confidence_half_width",
    "trace_to_csv",
    "checkpoint_to_text",
    "checkpoint_from_text",
]

HEADS = ("class", "conditional")


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass(frozen=True)
class LossSpec:
    """Which loss to train with: ``ce``, ``hxe`` (needs alpha), or ``soft``
    (needs beta)."""

    kind: str
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ("ce", "hxe", "soft"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "hxe" and self.alpha is None:
            raise ValueError("hxe loss needs alpha")
        if self.kind == "soft" and self.beta is None:
            raise ValueError("soft loss needs beta")

    @property
    def parameter(self) -> float | None:
        return self.alpha if self.kind == "hxe" else (
            self.beta if self.kind == "soft" else None)

    def describe(self) -> str:
        if self.kind == "hxe":
            return f"hxe(alpha={self.alpha})"
        if self.kind == "soft":
            return f"soft(beta={self.beta})"
        return "ce"


def build_objective(tax: Taxonomy, spec: LossSpec, head: str):
    """Bind a loss to a taxonomy and head; returns a batch objective with
    ``loss_batch`` and ``grad_batch``."""
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}, got {head!r}")
    if head == "conditional":
        if spec.kind == "soft":
            raise ValueError("soft labels require the class head")
        alpha = 0.0 if spec.kind == "ce" else spec.alpha
        return L.ConditionalHxeObjective(tax, L.hxe_weights(tax, alpha))
    if spec.kind == "ce":
        return L.ClassCrossEntropy(tax)
    if spec.kind == "hxe":
        return L.ClassHxeObjective(tax, L.hxe_weights(tax, spec.alpha))
    return L.ClassSoftLabelObjective(L.soft_label_matrix(tax, spec.beta))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class ClassifierModel:
    head: str
    layers: list[tuple[np.ndarray, np.ndarray]]
    input_dim: int
    output_dim: int

    def parameters(self) -> list[np.ndarray]:
        flat = []
        for W, b in self.layers:
            flat.extend((W, b))
        return flat

    def snapshot(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(W.copy(), b.copy()) for W, b in self.layers]

    def restore(self, snap) -> None:
        for (W, b), (Ws, bs) in zip(self.layers, snap):
            W[...] = Ws
            b[...] = bs


def output_dim_for(tax: Taxonomy, head: str) -> int:
    if head == "class":
        return tax.num_leaves
    if head == "conditional":
        return len(tax.nonroot_bfs)
    raise ValueError(f"head must be one of {HEADS}, got {head!r}")


def init_model(tax: Taxonomy, head: str, input_dim: int, seed: int,
               hidden_dim: int | None = None) -> ClassifierModel:
    """Seeded uniform init in [-0.01, 0.01]; affine unless hidden_dim set."""
    out = output_dim_for(tax, head)
    rng = np.random.default_rng([seed, 0])
    dims = [input_dim, out] if hidden_dim is None else [input_dim, hidden_dim, out]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        W = rng.uniform(-0.01, 0.01, size=(d_in, d_out))
        b = rng.uniform(-0.01, 0.01, size=d_out)
        layers.append((W, b))
    return ClassifierModel(head=head, layers=layers, input_dim=input_dim,
                           output_dim=out)


def forward(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    """Logits for a (B, input_dim) batch; tanh between stacked layers."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got {X.shape[1]}")
    h = X
    for W, b in model.layers[:-1]:
        h = np.tanh(h @ W + b)
    W, b = model.layers[-1]
    return h @ W + b


def _forward_with_acts(model, X):
    acts = [X]
    h = X
    for W, b in model.layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = model.layers[-1]
    return acts, h @ W + b


def backprop(model: ClassifierModel, X: np.ndarray, dZ: np.ndarray,
             acts=None) -> list[np.ndarray]:
    """Gradients of the batch-mean loss w.r.t. every parameter, given the
    per-sample logit gradients ``dZ``. Returned flat, matching
    ``model.parameters()`` order."""
    if acts is None:
        acts, _ = _forward_with_acts(model, X)
    B = len(X)
    delta = dZ
    grads: list[np.ndarray] = []
    for li in reversed(range(len(model.layers))):
        a_prev = acts[li]
        dW = a_prev.T @ delta / B
        db = delta.mean(axis=0)
        grads[:0] = [dW, db]
        if li > 0:
            delta = (delta @ model.layers[li][0].T) * (1.0 - acts[li] ** 2)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamOptimizer:
    """Standard Adam recurrence with bias correction.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2 ;
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSchedule:
    """Desk-scale defaults; scale up or down freely, each run stays seconds
    to minutes on a laptop."""

    steps: int = 20_000
    batch_size: int = 64
    checkpoint_every: int = 500
    seed: int = 0
    discard_before: int = 5_000

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("steps, batch_size, checkpoint_every must be positive")


@dataclass
class CheckpointRecord:
    step: int
    train_loss: float
    val_loss: float
    val_report: MetricReport
    params: list


@dataclass
class TrainingTrace:
    records: list[CheckpointRecord]
    head: str
    loss: LossSpec
    ks: tuple[int, ...]

    def steps(self) -> list[int]:
        return [r.step for r in self.records]


def train(tax: Taxonomy, model: ClassifierModel, train_ds, val_ds,
          spec: LossSpec, optimizer: AdamOptimizer, schedule: TrainSchedule,
          ks: tuple[int, ...] = (1, 5, 20)) -> TrainingTrace:
    """Seeded mini-batch training with periodic validation checkpoints.

    Batches are drawn from a fresh seeded shuffle each epoch (trailing
    partial batches are skipped). Every ``checkpoint_every`` steps the trace
    records the running training loss, validation loss, a validation metric
    report, and a parameter snapshot. Non-finite losses abort immediately.
    """
    obj = build_objective(tax, spec, model.head)
    if obj.num_outputs != model.output_dim:
        raise ValueError("model output dim does not match head for this taxonomy")
    X = train_ds.features
    t = train_ds.label_indices(tax)
    Xv = val_ds.features
    tv = val_ds.label_indices(tax)
    rng = np.random.default_rng([schedule.seed, 1])
    n = len(X)
    bsz = min(schedule.batch_size, n)
    perm = rng.permutation(n)
    pos = 0
    records: list[CheckpointRecord] = []
    run_sum, run_count = 0.0, 0
    params = model.parameters()
    for step in range(1, schedule.steps + 1):
        if pos + bsz > n:
            perm = rng.permutation(n)
            pos = 0
        idx = perm[pos:pos + bsz]
        pos += bsz
        acts, Z = _forward_with_acts(model, X[idx])
        batch_losses = obj.loss_batch(Z, t[idx])
        loss = float(batch_losses.mean())
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss {loss} at step {step} "
                f"(batch rows {idx[:5].tolist()}...)"
            )
        dZ = obj.grad_batch(Z, t[idx])
        grads = backprop(model, X[idx], dZ, acts=acts)
        optimizer.update(params, grads)
        run_sum += loss
        run_count += 1
        if step % schedule.checkpoint_every == 0:
            Zv = forward(model, Xv)
            val_loss = float(obj.loss_batch(Zv, tv).mean())
            report = _report_from_logits(tax, model.head, obj, Zv, tv, ks)
            records.append(CheckpointRecord(
                step=step,
                train_loss=run_sum / run_count,
                val_loss=val_loss,
                val_report=report,
                params=model.snapshot(),
            ))
            run_sum, run_count = 0.0, 0
    return TrainingTrace(records=records, head=model.head, loss=spec, ks=tuple(ks))


def _scores_from_logits(tax: Taxonomy, head: str, obj, Z: np.ndarray) -> np.ndarray:
    if head == "class":
        return Z
    if isinstance(obj, L.ConditionalHxeObjective):
        return obj.log_class_probs(Z)
    return L.ConditionalHxeObjective(tax, L.hxe_weights(tax, 0.0)).log_class_probs(Z)


def _report_from_logits(tax, head, obj, Z, truth_idx, ks) -> MetricReport:
    scores = _scores_from_logits(tax, head, obj, Z)
    width = max(ks)
    R = np.argsort(-scores, axis=1, kind="stable")[:, :width]
    return report_from_indices(tax, R, truth_idx, tuple(ks))


def evaluate_model(tax: Taxonomy, model: ClassifierModel, ds,
                   ks: tuple[int, ...] = (1, 5, 20)) -> MetricReport:
    """Metric report for one parameter set. Conditional-head scores are the
    factorized leaf posteriors; ranking ties break toward the lower canonical
    class index."""
    Z = forward(model, ds.features)
    return _report_from_logits(tax, model.head, None, Z, ds.label_indices(tax), ks)


# ---------------------------------------------------------------------------
# Checkpoint selection (validation-loss quartic fit)
# ---------------------------------------------------------------------------


def fit_polynomial(x: np.ndarray, y: np.ndarray, degree: int) -> np.ndarray:
    """Least-squares polynomial coefficients, ascending order, via lstsq on
    the Vandermonde system."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    V = np.vander(x, degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(V, y, rcond=None)
    return coeffs


def polynomial_minimum(coeffs: np.ndarray, lo: float, hi: float) -> float:
    """Argmin of the polynomial over [lo, hi]; ties go to the smaller x."""
    coeffs = np.asarray(coeffs, dtype=float)
    deriv = np.polynomial.polynomial.polyder(coeffs)
    candidates = [lo, hi]
    if not np.allclose(deriv, 0.0):
        for r in np.roots(deriv[::-1]):
            if abs(r.imag) < 1e-9 and lo - 1e-12 <= r.real <= hi + 1e-12:
                candidates.append(float(np.clip(r.real, lo, hi)))
    candidates = sorted(set(candidates))
    vals = [float(np.polynomial.polynomial.polyval(c, coeffs)) for c in candidates]
    return candidates[int(np.argmin(vals))]


def select_checkpoints(trace: TrainingTrace, discard_before: int) -> list[int]:
    """Pick 5 trace indices around the minimum of a degree-4 fit of the
    validation loss against the step number.

    Checkpoints at steps <= ``discard_before`` are dropped first. The fit is
    evaluated inside the retained step range; the nearest retained checkpoint
    anchors a symmetric 5-wide index window, clipped at the ends.
    """
    retained = [i for i, r in enumerate(trace.records) if r.step > discard_before]
    if len(retained) < 5:
        raise ValueError(
            f"need at least 5 checkpoints after step {discard_before}, "
            f"have {len(retained)}"
        )
    steps = np.array([trace.records[i].step for i in retained], dtype=float)
    losses = np.array([trace.records[i].val_loss for i in retained])
    if len(np.unique(steps)) < 5:
        raise ValueError("degenerate fit: fewer than 5 distinct steps")
    mid = (steps[0] + steps[-1]) / 2.0
    half = (steps[-1] - steps[0]) / 2.0
    coeffs = fit_polynomial((steps - mid) / half, losses, 4)
    u_star = polynomial_minimum(coeffs, -1.0, 1.0)
    s_star = mid + half * u_star
    j = int(np.argmin(np.abs(steps - s_star)))
    lo = min(max(j - 2, 0), len(retained) - 5)
    return [retained[i] for i in range(lo, lo + 5)]


# ---------------------------------------------------------------------------
# Averaged evaluation over selected checkpoints
# ---------------------------------------------------------------------------


@dataclass
class AveragedReport:
    """Mean metric values over several checkpoints, with normal-approximation
    95% half-widths (1.96 * sample std / sqrt(n)) and a summed severity
    histogram."""

    means: dict[str, float]
    half_widths: dict[str, float]
    severity_histogram: dict[int, int]
    reports: list[MetricReport]


def confidence_half_width(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(values.size))


def evaluate_checkpoints(tax: Taxonomy, model: ClassifierModel,
                         trace: TrainingTrace, indices: list[int], ds,
                         ks: tuple[int, ...] = (1, 5, 20)) -> AveragedReport:
    work = copy.deepcopy(model)
    reports = []
    for i in indices:
        work.restore(trace.records[i].params)
        reports.append(evaluate_model(tax, work, ds, ks))
    names = reports[0].scalars().keys()
    series = {name: [r.scalars()[name] for r in reports] for name in names}
    means = {name: float(np.mean(vals)) for name, vals in series.items()}
    halves = {name: confidence_half_width(vals) for name, vals in series.items()}
    hist: dict[int, int] = {}
    for r in reports:
        for h, c in r.severity_histogram.items():
            hist[h] = hist.get(h, 0) + c
    return AveragedReport(means=means, half_widths=halves,
                          severity_histogram=dict(sorted(hist.items())),
                          reports=reports)


# ---------------------------------------------------------------------------
# Text serialization
# ---------------------------------------------------------------------------


def trace_to_csv(trace: TrainingTrace) -> str:
    """``step,train_loss,val_loss,<metric columns>`` rows."""
    scalar_names = list(trace.records[0].val_report.scalars().keys())
    header = ",".join(["step", "train_loss", "val_loss"] + scalar_names)
    lines = [header]
    for r in trace.records:
        scalars = r.val_report.scalars()
        cells = [str(r.step), fmt(r.train_loss), fmt(r.val_loss)]
        cells += [fmt(scalars[name]) for name in scalar_names]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def checkpoint_to_text(model: ClassifierModel, step: int, taxonomy_hash: str) -> str:
    """Flat text checkpoint: header comments, then one parameter per line in
    layer order (weight matrix row-major, then bias)."""
    shapes = ";".join(f"{W.shape[0]}x{W.shape[1]}" for W, _ in model.layers)
    lines = [
        "# format=hiercls-checkpoint-v1",
        f"# head={model.head}",
        f"# input_dim={model.input_dim}",
        f"# output_dim={model.output_dim}",
        f"# layer_shapes={shapes}",
        f"# step={step}",
        f"# taxonomy_hash={taxonomy_hash}",
    ]
    for W, b in model.layers:
        lines.extend(fmt(v) for v in W.ravel())
        lines.extend(fmt(v) for v in b)
    return "\n".join(lines) + "\n"


def checkpoint_from_text(text: str) -> tuple[ClassifierModel, int, str]:
    meta: dict[str, str] = {}
    values: list[float] = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition("=")
            meta[key] = val
        elif line.strip():
            values.append(float(line))
    if meta.get("format") != "hiercls-checkpoint-v1":
        raise ValueError("not a recognizable checkpoint file")
    shapes = [tuple(int(d) for d in s.split("x"))
              for s in meta["layer_shapes"].split(";")]
    arr = np.array(values)
    layers = []
    pos = 0
    for d_in, d_out in shapes:
        W = arr[pos:pos + d_in * d_out].reshape(d_in, d_out).copy()
        pos += d_in * d_out
        b = arr[pos:pos + d_out].copy()
        pos += d_out
        layers.append((W, b))
    if pos != len(arr):
        raise ValueError("checkpoint value count does not match declared shapes")
    model = ClassifierModel(head=meta["head"], layers=layers,
                            input_dim=int(meta["input_dim"]),
                            output_dim=int(meta["output_dim"]))
    return model, int(meta["step"]), meta["taxonomy_hash"]
