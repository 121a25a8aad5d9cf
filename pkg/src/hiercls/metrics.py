"""Flat and hierarchy-aware performance measures for ranked predictions.

Mistake severity is the height of the lowest common ancestor of the
predicted and true classes. All measures are plain means or counts, so
batches can be partitioned and partial results merged exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taxonomy import Taxonomy

__all__ = [
    "PredictionBatch",
    "MetricReport",
    "top_k_error",
    "hier_dist_mistake",
    "avg_hier_dist_topk",
    "severity_histogram",
    "compute_report",
    "report_from_indices",
    "predictions_to_csv",
    "predictions_from_csv",
    "report_to_rows",
]


@dataclass
class PredictionBatch:
    """Per-example ranked class ids (descending score) plus ground truths."""

    rankings: list[list[str]]
    truths: list[str]

    def __post_init__(self):
        if len(self.rankings) != len(self.truths) or not self.truths:
            raise ValueError("rankings and truths must have equal length >= 1")
        width = len(self.rankings[0])
        for r in self.rankings:
            if len(r) != width:
                raise ValueError("all rankings must have equal length")
            if len(set(r)) != len(r):
                raise ValueError(f"ranking contains duplicates: {r}")

    @property
    def width(self) -> int:
        return len(self.rankings[0])


@dataclass
class MetricReport:
    """Bundle of flat and hierarchical measures for one evaluation pass."""

    top_k_error: dict[int, float]
    hier_dist_mistake: float
    avg_hier_dist_topk: dict[int, float]
    severity_histogram: dict[int, int]
    mistake_count: int
    num_examples: int

    @property
    def no_mistakes(self) -> bool:
        return self.mistake_count == 0

    def scalars(self) -> dict[str, float]:
        """Flat name -> value view used by trace and table writers."""
        out: dict[str, float] = {}
        for k in sorted(self.top_k_error):
            out[f"top{k}_error"] = self.top_k_error[k]
        out["hier_dist_mistake"] = self.hier_dist_mistake
        for k in sorted(self.avg_hier_dist_topk):
            out[f"avg_hier_dist_at_{k}"] = self.avg_hier_dist_topk[k]
        return out


def _indices(tax: Taxonomy, batch: PredictionBatch) -> tuple[np.ndarray, np.ndarray]:
    idx = tax.leaf_index
    R = np.array([[idx[c] for c in r] for r in batch.rankings], dtype=np.int64)
    t = np.array([idx[c] for c in batch.truths], dtype=np.int64)
    return R, t


def top_k_error(batch: PredictionBatch, k: int) -> float:
    """Fraction of examples whose truth is absent from the first k ranks."""
    if k < 1 or k > batch.width:
        raise ValueError(f"k={k} outside ranking width {batch.width}")
    misses = sum(t not in r[:k] for r, t in zip(batch.rankings, batch.truths))
    return misses / len(batch.truths)


def hier_dist_mistake(tax: Taxonomy, batch: PredictionBatch) -> float:
    """Mean LCA height of truth vs top-1 prediction over misclassified
    examples; 0 when there are no mistakes."""
    R, t = _indices(tax, batch)
    return _hier_dist_mistake_idx(tax, R, t)


def avg_hier_dist_topk(tax: Taxonomy, batch: PredictionBatch, k: int) -> float:
    """Grand mean LCA height between truth and each of the first k ranked
    classes, over all examples (correct hits contribute height 0)."""
    if k < 1 or k > batch.width:
        raise ValueError(f"k={k} outside ranking width {batch.width}")
    R, t = _indices(tax, batch)
    H = tax.lca_height_matrix()
    return float(H[t[:, None], R[:, :k]].mean())


def severity_histogram(tax: Taxonomy, batch: PredictionBatch) -> dict[int, int]:
    """Counts of mistake severities (LCA heights of truth vs top-1) over the
    misclassified examples; empty when everything is correct."""
    R, t = _indices(tax, batch)
    return _severity_histogram_idx(tax, R, t)


def _hier_dist_mistake_idx(tax: Taxonomy, R: np.ndarray, t: np.ndarray) -> float:
    H = tax.lca_height_matrix()
    top1 = R[:, 0]
    wrong = top1 != t
    if not wrong.any():
        return 0.0
    return float(H[t[wrong], top1[wrong]].mean())


def _severity_histogram_idx(tax: Taxonomy, R: np.ndarray, t: np.ndarray) -> dict[int, int]:
    H = tax.lca_height_matrix()
    top1 = R[:, 0]
    wrong = top1 != t
    heights, counts = np.unique(H[t[wrong], top1[wrong]], return_counts=True)
    return {int(h): int(c) for h, c in zip(heights, counts)}


def report_from_indices(tax: Taxonomy, R: np.ndarray, t: np.ndarray,
                        ks: tuple[int, ...]) -> MetricReport:
    """Index-based core shared by the public ops and the model evaluator."""
    R = np.asarray(R, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    if R.ndim != 2 or len(R) != len(t) or len(t) == 0:
        raise ValueError("rank matrix and truths must align with length >= 1")
    if max(ks) > R.shape[1]:
        raise ValueError(f"max k {max(ks)} exceeds ranking width {R.shape[1]}")
    H = tax.lca_height_matrix()
    hits = R == t[:, None]
    topk_err = {k: float(1.0 - hits[:, :k].any(axis=1).mean()) for k in ks}
    avg_dist = {k: float(H[t[:, None], R[:, :k]].mean()) for k in ks}
    wrong = R[:, 0] != t
    return MetricReport(
        top_k_error=topk_err,
        hier_dist_mistake=_hier_dist_mistake_idx(tax, R, t),
        avg_hier_dist_topk=avg_dist,
        severity_histogram=_severity_histogram_idx(tax, R, t),
        mistake_count=int(wrong.sum()),
        num_examples=len(t),
    )


def compute_report(tax: Taxonomy, batch: PredictionBatch,
                   ks: tuple[int, ...] = (1,)) -> MetricReport:
    R, t = _indices(tax, batch)
    return report_from_indices(tax, R, t, ks)


# ---------------------------------------------------------------------------
# CSV surfaces
# ---------------------------------------------------------------------------


def predictions_to_csv(batch: PredictionBatch, example_ids=None) -> str:
    """``example_id,truth,pred_1,...,pred_K`` rows with a header line."""
    k = batch.width
    header = "example_id,truth," + ",".join(f"pred_{i + 1}" for i in range(k))
    ids = example_ids if example_ids is not None else range(len(batch.truths))
    lines = [header]
    for ex, truth, ranking in zip(ids, batch.truths, batch.rankings):
        lines.append(f"{ex},{truth}," + ",".join(ranking))
    return "\n".join(lines) + "\n"


def predictions_from_csv(text: str) -> PredictionBatch:
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    if len(lines) < 2:
        raise ValueError("prediction CSV needs a header and at least one row")
    header = lines[0].split(",")
    if header[:2] != ["example_id", "truth"]:
        raise ValueError(f"unexpected prediction CSV header: {lines[0]!r}")
    truths, rankings = [], []
    for line in lines[1:]:
        cells = line.split(",")
        truths.append(cells[1])
        rankings.append(cells[2:])
    return PredictionBatch(rankings=rankings, truths=truths)


def report_to_rows(report: MetricReport) -> list[tuple[str, str, float]]:
    """Long-format (metric, k, value) rows for CSV emission."""
    rows: list[tuple[str, str, float]] = []
    for k in sorted(report.top_k_error):
        rows.append(("top_k_error", str(k), report.top_k_error[k]))
    rows.append(("hier_dist_mistake", "", report.hier_dist_mistake))
    for k in sorted(report.avg_hier_dist_topk):
        rows.append(("avg_hier_dist_topk", str(k), report.avg_hier_dist_topk[k]))
    rows.append(("mistake_count", "", float(report.mistake_count)))
    rows.append(("num_examples", "", float(report.num_examples)))
    return rows
