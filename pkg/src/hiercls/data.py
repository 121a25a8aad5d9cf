"""Labelled feature datasets: CSV ingestion, seeded split resampling, and a
synthetic generator whose class geometry follows the taxonomy.

The generator assigns every tree node a mean vector by a Gaussian random
walk from the root, so the expected squared distance between two class means
grows with their tree distance. Sampling a class adds isotropic noise around
its leaf mean. This makes hierarchical effects measurable at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fileio import fmt
from .taxonomy import Taxonomy

__all__ = [
    "DataError",
    "Dataset",
    "SplitSpec",
    "dataset_from_csv",
    "dataset_to_csv",
    "split",
    "synth_hierarchical",
    "class_means",
]


class DataError(Exception):
    """Malformed dataset input or an infeasible split."""


@dataclass
class Dataset:
    """Feature matrix plus per-row leaf labels."""

    features: np.ndarray
    labels: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DataError("features must be (N, D) aligned with labels")
        if len(self.labels) == 0:
            raise DataError("dataset is empty")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def label_indices(self, tax: Taxonomy) -> np.ndarray:
        try:
            return np.array([tax.leaf_index[l] for l in self.labels], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"label {e.args[0]!r} is not a leaf of the taxonomy")

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], [self.labels[i] for i in idx])


@dataclass(frozen=True)
class SplitSpec:
    """Per-example categorical split with probabilities (train, val, test)."""

    probabilities: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        p = self.probabilities
        if len(p) != 3 or any(not (0.0 < x < 1.0) for x in p):
            raise DataError(f"split probabilities must each lie in (0, 1): {p}")
        if abs(sum(p) - 1.0) > 1e-12:
            raise DataError(f"split probabilities must sum to 1: {p}")


def dataset_from_csv(text: str, tax: Taxonomy) -> Dataset:
    """Parse ``f0..f{D-1},label`` rows; labels must be leaves of ``tax``."""
    lines = text.splitlines()
    body = [(i + 1, l) for i, l in enumerate(lines) if l and not l.startswith("#")]
    if not body:
        raise DataError("dataset file has no header")
    header_no, header = body[0]
    cols = header.split(",")
    if cols[-1] != "label" or cols[:-1] != [f"f{i}" for i in range(len(cols) - 1)]:
        raise DataError(f"line {header_no}: expected header 'f0,..,f{{D-1}},label'")
    dim = len(cols) - 1
    rows, labels = [], []
    for lineno, line in body[1:]:
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise DataError(f"row at line {lineno}: expected {dim + 1} cells, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells[:-1]])
        except ValueError:
            raise DataError(f"row at line {lineno}: non-numeric feature cell")
        label = cells[-1]
        if label not in tax.leaf_index:
            raise DataError(f"row at line {lineno}: unknown label {label!r}")
        labels.append(label)
    if not labels:
        raise DataError("dataset file contains a header but no rows")
    return Dataset(np.array(rows, dtype=float), labels)


def dataset_to_csv(ds: Dataset) -> str:
    """Canonical serialization; loading then re-saving is byte-identical."""
    header = ",".join([f"f{i}" for i in range(ds.feature_dim)] + ["label"])
    lines = [header]
    for row, label in zip(ds.features, ds.labels):
        lines.append(",".join(fmt(v) for v in row) + f",{label}")
    return "\n".join(lines) + "\n"


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive (train, val, test) partition, deterministic per seed.

    Each example draws its slot independently, so sizes are binomial around
    N * probabilities. Raises if any slot ends up empty.
    """
    draws = np.random.default_rng(spec.seed).random(ds.n)
    p_train, p_val, _ = spec.probabilities
    slots = np.where(draws < p_train, 0, np.where(draws < p_train + p_val, 1, 2))
    parts = []
    for s, name in zip((0, 1, 2), ("train", "val", "test")):
        idx = np.flatnonzero(slots == s)
        if idx.size == 0:
            raise DataError(
                f"{name} split is empty; use a different seed or a larger dataset"
            )
        parts.append(ds.subset(idx))
    return parts[0], parts[1], parts[2]


def synth_hierarchical(tax: Taxonomy, per_class: int, dim: int,
                       step_scale: float, noise_scale: float, seed: int,
                       level_decay: float = 1.0) -> Dataset:
    """Generate ``per_class`` examples per leaf around tree-correlated means.

    Node means follow a random walk down the tree: a child's mean is its
    parent's plus a Gaussian step of scale ``step_scale * level_decay**(depth-1)``.
    Examples add Gaussian noise of scale ``noise_scale`` around leaf means.
    Rows are emitted leaf-block by leaf-block in canonical class order.
    """
    if step_scale < 0 or noise_scale <= 0:
        raise DataError("step_scale must be >= 0 and noise_scale > 0")
    if per_class < 1 or dim < 1:
        raise DataError("per_class and dim must be positive")
    rng = np.random.default_rng(seed)
    means = {tax.root: np.zeros(dim)}
    for node in tax.nodes_bfs[1:]:
        scale = step_scale * level_decay ** (tax.depth[node] - 1)
        means[node] = means[tax.parent[node]] + scale * rng.standard_normal(dim)
    blocks, labels = [], []
    for leaf in tax.leaves:
        blocks.append(means[leaf] + noise_scale * rng.standard_normal((per_class, dim)))
        labels.extend([leaf] * per_class)
    return Dataset(np.vstack(blocks), labels)


def class_means(ds: Dataset) -> dict[str, np.ndarray]:
    """Empirical per-class feature means (generator diagnostics)."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for row, label in zip(ds.features, ds.labels):
        if label not in sums:
            sums[label] = np.zeros_like(row)
            counts[label] = 0
        sums[label] += row
        counts[label] += 1
    return {l: sums[l] / counts[l] for l in sums}
