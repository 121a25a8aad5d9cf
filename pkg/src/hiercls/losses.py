"""Hierarchy-aware classification losses and their analytic logit gradients.

Two families are implemented over a ``Taxonomy``:

* Hierarchical cross-entropy: the class posterior factorizes into conditional
  probabilities along the ground-truth lineage, and each lineage edge's
  log-conditional is weighted by ``exp(-alpha * depth)`` of its child node.
  With all weights equal to 1 it collapses to the ordinary cross-entropy.
  It can be driven either from class probabilities (one logit per leaf,
  single softmax) or from a conditional head (one logit per non-root node,
  one softmax per sibling group; the uniform-weight conditional variant is
  the classic conditional-classifier-chain baseline).

* Soft labels: cross-entropy against a row-stochastic target matrix whose
  mass decays as ``exp(-beta * d)`` in the normalized LCA distance ``d``
  from the true class. ``beta -> inf`` recovers one-hot targets,
  ``beta = 0`` the uniform distribution.

Every log and denominator is floored at ``EPS`` so losses stay finite for
degenerate probability vectors; gradients are the exact gradients of the
floored losses (clamped coordinates contribute zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taxonomy import Taxonomy, UnknownNodeError

__all__ = [
    "EPS",
    "softmax",
    "softmax_batch",
    "HxeWeights",
    "hxe_weights",
    "conditionals_from_class_probs",
    "factorized_prob",
    "cross_entropy",
    "hxe_loss",
    "hxe_grad",
    "SoftLabelMatrix",
    "soft_label_matrix",
    "soft_label_loss",
    "soft_grad",
    "conditional_head_loss",
    "conditional_head_grad",
    "conditional_log_class_probs",
    "ClassCrossEntropy",
    "ClassHxeObjective",
    "ClassSoftLabelObjective",
    "ConditionalHxeObjective",
]

EPS = 1e-12


def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-D logit vector."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_batch(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    shifted = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Lineage weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HxeWeights:
    """Per-edge weights ``exp(-alpha * depth(child))``, keyed by child node.

    ``alpha = 0`` gives uniform weights (the plain cross-entropy limit);
    larger alpha discounts edges deeper in the tree, trading fine-grained
    for coarse correctness.
    """

    alpha: float
    lam: dict[str, float]


def hxe_weights(tax: Taxonomy, alpha: float) -> HxeWeights:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    lam = {n: float(np.exp(-alpha * tax.depth[n])) for n in tax.nonroot_bfs}
    return HxeWeights(alpha=float(alpha), lam=lam)


def _lam_vector(tax: Taxonomy, weights: HxeWeights) -> np.ndarray:
    return np.array([weights.lam[n] for n in tax.nonroot_bfs])


# ---------------------------------------------------------------------------
# Class-probability <-> conditional-probability conversions
# ---------------------------------------------------------------------------


def conditionals_from_class_probs(tax: Taxonomy, p: np.ndarray) -> dict[str, float]:
    """Edge conditionals implied by a class probability vector.

    Keyed by the child endpoint of each edge: the value for node ``C`` is the
    leaf mass of ``C``'s subtree divided by the leaf mass of its parent's
    subtree. Sibling values under a parent sum to 1 whenever the parent mass
    is at least ``EPS``.
    """
    p = np.asarray(p, dtype=float)
    masses = tax.leaf_membership() @ p
    out = {}
    for node in tax.nonroot_bfs:
        num = masses[tax.node_index[node]]
        den = masses[tax.node_index[tax.parent[node]]]
        out[node] = float(num / max(den, EPS))
    return out


def factorized_prob(tax: Taxonomy, conditionals: dict[str, float], leaf: str) -> float:
    """Product of edge conditionals along the leaf-to-root path."""
    if leaf not in tax.leaf_index:
        raise UnknownNodeError(f"unknown leaf {leaf!r}")
    prob = 1.0
    for node in tax.ancestry(leaf)[:-1]:
        prob *= conditionals[node]
    return prob


# ---------------------------------------------------------------------------
# Losses on probability vectors
# ---------------------------------------------------------------------------


def cross_entropy(tax: Taxonomy, p: np.ndarray, truth: str) -> float:
    """Ordinary cross-entropy, ``-log p(truth)``."""
    idx = tax.leaf_index[truth]
    return float(-np.log(max(float(p[idx]), EPS)))


def hxe_loss(tax: Taxonomy, weights: HxeWeights, p: np.ndarray, truth: str) -> float:
    """Weighted sum of lineage edge information along the truth's path.

    Equals ``-log p(truth)`` exactly when all weights are 1.
    """
    if truth not in tax.leaf_index:
        raise UnknownNodeError(f"unknown leaf {truth!r}")
    conds = conditionals_from_class_probs(tax, p)
    total = 0.0
    for node in tax.ancestry(truth)[:-1]:
        total -= weights.lam[node] * np.log(max(conds[node], EPS))
    return float(total)


@dataclass(frozen=True)
class SoftLabelMatrix:
    """Row-stochastic soft targets: row = true class, column = target class.

    Entry (C, A) is ``exp(-beta * d(A, C))`` normalized over A, with ``d``
    the normalized LCA distance. The diagonal is each row's maximum; rows of
    classes with identical distance profiles coincide, which makes the matrix
    symmetric on balanced trees (an unbalanced tree gives each row its own
    normalizer, so exact symmetry holds only when the rows' distance
    multisets agree).
    """

    beta: float
    rows: np.ndarray
    leaves: tuple[str, ...]

    def row(self, truth: str) -> np.ndarray:
        return self.rows[self.leaves.index(truth)]

    def to_csv_text(self) -> str:
        header = "truth," + ",".join(self.leaves)
        lines = [header]
        for i, leaf in enumerate(self.leaves):
            lines.append(leaf + "," + ",".join(repr(float(v)) for v in self.rows[i]))
        return "\n".join(lines) + "\n"


def soft_label_matrix(tax: Taxonomy, beta: float) -> SoftLabelMatrix:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    logits = -beta * tax.distance_matrix()
    weights = np.exp(logits)
    rows = weights / weights.sum(axis=1, keepdims=True)
    return SoftLabelMatrix(beta=float(beta), rows=rows, leaves=tuple(tax.leaves))


def soft_label_loss(matrix: SoftLabelMatrix, p: np.ndarray, truth: str) -> float:
    """Cross-entropy of ``p`` against the soft target row of ``truth``."""
    row = matrix.row(truth)
    p = np.asarray(p, dtype=float)
    return float(-(row * np.log(np.maximum(p, EPS))).sum())


# ---------------------------------------------------------------------------
# Batch objectives (loss and exact logit gradient)
# ---------------------------------------------------------------------------


class ClassCrossEntropy:
    """Plain softmax cross-entropy over leaf logits."""

    def __init__(self, tax: Taxonomy):
        self.tax = tax
        self.num_outputs = tax.num_leaves

    def loss_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        P = softmax_batch(Z)
        picked = P[np.arange(len(P)), truth_idx]
        return -np.log(np.maximum(picked, EPS))

    def grad_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        P = softmax_batch(Z)
        G = P.copy()
        G[np.arange(len(P)), truth_idx] -= 1.0
        return G


class ClassHxeObjective:
    """Hierarchical cross-entropy driven from leaf logits.

    The lineage sum telescopes into per-node coefficients on the log leaf
    masses, so a batch evaluates as two matrix products. Coefficients for
    the truth's path: the leaf keeps its own weight, each inner node gets
    (own weight - child-on-path weight), and the root gets minus the weight
    of its child on the path.
    """

    def __init__(self, tax: Taxonomy, weights: HxeWeights):
        self.tax = tax
        self.weights = weights
        self.num_outputs = tax.num_leaves
        self.membership = tax.leaf_membership()
        L, N = tax.num_leaves, tax.num_nodes
        K = np.zeros((L, N))
        for leaf in tax.leaves:
            i = tax.leaf_index[leaf]
            path = tax.ancestry(leaf)
            if len(path) == 1:  # leaf is the root; nothing to predict
                continue
            lam = [weights.lam[n] for n in path[:-1]]
            K[i, tax.node_index[path[0]]] = lam[0]
            for l in range(1, len(path) - 1):
                K[i, tax.node_index[path[l]]] = lam[l] - lam[l - 1]
            K[i, tax.node_index[path[-1]]] = -lam[-1]
        self.coeff = K

    def loss_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        P = softmax_batch(Z)
        masses = P @ self.membership.T
        logm = np.log(np.maximum(masses, EPS))
        return -(self.coeff[truth_idx] * logm).sum(axis=1)

    def grad_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        P = softmax_batch(Z)
        masses = P @ self.membership.T
        inv = np.where(masses > EPS, 1.0 / masses, 0.0)
        G = -(self.coeff[truth_idx] * inv) @ self.membership
        return P * (G - (G * P).sum(axis=1, keepdims=True))


class ClassSoftLabelObjective:
    """Cross-entropy against soft target rows, over leaf logits."""

    def __init__(self, matrix: SoftLabelMatrix):
        self.matrix = matrix
        self.num_outputs = matrix.rows.shape[0]

    def loss_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        P = softmax_batch(Z)
        Y = self.matrix.rows[truth_idx]
        return -(Y * np.log(np.maximum(P, EPS))).sum(axis=1)

    def grad_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        P = softmax_batch(Z)
        Y = self.matrix.rows[truth_idx]
        g = np.where(P > EPS, -Y / P, 0.0)
        return P * (g - (g * P).sum(axis=1, keepdims=True))


class ConditionalHxeObjective:
    """Hierarchical cross-entropy on a conditional head.

    Logits are indexed by the non-root nodes in breadth-first order, which
    keeps every sibling group contiguous; one softmax per group yields the
    edge conditionals directly. With uniform weights the loss equals
    ``-log`` of the factorized leaf posterior.
    """

    def __init__(self, tax: Taxonomy, weights: HxeWeights):
        self.tax = tax
        self.weights = weights
        self.num_outputs = len(tax.nonroot_bfs)
        if self.num_outputs == 0:
            raise ValueError("conditional head needs a taxonomy with edges")
        sizes = [len(tax.children[n]) for n in tax.nodes_bfs if tax.children[n]]
        self.group_sizes = np.array(sizes, dtype=np.int64)
        self.group_starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        col = {n: i for i, n in enumerate(tax.nonroot_bfs)}
        L, N = tax.num_leaves, self.num_outputs
        lam_path = np.zeros((L, N))
        path_ind = np.zeros((L, N))
        for leaf in tax.leaves:
            i = tax.leaf_index[leaf]
            for node in tax.ancestry(leaf)[:-1]:
                lam_path[i, col[node]] = weights.lam[node]
                path_ind[i, col[node]] = 1.0
        self.lam_path = lam_path
        self.path_indicator = path_ind

    def _expand(self, per_group: np.ndarray) -> np.ndarray:
        return np.repeat(per_group, self.group_sizes, axis=1)

    def _log_softmax_groups(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        gmax = np.maximum.reduceat(Z, self.group_starts, axis=1)
        shifted = Z - self._expand(gmax)
        gsum = np.add.reduceat(np.exp(shifted), self.group_starts, axis=1)
        return shifted - self._expand(np.log(gsum))

    def log_class_probs(self, Z: np.ndarray) -> np.ndarray:
        """Log leaf posteriors reconstructed by summing lineage conditionals."""
        return self._log_softmax_groups(Z) @ self.path_indicator.T

    def loss_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        logq = self._log_softmax_groups(Z)
        return -(self.lam_path[truth_idx] * logq).sum(axis=1)

    def grad_batch(self, Z: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
        logq = self._log_softmax_groups(Z)
        q = np.exp(logq)
        lam = self.lam_path[truth_idx]
        group_w = np.add.reduceat(lam, self.group_starts, axis=1)
        return q * self._expand(group_w) - lam


# ---------------------------------------------------------------------------
# Single-sample gradient surface
# ---------------------------------------------------------------------------


def _one(fn, z, idx):
    return fn(np.asarray(z, dtype=float)[None, :], np.array([idx]))[0]


def hxe_grad(tax: Taxonomy, weights: HxeWeights, z: np.ndarray, truth: str) -> np.ndarray:
    """Gradient of the class-head hierarchical cross-entropy w.r.t. leaf logits."""
    obj = ClassHxeObjective(tax, weights)
    return _one(obj.grad_batch, z, tax.leaf_index[truth])


def soft_grad(matrix: SoftLabelMatrix, z: np.ndarray, truth: str) -> np.ndarray:
    """Gradient of the soft-label loss w.r.t. leaf logits."""
    obj = ClassSoftLabelObjective(matrix)
    return _one(obj.grad_batch, z, matrix.leaves.index(truth))


def conditional_head_loss(tax: Taxonomy, weights: HxeWeights, z: np.ndarray,
                          truth: str) -> float:
    """Loss for logits over non-root nodes with per-sibling-group softmax."""
    obj = ConditionalHxeObjective(tax, weights)
    return float(_one(obj.loss_batch, z, tax.leaf_index[truth]))


def conditional_head_grad(tax: Taxonomy, weights: HxeWeights, z: np.ndarray,
                          truth: str) -> np.ndarray:
    obj = ConditionalHxeObjective(tax, weights)
    return _one(obj.grad_batch, z, tax.leaf_index[truth])


def conditional_log_class_probs(tax: Taxonomy, z: np.ndarray) -> np.ndarray:
    """Log leaf posteriors for a single conditional-head logit vector."""
    obj = ConditionalHxeObjective(tax, hxe_weights(tax, 0.0))
    return obj.log_class_probs(np.asarray(z, dtype=float)[None, :])[0]
