"""Class taxonomy trees: construction from edge lists, DAG-to-tree pruning,
manual reparenting edits, LCA queries, severity distances, and leaf-label
randomization.

A ``Taxonomy`` is an immutable rooted tree whose zero-child nodes are the
classification classes. The order of the leaf list is the canonical class
index order used by every probability vector and matrix downstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HierarchyError",
    "EdgeListParseError",
    "CycleError",
    "UnknownNodeError",
    "TaxonomyGraph",
    "Taxonomy",
    "load_edges",
    "prune_to_tree",
    "load_taxonomy",
    "apply_edits",
    "randomize_leaves",
]


class HierarchyError(Exception):
    """Base error for taxonomy construction and queries."""


class EdgeListParseError(HierarchyError):
    """Malformed line in an edge-list document."""


class CycleError(HierarchyError):
    """The edge set contains a directed cycle (or an edit would create one)."""


class UnknownNodeError(HierarchyError):
    """A node id was not found in the graph or tree."""


@dataclass(frozen=True)
class TaxonomyGraph:
    """A parsed parent->child edge set, prior to tree pruning.

    May be a general DAG: nodes can have several parents. ``parents_of`` and
    ``children_of`` views are derived once at construction.
    """

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    parents_of: dict[str, list[str]] = field(repr=False, default_factory=dict)
    children_of: dict[str, list[str]] = field(repr=False, default_factory=dict)

    @staticmethod
    def from_edges(edges) -> "TaxonomyGraph":
        edge_set = frozenset(edges)
        nodes = frozenset(n for e in edge_set for n in e)
        parents: dict[str, list[str]] = {n: [] for n in nodes}
        children: dict[str, list[str]] = {n: [] for n in nodes}
        for parent, child in sorted(edge_set):
            parents[child].append(parent)
            children[parent].append(child)
        return TaxonomyGraph(nodes, edge_set, parents, children)

    def roots(self) -> list[str]:
        return sorted(n for n in self.nodes if not self.parents_of[n])


def load_edges(text: str) -> TaxonomyGraph:
    """Parse an edge-list document into a graph.

    One ``parent<TAB>child`` pair per line; blank lines and lines starting
    with ``#`` are ignored; duplicate edges collapse. Raises
    ``EdgeListParseError`` with the offending line number, or ``CycleError``
    if the edge set is cyclic.
    """
    edges = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise EdgeListParseError(
                f"line {lineno}: expected 'parent<TAB>child', got {raw!r}"
            )
        parent, child = fields[0].strip(), fields[1].strip()
        if not parent or not child:
            raise EdgeListParseError(f"line {lineno}: empty node id in {raw!r}")
        edges.add((parent, child))
    graph = TaxonomyGraph.from_edges(edges)
    _check_acyclic(graph)
    return graph


def _check_acyclic(graph: TaxonomyGraph) -> None:
    # Iterative three-color DFS over the child relation.
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph.nodes}
    for start in sorted(graph.nodes):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(graph.children_of[start]))]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for child in it:
                if color[child] == GRAY:
                    raise CycleError(f"cycle through node {child!r}")
                if color[child] == WHITE:
                    color[child] = GRAY
                    stack.append((child, iter(graph.children_of[child])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()


class Taxonomy:
    """Immutable rooted tree over classes.

    Depth is measured from the root (root depth 0). The height of a node is
    the maximum edge distance from it to any leaf of its subtree; the tree
    height is the height of the root, equal to the maximum leaf depth.

    ``leaves`` fixes the canonical class index order. ``nodes_bfs`` lists all
    nodes in breadth-first order starting at the root with children in stored
    order, which keeps every sibling group contiguous in ``nonroot_bfs``.
    """

    def __init__(self, root: str, parent: dict[str, str],
                 children: dict[str, list[str]], leaves: list[str]):
        self.root = root
        self.parent = dict(parent)
        self.children = {n: list(c) for n, c in children.items()}
        self.leaves = list(leaves)
        self._validate_and_index()

    def _validate_and_index(self) -> None:
        nodes = set(self.parent) | {self.root}
        if self.root in self.parent:
            raise HierarchyError("root must not have a parent")
        if len(self.parent) != len(nodes) - 1:
            raise HierarchyError("parent map must cover every non-root node once")
        for node, par in self.parent.items():
            if par not in nodes:
                raise UnknownNodeError(f"parent {par!r} of {node!r} is not a node")
            if node not in self.children.get(par, []):
                raise HierarchyError(f"children map misses edge {par!r}->{node!r}")
        # BFS from the root assigns depths and checks connectivity.
        depth = {self.root: 0}
        order = [self.root]
        i = 0
        while i < len(order):
            node = order[i]
            i += 1
            for child in self.children.get(node, []):
                if child in depth:
                    raise CycleError(f"node {child!r} reached twice")
                depth[child] = depth[node] + 1
                order.append(child)
        if len(order) != len(nodes):
            missing = sorted(nodes - set(order))
            raise HierarchyError(f"nodes unreachable from root: {missing}")
        for node in order:
            self.children.setdefault(node, [])
        self.depth = depth
        self.nodes_bfs = order
        self.nonroot_bfs = order[1:]
        zero_child = [n for n in order if not self.children.get(n)]
        if sorted(zero_child) != sorted(self.leaves):
            raise HierarchyError(
                "leaf list must equal the set of zero-child nodes; "
                f"tree has {sorted(zero_child)}, got {sorted(self.leaves)}"
            )
        for node in order:
            kids = self.children.get(node, [])
            if node != self.root and len(kids) == 1:
                raise HierarchyError(f"internal node {node!r} has a single child")
        # Heights bottom-up in reverse BFS order.
        height = {}
        for node in reversed(order):
            kids = self.children.get(node, [])
            height[node] = 0 if not kids else 1 + max(height[k] for k in kids)
        self.height = height
        self.tree_height = height[self.root]
        self.leaf_index = {leaf: i for i, leaf in enumerate(self.leaves)}
        self.node_index = {n: i for i, n in enumerate(self.nodes_bfs)}
        self._lca_height_matrix = None
        self._leaf_membership = None

    # -- queries ---------------------------------------------------------

    @property
    def num_leaves(self) -> int:
        return len(self.leaves)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes_bfs)

    def ancestry(self, node: str) -> list[str]:
        """Path from ``node`` to the root, inclusive on both ends."""
        if node not in self.node_index:
            raise UnknownNodeError(f"unknown node {node!r}")
        path = [node]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        return path

    def lca(self, a: str, b: str) -> str:
        """Deepest node that is an ancestor-or-self of both ``a`` and ``b``."""
        for n in (a, b):
            if n not in self.node_index:
                raise UnknownNodeError(f"unknown node {n!r}")
        da, db = self.depth[a], self.depth[b]
        while da > db:
            a = self.parent[a]
            da -= 1
        while db > da:
            b = self.parent[b]
            db -= 1
        while a != b:
            a = self.parent[a]
            b = self.parent[b]
        return a

    def lca_height(self, a: str, b: str) -> int:
        """Height of the lowest common ancestor of two leaves."""
        return self.height[self.lca(a, b)]

    def normalized_distance(self, a: str, b: str) -> float:
        """LCA height divided by the tree height; 0 iff ``a == b``."""
        if self.tree_height == 0:
            return 0.0
        return self.lca_height(a, b) / self.tree_height

    def lca_height_matrix(self) -> np.ndarray:
        """(L, L) integer matrix of pairwise leaf LCA heights, canonical order."""
        if self._lca_height_matrix is None:
            L = self.num_leaves
            mat = np.zeros((L, L), dtype=np.int64)
            chains = {leaf: self.ancestry(leaf) for leaf in self.leaves}
            idx_of = {leaf: set(chains[leaf]) for leaf in self.leaves}
            for i, a in enumerate(self.leaves):
                for j in range(i + 1, L):
                    b = self.leaves[j]
                    anc = idx_of[b]
                    for node in chains[a]:
                        if node in anc:
                            mat[i, j] = mat[j, i] = self.height[node]
                            break
            self._lca_height_matrix = mat
        return self._lca_height_matrix

    def distance_matrix(self) -> np.ndarray:
        """(L, L) matrix of normalized LCA distances in [0, 1]."""
        if self.tree_height == 0:
            return np.zeros((self.num_leaves, self.num_leaves))
        return self.lca_height_matrix() / float(self.tree_height)

    def leaf_membership(self) -> np.ndarray:
        """(num_nodes, L) 0/1 matrix: entry (n, j) is 1 iff leaf j lies in the
        subtree rooted at the n-th node of ``nodes_bfs`` (node-or-self)."""
        if self._leaf_membership is None:
            mat = np.zeros((self.num_nodes, self.num_leaves))
            for j, leaf in enumerate(self.leaves):
                for node in self.ancestry(leaf):
                    mat[self.node_index[node], j] = 1.0
            self._leaf_membership = mat
        return self._leaf_membership

    # -- serialization ---------------------------------------------------

    def export_edges(self) -> str:
        """Edge list in depth-first order from the root (diff-stable)."""
        lines = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            kids = self.children.get(node, [])
            for child in kids:
                lines.append(f"{node}\t{child}")
            stack.extend(reversed(kids))
        return "\n".join(lines) + ("\n" if lines else "")

    def hash_hex(self) -> str:
        """Stable 16-hex-digit digest of structure plus canonical leaf order."""
        payload = self.export_edges() + "\x00" + "\n".join(self.leaves)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return (self.root == other.root and self.parent == other.parent
                and self.children == other.children and self.leaves == other.leaves)

    def __repr__(self) -> str:
        return (f"Taxonomy(root={self.root!r}, nodes={self.num_nodes}, "
                f"leaves={self.num_leaves}, height={self.tree_height})")


def prune_to_tree(graph: TaxonomyGraph, leaves: list[str]) -> Taxonomy:
    """Extract a tree from a DAG by keeping, for each class, its longest path
    to the root.

    Classes are processed in list order. Among the longest class-to-root
    paths, the one adding the fewest nodes not already in the growing tree
    wins; remaining ties fall to the lexicographically smallest node-id
    sequence (read from the class toward the root). The first parent assigned
    to a node is final, which keeps the growing structure a tree. Afterwards
    every single-child node other than the root is spliced out and the class
    list becomes the canonical leaf order.
    """
    if not leaves:
        raise HierarchyError("class list is empty")
    if len(set(leaves)) != len(leaves):
        raise HierarchyError("class list contains duplicates")
    roots = graph.roots()
    if len(roots) != 1:
        raise HierarchyError(f"expected exactly one root, found {roots}")
    root = roots[0]
    for cls in leaves:
        if cls not in graph.nodes:
            raise UnknownNodeError(f"class {cls!r} is not a node of the graph")

    # Longest distance to the root along parent edges, memoized over the DAG.
    longest: dict[str, int] = {root: 0}

    def longest_of(node: str) -> int:
        stack = [node]
        while stack:
            cur = stack[-1]
            if cur in longest:
                stack.pop()
                continue
            pending = [p for p in graph.parents_of[cur] if p not in longest]
            if pending:
                stack.extend(pending)
            else:
                longest[cur] = 1 + max(longest[p] for p in graph.parents_of[cur])
                stack.pop()
        return longest[node]

    tree_nodes: set[str] = {root}
    tree_parent: dict[str, str] = {}
    tree_children: dict[str, list[str]] = {root: []}

    def tree_lineage(node: str) -> tuple[str, ...]:
        path = [node]
        while path[-1] != root:
            path.append(tree_parent[path[-1]])
        return tuple(path)

    for cls in leaves:
        longest_of(cls)
        # Best effective path from each node: (new node count, path tuple).
        best: dict[str, tuple[int, tuple[str, ...]]] = {}

        def best_of(node: str) -> tuple[int, tuple[str, ...]]:
            stack = [node]
            while stack:
                cur = stack[-1]
                if cur in best:
                    stack.pop()
                    continue
                if cur in tree_nodes:
                    best[cur] = (0, tree_lineage(cur))
                    stack.pop()
                    continue
                allowed = [p for p in graph.parents_of[cur]
                           if longest[cur] == longest_of(p) + 1]
                pending = [p for p in allowed if p not in best]
                if pending:
                    stack.extend(pending)
                else:
                    count, path = min(best[p] for p in allowed)
                    best[cur] = (count + 1, (cur,) + path)
                    stack.pop()
            return best[node]

        _, path = best_of(cls)
        for i, node in enumerate(path[:-1]):
            if node in tree_nodes:
                break
            par = path[i + 1]
            tree_parent[node] = par
            tree_nodes.add(node)
            tree_children.setdefault(node, [])
            tree_children.setdefault(par, []).append(node)

    for cls in leaves:
        if tree_children.get(cls):
            raise HierarchyError(
                f"class {cls!r} lies on the kept path of another class"
            )

    _splice_single_child(root, tree_parent, tree_children)
    return Taxonomy(root, tree_parent, tree_children, leaves)


def _splice_single_child(root: str, parent: dict[str, str],
                         children: dict[str, list[str]]) -> None:
    # Splicing never creates new single-child nodes, so one pass suffices;
    # the root is exempt because its child has no grandparent to attach to.
    for node in list(children):
        if node == root:
            continue
        kids = children.get(node, [])
        if len(kids) != 1:
            continue
        child, par = kids[0], parent[node]
        siblings = children[par]
        siblings[siblings.index(node)] = child
        parent[child] = par
        del parent[node]
        del children[node]


def load_taxonomy(edge_text: str, leaves: list[str]) -> Taxonomy:
    """Parse an edge list and prune it to a tree over ``leaves``.

    On input that is already a pruned tree this is the identity, so exported
    taxonomies reload through the same path.
    """
    return prune_to_tree(load_edges(edge_text), leaves)


def apply_edits(tax: Taxonomy, edits: list[tuple[str, str]]) -> Taxonomy:
    """Reparent nodes, then restore all tree invariants.

    Each edit is ``(node, new_parent)``. Edits apply sequentially; a node may
    not be the root and its new parent may not lie inside its own subtree
    (that would create a cycle). Depths and heights are recomputed and the
    single-child splice is re-run. Leaves that survive keep their canonical
    order; nodes that become leaves are appended in depth-first order.
    """
    parent = dict(tax.parent)
    children = {n: list(c) for n, c in tax.children.items()}

    known = set(parent) | {tax.root}
    for node, new_parent in edits:
        if node == tax.root:
            raise HierarchyError("cannot reparent the root")
        if node not in known:
            raise UnknownNodeError(f"unknown node {node!r}")
        if new_parent not in known:
            raise UnknownNodeError(f"unknown node {new_parent!r}")
        # Walk up from new_parent; hitting node means new_parent is in its subtree.
        probe = new_parent
        while True:
            if probe == node:
                raise CycleError(
                    f"reparenting {node!r} under {new_parent!r} creates a cycle"
                )
            if probe == tax.root:
                break
            probe = parent[probe]
        old = parent[node]
        children[old].remove(node)
        parent[node] = new_parent
        children.setdefault(new_parent, []).append(node)

    _splice_single_child(tax.root, parent, children)

    zero_child = _dfs_zero_child(tax.root, children)
    still = [leaf for leaf in tax.leaves if leaf in zero_child]
    new = [n for n in zero_child if n not in set(tax.leaves)]
    return Taxonomy(tax.root, parent, children, still + new)


def _dfs_zero_child(root: str, children: dict[str, list[str]]) -> list[str]:
    out, stack = [], [root]
    while stack:
        node = stack.pop()
        kids = children.get(node, [])
        if not kids:
            out.append(node)
        stack.extend(reversed(kids))
    return out


def randomize_leaves(tax: Taxonomy, seed: int) -> Taxonomy:
    """Permute which class label sits at which structural leaf slot.

    The tree shape and internal nodes are untouched and the canonical class
    order is preserved, so the multiset of pairwise LCA heights is invariant
    while individual pair distances change. The permutation is uniformly
    random and deterministic per seed.
    """
    perm = np.random.default_rng(seed).permutation(tax.num_leaves)
    relabel = {tax.leaves[i]: tax.leaves[perm[i]] for i in range(tax.num_leaves)}

    def ren(n: str) -> str:
        return relabel.get(n, n)

    parent = {ren(n): ren(p) for n, p in tax.parent.items()}
    children = {ren(n): [ren(c) for c in kids] for n, kids in tax.children.items()}
    return Taxonomy(tax.root, parent, children, list(tax.leaves))


def leaf_permutation(tax: Taxonomy, seed: int) -> list[tuple[str, str]]:
    """Audit trail for ``randomize_leaves``: (label before, label after) per
    structural leaf slot, in canonical order."""
    perm = np.random.default_rng(seed).permutation(tax.num_leaves)
    return [(tax.leaves[i], tax.leaves[perm[i]]) for i in range(tax.num_leaves)]
