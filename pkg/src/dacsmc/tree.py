"""Static rooted trees, coordinate spaces, and path layouts.

A tree is described once by a parent array and never mutated.  Children are
kept in ascending node-id order and every flat particle path is laid out in
subtree post-order: the children's subtree blocks first (in child order),
the node's own coordinates last.  Both conventions are load-bearing: they fix
the byte layout of serialized clouds and the meaning of every evaluator's
input columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    CycleDetected,
    DanglingParent,
    InvalidNode,
    MissingSpace,
    MultipleRoots,
)

__all__ = [
    "NodeSpace",
    "Tree",
    "PathLayout",
    "LumpedLine",
    "Diagnostic",
    "build_tree",
    "subtree_nodes",
    "path_layout",
    "lump_levels",
    "validate",
]


@dataclass(frozen=True)
class NodeSpace:
    """Coordinate space attached to one node.

    Parameters
    ----------
    kind : str
        ``"continuous"`` (real coordinates) or ``"finite"`` (one coordinate
        holding a symbol from ``{0, ..., alphabet-1}``, stored as a float).
    dimension : int
        Number of coordinates; always 1 for finite spaces.
    alphabet : int or None
        Alphabet size for finite spaces.
    labels : tuple of str, optional
        Per-coordinate labels, purely informational.
    """

    kind: str
    dimension: int = 1
    alphabet: int | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "finite"):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind == "finite":
            if self.alphabet is None or self.alphabet < 1:
                raise ValueError("finite space needs a positive alphabet size")
            if self.dimension != 1:
                raise ValueError("finite spaces carry exactly one coordinate")
        elif self.dimension < 1:
            raise ValueError("continuous space needs a positive dimension")
        if self.labels is not None and len(self.labels) != self.width:
            raise ValueError("label count must match the coordinate count")

    @property
    def width(self) -> int:
        """Number of flat-path columns this space occupies."""
        return self.dimension

    @staticmethod
    def continuous(dimension: int, labels: tuple[str, ...] | None = None) -> "NodeSpace":
        return NodeSpace("continuous", dimension=dimension, labels=labels)

    @staticmethod
    def finite(alphabet: int, labels: tuple[str, ...] | None = None) -> "NodeSpace":
        return NodeSpace("finite", dimension=1, alphabet=alphabet, labels=labels)


@dataclass(frozen=True)
class Tree:
    """Immutable rooted tree over node ids ``0..node_count-1``.

    ``children[u]`` is the ordered tuple of u's children (ascending id);
    ``parent[u]`` is ``None`` exactly for the root.
    """

    node_count: int
    parent: tuple
    children: tuple
    root: int

    def is_leaf(self, u: int) -> bool:
        return not self.children[self._check(u)]

    def arity(self, u: int) -> int:
        return len(self.children[self._check(u)])

    def _check(self, u: int) -> int:
        if not (0 <= u < self.node_count):
            raise InvalidNode(f"node {u} not in [0, {self.node_count})")
        return u

    @property
    def leaves(self) -> tuple:
        return tuple(u for u in range(self.node_count) if not self.children[u])

    def depths(self) -> tuple:
        """Depth of every node (root has depth 0)."""
        out = [0] * self.node_count
        for u in _topological_order(self):
            if self.parent[u] is not None:
                out[u] = out[self.parent[u]] + 1
        return tuple(out)


def _topological_order(tree: Tree):
    order, stack = [], [tree.root]
    while stack:
        u = stack.pop()
        order.append(u)
        stack.extend(tree.children[u])
    return order


def build_tree(parents) -> Tree:
    """Build a :class:`Tree` from a parent array (``None`` marks the root).

    Raises
    ------
    MultipleRoots
        If more than one entry is ``None``.
    DanglingParent
        If a parent id falls outside the node range.
    CycleDetected
        If some node cannot reach the root (including the no-root case).
    """
    parents = list(parents)
    n = len(parents)
    if n == 0:
        raise InvalidNode("a tree needs at least one node")
    roots = [u for u, p in enumerate(parents) if p is None]
    if len(roots) > 1:
        raise MultipleRoots(f"nodes {roots} all lack a parent")
    for u, p in enumerate(parents):
        if p is not None and not (0 <= int(p) < n):
            raise DanglingParent(f"node {u} names parent {p} outside [0, {n})")
    if not roots:
        raise CycleDetected("no root: every node has a parent")
    root = roots[0]

    # Walk each node up to the root; revisiting an unfinished chain is a cycle.
    state = [0] * n  # 0 unvisited, 1 in progress, 2 done
    state[root] = 2
    for u in range(n):
        chain = []
        v = u
        while state[v] == 0:
            state[v] = 1
            chain.append(v)
            v = int(parents[v])
        if state[v] == 1:
            raise CycleDetected(f"cycle through node {v}")
        for w in chain:
            state[w] = 2

    kids = [[] for _ in range(n)]
    for u, p in enumerate(parents):
        if p is not None:
            kids[int(p)].append(u)
    children = tuple(tuple(sorted(k)) for k in kids)
    parent = tuple(None if p is None else int(p) for p in parents)
    return Tree(node_count=n, parent=parent, children=children, root=root)


def subtree_nodes(tree: Tree, u: int) -> tuple:
    """Post-order enumeration of the subtree rooted at ``u`` (u itself last)."""
    tree._check(u)
    out = []
    stack = [(u, False)]
    while stack:
        v, expanded = stack.pop()
        if expanded:
            out.append(v)
        else:
            stack.append((v, True))
            for c in reversed(tree.children[v]):
                stack.append((c, False))
    return tuple(out)


@dataclass(frozen=True)
class PathLayout:
    """Column layout of flat paths over the subtree of ``node``.

    ``order`` is the post-order node enumeration; ``starts[i]`` is the first
    column of ``order[i]``'s own coordinates and ``subtree_widths[i]`` the
    total width of its subtree block (which, by post-order, is the contiguous
    column run ending at its own slice).
    """

    node: int
    order: tuple
    starts: tuple
    widths: tuple
    subtree_widths: tuple
    total_width: int
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self._index.update({v: i for i, v in enumerate(self.order)})

    def _pos(self, v: int) -> int:
        i = self._index.get(v)
        if i is None:
            raise InvalidNode(f"node {v} is not in the subtree of {self.node}")
        return i

    def slice_of(self, v: int) -> slice:
        """Columns of node v's own coordinates."""
        i = self._pos(v)
        return slice(self.starts[i], self.starts[i] + self.widths[i])

    def block_of(self, v: int) -> slice:
        """Columns of node v's entire subtree block."""
        i = self._pos(v)
        stop = self.starts[i] + self.widths[i]
        return slice(stop - self.subtree_widths[i], stop)

    def subtree_width(self, v: int) -> int:
        return self.subtree_widths[self._pos(v)]


def path_layout(tree: Tree, spaces, u: int) -> PathLayout:
    """Lay out flat paths for the subtree of ``u`` given per-node spaces.

    Raises :class:`MissingSpace` if any subtree node lacks a space entry.
    """
    order = subtree_nodes(tree, u)
    widths = []
    for v in order:
        sp = spaces.get(v) if hasattr(spaces, "get") else spaces[v]
        if sp is None:
            raise MissingSpace(f"node {v} has no declared space")
        widths.append(sp.width)
    starts = []
    acc = 0
    for w in widths:
        starts.append(acc)
        acc += w
    sub = {}
    for v, w in zip(order, widths):
        sub[v] = w + sum(sub[c] for c in tree.children[v])
    return PathLayout(
        node=u,
        order=order,
        starts=tuple(starts),
        widths=tuple(widths),
        subtree_widths=tuple(sub[v] for v in order),
        total_width=acc,
    )


@dataclass(frozen=True)
class LumpedLine:
    """Result of collapsing tree levels into a line.

    ``line`` is a chain whose node t groups the original nodes at depth
    ``max_depth - t`` (so line node 0 holds the deepest level and the line's
    root holds the original root); ``groups[t]`` lists those original ids in
    ascending order.
    """

    line: Tree
    groups: tuple


def lump_levels(tree: Tree) -> LumpedLine:
    depths = tree.depths()
    max_depth = max(depths)
    groups = tuple(
        tuple(sorted(u for u in range(tree.node_count) if depths[u] == max_depth - t))
        for t in range(max_depth + 1)
    )
    parents = [t + 1 for t in range(max_depth)] + [None]
    return LumpedLine(line=build_tree(parents), groups=groups)


@dataclass(frozen=True)
class Diagnostic:
    """One structural-compatibility finding from :func:`validate`."""

    code: str
    node: int
    message: str


def validate(tree: Tree, model) -> list:
    """Check that a model covers the tree structurally.

    Returns an empty list exactly when every leaf has a proposal, every
    internal node has a kernel and an aux-weight structure, and each declared
    structure's arity matches the node's child count.  The model is anything
    exposing ``leaf_proposals``, ``kernels`` and ``aux_weights`` mappings.
    """
    out = []
    for u in range(tree.node_count):
        if tree.is_leaf(u):
            if u not in model.leaf_proposals:
                out.append(Diagnostic("missing-leaf-proposal", u, f"leaf {u} has no proposal"))
            continue
        if u not in model.kernels:
            out.append(Diagnostic("missing-kernel", u, f"internal node {u} has no kernel"))
        struct = model.aux_weights.get(u)
        if struct is None:
            out.append(Diagnostic("missing-aux-weight", u, f"internal node {u} has no aux weight"))
        else:
            declared = getattr(struct, "arity", None)
            if declared is not None and declared != tree.arity(u):
                out.append(
                    Diagnostic(
                        "arity-mismatch",
                        u,
                        f"structure arity {declared} != child count {tree.arity(u)}",
                    )
                )
    return out
