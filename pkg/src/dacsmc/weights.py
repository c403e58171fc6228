"""Auxiliary weight structures attached to internal tree nodes.

Each structure describes how the correction weight at a node decomposes
over that node's children, which is what the specialized resamplers
exploit.  Every variant also exposes a pointwise ``log_weight`` over
row-aligned child path blocks so the generic and incomplete routes can
consume any structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

__all__ = ["General", "Factorized", "MixtureOfProducts", "Nested", "WeightStructure"]

Evaluator = Callable[[np.ndarray], np.ndarray]
PairEvaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _rows(blocks: Sequence[np.ndarray]) -> int:
    m = blocks[0].shape[0]
    for b in blocks:
        if b.shape[0] != m:
            raise ValueError("child path blocks must be row-aligned")
    return m


@dataclass(frozen=True)
class General:
    """Arbitrary joint weight over the concatenated child paths."""

    evaluator: Evaluator

    @property
    def arity(self) -> int | None:
        return None  # accepts any child count

    def log_weight(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        _rows(blocks)
        return np.asarray(self.evaluator(np.hstack(blocks)), dtype=float)


@dataclass(frozen=True)
class Factorized:
    """Weight that splits into one independent factor per child."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("Factorized needs at least one factor")

    @property
    def arity(self) -> int:
        return len(self.factors)

    def log_weight(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        if len(blocks) != self.arity:
            raise ValueError(f"expected {self.arity} child blocks, got {len(blocks)}")
        m = _rows(blocks)
        total = np.zeros(m)
        for f, b in zip(self.factors, blocks):
            total += np.asarray(f(b), dtype=float)
        return total


@dataclass(frozen=True)
class MixtureOfProducts:
    """Sum of fully-factorized weights: w = sum_i prod_v wbar_v^i."""

    components: tuple

    def __post_init__(self):
        comps = tuple(Factorized(c.factors if isinstance(c, Factorized) else c) for c in self.components)
        if not comps:
            raise ValueError("MixtureOfProducts needs at least one component")
        arity = comps[0].arity
        if any(c.arity != arity for c in comps):
            raise ValueError("all mixture components must share the same arity")
        object.__setattr__(self, "components", comps)

    @property
    def arity(self) -> int:
        return self.components[0].arity

    def log_weight(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        per_comp = np.stack([c.log_weight(blocks) for c in self.components])
        return logsumexp(per_comp, axis=0)


@dataclass(frozen=True)
class Nested:
    """Weight coupling every non-pivot child to one designated pivot child.

    ``outer`` evaluates the pivot-only part on pivot paths; ``inner[l]``
    evaluates the coupling between the pivot block and the l-th remaining
    child, row-aligned.  The joint weight is
    ``outer(p) * prod_l inner_l(p, x_l)``.
    """

    pivot: int
    outer: Evaluator
    inner: tuple

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        if not self.inner:
            raise ValueError("Nested needs at least one inner evaluator")
        if not 0 <= self.pivot <= len(self.inner):
            raise ValueError("pivot index out of range")

    @property
    def arity(self) -> int:
        return 1 + len(self.inner)

    def unit_children(self, n_children: int) -> list:
        """Child positions acted on by inner evaluators, in order."""
        if n_children != self.arity:
            raise ValueError(f"expected {self.arity} children, got {n_children}")
        return [j for j in range(n_children) if j != self.pivot]

    def log_weight(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        units = self.unit_children(len(blocks))
        pivot_block = blocks[self.pivot]
        total = np.asarray(self.outer(pivot_block), dtype=float).copy()
        for ev, j in zip(self.inner, units):
            total += np.asarray(ev(pivot_block, blocks[j]), dtype=float)
        return total


WeightStructure = General | Factorized | MixtureOfProducts | Nested
