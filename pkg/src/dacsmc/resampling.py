"""Correction and resampling steps over children particle clouds.

Five interchangeable routes produce the next generation at an internal
node: the generic product-form materialization, the per-child factorized
shortcut, its mixture-of-products extension, the nested two-stage scheme
for pivot-coupled weights, and incomplete index-set variants.  All of
them report the node mass via the same log-mean-exp bookkeeping, so the
routes can be cross-checked against each other exactly.

Categorical draws use the alias method: O(M) table build, O(1) per draw.
Table construction is a plain loop; when numba is importable the same
loop is compiled and used for large tables (the two fills are
bit-identical, which the tests assert).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AllZeroWeights,
    BudgetTooSmall,
    EmptyIndexSet,
    MaterializationCapExceeded,
    NonFiniteWeight,
)
from .particles import ParticleCloud, WeightedAtoms, logmeanexp
from .weights import Factorized, General, MixtureOfProducts, Nested

__all__ = [
    "CategoricalSampler",
    "build_categorical",
    "correct_general",
    "resample_general",
    "resample_factorized",
    "resample_mixture",
    "resample_nested",
    "correct_incomplete",
    "IndexSet",
    "design_index_set",
    "DEFAULT_CAP",
]

# beyond this many materialized atoms the generic route refuses to run
DEFAULT_CAP = 2**22


def _vose_fill(scaled, alias, prob):
    """Vose alias-table construction; mutates alias and prob in place.

    Written jit-compatibly: explicit index stacks, no fancy indexing.
    """
    m = scaled.shape[0]
    small = np.empty(m, np.int64)
    large = np.empty(m, np.int64)
    ns = 0
    nl = 0
    for i in range(m):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        big = large[nl]
        prob[s] = scaled[s]
        alias[s] = big
        scaled[big] = (scaled[big] + scaled[s]) - 1.0
        if scaled[big] < 1.0:
            small[ns] = big
            ns += 1
        else:
            large[nl] = big
            nl += 1
    while nl > 0:  # leftovers are exactly-1 buckets up to rounding
        nl -= 1
        prob[large[nl]] = 1.0
    while ns > 0:
        ns -= 1
        prob[small[ns]] = 1.0


try:  # pragma: no cover - exercised when numba is installed
    from numba import njit

    _vose_fill_fast = njit(cache=True)(_vose_fill)
except ImportError:  # pragma: no cover
    _vose_fill_fast = None

# jit compilation only pays off past a few thousand buckets
_FAST_FILL_MIN = 4096


@dataclass(frozen=True)
class CategoricalSampler:
    """Alias-method sampler over M atoms."""

    probabilities: np.ndarray
    prob: np.ndarray
    alias: np.ndarray

    def __post_init__(self):
        total = float(np.sum(self.probabilities))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        for arr in (self.probabilities, self.prob, self.alias):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        return self.probabilities.shape[0]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        j = rng.integers(0, self.m, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[j], j, self.alias[j])


def build_categorical(log_weights) -> CategoricalSampler:
    """Normalize log-weights and build the alias tables."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise AllZeroWeights("need a non-empty 1-d weight vector")
    if np.all(np.isneginf(lw)):
        raise AllZeroWeights("all weights are zero")
    if not np.all(np.isfinite(lw)):
        bad = int(np.flatnonzero(~np.isfinite(lw))[0])
        raise NonFiniteWeight(
            f"weight {lw[bad]} at index {bad}: zero and non-finite weights are rejected"
        )
    # max-shift instead of a full log-sum-exp: only the normalized vector
    # is needed, and this path is hot enough that call overhead matters
    p = np.exp(lw - lw.max())
    p /= p.sum()
    scaled = p * p.size
    alias = np.zeros(p.size, dtype=np.int64)
    prob = np.ones(p.size)
    fill = _vose_fill_fast if (_vose_fill_fast is not None and p.size >= _FAST_FILL_MIN) else _vose_fill
    fill(scaled, alias, prob)
    return CategoricalSampler(probabilities=p, prob=prob, alias=alias)


def _adjust(cloud: ParticleCloud) -> np.ndarray:
    """Per-particle log-correction folding a weighted cloud into sums.

    Equal-weight clouds contribute zeros; a weighted cloud contributes
    log(N * W_n), which keeps every mass formula in log-mean-exp form.
    """
    if cloud.log_weights is None:
        return np.zeros(cloud.n)
    return np.log(cloud.n) + cloud.log_weights


def _check_finite(lw: np.ndarray, where: str) -> np.ndarray:
    lw = np.asarray(lw, dtype=float)
    if not np.all(np.isfinite(lw)):
        bad = int(np.flatnonzero(~np.isfinite(lw.ravel()))[0])
        raise NonFiniteWeight(f"{where} produced weight {lw.ravel()[bad]}")
    return lw


def _as_structure(w):
    if isinstance(w, (General, Factorized, MixtureOfProducts, Nested)):
        return w
    if callable(w):
        return General(w)
    raise TypeError(f"cannot interpret {type(w).__name__} as a weight structure")


def _children_mass(children: Sequence[ParticleCloud]) -> float:
    return float(sum(c.log_mass for c in children))


def correct_general(children: Sequence[ParticleCloud], w, cap: int = DEFAULT_CAP) -> WeightedAtoms:
    """Materialize the full product-form weighted measure over children.

    Produces one atom per index tuple (all cross-combinations, child 0
    varying slowest), each weighted by the joint correction weight.  The
    atom count is prod_v N_v, so this route is gated by ``cap``.
    """
    structure = _as_structure(w)
    counts = [c.n for c in children]
    m = int(np.prod(counts))
    if m > cap:
        raise MaterializationCapExceeded(
            f"{m} atoms exceed the cap of {cap}; use a factorized or incomplete route"
        )
    grids = np.indices(counts).reshape(len(children), m)
    blocks = [c.paths[g] for c, g in zip(children, grids)]
    lw = _check_finite(structure.log_weight(blocks), "joint weight")
    for c, g in zip(children, grids):
        adj = _adjust(c)
        if adj.any():
            lw = lw + adj[g]
    return WeightedAtoms.build(np.hstack(blocks), lw, _children_mass(children))


def resample_general(atoms: WeightedAtoms, n_out: int, rng: np.random.Generator) -> np.ndarray:
    """n_out i.i.d. categorical draws from the normalized atoms."""
    sampler = build_categorical(atoms.log_weights)
    idx = sampler.sample(rng, n_out)
    return atoms.atoms[idx]


def _factor_tables(children, factors):
    """Per-child resampling log-weights (factor values plus weighted-cloud
    corrections) and the per-child mass increments."""
    tables, increments = [], []
    for v, (cloud, factor) in enumerate(zip(children, factors)):
        vals = _check_finite(factor(cloud.paths), f"factor for child {v}")
        vals = vals + _adjust(cloud)
        tables.append(vals)
        increments.append(cloud.log_mass + logmeanexp(vals))
    return tables, increments


def resample_factorized(
    children: Sequence[ParticleCloud],
    factors,
    n_out: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Per-child reweigh-and-resample shortcut for factorizing weights.

    Each child is resampled independently under its own factor and the
    draws are concatenated, which costs O(N) instead of O(N^c).  The
    reported mass is exactly the generic route's mass whenever the joint
    weight is the product of the factors.
    """
    if isinstance(factors, Factorized):
        factors = factors.factors
    if len(factors) != len(children):
        raise ValueError(f"{len(factors)} factors for {len(children)} children")
    tables, increments = _factor_tables(children, factors)
    columns = []
    for cloud, table in zip(children, tables):
        idx = build_categorical(table).sample(rng, n_out)
        columns.append(cloud.paths[idx])
    return np.hstack(columns), float(sum(increments))


def resample_mixture(
    children: Sequence[ParticleCloud],
    components,
    n_out: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Resample under a sum of fully-factorized weights.

    Component totals are split multinomially by relative component mass;
    each component then contributes factorized draws.  Returns the drawn
    paths (grouped by component), the node mass, and the per-component
    draw counts (diagnostic).
    """
    if isinstance(components, MixtureOfProducts):
        components = [c.factors for c in components.components]
    components = [c.factors if isinstance(c, Factorized) else tuple(c) for c in components]
    if not components:
        raise ValueError("need at least one mixture component")

    comp_tables, comp_masses = [], []
    for i, factors in enumerate(components):
        if len(factors) != len(children):
            raise ValueError(f"component {i} has {len(factors)} factors for {len(children)} children")
        tables, increments = _factor_tables(children, factors)
        comp_tables.append(tables)
        comp_masses.append(float(sum(increments)))

    log_mass = float(logsumexp(comp_masses))
    omega = np.exp(np.asarray(comp_masses) - log_mass)
    omega /= omega.sum()
    counts = rng.multinomial(n_out, omega)

    rows = []
    for tables, m_i in zip(comp_tables, counts):
        if m_i == 0:
            continue
        columns = []
        for cloud, table in zip(children, tables):
            idx = build_categorical(table).sample(rng, m_i)
            columns.append(cloud.paths[idx])
        rows.append(np.hstack(columns))
    paths = np.vstack(rows) if rows else np.empty((0, sum(c.width for c in children)))
    return paths, log_mass, counts


def resample_nested(
    children: Sequence[ParticleCloud],
    structure: Nested,
    n_out: int,
    rng: np.random.Generator,
    cap: int = DEFAULT_CAP,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Two-stage resampling for weights coupling units to a pivot child.

    Stage one draws pivot indices from the marginalized outer weights
    through the alias sampler; stage two draws each remaining child from
    its conditional row by vectorized inverse-CDF inversion, one uniform
    per output atom and unit child.  Returns the resampled paths, the
    updated log mass, and the marginal pivot log weights (useful as a
    degeneracy diagnostic).
    """
    if not isinstance(structure, Nested):
        raise TypeError("resample_nested needs a Nested weight structure")
    units = structure.unit_children(len(children))
    pivot_cloud = children[structure.pivot]
    m = pivot_cloud.n

    outer = _check_finite(structure.outer(pivot_cloud.paths), "outer weight")
    omega = outer + _adjust(pivot_cloud)

    # full pivot-x-unit weight matrices: this is the quadratic part
    matrices = []
    for ev, j in zip(structure.inner, units):
        unit_cloud = children[j]
        k = unit_cloud.n
        if m * k > cap:
            raise MaterializationCapExceeded(
                f"inner weight matrix {m}x{k} exceeds the cap of {cap}"
            )
        prows = np.repeat(pivot_cloud.paths, k, axis=0)
        urows = np.tile(unit_cloud.paths, (m, 1))
        mat = _check_finite(ev(prows, urows), f"inner weight for child {j}").reshape(m, k)
        mat = mat + _adjust(unit_cloud)
        matrices.append(mat)
        omega = omega + logmeanexp(mat, axis=1)

    log_mass = _children_mass(children) + float(logmeanexp(omega))
    outer_idx = build_categorical(omega).sample(rng, n_out)

    columns: list = [None] * len(children)
    columns[structure.pivot] = pivot_cloud.paths[outer_idx]
    distinct, assign = np.unique(outer_idx, return_inverse=True)
    for mat, j in zip(matrices, units):
        rows = mat[distinct]
        rows = np.exp(rows - rows.max(axis=1, keepdims=True))
        cdf = np.cumsum(rows, axis=1)
        u = rng.random(n_out) * cdf[assign, -1]
        inner_idx = np.argmax(cdf[assign] > u[:, None], axis=1)
        columns[j] = children[j].paths[inner_idx]
    return np.hstack(columns), float(log_mass), omega


@dataclass(frozen=True)
class IndexSet:
    """A subset of the full index cross-product [N]^arity."""

    entries: np.ndarray
    n: int
    arity: int

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.int64)
        if e.ndim != 2 or e.shape[1] != self.arity:
            raise ValueError(f"entries must be (m, {self.arity})")
        if e.shape[0] == 0:
            raise EmptyIndexSet("index set has no entries")
        if e.min(initial=0) < 0 or e.max(initial=0) >= self.n:
            raise ValueError(f"indices must lie in [0, {self.n})")
        object.__setattr__(self, "entries", e)
        e.setflags(write=False)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @staticmethod
    def diagonal(n: int, arity: int) -> "IndexSet":
        cols = np.repeat(np.arange(n, dtype=np.int64)[:, None], arity, axis=1)
        return IndexSet(entries=cols, n=n, arity=arity)

    @staticmethod
    def complete(n: int, arity: int) -> "IndexSet":
        grids = np.indices([n] * arity).reshape(arity, n**arity).T
        return IndexSet(entries=grids, n=n, arity=arity)


def correct_incomplete(children: Sequence[ParticleCloud], w, m: IndexSet) -> WeightedAtoms:
    """Product-form correction restricted to an index subset.

    Averages the joint weight over the tuples in ``m`` only; with the
    complete set this is exactly :func:`correct_general`, with the
    diagonal it is the standard N-sample estimator.
    """
    if m.arity != len(children):
        raise ValueError(f"index set arity {m.arity} != {len(children)} children")
    for v, c in enumerate(children):
        if c.n != m.n:
            raise ValueError(f"child {v} has {c.n} particles, index set expects {m.n}")
    structure = _as_structure(w)
    blocks = [c.paths[m.entries[:, v]] for v, c in enumerate(children)]
    lw = _check_finite(structure.log_weight(blocks), "joint weight")
    for v, c in enumerate(children):
        adj = _adjust(c)
        if adj.any():
            lw = lw + adj[m.entries[:, v]]
    return WeightedAtoms.build(np.hstack(blocks), lw, _children_mass(children))


def design_index_set(n: int, arity: int, budget: int, rng: np.random.Generator) -> IndexSet:
    """Cyclic-shift index design covering each index equally often.

    The budget is spent in blocks of n tuples; block 0 is the diagonal
    and every further block applies fresh relative offsets, all distinct,
    so pairwise tuple overlaps are minimized.
    """
    if budget < n:
        raise BudgetTooSmall(f"budget {budget} < n = {n}")
    blocks, rem = divmod(budget, n)
    if rem:
        raise BudgetTooSmall(
            f"budget {budget} is not a multiple of n = {n}; equal per-index coverage needs full blocks"
        )
    if arity < 1:
        raise ValueError("arity must be >= 1")
    if blocks > n ** (arity - 1):
        raise BudgetTooSmall(
            f"{blocks} distinct offset blocks are impossible with n={n}, arity={arity}"
        )
    base = np.arange(n, dtype=np.int64)
    seen = {(0,) * (arity - 1)}
    entries = np.empty((budget, arity), dtype=np.int64)
    entries[:n] = base[:, None]
    for b in range(1, blocks):
        while True:
            off = tuple(int(x) for x in rng.integers(0, n, size=arity - 1))
            if off not in seen:
                seen.add(off)
                break
        entries[b * n : (b + 1) * n, 0] = base
        for j, o in enumerate(off, start=1):
            entries[b * n : (b + 1) * n, j] = (base + o) % n
    return IndexSet(entries=entries, n=n, arity=arity)
