"""Recursive divide-and-conquer particle driver and its line baseline.

``dac_smc`` walks the tree bottom-up: children are run first (each on
its own node-keyed random stream, so parallel and serial execution give
identical output), then the node corrects the product of child clouds
under the configured strategy, resamples, and extends by the node's
kernel.  ``dac_smc_adaptive`` adds an effective-sample-size gate that
skips resampling while the diagonal correction weights are healthy.
``asmc_run`` collapses the tree level by level into a line and runs the
same driver on it, which is the classic single-sequence sampler used as
a baseline.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from time import perf_counter
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import DacError, StrategyIncompatible
from .models.base import ModelSpec
from .particles import ParticleCloud, ess, leaf_init, logmeanexp, mutate
from .resampling import (
    DEFAULT_CAP,
    _adjust,
    _check_finite,
    _factor_tables,
    correct_general,
    correct_incomplete,
    design_index_set,
    resample_factorized,
    resample_general,
    resample_mixture,
    resample_nested,
)
from .rng import stream, stream_stamp
from .tree import NodeSpace, Tree, lump_levels, subtree_nodes, validate
from .weights import Factorized, General, MixtureOfProducts, Nested

__all__ = [
    "EngineOptions",
    "NodeTrace",
    "dac_smc",
    "dac_smc_adaptive",
    "asmc_run",
    "build_lumped_model",
]

_STRATEGIES = ("generic", "factorized", "mixture", "nested", "incomplete")


def _parse_strategy(selector: str):
    name, _, tail = selector.partition(":")
    if name not in _STRATEGIES:
        raise ValueError(f"unknown strategy {selector!r}")
    if name != "incomplete":
        if tail:
            raise ValueError(f"strategy {name!r} takes no argument")
        return name, None
    return name, (int(tail) if tail else None)


@dataclass(frozen=True)
class EngineOptions:
    """Run configuration for one engine invocation.

    ``strategy`` is either one selector string (generic | factorized |
    mixture | nested | incomplete[:BUDGET]) or a node-to-selector map
    (unlisted nodes fall back to generic).  ``ess_threshold`` is the
    skip gate as a fraction of N: 0 never resamples at internal nodes,
    anything above 1 always does.
    """

    strategy: str | Mapping[int, str] = "generic"
    n: int = 256
    per_node_n: Mapping[int, int] | None = None
    ess_threshold: float | None = None
    seed: int = 0
    parallel_children: bool = False
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if self.ess_threshold is not None and not self.ess_threshold >= 0:
            raise ValueError("ess_threshold must be >= 0")
        if isinstance(self.strategy, str):
            _parse_strategy(self.strategy)
        else:
            for s in self.strategy.values():
                _parse_strategy(s)
        if self.per_node_n is not None:
            for u, k in self.per_node_n.items():
                if k < 1:
                    raise ValueError(f"per-node count {k} at node {u}")


@dataclass(frozen=True)
class NodeTrace:
    """One per-node record: mass, degeneracy diagnostic, timing."""

    node: int
    strategy: str
    n: int
    log_mass: float
    ess: float
    resampled: bool
    elapsed: float


def _strategy_at(opts: EngineOptions, u: int):
    if isinstance(opts.strategy, str):
        return _parse_strategy(opts.strategy)
    return _parse_strategy(opts.strategy.get(u, "generic"))


def _n_at(opts: EngineOptions, u: int) -> int:
    if opts.per_node_n is None:
        return opts.n
    return opts.per_node_n[u]


_MATCH = {"factorized": Factorized, "mixture": MixtureOfProducts, "nested": Nested}


def _check_compat(strat: str, structure, u: int, gate) -> None:
    if gate is not None and strat in ("nested", "incomplete"):
        raise StrategyIncompatible(
            f"the adaptive gate needs a pre-resampling weighted representation; "
            f"strategy {strat!r} at node {u} does not expose one"
        )
    wanted = _MATCH.get(strat)
    if wanted is not None and not isinstance(structure, wanted):
        raise StrategyIncompatible(
            f"strategy {strat!r} at node {u} needs a {wanted.__name__} weight "
            f"structure, got {type(structure).__name__}"
        )


def _equal_counts(children, strat: str, u: int) -> int:
    counts = {c.n for c in children}
    if len(counts) != 1:
        raise StrategyIncompatible(
            f"strategy {strat!r} at node {u} needs equal child counts, got "
            f"{[c.n for c in children]}"
        )
    return counts.pop()


def _diagnostic_ess(strat, structure, children, atoms, omega) -> float:
    if atoms is not None:
        return ess(atoms.log_weights)
    if omega is not None:
        return ess(omega)
    if strat == "factorized":
        tables, _ = _factor_tables(children, structure.factors)
        return min(ess(t) for t in tables)
    # mixture: flattened component-by-child factor weights, diagnostic only
    flat = []
    for comp in structure.components:
        tables, _ = _factor_tables(children, comp.factors)
        flat.extend(tables)
    return ess(np.concatenate(flat))


def _run(model, tree, u, opts, gate, at_root, trace):
    t0 = perf_counter()
    if tree.is_leaf(u):
        rng = stream(opts.seed, u)
        cloud = leaf_init(model, u, _n_at(opts, u), rng, stamp=stream_stamp(opts.seed, u))
        if trace is not None:
            trace.append(NodeTrace(u, "leaf", cloud.n, 0.0, float(cloud.n), False, perf_counter() - t0))
        return cloud

    kids = tree.children[u]
    if opts.parallel_children and len(kids) > 1:
        child_traces = [([] if trace is not None else None) for _ in kids]
        with ThreadPoolExecutor(max_workers=len(kids)) as pool:
            futures = [
                pool.submit(_run, model, tree, v, opts, gate, False, ct)
                for v, ct in zip(kids, child_traces)
            ]
            children = [f.result() for f in futures]
        if trace is not None:
            for ct in child_traces:
                trace.extend(ct)
    else:
        children = [_run(model, tree, v, opts, gate, False, trace) for v in kids]

    t0 = perf_counter()
    rng = stream(opts.seed, u)
    stamp = stream_stamp(opts.seed, u)
    structure = model.aux_weights[u]
    strat, budget = _strategy_at(opts, u)
    n_out = _n_at(opts, u)
    _check_compat(strat, structure, u, gate)

    if gate is not None and not at_root:
        n_c = _equal_counts(children, "adaptive:" + strat, u)
        if n_out != n_c:
            raise StrategyIncompatible(
                f"adaptive gate at node {u} cannot change the particle count "
                f"({n_c} -> {n_out}); skipping resampling keeps all atoms"
            )
        blocks = [c.paths for c in children]
        diag = _check_finite(structure.log_weight(blocks), f"diagonal weight at node {u}")
        for c in children:
            adj = _adjust(c)
            if adj.any():
                diag = diag + adj
        gate_ess = ess(diag)
        if gate_ess >= gate * n_c:
            mass = float(sum(c.log_mass for c in children) + logmeanexp(diag))
            cloud = mutate(
                np.hstack(blocks), model, u, rng,
                log_mass=mass, stamp=stamp,
                log_weights=diag - logsumexp(diag),
            )
            if trace is not None:
                trace.append(NodeTrace(u, strat + "+skip", cloud.n, mass, gate_ess, False, perf_counter() - t0))
            return cloud

    atoms = omega = None
    if strat == "generic":
        atoms = correct_general(children, structure, cap=opts.cap)
        paths = resample_general(atoms, n_out, rng)
        mass = atoms.log_mass
    elif strat == "incomplete":
        n_c = _equal_counts(children, strat, u)
        b = budget if budget is not None else n_c
        idx = design_index_set(n_c, len(children), b, rng)
        atoms = correct_incomplete(children, structure, idx)
        paths = resample_general(atoms, n_out, rng)
        mass = atoms.log_mass
    elif strat == "factorized":
        paths, mass = resample_factorized(children, structure, n_out, rng)
    elif strat == "mixture":
        paths, mass, _ = resample_mixture(children, structure, n_out, rng)
    else:
        paths, mass, omega = resample_nested(children, structure, n_out, rng, cap=opts.cap)

    cloud = mutate(paths, model, u, rng, log_mass=mass, stamp=stamp)
    if trace is not None:
        ess_val = _diagnostic_ess(strat, structure, children, atoms, omega)
        trace.append(NodeTrace(u, strat, cloud.n, mass, ess_val, True, perf_counter() - t0))
    return cloud


def _precheck(model, tree, opts):
    problems = validate(tree, model)
    if problems:
        summary = "; ".join(f"{d.code}@{d.node}" for d in problems)
        raise DacError(f"model failed validation: {summary}")
    if opts.per_node_n is not None:
        missing = [v for v in range(tree.node_count) if v not in opts.per_node_n]
        if missing:
            raise ValueError(f"per_node_n misses nodes {missing}")


def dac_smc(model: ModelSpec, tree: Tree | None = None, u: int | None = None,
            opts: EngineOptions | None = None, trace: list | None = None) -> ParticleCloud:
    """Run the divide-and-conquer sampler rooted at ``u`` (default: root).

    Always resamples at internal nodes; ``opts.ess_threshold`` is ignored
    here (use :func:`dac_smc_adaptive` for the gated variant).
    """
    tree = model.tree if tree is None else tree
    u = tree.root if u is None else u
    opts = EngineOptions() if opts is None else opts
    _precheck(model, tree, opts)
    return _run(model, tree, u, opts, None, True, trace)


def dac_smc_adaptive(model: ModelSpec, tree: Tree | None = None, u: int | None = None,
                     opts: EngineOptions | None = None, trace: list | None = None) -> ParticleCloud:
    """Gated variant: skip resampling while the diagonal-weight ESS holds up.

    A skip carries all child atoms forward with per-particle weights; the
    root always resamples so the returned cloud is equal-weight.
    """
    tree = model.tree if tree is None else tree
    u = tree.root if u is None else u
    opts = EngineOptions() if opts is None else opts
    if opts.ess_threshold is None:
        raise ValueError("adaptive run needs opts.ess_threshold")
    _precheck(model, tree, opts)
    return _run(model, tree, u, opts, float(opts.ess_threshold), True, trace)


def build_lumped_model(model: ModelSpec, tree: Tree | None = None) -> ModelSpec:
    """Collapse the tree level by level into a line model.

    Line node t bundles every original node at height t; its kernel draws
    each member's kernel or leaf proposal (ascending id) on columns
    gathered from the line path, and its correction weight is the sum of
    the members' correction weights on the same gathered columns.  The
    root target weight is carried over through a column permutation, so
    estimates from the line run are directly comparable.
    """
    tree = model.tree if tree is None else tree
    lumped = lump_levels(tree)
    groups = lumped.groups
    levels = len(groups)

    col_start = {}
    level_width = []
    offset = 0
    for group in groups:
        w = 0
        for x in group:
            col_start[x] = offset + w
            w += model.spaces[x].width
        level_width.append(w)
        offset += w

    def node_cols(x):
        return np.arange(col_start[x], col_start[x] + model.spaces[x].width)

    def gather_children(u):
        cols = []
        for v in tree.children[u]:
            for x in subtree_nodes(tree, v):
                cols.append(node_cols(x))
        return np.concatenate(cols)

    spaces = {t: NodeSpace.continuous(level_width[t]) for t in range(levels)}
    leaf_proposals, kernels, aux_weights = {}, {}, {}

    base_members = groups[0]
    for x in base_members:
        if not tree.is_leaf(x):
            raise DacError(f"deepest level holds internal node {x}")

    def make_base(members):
        samplers = [model.leaf_proposals[x] for x in members]

        def proposal(n, rng):
            return np.hstack([s(n, rng) for s in samplers])

        return proposal

    leaf_proposals[0] = make_base(base_members)

    def make_kernel(members):
        parts = []
        for x in members:
            if tree.is_leaf(x):
                parts.append(("leaf", model.leaf_proposals[x], None))
            else:
                parts.append(("kernel", model.kernels[x], gather_children(x)))

        def kernel(prefix, rng):
            out = []
            for kind, fn, cols in parts:
                if kind == "leaf":
                    out.append(np.asarray(fn(prefix.shape[0], rng), dtype=float))
                else:
                    out.append(np.asarray(fn(prefix[:, cols], rng), dtype=float))
            return np.hstack(out)

        return kernel

    def make_aux(members):
        terms = []
        for x in members:
            if tree.is_leaf(x):
                continue
            blocks_cols = []
            for v in tree.children[x]:
                cols = [node_cols(y) for y in subtree_nodes(tree, v)]
                blocks_cols.append(np.concatenate(cols))
            terms.append((model.aux_weights[x], blocks_cols))

        def evaluator(prefix):
            total = np.zeros(prefix.shape[0])
            for structure, blocks_cols in terms:
                total = total + structure.log_weight([prefix[:, c] for c in blocks_cols])
            return total

        return General(evaluator)

    for t in range(1, levels):
        kernels[t] = make_kernel(groups[t])
        aux_weights[t] = make_aux(groups[t])

    target_weights = {}
    if tree.root in model.target_weights:
        perm = np.concatenate([node_cols(x) for x in subtree_nodes(tree, tree.root)])
        root_w = model.target_weights[tree.root]
        target_weights[levels - 1] = lambda paths: root_w(paths[:, perm])

    return ModelSpec(
        tree=lumped.line,
        spaces=spaces,
        leaf_proposals=leaf_proposals,
        kernels=kernels,
        aux_weights=aux_weights,
        target_weights=target_weights,
        oracle=model.oracle,
        meta={"lumped": True, "source": dict(model.meta)},
    )


def asmc_run(model: ModelSpec, tree: Tree | None = None,
             opts: EngineOptions | None = None, trace: list | None = None) -> ParticleCloud:
    """Baseline single-sequence sampler on the level-lumped line.

    Equivalent to running a standard auxiliary sequential importance
    resampler whose level kernels and weights are the products of the
    per-node ones.  Per-node particle counts are not supported here.
    """
    tree = model.tree if tree is None else tree
    opts = EngineOptions() if opts is None else opts
    if opts.per_node_n is not None:
        raise ValueError("the line baseline runs with one uniform particle count")
    _precheck(model, tree, opts)
    line_model = build_lumped_model(model, tree)
    line_opts = dataclasses.replace(opts, strategy="generic", ess_threshold=None)
    return dac_smc(line_model, line_model.tree, line_model.tree.root, line_opts, trace)
