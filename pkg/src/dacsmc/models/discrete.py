"""Finite-alphabet toy model on a perfect tree, with an exhaustive oracle.

Every node carries one symbol from a common alphabet.  Proposals,
kernels, and weights are random strictly-positive tables drawn from a
seeded stream, so the model has no special structure beyond what the
tables encode, and the exact answers follow from summing over all symbol
configurations.  This is the workhorse for statistical verification:
small enough to enumerate, rich enough to make every estimator work.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import TooLarge
from ..rng import stream
from ..tree import NodeSpace, Tree, build_tree, subtree_nodes
from ..weights import Factorized, General, MixtureOfProducts
from .base import ModelSpec, Oracle

__all__ = ["discrete_toy"]

_MAX_CONFIGS = 10**6
PHI_NAMES = ("coord0", "last", "mean")


def _heap_parents(depth: int, branching: int) -> list:
    if branching == 1:
        count = depth + 1
    else:
        count = (branching ** (depth + 1) - 1) // (branching - 1)
    return [None] + [(k - 1) // branching for k in range(1, count)]


def _softmax(logits: np.ndarray, axis=-1) -> np.ndarray:
    p = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return p / p.sum(axis=axis, keepdims=True)


def _compound(x: np.ndarray, cols: np.ndarray, alphabet: int) -> np.ndarray:
    idx = np.zeros(x.shape[0], dtype=np.int64)
    for c in cols:
        idx = idx * alphabet + x[:, c].astype(np.int64)
    return idx


def _inverse_cdf(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.cumsum(p), u, side="right")


def _outer_sum(tables, alphabet: int) -> np.ndarray:
    """Dense joint table sum_j t_j[digit_j] over all digit combinations."""
    arity = len(tables)
    acc = np.zeros((alphabet,) * arity)
    for j, t in enumerate(tables):
        shape = [1] * arity
        shape[j] = alphabet
        acc = acc + np.asarray(t).reshape(shape)
    return acc.reshape(-1)


def discrete_toy(depth: int, branching: int, alphabet: int, seed: int,
                 structure: str = "general", spread: float = 1.0,
                 components: int = 2) -> ModelSpec:
    """Random-table model on a perfect ``branching``-ary tree.

    ``structure`` selects how the correction weights decompose (general,
    factorized, or mixture), which is what the resampling strategies key
    on.  ``spread`` scales the log-tables; 0 gives the all-weights-one
    model.  Fixed ``seed`` reproduces the tables exactly.
    """
    if depth < 0 or branching < 1 or alphabet < 2:
        raise ValueError("need depth >= 0, branching >= 1, alphabet >= 2")
    if structure not in ("general", "factorized", "mixture"):
        raise ValueError(f"unknown structure {structure!r}")
    parents = _heap_parents(depth, branching)
    tree = build_tree(parents)
    if alphabet ** tree.node_count > _MAX_CONFIGS:
        raise TooLarge(
            f"{alphabet}^{tree.node_count} configurations exceed {_MAX_CONFIGS}"
        )

    rng = stream(seed)
    a = alphabet
    prop, kern, log_wt, joint_aux = {}, {}, {}, {}
    aux_structs = {}
    for u in range(tree.node_count):
        if tree.is_leaf(u):
            prop[u] = _softmax(rng.uniform(-spread, spread, a))
            log_wt[u] = rng.uniform(-spread, spread, a)
            continue
        nb = tree.arity(u)
        kern[u] = _softmax(rng.uniform(-spread, spread, (a**nb, a)), axis=1)
        if structure == "general":
            tbl = rng.uniform(-spread, spread, a**nb)
            joint_aux[u] = tbl
        elif structure == "factorized":
            tables = [rng.uniform(-spread, spread, a) for _ in range(nb)]
            joint_aux[u] = _outer_sum(tables, a)
        else:
            comps = [[rng.uniform(-spread, spread, a) for _ in range(nb)]
                     for _ in range(components)]
            joint_aux[u] = logsumexp(
                np.stack([_outer_sum(c, a) for c in comps]), axis=0
            )
        log_wt[u] = rng.uniform(-spread, spread, (a**nb, a))

        cols = _own_cols(tree, u)
        if structure == "general":
            aux_structs[u] = General(_general_eval(tbl, cols, a))
        elif structure == "factorized":
            aux_structs[u] = Factorized(tuple(_factor_eval(t) for t in tables))
        else:
            aux_structs[u] = MixtureOfProducts(tuple(
                Factorized(tuple(_factor_eval(t) for t in comp)) for comp in comps
            ))

    spaces = {u: NodeSpace.finite(a) for u in range(tree.node_count)}
    leaf_proposals = {u: _proposal(prop[u]) for u in tree.leaves}
    kernels = {u: _kernel(kern[u], _own_cols(tree, u), a) for u in kern}
    target_weights = {}
    for u in range(tree.node_count):
        if tree.is_leaf(u):
            target_weights[u] = _leaf_target(log_wt[u])
        else:
            target_weights[u] = _node_target(log_wt[u], _own_cols(tree, u), a)

    oracle = _enumeration_oracle(tree, prop, kern, joint_aux, log_wt, a)
    return ModelSpec(
        tree=tree, spaces=spaces, leaf_proposals=leaf_proposals,
        kernels=kernels, aux_weights=aux_structs, target_weights=target_weights,
        oracle=oracle,
        meta={"name": "discrete_toy", "structure": structure, "depth": depth,
              "branching": branching, "alphabet": a, "spread": spread},
    )


def _own_cols(tree: Tree, u: int) -> np.ndarray:
    """Column of each child's own symbol inside the concatenated child paths."""
    widths = [len(subtree_nodes(tree, v)) for v in tree.children[u]]
    return np.cumsum(widths) - 1


def _proposal(p):
    def sample(n, rng):
        return _inverse_cdf(p, rng.random(n))[:, None].astype(float)
    return sample


def _kernel(rows, cols, a):
    def sample(x, rng):
        table = rows[_compound(x, cols, a)]
        u = rng.random(x.shape[0])
        drawn = (np.cumsum(table, axis=1) < u[:, None]).sum(axis=1)
        return drawn[:, None].astype(float)
    return sample


def _general_eval(tbl, cols, a):
    return lambda x: tbl[_compound(x, cols, a)]


def _factor_eval(tbl):
    # a factor sees one child block; the child's own symbol is its last column
    return lambda block: tbl[block[:, -1].astype(np.int64)]


def _leaf_target(tbl):
    return lambda x: tbl[x[:, 0].astype(np.int64)]


def _node_target(tbl, cols, a):
    return lambda x: tbl[_compound(x, cols, a), x[:, -1].astype(np.int64)]


def _enumeration_oracle(tree, prop, kern, joint_aux, log_wt, a) -> Oracle:
    log_z = {}
    mu = {}
    for u in range(tree.node_count):
        nodes = subtree_nodes(tree, u)
        k = len(nodes)
        cfg = np.arange(a**k)
        vals = {x: (cfg // a ** (k - 1 - i)) % a for i, x in enumerate(nodes)}
        logd = np.zeros(a**k)
        for x in nodes:
            if tree.is_leaf(x):
                logd += np.log(prop[x])[vals[x]]
            else:
                cidx = np.zeros(a**k, dtype=np.int64)
                for v in tree.children[x]:
                    cidx = cidx * a + vals[v]
                logd += joint_aux[x][cidx] + np.log(kern[x])[cidx, vals[x]]
        if tree.is_leaf(u):
            logd += log_wt[u][vals[u]]
        else:
            cidx = np.zeros(a**k, dtype=np.int64)
            for v in tree.children[u]:
                cidx = cidx * a + vals[v]
            logd += log_wt[u][cidx, vals[u]]
        log_z[u] = float(logsumexp(logd))
        if u == tree.root:
            probs = np.exp(logd - log_z[u])
            phi_vals = {
                "coord0": vals[nodes[0]].astype(float),
                "last": vals[u].astype(float),
                "mean": np.mean([vals[x] for x in nodes], axis=0),
            }
            for name in PHI_NAMES:
                mu[(u, name)] = float(probs @ phi_vals[name])
    return Oracle(log_z=log_z, mu=mu, method="enumeration")
