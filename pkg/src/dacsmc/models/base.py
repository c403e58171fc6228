"""Model container and exact-answer facilities shared by the built-ins."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

from ..errors import NoOracle
from ..tree import NodeSpace, Tree

__all__ = ["ModelSpec", "Oracle", "oracle_eval"]


@dataclass(frozen=True)
class Oracle:
    """Exact per-node answers, by exhaustive enumeration or closed form.

    ``log_z`` maps node id to the exact log normalizing constant;
    ``mu`` maps (node id, test function name) to the exact normalized
    integral.  ``method`` records how the values were obtained.
    """

    log_z: Mapping[int, float]
    mu: Mapping[tuple, float]
    method: str

    def __post_init__(self):
        if self.method not in ("enumeration", "conjugate-analytic"):
            raise ValueError(f"unknown oracle method {self.method!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Everything the engine needs to run one model.

    Per-node maps: ``spaces`` covers all nodes, ``leaf_proposals`` the
    leaves, ``kernels`` and ``aux_weights`` the internal nodes, and
    ``target_weights`` at least every node where estimates are requested.
    ``meta`` carries model-specific tags the harness dispatches on.
    """

    tree: Tree
    spaces: Mapping[int, NodeSpace]
    leaf_proposals: Mapping[int, Callable]
    kernels: Mapping[int, Callable]
    aux_weights: Mapping[int, object]
    target_weights: Mapping[int, Callable]
    oracle: Oracle | None = None
    meta: Mapping[str, object] = field(default_factory=dict)


def oracle_eval(model: ModelSpec, u: int, phis=()) -> tuple[float, list]:
    """Exact (log Z_u, [mu_u(phi) ...]) for a model that ships an oracle."""
    if model.oracle is None:
        raise NoOracle("model has no exact oracle attached")
    if u not in model.oracle.log_z:
        raise NoOracle(f"oracle has no value for node {u}")
    mus = []
    for phi in phis:
        name = phi if isinstance(phi, str) else phi.name
        key = (u, name)
        if key not in model.oracle.mu:
            raise NoOracle(f"oracle has no value for {name!r} at node {u}")
        mus.append(model.oracle.mu[key])
    return model.oracle.log_z[u], mus
