"""State-space model with per-stage variance parameters and iid observations.

The latent chain theta_0, ..., theta_T evolves through unit-mean
exponential steps (theta_t is exponential with mean theta_{t-1}); at each
stage, L latent values X_{t,1..L} are drawn from N(0, theta_t) and observed
through unit-variance Gaussian noise.  The tree is a caterpillar: the node
for theta_t has the node for theta_{t-1} as its first child plus the L
stage-(t-1) observation leaves, and a dummy root (constant coordinate 0)
hangs above stage T so that the final stage's corrections are applied.

Because each correction weight couples one chain child to L exchangeable
leaf children, every weight here carries the nested structure, and the
per-stage pairwise tables are the model's only quadratic-cost part.

``run_partial`` runs the collapsed single-sweep variant: it integrates the
observation leaves out of the stage weights analytically and draws the
retained X values from their exact conditionals, sharing draws between
duplicated resampled atoms so the sampled law matches the tree run.
"""

from __future__ import annotations

import time
from typing import TYPE_CHECKING

import numpy as np

from ..errors import InvalidData
from ..particles import ParticleCloud, ess, logmeanexp
from ..resampling import build_categorical
from ..rng import stream, stream_stamp
from ..tree import NodeSpace, build_tree
from ..weights import Nested
from .base import ModelSpec

if TYPE_CHECKING:  # pragma: no cover - annotation only, avoids an import cycle
    from ..engine import EngineOptions

__all__ = ["theta_id", "simulate_data", "timevarying_model", "run_partial"]

_LOG_2PI = np.log(2.0 * np.pi)


def theta_id(t: int, n_leaves: int) -> int:
    """Node id of the stage-``t`` chain variable."""
    return t * (n_leaves + 1)


def simulate_data(horizon: int, n_leaves: int, seed: int = 0) -> np.ndarray:
    """Draw a (horizon+1, n_leaves) observation matrix from the model."""
    rng = stream(seed, 10_000_019)
    rows = []
    theta = rng.exponential(1.0)
    for _ in range(horizon + 1):
        latent = rng.normal(0.0, np.sqrt(theta), size=n_leaves)
        rows.append(latent + rng.normal(0.0, 1.0, size=n_leaves))
        theta = rng.exponential(theta)
    return np.array(rows)


def _chain_kernel(prev_col):
    def sample(x, rng):
        return rng.exponential(x[:, prev_col])[:, None]
    return sample


def _leaf_proposal(center):
    def sample(n, rng):
        return (center + rng.standard_normal(n))[:, None]
    return sample


def _prior_logpdf(pivot_block, unit_block):
    # log N(x; 0, theta) with theta read off the pivot chain coordinate
    theta = pivot_block[:, -1]
    x = unit_block[:, 0]
    return -0.5 * (_LOG_2PI + np.log(theta)) - x * x / (2.0 * theta)


def _zeros(block):
    return np.zeros(block.shape[0])


def timevarying_model(horizon: int, n_leaves: int, data,
                      variant: str = "nested") -> ModelSpec:
    """Build the caterpillar model for a (horizon+1, n_leaves) data matrix.

    ``variant`` is a run-mode tag carried in ``meta``: ``nested`` runs the
    tree recursion, ``partial`` selects the single-sweep driver
    (:func:`run_partial`) when launched through the experiment harness.
    The model itself is identical either way.
    """
    if variant not in ("nested", "partial"):
        raise InvalidData(f"unknown variant {variant!r}")
    if horizon < 1 or n_leaves < 1:
        raise InvalidData("need horizon >= 1 and n_leaves >= 1")
    y = np.asarray(data, dtype=float)
    if y.shape != (horizon + 1, n_leaves):
        raise InvalidData(
            f"data must have shape {(horizon + 1, n_leaves)}, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidData("data must be finite")

    width = n_leaves + 1
    root = (horizon + 1) * width
    parents: list = []
    for x in range(root):
        parents.append((x // width + 1) * width)
    parents.append(None)
    # ids run stage by stage, so every parent id exceeds its children's
    tree = build_tree(parents)

    spaces = {u: NodeSpace.continuous(1) for u in range(root + 1)}
    leaf_proposals = {0: lambda n, rng: rng.exponential(1.0, size=n)[:, None]}
    kernels, aux_weights = {}, {}
    for t in range(horizon + 1):
        for leaf in range(1, n_leaves + 1):
            leaf_proposals[theta_id(t, n_leaves) + leaf] = _leaf_proposal(
                float(y[t, leaf - 1]))
        if t >= 1:
            # child 0 is the stage t-1 chain subtree; its own coordinate
            # sits in that block's final column
            kernels[theta_id(t, n_leaves)] = _chain_kernel(theta_id(t - 1, n_leaves))
    for t in range(1, horizon + 2):
        node = theta_id(t, n_leaves) if t <= horizon else root
        aux_weights[node] = Nested(
            pivot=0, outer=_zeros,
            inner=tuple(_prior_logpdf for _ in range(n_leaves)))
    kernels[root] = lambda x, rng: np.zeros((x.shape[0], 1))

    return ModelSpec(
        tree=tree, spaces=spaces, leaf_proposals=leaf_proposals,
        kernels=kernels, aux_weights=aux_weights,
        target_weights={root: _zeros},
        oracle=None,
        meta={"name": "timevarying", "variant": variant,
              "horizon": horizon, "n_leaves": n_leaves, "y": y},
    )


def run_partial(model: ModelSpec, opts: EngineOptions,
                trace: list | None = None) -> ParticleCloud:
    """Single-sweep run of the chain model with leaves integrated out.

    Per stage: extend the chain, weight by the marginal likelihood of the
    stage's observations, resample, then draw the retained latent values
    from their exact posteriors given the observations.  Atoms duplicated
    by resampling share latent draws, so the sampled law coincides with
    the tree-structured run while the cost per stage stays linear in the
    particle count.  Returns a root cloud in the same column layout.
    """
    from ..engine import NodeTrace

    meta = model.meta
    horizon, n_leaves = meta["horizon"], meta["n_leaves"]
    y = np.asarray(meta["y"], dtype=float)
    n = opts.n
    root = (horizon + 1) * (n_leaves + 1)

    paths = np.empty((n, 0))
    theta_prev: np.ndarray | None = None
    log_mass = 0.0
    for t in range(horizon + 1):
        t0 = time.perf_counter()
        rng = stream(opts.seed, theta_id(t, n_leaves))
        if theta_prev is None:
            theta = rng.exponential(1.0, size=n)
        else:
            theta = rng.exponential(theta_prev)
        prefix = np.hstack([paths, theta[:, None]])

        # stage evidence: each observation is N(0, 1 + theta) marginally
        scale = 1.0 + theta
        log_g = (-0.5 * n_leaves * (_LOG_2PI + np.log(scale))
                 - np.sum(y[t] * y[t]) / (2.0 * scale))
        log_mass += float(logmeanexp(log_g))

        outer = build_categorical(log_g).sample(rng, n)
        inner = rng.integers(0, n, size=(n, n_leaves))

        # posterior of each latent given its observation: mean shrinks the
        # observation by theta/(1+theta), variance theta/(1+theta); one
        # draw per distinct (pivot atom, inner label) pair so atoms
        # duplicated by resampling share their latent values
        shrink = theta / scale
        sd = np.sqrt(shrink)
        values = np.empty((n, n_leaves))
        for leaf in range(n_leaves):
            keys = outer * n + inner[:, leaf]
            uniq, where = np.unique(keys, return_inverse=True)
            source = uniq // n
            draws = (shrink[source] * y[t, leaf]
                     + sd[source] * rng.standard_normal(uniq.size))
            values[:, leaf] = draws[where]

        paths = np.hstack([prefix[outer], values])
        theta_prev = theta[outer]
        if trace is not None:
            trace.append(NodeTrace(
                node=theta_id(t, n_leaves), strategy="partial", n=n,
                log_mass=log_mass, ess=float(ess(log_g)), resampled=True,
                elapsed=time.perf_counter() - t0))

    paths = np.hstack([paths, np.zeros((n, 1))])
    return ParticleCloud(node=root, log_mass=log_mass, paths=paths,
                         rng_stamp=stream_stamp(opts.seed, root))
