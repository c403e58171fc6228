"""Particle clouds, weighted atom sets, and the estimators they induce.

A cloud holds N flat paths plus a scalar log-mass and represents the
unnormalized measure ``exp(log_mass) * sum_n W_n * delta_{path_n}``; the
per-particle weights ``W_n`` are uniform unless an adaptive run skipped
resampling, in which case the cloud carries normalized log-weights.  All
masses and weights live in log-space throughout: the built-in hierarchical
model produces weights with exp(.../2 sigma^2) factors that overflow any
linear representation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AllZeroWeights,
    NonFiniteWeight,
    SamplerFailure,
    ZeroNormalizer,
)

__all__ = [
    "ParticleCloud",
    "WeightedAtoms",
    "TestFunction",
    "TargetEstimates",
    "logmeanexp",
    "leaf_init",
    "mutate",
    "target_estimates",
    "ess",
    "save_cloud_csv",
    "load_cloud_csv",
]


def logmeanexp(log_values, axis=None):
    """log of the arithmetic mean of exp(log_values), computed stably."""
    a = np.asarray(log_values, dtype=float)
    n = a.shape[axis] if axis is not None else a.size
    return logsumexp(a, axis=axis) - np.log(n)


def _as_paths(x) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"paths must be 2-d (n, width), got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParticleCloud:
    """N particles at one node plus the cloud's scalar mass.

    Parameters
    ----------
    node : int
        Node id the cloud belongs to.
    log_mass : float
        log of the represented measure's total mass.
    paths : ndarray, shape (n, width)
        Flat paths laid out per the node's :class:`~dacsmc.tree.PathLayout`.
    rng_stamp : tuple
        Identifier of the stream that produced the cloud.
    log_weights : ndarray, optional
        Normalized per-particle log-weights (logsumexp == 0).  ``None`` means
        equal weights; only adaptive skip-steps produce the weighted form.
    """

    node: int
    log_mass: float
    paths: np.ndarray
    rng_stamp: tuple = ()
    log_weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "paths", _as_paths(self.paths))
        self.paths.setflags(write=False)
        if not np.isfinite(self.log_mass):
            raise NonFiniteWeight(f"cloud at node {self.node} has log_mass {self.log_mass}")
        if self.n < 1:
            raise ValueError("a cloud needs at least one particle")
        if self.log_weights is not None:
            lw = np.asarray(self.log_weights, dtype=float)
            if lw.shape != (self.n,):
                raise ValueError("log_weights must have one entry per particle")
            if not np.all(np.isfinite(lw)):
                raise NonFiniteWeight("cloud log_weights must be finite")
            total = logsumexp(lw)
            if abs(total) > 1e-9:
                raise ValueError(f"log_weights not normalized (logsumexp={total:.3e})")
            object.__setattr__(self, "log_weights", lw)
            lw.setflags(write=False)

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def width(self) -> int:
        return self.paths.shape[1]

    def normalized_log_weights(self) -> np.ndarray:
        """Per-particle log-weights, materializing the uniform case."""
        if self.log_weights is not None:
            return self.log_weights
        return np.full(self.n, -np.log(self.n))


@dataclass(frozen=True)
class WeightedAtoms:
    """A materialized weighted atom set over a node's children product space.

    ``log_mass`` always equals ``log_prefactor + logmeanexp(log_weights)``;
    the prefactor records the product of the children's masses so the
    invariant is auditable after the fact.
    """

    atoms: np.ndarray
    log_weights: np.ndarray
    log_prefactor: float
    log_mass: float

    @staticmethod
    def build(atoms, log_weights, log_prefactor: float) -> "WeightedAtoms":
        atoms = _as_paths(atoms)
        lw = np.asarray(log_weights, dtype=float)
        if lw.ndim != 1 or lw.shape[0] != atoms.shape[0]:
            raise ValueError("log_weights must align with atoms")
        if not np.all(np.isfinite(lw)):
            bad = int(np.flatnonzero(~np.isfinite(lw))[0])
            raise NonFiniteWeight(
                f"weight {lw[bad]} at atom {bad}: weights must be finite and positive"
            )
        atoms.setflags(write=False)
        lw.setflags(write=False)
        return WeightedAtoms(
            atoms=atoms,
            log_weights=lw,
            log_prefactor=float(log_prefactor),
            log_mass=float(log_prefactor + logmeanexp(lw)),
        )

    @property
    def m(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True)
class TestFunction:
    """A bounded test function over one node's path space.

    ``evaluator`` maps an (M, width) path block to M reals; if
    ``declared_bound`` is set it is checked on every evaluation.
    """

    __test__ = False  # keep pytest from collecting the Test* name

    name: str
    node: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    declared_bound: float | None = None

    def __call__(self, paths: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.evaluator(paths), dtype=float)
        if vals.shape != (paths.shape[0],):
            raise ValueError(f"test function {self.name!r} returned shape {vals.shape}")
        if self.declared_bound is not None:
            worst = float(np.max(np.abs(vals))) if vals.size else 0.0
            if worst > self.declared_bound * (1 + 1e-12):
                raise ValueError(
                    f"test function {self.name!r} exceeded its declared bound: "
                    f"{worst} > {self.declared_bound}"
                )
        return vals


def leaf_init(model, u: int, n: int, rng: np.random.Generator, stamp=()) -> ParticleCloud:
    """Draw n i.i.d. particles from the leaf proposal at ``u`` (mass 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sampler = model.leaf_proposals[u]
    width = model.spaces[u].width
    try:
        draws = np.asarray(sampler(n, rng), dtype=float)
    except Exception as exc:  # noqa: BLE001 - kernel errors become SamplerFailure
        raise SamplerFailure(f"leaf proposal at node {u} failed: {exc}") from exc
    if draws.shape != (n, width):
        raise SamplerFailure(
            f"leaf proposal at node {u} returned shape {draws.shape}, wanted {(n, width)}"
        )
    if not np.all(np.isfinite(draws)):
        raise SamplerFailure(f"leaf proposal at node {u} returned non-finite draws")
    return ParticleCloud(node=u, log_mass=0.0, paths=draws, rng_stamp=tuple(stamp))


def mutate(
    paths: np.ndarray,
    model,
    u: int,
    rng: np.random.Generator,
    log_mass: float,
    stamp=(),
    log_weights: np.ndarray | None = None,
) -> ParticleCloud:
    """Extend resampled child paths by one draw from the kernel at ``u``.

    The caller supplies the mass to stamp onto the result; the kernel only
    appends node u's own coordinates.
    """
    paths = _as_paths(paths)
    n = paths.shape[0]
    width = model.spaces[u].width
    kernel = model.kernels[u]
    try:
        draws = np.asarray(kernel(paths, rng), dtype=float)
    except Exception as exc:  # noqa: BLE001
        raise SamplerFailure(f"kernel at node {u} failed: {exc}") from exc
    if draws.shape != (n, width):
        raise SamplerFailure(
            f"kernel at node {u} returned shape {draws.shape}, wanted {(n, width)}"
        )
    if not np.all(np.isfinite(draws)):
        raise SamplerFailure(f"kernel at node {u} returned non-finite draws")
    return ParticleCloud(
        node=u,
        log_mass=float(log_mass),
        paths=np.hstack([paths, draws]),
        rng_stamp=tuple(stamp),
        log_weights=log_weights,
    )


@dataclass(frozen=True)
class TargetEstimates:
    """Output of :func:`target_estimates` for one cloud."""

    log_z: float
    rho: tuple
    mu: tuple


def target_estimates(cloud: ParticleCloud, model, phis: Sequence[TestFunction] = ()) -> TargetEstimates:
    """Importance-correct a cloud into target-level estimates.

    Returns ``log Z^N`` together with, per test function, the unnormalized
    estimate ``rho^N(phi)`` and the normalized one ``mu^N(phi) =
    rho^N(phi)/Z^N``.
    """
    w_eval = model.target_weights.get(cloud.node)
    if w_eval is None:
        raise NonFiniteWeight(f"no target weight declared at node {cloud.node}")
    lw = np.asarray(w_eval(cloud.paths), dtype=float)
    if lw.shape != (cloud.n,):
        raise NonFiniteWeight(
            f"target weight at node {cloud.node} returned shape {lw.shape}"
        )
    if np.all(np.isneginf(lw)):
        raise ZeroNormalizer(f"all target weights vanished at node {cloud.node}")
    if not np.all(np.isfinite(lw)):
        raise NonFiniteWeight(f"non-finite target weight at node {cloud.node}")

    combined = lw + cloud.normalized_log_weights()
    log_norm = float(logsumexp(combined))
    log_z = cloud.log_mass + log_norm

    shift = float(np.max(combined))
    scaled = np.exp(combined - shift)
    rho, mu = [], []
    for phi in phis:
        vals = phi(cloud.paths)
        dot = float(scaled @ vals)
        rho.append(float(np.exp(cloud.log_mass + shift) * dot))
        mu.append(dot / float(np.sum(scaled)))
    return TargetEstimates(log_z=float(log_z), rho=tuple(rho), mu=tuple(mu))


def ess(log_weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2, in [1, M]."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise AllZeroWeights("empty weight vector")
    if np.any(np.isnan(lw)) or np.any(np.isposinf(lw)):
        raise NonFiniteWeight("ESS input contains NaN/+inf")
    if np.all(np.isneginf(lw)):
        raise AllZeroWeights("all weights are zero")
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


_CLOUD_SCHEMA = "cloud-v1"


def save_cloud_csv(cloud: ParticleCloud, path_or_file) -> None:
    """Flat CSV dump: schema line, header, then one row per particle."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow([f"# {_CLOUD_SCHEMA}"])
        weighted = int(cloud.log_weights is not None)
        writer.writerow(["node", "log_mass", "n", "width", "weighted"])
        writer.writerow([cloud.node, repr(cloud.log_mass), cloud.n, cloud.width, weighted])
        for i in range(cloud.n):
            row = [repr(float(x)) for x in cloud.paths[i]]
            if weighted:
                row.append(repr(float(cloud.log_weights[i])))
            writer.writerow(row)
    finally:
        if own:
            fh.close()


def load_cloud_csv(path_or_file) -> ParticleCloud:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "r", newline="") if own else path_or_file
    try:
        reader = csv.reader(fh)
        schema = next(reader)[0].lstrip("# ")
        if schema != _CLOUD_SCHEMA:
            raise ValueError(f"unknown cloud schema {schema!r}")
        next(reader)  # header
        node_s, log_mass_s, n_s, width_s, weighted_s = next(reader)
        n, width, weighted = int(n_s), int(width_s), bool(int(weighted_s))
        paths = np.empty((n, width))
        lw = np.empty(n) if weighted else None
        for i, row in enumerate(reader):
            paths[i] = [float(x) for x in row[:width]]
            if weighted:
                lw[i] = float(row[width])
        return ParticleCloud(
            node=int(node_s),
            log_mass=float(log_mass_s),
            paths=paths,
            log_weights=lw,
        )
    finally:
        if own:
            fh.close()
