"""Hierarchical logistic model for exam pass counts.

Data rows are (school, year, candidates, passes).  Latent effects live
on a three-level tree: one node per school-year (leaf), one per school,
and a root for the overall trend.  School and root nodes carry a pair
(effect, variance); the variance component is drawn fresh at each node
and couples that node's effect to the mean of its children's effects.

Leaf proposals use the conjugate Beta posterior of the empirical pass
rate pushed through the logit map; the interesting work happens in the
correction weights, which replace the product of leaf proposals with
the joint prior-times-likelihood on each subtree.
"""

from __future__ import annotations

import csv

import numpy as np

from ..errors import InvalidCounts, InvalidData
from ..tree import NodeSpace, build_tree
from ..weights import Factorized
from .base import ModelSpec

__all__ = ["DEFAULT_DATA", "load_schools_csv", "schools_model"]

_LOG_2PI = np.log(2.0 * np.pi)

# small synthetic cohort: school label, year, candidates, passes
DEFAULT_DATA = (
    ("A", 2011, 24, 11),
    ("A", 2012, 19, 9),
    ("A", 2013, 28, 17),
    ("B", 2011, 31, 12),
    ("B", 2012, 26, 15),
    ("C", 2012, 12, 3),
    ("C", 2013, 17, 8),
    ("D", 2011, 22, 13),
    ("D", 2012, 14, 6),
    ("D", 2013, 20, 9),
)


def load_schools_csv(path):
    """Read (school, year, candidates, passes) rows from a CSV file."""
    rows = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        for raw in reader:
            if not raw or raw[0].lstrip().startswith("#"):
                continue
            if len(raw) != 4:
                raise InvalidData(f"expected 4 columns, got {len(raw)}: {raw!r}")
            school, year, m_total, m_pass = raw
            rows.append((school.strip(), int(year), int(m_total), int(m_pass)))
    if not rows:
        raise InvalidData(f"no data rows in {path}")
    return tuple(rows)


def _log_g(theta):
    # prior density of a logit-uniform effect: g(t) = sigmoid(t) * sigmoid(-t)
    return -np.logaddexp(0.0, theta) - np.logaddexp(0.0, -theta)


def _group_weight(n_members):
    """Joint-over-product weight for a group node.

    Layout of ``block``: the members' effect columns, then the group's
    own (effect, variance) pair.  Works unchanged for school nodes over
    years and for the root over schools.
    """
    half_members = 0.5 * (n_members - 1)

    def evaluate(block):
        effects = block[:, :n_members]
        own = block[:, n_members]
        var = block[:, n_members + 1]
        centered = effects - effects.mean(axis=1, keepdims=True)
        # sum of theta*(theta - mean) equals the centered sum of squares
        quad = np.sum(effects * centered, axis=1)
        return (_log_g(own) - quad / (2.0 * var)
                - 0.5 * np.log(n_members) - half_members * np.log(2.0 * np.pi * var))

    return evaluate


def _leaf_proposal(m_total, m_pass):
    def sample(n, rng):
        rate = rng.beta(m_pass + 1.0, m_total - m_pass + 1.0, size=n)
        return (np.log(rate) - np.log1p(-rate))[:, None]
    return sample


def _pair_kernel(n_members, cols):
    """Draw (effect, variance) for a group node given its members' effects.

    The variance comes first from a unit-mean exponential, then the effect
    from a normal centered on the member mean with variance var / n_members.
    Output columns are (effect, variance) to match the node space.
    """

    def sample(x, rng):
        var = rng.exponential(1.0, size=x.shape[0])
        mean = x[:, cols].mean(axis=1)
        effect = mean + np.sqrt(var / n_members) * rng.standard_normal(x.shape[0])
        return np.column_stack([effect, var])

    return sample


def _constant_factor(value):
    return lambda block: np.full(block.shape[0], value)


def schools_model(data=DEFAULT_DATA) -> ModelSpec:
    """Build the school/year tree model from count rows."""
    rows = sorted(data, key=lambda r: (str(r[0]), int(r[1])))
    if not rows:
        raise InvalidData("need at least one data row")
    by_school: dict = {}
    for school, year, m_total, m_pass in rows:
        m_total, m_pass = int(m_total), int(m_pass)
        if m_total < 1:
            raise InvalidCounts(f"{school}/{year}: candidates must be >= 1, got {m_total}")
        if not 0 <= m_pass <= m_total:
            raise InvalidCounts(
                f"{school}/{year}: passes must lie in [0, {m_total}], got {m_pass}")
        by_school.setdefault(str(school), []).append((int(year), m_total, m_pass))

    labels = sorted(by_school)
    n_schools = len(labels)

    # ids: root 0, schools 1..S, then year leaves school by school
    parents = [None] + [0] * n_schools
    leaf_ids: dict = {}
    next_id = 1 + n_schools
    for i, label in enumerate(labels):
        for year, _, _ in by_school[label]:
            leaf_ids[(label, year)] = next_id
            parents.append(1 + i)
            next_id += 1

    tree = build_tree(parents)
    spaces = {0: NodeSpace.continuous(2)}
    leaf_proposals, kernels, aux_weights, target_weights = {}, {}, {}, {}

    school_weights = []
    for i, label in enumerate(labels):
        node = 1 + i
        years = by_school[label]
        n_years = len(years)
        spaces[node] = NodeSpace.continuous(2)
        for year, m_total, m_pass in years:
            leaf = leaf_ids[(label, year)]
            spaces[leaf] = NodeSpace.continuous(1)
            leaf_proposals[leaf] = _leaf_proposal(m_total, m_pass)
            target_weights[leaf] = _constant_factor(-np.log(m_total))
        # member effect columns within this node's child concatenation:
        # children are width-1 leaves, so columns 0..n_years-1
        kernels[node] = _pair_kernel(n_years, np.arange(n_years))
        aux_weights[node] = Factorized(tuple(
            _constant_factor(-np.log(m_total)) for _, m_total, _ in years))
        weight = _group_weight(n_years)
        target_weights[node] = weight
        school_weights.append(weight)

    # root: children are the school subtrees, each of width n_years + 2;
    # the school node's own pair sits in the last two columns of its block
    widths = [len(by_school[label]) + 2 for label in labels]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    effect_cols = np.array([offsets[i] + widths[i] - 2 for i in range(n_schools)])
    kernels[0] = _pair_kernel(n_schools, effect_cols)
    aux_weights[0] = Factorized(tuple(school_weights))
    root_weight = _group_weight(n_schools)

    def root_target(paths):
        block = np.column_stack([paths[:, effect_cols], paths[:, -2], paths[:, -1]])
        return root_weight(block)

    target_weights[0] = root_target

    return ModelSpec(
        tree=tree, spaces=spaces, leaf_proposals=leaf_proposals,
        kernels=kernels, aux_weights=aux_weights, target_weights=target_weights,
        oracle=None,
        meta={"name": "schools", "schools": tuple(labels),
              "rows": tuple((s, y, mt, mp) for s, y, mt, mp in rows)},
    )
