"""Deterministic, scope-keyed random number streams.

All randomness in the engine flows through streams keyed by
``(master seed, *scope)``.  The scope for engine work is the node id, so a
subtree draws the same numbers whether the recursion over siblings runs
serially or on a thread pool; the harness scopes replicates the same way.
Streams are backed by Philox, a counter-based generator, keyed through
``numpy.random.SeedSequence`` so distinct scopes are statistically
independent.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "stream_stamp", "substream_seed"]


def _key(seed: int, scope: tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in scope))


def stream(seed: int, *scope: int) -> np.random.Generator:
    """Return the generator for ``(seed, *scope)``.

    Repeated calls with the same arguments return independent generator
    objects positioned at the start of the same sequence.
    """
    key_words = _key(seed, scope).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key_words))


def stream_stamp(seed: int, *scope: int) -> tuple[int, ...]:
    """Identifier recorded on clouds so their provenance is auditable."""
    return (int(seed),) + tuple(int(s) for s in scope)


def substream_seed(seed: int, *scope: int) -> int:
    """Derive a 64-bit master seed for a nested scope (e.g. one replicate)."""
    return int(_key(seed, scope).generate_state(1, dtype=np.uint64)[0])
