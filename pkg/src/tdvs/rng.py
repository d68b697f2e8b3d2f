"""Deterministic random-stream derivation.

Every random decision in the pipeline draws from a child stream keyed by
(master seed, stage, target, index...), so results are bit-identical no
matter how work is scheduled across threads.
"""

import numpy as np

_U64 = (1 << 64) - 1


def _nonneg(x):
    return int(x) & _U64


def child_seed_sequence(master_seed, *key):
    """SeedSequence for the stream identified by the given key path."""
    return np.random.SeedSequence(entropy=_nonneg(master_seed),
                                  spawn_key=tuple(_nonneg(k) for k in key))


def child_rng(master_seed, *key):
    """Generator for the stream identified by the given key path."""
    return np.random.default_rng(child_seed_sequence(master_seed, *key))


def derived_seed(master_seed, *key):
    """A 64-bit integer seed derived from the key path (for nested pipelines)."""
    state = child_seed_sequence(master_seed, *key).generate_state(2, np.uint64)
    return int(state[0])
