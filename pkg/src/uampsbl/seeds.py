"""Deterministic seed derivation.

Every random draw in this package flows from one explicit master seed.
Child seeds are derived by hashing the master seed together with an
integer path (e.g. sweep index, trial index, stream index), so adding
or reordering consumers never perturbs the streams of the others and
trials can run in parallel with results identical to a serial run.
"""

from __future__ import annotations

import numpy as np


def derive_seed(master_seed: int, *path: int) -> int:
    """Hash (master_seed, *path) into a single independent integer seed."""
    if master_seed < 0 or any(p < 0 for p in path):
        raise ValueError("seeds and path indices must be non-negative")
    ss = np.random.SeedSequence((int(master_seed),) + tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for the child stream addressed by ``path``."""
    return np.random.default_rng(derive_seed(master_seed, *path))
