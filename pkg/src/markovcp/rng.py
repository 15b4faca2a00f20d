"""Seeded random streams.

Every stochastic routine takes a ``seed`` that is either an integer, a tuple of
integers (a stream key such as ``(master_seed, trial)``) or an existing
:class:`numpy.random.Generator`. Integer keys are expanded with
:class:`numpy.random.SeedSequence` and drive a counter-based Philox generator,
so per-trial streams are reproducible regardless of execution order.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int], np.random.Generator]


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (int, np.integer)):
        entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    else:
        entropy = [int(s) & 0xFFFFFFFFFFFFFFFF for s in seed]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one Monte Carlo trial."""
    return make_rng((master_seed, trial))
