"""Deterministic, splittable random streams.

Every stream is a PCG64 generator keyed by ``SeedSequence(master_seed,
spawn_key=key)``. Keys used by the package:

* ``(0, t)`` -- weights and biases of trial ``t``
* ``(1,)``   -- the fixed input shared by all trials
* ``(1, t)`` -- the input of trial ``t`` when inputs are re-drawn per trial
* ``(2, i)`` -- auxiliary streams (conditional sampling, shard ``i``)

Any trial can therefore be reproduced in isolation from ``(master_seed, t)``.
"""

from __future__ import annotations

import numpy as np

U64_MAX = 2**64 - 1

TRIAL = 0
INPUT = 1
AUX = 2


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(master_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def trial_stream(master_seed: int, trial: int) -> np.random.Generator:
    return stream(master_seed, TRIAL, trial)


def input_stream(master_seed: int, trial: int | None = None) -> np.random.Generator:
    if trial is None:
        return stream(master_seed, INPUT)
    return stream(master_seed, INPUT, trial)
