"""Seed derivation helpers.

Every random draw in the package is keyed by a root seed plus a short tuple
of integers (step index, stream tag, ...), so that two code paths asking for
the same key get bit-identical numbers. The samplers rely on this to share
per-step noise between full and truncated runs.
"""

import numpy as np

# stream tags keep unrelated draws with the same (seed, step) apart
FORWARD = 1
REVERSE = 2
PRIOR = 3
SUBSAMPLE = 4
FIT = 5
DATA = 6
MI_PAIRS = 7


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError(f"seed keys must be non-negative, got {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))
