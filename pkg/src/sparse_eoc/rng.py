"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream, index)``, so results do not depend on the order in which
layers or trials are generated.
"""
import numbers

import numpy as np

from .errors import DomainError

WEIGHTS = 0
BIASES = 1
INPUTS = 2
TARGETS = 3
DATA = 4
SHUFFLE = 5
READOUT = 6
TRIALS = 7

_MAX_SEED = 2**64


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise DomainError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream, index)``."""
    ss = np.random.SeedSequence([check_seed(seed), int(stream), int(index)])
    return np.random.Generator(np.random.Philox(ss))
