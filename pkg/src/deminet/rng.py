"""Seed plumbing: every source of randomness is a named substream of one root seed.

Keeping the streams separate means changing e.g. the negative-sampling
draw count cannot shift the dropout masks of an otherwise identical run.
"""

import numpy as np

# Stable ids; never renumber, or old seeds stop reproducing.
_STREAM_IDS = {
    "data": 0,
    "init": 1,
    "dropout-view-1": 2,
    "dropout-view-2": 3,
    "negatives": 4,
}


def stream_rng(root_seed: int, name: str) -> np.random.Generator:
    """Return the deterministic generator for a named substream of ``root_seed``."""
    try:
        sid = _STREAM_IDS[name]
    except KeyError:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(_STREAM_IDS)}")
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(root_seed), sid)))


def stream_names() -> tuple:
    return tuple(_STREAM_IDS)
