"""Deterministic random streams.

Every stochastic component draws from its own generator, derived from a
master seed plus a key describing where in the run the draw happens. The
same (seed, key) pair always yields the same stream, independent of call
order, which is what makes training runs reproducible to the byte.

String key parts are folded in as CRC32 words so distinct labels give
distinct streams without pulling hash randomization into the result.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value < 0:
            raise ValueError(f"stream key parts must be non-negative, got {value}")
        return value
    raise TypeError(f"unsupported stream key part: {part!r}")


def substream(seed: int, *key) -> np.random.Generator:
    """Return the generator for one (seed, key...) slot.

    Keys are tuples of non-negative ints and strings, e.g.
    ``substream(7, "corrupt", epoch, image_id)``.
    """
    words = [_key_word(part) for part in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *words])))


def derive_seed(seed: int, *key) -> int:
    """Fold key parts into a fresh 64-bit seed, deterministically.

    Used to hand a scoped seed to components that take one number, e.g.
    the per-image corruption seed inside a training epoch.
    """
    words = [_key_word(part) for part in key]
    state = np.random.SeedSequence([int(seed), *words]).generate_state(1, np.uint64)
    return int(state[0])
