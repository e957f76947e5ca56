"""Counter-based normal draws.

Randomness is addressed by ``(seed, stream, path)``. Paths are grouped in blocks of
``BLOCK`` rows; each block has its own Philox key, so any path range of any stream
is regenerated in time proportional to its length and independently of the others.
Batches can therefore run in any order, or in parallel, and still agree bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
BLOCK = 256

# stream identifiers; Brownian increments use STEP_BASE + step index
INITIAL = 0
AUX_INITIAL = 1
MISC = 2
STEP_BASE = 16


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def generator(seed: int, stream: int, block: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream, block)``."""
    if not 0 <= stream <= _MASK32 or not 0 <= block <= _MASK32:
        raise ValueError("stream and block must fit in 32 bits")
    key = check_seed(seed) | (int(stream) << 64) | (int(block) << 96)
    return np.random.Generator(np.random.Philox(key=key))


def normals(seed: int, stream: int, n: int, dim: int, offset: int = 0) -> np.ndarray:
    """Standard normals for paths ``offset .. offset + n`` of ``(seed, stream)``, shape ``(n, dim)``."""
    if n < 0 or offset < 0:
        raise ValueError("n and offset must be non-negative")
    out = np.empty((n, dim))
    lo, hi = offset, offset + n
    for b in range(lo // BLOCK, (hi - 1) // BLOCK + 1 if n else 0):
        block = generator(seed, stream, b).standard_normal((BLOCK, dim))
        a, z = max(lo, b * BLOCK), min(hi, (b + 1) * BLOCK)
        out[a - lo : z - lo] = block[a - b * BLOCK : z - b * BLOCK]
    return out


def uniforms(seed: int, stream: int, n: int, offset: int = 0) -> np.ndarray:
    """Uniforms on ``[0, 1)`` with the same path addressing as :func:`normals`."""
    out = np.empty(n)
    lo, hi = offset, offset + n
    for b in range(lo // BLOCK, (hi - 1) // BLOCK + 1 if n else 0):
        block = generator(seed, stream, b).random(BLOCK)
        a, z = max(lo, b * BLOCK), min(hi, (b + 1) * BLOCK)
        out[a - lo : z - lo] = block[a - b * BLOCK : z - b * BLOCK]
    return out


def step_normals(seed: int, step: int, n: int, dim: int, offset: int = 0) -> np.ndarray:
    return normals(seed, STEP_BASE + step, n, dim, offset)
