"""Counter-based normal variates for reproducible particle simulations.

Every variate is a pure function of ``(seed, particle_id, step, stream)``, so
results do not depend on evaluation order or on how particles are split
between workers. The bit source is Philox4x32-10 from the Random123 family,
vectorized over counters with numpy.
"""

from __future__ import annotations

import numpy as np

W_STREAM = 0
Y_STREAM = 1

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_ROUNDS = 10


def philox4x32(counter, key):
    """Philox4x32-10 block function.

    Parameters
    ----------
    counter : array_like of uint, shape (..., 4)
        32-bit counter words.
    key : array_like of uint, shape (2,) or broadcastable to (..., 2)
        32-bit key words.

    Returns
    -------
    ndarray of uint64, shape (..., 4), each entry < 2**32.
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK32
    k = np.asarray(key, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = (c[..., i] for i in range(4))
    k0 = np.broadcast_to(k[..., 0], c0.shape).copy()
    k1 = np.broadcast_to(k[..., 1], c0.shape).copy()
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def _seed_key(seed: int) -> np.ndarray:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint64)


def normals(seed: int, particle_ids, step: int, stream: int) -> np.ndarray:
    """Standard normal variates for a batch of particles at one step.

    ``particle_ids`` may be any integer array; the result has its shape.
    """
    ids = np.asarray(particle_ids, dtype=np.uint64)
    step = int(step)
    counter = np.empty(ids.shape + (4,), dtype=np.uint64)
    counter[..., 0] = ids & _MASK32
    counter[..., 1] = ids >> np.uint64(32)
    counter[..., 2] = np.uint64(step & 0xFFFFFFFF)
    counter[..., 3] = np.uint64(((step >> 32) << 8) | (int(stream) & 0xFF))
    words = philox4x32(counter, _seed_key(seed))
    # two 53-bit uniforms in the open interval (0, 1)
    a = (words[..., 0] >> np.uint64(5)).astype(np.float64)
    b = (words[..., 1] >> np.uint64(6)).astype(np.float64)
    u1 = (a * 67108864.0 + b + 0.5) / 9007199254740992.0
    c = (words[..., 2] >> np.uint64(5)).astype(np.float64)
    d = (words[..., 3] >> np.uint64(6)).astype(np.float64)
    u2 = (c * 67108864.0 + d) / 9007199254740992.0
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def rng_stream(seed: int, particle_id: int, step: int) -> tuple[float, float]:
    """Return the (W, Y) normal pair driving ``particle_id`` at ``step``."""
    zw = normals(seed, np.array([particle_id]), step, W_STREAM)[0]
    zy = normals(seed, np.array([particle_id]), step, Y_STREAM)[0]
    return float(zw), float(zy)
