"""Counter-based Gaussian streams.

Every normal variate is a pure function of ``(seed, trajectory, step,
purpose, index)``: the Philox4x32-10 block cipher (Salmon et al., SC'11)
encrypts a counter built from those integers, and a Box-Muller transform
turns each 128-bit block into two standard normals.  Nothing depends on how
trajectories are grouped into batches or distributed over workers, which is
what makes ensemble results bit-identical at any thread count.

Counter layout (four 32-bit words)::

    c0 = block index within the step (two normals per block)
    c1 = step, low 32 bits
    c2 = trajectory id (< 2**32)
    c3 = purpose << 16 | step, bits 32..47

The key is the 64-bit seed split into two words.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CounterStream",
    "philox4x32",
    "PURPOSE_NOISE",
    "PURPOSE_INITIAL",
    "PURPOSE_AUX",
]

PURPOSE_NOISE = 0
PURPOSE_INITIAL = 1
PURPOSE_AUX = 2

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_TWO_M53 = 2.0**-53
_SHIFT = np.uint64(32)
_SHIFT11 = np.uint64(11)


def _philox_rounds(c0, c1, c2, c3, key, rounds):
    """Philox rounds on four broadcastable uint64 word arrays."""
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ np.uint64(k0),
            p1 & _MASK32,
            (p0 >> _SHIFT) ^ c3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    Parameters
    ----------
    counter : array_like of shape (..., 4)
        Counter words, each < 2**32.
    key : pair of ints
        Key words, each < 2**32.
    rounds : int
        Number of rounds; 10 is the standard variant.

    Returns
    -------
    ndarray of uint64, shape (..., 4)
        Output words (each < 2**32).
    """
    c = np.asarray(counter, dtype=np.uint64)
    words = [np.ascontiguousarray(c[..., i]) for i in range(4)]
    return np.stack(_philox_rounds(*words, key, rounds), axis=-1)


def _box_muller(w0, w1, w2, w3, out):
    """Write two standard normals per Philox block into ``out[..., 0::2]`` / ``out[..., 1::2]``."""
    x = (w0 << _SHIFT) | w1
    y = (w2 << _SHIFT) | w3
    u1 = 1.0 - (x >> _SHIFT11).astype(np.float64) * _TWO_M53  # in (0, 1]
    u2 = (y >> _SHIFT11).astype(np.float64) * _TWO_M53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out[..., 0::2] = r * np.cos(theta)
    out[..., 1::2] = r * np.sin(theta)
    return out


class CounterStream:
    """Deterministic normal stream for one trajectory or a batch of them.

    The stream keeps a step counter; each call to :meth:`normals` without an
    explicit ``step`` consumes the current step and advances it by one.

    Parameters
    ----------
    seed : int
        64-bit seed (the cipher key).
    trajectories : int or array_like of int
        A single trajectory id (scalar stream) or an array of ids (batch).
    purpose : int
        Separates independent uses of the same seed, e.g. initial samples
        versus per-step noise.
    step : int
        Initial value of the step counter.
    """

    def __init__(self, seed, trajectories=0, purpose=PURPOSE_NOISE, step=0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = seed
        self.scalar = np.ndim(trajectories) == 0
        ids = np.atleast_1d(np.asarray(trajectories, dtype=np.int64))
        if ids.size and (ids.min() < 0 or ids.max() >= 2**32):
            raise ValueError("trajectory ids must lie in [0, 2**32)")
        self.trajectories = ids.astype(np.uint64)
        if not 0 <= purpose < 2**16:
            raise ValueError("purpose must fit in 16 bits")
        self.purpose = int(purpose)
        self.step = int(step)

    @property
    def key(self):
        return (self.seed & 0xFFFFFFFF, self.seed >> 32)

    def __len__(self):
        return len(self.trajectories)

    def subset(self, index):
        """Stream over a subset of this batch, sharing the step counter value."""
        ids = self.trajectories[index]
        return CounterStream(self.seed, ids.astype(np.int64), self.purpose, self.step)

    def with_purpose(self, purpose, step=0):
        traj = int(self.trajectories[0]) if self.scalar else self.trajectories.astype(np.int64)
        return CounterStream(self.seed, traj, purpose, step)

    def normals(self, count, step=None):
        """Draw ``count`` standard normals per trajectory.

        Returns shape ``(count,)`` for a scalar stream and
        ``(n_trajectories, count)`` for a batch.
        """
        if step is None:
            step = self.step
            self.step += 1
        step = int(step)
        if not 0 <= step < 2**48:
            raise ValueError("step counter out of range")
        nblocks = (count + 1) // 2
        c0 = np.arange(nblocks, dtype=np.uint64)[None, :]
        c1 = np.uint64(step & 0xFFFFFFFF)
        c2 = self.trajectories[:, None]
        c3 = np.uint64((self.purpose << 16) | (step >> 32))
        w = _philox_rounds(c0, c1, c2, c3, self.key, 10)
        w = [np.broadcast_to(x, (len(self.trajectories), nblocks)) for x in w]
        z = _box_muller(*w, np.empty((len(self.trajectories), 2 * nblocks)))[:, :count]
        return z[0] if self.scalar else z
