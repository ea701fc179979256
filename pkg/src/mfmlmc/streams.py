"""Reproducible counter-based random streams.

Every particle owns two independent streams derived from the single
user-facing root seed: one for its initial condition, one for its Brownian
increments.  Stream identity is the key tuple (round, level, sample, role),
so enlarging an ensemble, adding levels, or changing the worker count never
perturbs an existing sample's draws.  ``round`` is 0 except for the fresh
streams used by sample-count restarts.

Initial conditions come from numpy Philox generators keyed directly with
(root, packed slot) so arbitrary user samplers can draw from them.  Brownian
increments come from a vectorized Philox4x32-10 implementation evaluated as a
pure function of (key, step): any window of any sample's path can be
materialized independently, in any order, with bit-identical values.
"""

from __future__ import annotations

import numpy as np

ROLE_INIT = 0
ROLE_PATH = 1

_MASK32 = np.uint64(0xFFFFFFFF)
# Philox4x32 round multipliers and Weyl key increments (Random123 constants)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)


def _pack_slot(round_: int, level: int, sample: int, role: int) -> int:
    if not (0 <= round_ < 2**8 and 0 <= level < 2**8 and 0 <= role < 2**8):
        raise ValueError("round, level and role must fit in 8 bits")
    if not 0 <= sample < 2**40:
        raise ValueError("sample index must fit in 40 bits")
    return (round_ << 56) | (level << 48) | (role << 40) | sample


def init_generator(root_seed: int, level: int, sample: int,
                   round_: int = 0) -> np.random.Generator:
    """Generator owning one sample's initial-condition stream."""
    key = [root_seed & (2**64 - 1), _pack_slot(round_, level, sample, ROLE_INIT)]
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(root_seed: int, *key: int) -> int:
    """Derive a child root seed (used for per-run seeds inside studies)."""
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _philox_blocks(blocks: np.ndarray, samples: np.ndarray, root: int,
                   slot: int):
    """Philox4x32-10 over a (samples x blocks) counter grid.

    All four 32-bit lanes live in uint64 arrays (products then need no
    widening casts).  The block index and root seed form the counter, the
    sample index and slot word the key.  Returns the four output lanes.
    """
    c0 = np.empty((samples.size, blocks.size), dtype=np.uint64)
    c0[:] = blocks
    c1 = np.uint64(root & 0xFFFFFFFF)
    c2 = np.uint64(root >> 32)
    c3 = np.uint64(slot)
    k0 = samples[:, None].astype(np.uint64)
    k1 = np.full((1, 1), slot, dtype=np.uint64)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0 = (p1 >> _SHIFT32) ^ c1 ^ k0
        c1 = p1 & _MASK32
        c2 = (p0 >> _SHIFT32) ^ c3 ^ k1
        c3 = p0 & _MASK32
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _block_normals(blocks, samples, root, slot):
    """Two Box-Muller normals per Philox block; (n_samples, n_blocks, 2)."""
    o0, o1, o2, o3 = _philox_blocks(blocks, samples, root, slot)
    u1 = (o0 << _SHIFT32) | o1
    u2 = (o2 << _SHIFT32) | o3
    np.right_shift(u1, np.uint64(11), out=u1)
    np.right_shift(u2, np.uint64(11), out=u2)
    scale = 2.0**-53
    u1 = (u1 + np.uint64(1)) * scale       # (0, 1]: safe under the log
    u2 = u2 * scale
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(u1.shape + (2,))
    z[..., 0] = radius * np.cos(angle)
    np.sin(angle, out=angle)
    z[..., 1] = radius * angle
    return z


_numba_kernel = None


def _get_kernel():
    """Compiled twin of _block_normals.

    The integer pipeline is identical; the Box-Muller transcendentals may
    differ from the vectorized numpy ones by <= 2 ulp, so the numpy twin
    serves as a test oracle rather than an interchangeable backend.
    """
    global _numba_kernel
    if _numba_kernel is None:
        import math

        import numba

        @numba.njit(cache=True)
        def kernel(out, b_lo, root_lo, root_hi, slot):
            n_samples, n_cols = out.shape
            n_blocks = n_cols // 2
            for s in range(n_samples):
                for j in range(n_blocks):
                    c0 = np.uint64(b_lo + j)
                    c1 = np.uint64(root_lo)
                    c2 = np.uint64(root_hi)
                    c3 = np.uint64(slot)
                    k0 = np.uint64(s)
                    k1 = np.uint64(slot)
                    for _ in range(10):
                        p0 = np.uint64(0xD2511F53) * c0
                        p1 = np.uint64(0xCD9E8D57) * c2
                        c0 = (p1 >> np.uint64(32)) ^ c1 ^ k0
                        c1 = p1 & np.uint64(0xFFFFFFFF)
                        c2 = (p0 >> np.uint64(32)) ^ c3 ^ k1
                        c3 = p0 & np.uint64(0xFFFFFFFF)
                        k0 = (k0 + np.uint64(0x9E3779B9)) & np.uint64(0xFFFFFFFF)
                        k1 = (k1 + np.uint64(0xBB67AE85)) & np.uint64(0xFFFFFFFF)
                    u1 = (((c0 << np.uint64(32)) | c1) >> np.uint64(11))
                    u2 = (((c2 << np.uint64(32)) | c3) >> np.uint64(11))
                    f1 = (np.float64(u1) + 1.0) * (2.0**-53)
                    f2 = np.float64(u2) * (2.0**-53)
                    radius = math.sqrt(-2.0 * math.log(f1))
                    angle = 2.0 * math.pi * f2
                    out[s, 2 * j] = radius * math.cos(angle)
                    out[s, 2 * j + 1] = radius * math.sin(angle)

        _numba_kernel = kernel
    return _numba_kernel


def path_normals(root_seed: int, level: int, n_samples: int, step_lo: int,
                 step_hi: int, noise_dim: int, round_: int = 0) -> np.ndarray:
    """Standard-normal increments for steps [step_lo, step_hi) of every sample.

    A pure function of (root, round, level, sample, step): normal number
    q = step*noise_dim + component of a sample's path is lane q%2 of Philox
    block q//2 keyed by (sample, packed slot), with the block index and root
    seed in the counter.  Results are therefore independent of how a step
    range is windowed or which workers compute it.
    """
    root = root_seed & (2**64 - 1)
    slot = (round_ << 16) | (level << 8) | ROLE_PATH
    q_lo = step_lo * noise_dim
    q_hi = step_hi * noise_dim
    b_lo, b_hi = q_lo // 2, (q_hi + 1) // 2
    flat = np.empty((n_samples, 2 * (b_hi - b_lo)))
    _get_kernel()(flat, b_lo, root & 0xFFFFFFFF, root >> 32, slot)
    flat = flat[:, q_lo - 2 * b_lo: q_lo - 2 * b_lo + q_hi - q_lo]
    return flat.reshape(n_samples, step_hi - step_lo, noise_dim)


def path_normals_reference(root_seed: int, level: int, n_samples: int,
                           step_lo: int, step_hi: int, noise_dim: int,
                           round_: int = 0) -> np.ndarray:
    """Pure-numpy evaluation of the same stream function (test oracle)."""
    root = root_seed & (2**64 - 1)
    slot = (round_ << 16) | (level << 8) | ROLE_PATH
    q_lo = step_lo * noise_dim
    q_hi = step_hi * noise_dim
    b_lo, b_hi = q_lo // 2, (q_hi + 1) // 2
    blocks = np.arange(b_lo, b_hi, dtype=np.uint64)
    samples = np.arange(n_samples, dtype=np.uint64)
    z = _block_normals(blocks, samples, root, slot)
    flat = z.reshape(n_samples, -1)[:, q_lo - 2 * b_lo: q_lo - 2 * b_lo + q_hi - q_lo]
    return flat.reshape(n_samples, step_hi - step_lo, noise_dim)


class EnsembleStreams:
    """Stream bundle for one level pass of ``n_samples`` particles."""

    def __init__(self, root_seed: int, level: int, n_samples: int, round_: int = 0):
        self.root_seed = root_seed
        self.level = level
        self.n_samples = n_samples
        self.round_ = round_

    def initial_states(self, sampler, state_dim: int) -> np.ndarray:
        """Draw every particle's initial condition from its own init stream.

        One Philox instance is re-keyed per sample (equivalent to, but much
        cheaper than, constructing ``init_generator`` each time); the
        generator handed to the sampler is only valid during that call.
        """
        out = np.empty((self.n_samples, state_dim))
        root = self.root_seed & (2**64 - 1)
        bitgen = np.random.Philox(key=[0, 0])
        rng = np.random.Generator(bitgen)
        state = bitgen.state
        state["state"]["key"][0] = root
        for i in range(self.n_samples):
            state["state"]["counter"][:] = 0
            state["state"]["key"][1] = _pack_slot(self.round_, self.level, i,
                                                  ROLE_INIT)
            state["buffer_pos"] = 4
            state["has_uint32"] = 0
            state["uinteger"] = 0
            bitgen.state = state
            x0 = np.asarray(sampler(rng), dtype=float).reshape(-1)
            if x0.shape != (state_dim,):
                raise ValueError(
                    f"initial sampler returned shape {x0.shape}, expected ({state_dim},)"
                )
            out[i] = x0
        return out

    def increments(self, step_lo: int, step_hi: int, noise_dim: int,
                   dt: float) -> np.ndarray:
        """N(0, dt) increments for steps [step_lo, step_hi) of every sample."""
        z = path_normals(self.root_seed, self.level, self.n_samples,
                         step_lo, step_hi, noise_dim, self.round_)
        z *= np.sqrt(dt)
        return z
