"""Counter-based random streams for reproducible, coupled Monte Carlo.

Every variate produced here is a pure function of (seed, indices): a keyed
counter hash (Philox-style 4x32 network, 10 rounds) maps integer counters to
uniforms, and all distributions are derived from those uniforms by inverse /
rejection transforms that consume counters in a fixed per-slot order.  This
makes any entry of any stream computable without generating its predecessors,
so paths started at different points can share the n-th tuple (the coupling
device) and parallel runs reproduce serial ones bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint32(0x9E3779B9)
_PHILOX_W1 = np.uint32(0xBB67AE85)
_ROUNDS = 10

# component tags (counter word 2): keep distinct per distribution
TAG_DIRECTIONS = np.uint32(1)   # exit direction + source direction angles
TAG_SOURCE = np.uint32(2)       # source radial variate
TAG_BETA = np.uint32(3)         # exit-radius Beta variate (rejection)

_BETA_FLOOR = 1e-280  # keeps 1/sqrt(beta) and downstream positions finite
_BETA_CEIL = float(np.nextafter(1.0, 0.0))  # strict open-interval support


def _splitmix64(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    with np.errstate(over="ignore"):
        x = (x + _GAMMA) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * _MIX1) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * _MIX2) & _MASK64
        return x ^ (x >> np.uint64(31))


def derive_key(seed: int, *fields) -> np.uint64 | np.ndarray:
    """Hash a master seed and stream labels into a 64-bit stream key.

    Fields may be scalars or integer arrays (broadcast); distinct label
    tuples give statistically independent streams.
    """
    k = _splitmix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    for f in fields:
        f = np.asarray(f)
        fu = (f.astype(np.int64).astype(np.uint64)
              if f.dtype.kind in "iu" else np.uint64(int(f)))
        k = _splitmix64(k ^ _splitmix64(fu))
    return k


def _philox(c0, c1, c2, c3, k0, k1):
    """One 4x32 keyed counter-hash evaluation (vectorized over arrays)."""
    with np.errstate(over="ignore"):
        for _ in range(_ROUNDS):
            p0 = c0.astype(np.uint64) * _PHILOX_M0
            p1 = c2.astype(np.uint64) * _PHILOX_M1
            hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
            lo0 = p0.astype(np.uint32)
            hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
            lo1 = p1.astype(np.uint32)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _PHILOX_W0
            k1 = k1 + _PHILOX_W1
    return c0, c1, c2, c3


def _to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Two 32-bit words -> one float64 uniform strictly inside (0, 1)."""
    bits = (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniform_pair(key, draw, step, tag, lane=0):
    """Two independent U(0,1) arrays at counter (draw, step, tag, lane).

    All index arguments broadcast; `key` is a uint64 key (scalar or array)
    from :func:`derive_key`.
    """
    key = np.asarray(key, dtype=np.uint64)
    k0 = key.astype(np.uint32)
    k1 = (key >> np.uint64(32)).astype(np.uint32)
    draw = np.asarray(draw, dtype=np.uint32)
    step = np.asarray(step, dtype=np.uint32)
    tag = np.asarray(tag, dtype=np.uint32)
    lane = np.asarray(lane, dtype=np.uint32)
    shape = np.broadcast_shapes(key.shape, draw.shape, step.shape,
                                tag.shape, lane.shape)
    c0, c1, c2, c3 = (np.broadcast_to(w, shape).copy() for w in
                      (draw, step, tag, lane))
    k0 = np.broadcast_to(k0, shape).copy()
    k1 = np.broadcast_to(k1, shape).copy()
    o0, o1, o2, o3 = _philox(c0, c1, c2, c3, k0, k1)
    return _to_unit(o0, o1), _to_unit(o2, o3)


def johnk_beta(alpha: float, key, step) -> np.ndarray:
    """Beta(alpha/2, (2-alpha)/2) variates by Johnk's rejection method.

    Both shape parameters are below one for alpha in (0, 2), where Johnk's
    generator is valid.  Rejection retries consume further counters in the
    `draw` word, so each slot's value depends only on (key, step) and not on
    its neighbours in a batch.  Computed in log space to survive extreme
    exponents at small alpha.
    """
    key = np.asarray(key, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint32)
    shape = np.broadcast_shapes(key.shape, step.shape)
    key = np.broadcast_to(key, shape)
    step = np.broadcast_to(step, shape)

    inv_a = 2.0 / alpha
    inv_b = 2.0 / (2.0 - alpha)
    out = np.empty(shape, dtype=np.float64).ravel()
    key_flat = key.ravel()
    step_flat = step.ravel()
    pend_idx = np.arange(out.size)
    draw = np.uint32(0)
    while pend_idx.size:
        u1, u2 = uniform_pair(key_flat[pend_idx], draw, step_flat[pend_idx],
                              TAG_BETA)
        logx = inv_a * np.log(u1)
        logy = inv_b * np.log(u2)
        logsum = np.logaddexp(logx, logy)
        accept = logsum <= 0.0
        out[pend_idx[accept]] = np.exp(logx[accept] - logsum[accept])
        pend_idx = pend_idx[~accept]
        draw = draw + np.uint32(1)
    return np.clip(out.reshape(shape), _BETA_FLOOR, _BETA_CEIL)


def step_tuples(alpha: float, key, step):
    """The shared per-step tuple (beta, Theta, S, Phi) for WOS sampling.

    beta is the exit-radius Beta variate, Theta and Phi are independent
    uniform directions on the unit circle, and S is uniform on (0, 1).
    Vectorized over `key` (one slot per realization) at step index `step`.
    """
    key = np.atleast_1d(np.asarray(key, dtype=np.uint64))
    beta = johnk_beta(alpha, key, step)
    u_th, u_ph = uniform_pair(key, 0, step, TAG_DIRECTIONS)
    u_s, _ = uniform_pair(key, 0, step, TAG_SOURCE)
    two_pi = 2.0 * np.pi
    theta = np.stack([np.cos(two_pi * u_th), np.sin(two_pi * u_th)], axis=-1)
    phi = np.stack([np.cos(two_pi * u_ph), np.sin(two_pi * u_ph)], axis=-1)
    return beta, theta, u_s, phi


class RandomSequence:
    """The per-realization stream of (beta, Theta, S, Phi) tuples.

    Entry n is a pure function of (seed, n); all paths of one field
    realization consume entry n at their n-th step, which is what couples
    them.  Entries are mutually independent across n and their four
    components are mutually independent.
    """

    def __init__(self, seed: int, alpha: float):
        self.seed = int(seed)
        self.alpha = float(alpha)
        self.key = derive_key(seed)
        self._cache: dict[int, tuple] = {}

    def entry(self, n: int):
        """Tuple (beta, theta, s, phi) at index n; theta/phi are unit 2-vectors."""
        hit = self._cache.get(n)
        if hit is not None:
            return hit
        beta, theta, s, phi = step_tuples(self.alpha, self.key, np.uint32(n))
        ent = (float(beta[0]), theta[0].copy(), float(s[0]), phi[0].copy())
        if len(self._cache) < 4096:
            self._cache[n] = ent
        return ent

    def entries(self, n0: int, n1: int):
        """Vectorized materialization of entries n0..n1-1 (arrays)."""
        ns = np.arange(n0, n1, dtype=np.uint32)
        return step_tuples(self.alpha, self.key, ns)


def batch_generator(seed: int, *fields) -> np.random.Generator:
    """A numpy Generator on an independent substream labelled by `fields`.

    Used for uncoupled Monte Carlo (point estimates, assumption checks)
    where per-draw counter addressing is not needed; the substream label
    keeps batches reproducible and non-overlapping.
    """
    return np.random.Generator(np.random.Philox(key=int(derive_key(seed, *fields))))


def johnk_beta_rng(alpha: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """Beta(alpha/2, (2-alpha)/2) draws from a bulk Generator stream.

    Same Johnk log-space scheme as :func:`johnk_beta`, but fed by a numpy
    Generator for uncoupled Monte Carlo loops.  Retry rounds redraw only the
    rejected slots, so each slot is an honest independent Johnk sample.
    """
    inv_a = 2.0 / alpha
    inv_b = 2.0 / (2.0 - alpha)
    out = np.empty(n, dtype=np.float64)
    pend = np.arange(n)
    while pend.size:
        u = rng.random((2, pend.size))
        logx = inv_a * np.log(u[0])
        logy = inv_b * np.log(u[1])
        logsum = np.logaddexp(logx, logy)
        accept = logsum <= 0.0
        out[pend[accept]] = np.exp(logx[accept] - logsum[accept])
        pend = pend[~accept]
    return np.clip(out, _BETA_FLOOR, _BETA_CEIL)
