"""Counter-based random streams keyed by (seed, chain, step, purpose).

Every draw is a pure function of its key and its position inside the
stream, so a chain produces the same numbers no matter how chains are
batched or which worker runs them.  Keys are derived with the SplitMix64
finalizer; draws apply the same finalizer to a Weyl sequence per key and
map each 53-bit uniform to a normal through the inverse CDF.  Everything is compiled so
that per-step key derivation stays cheap inside long Langevin loops.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# stream purposes; distinct constants keep the streams disjoint
INIT = 1
DIFFUSION = 2
SCORE = 3
INNER = 4
INNER_INIT = 5
LANGEVIN = 6

@nb.njit(cache=True)
def _mix64(x):
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@nb.njit(cache=True)
def _key(seed, purpose, chain, step):
    g = np.uint64(0x9E3779B97F4A7C15)
    key = _mix64(np.uint64(seed) * g + np.uint64(0x632BE59BD9B4E019))
    key = _mix64(key ^ _mix64(np.uint64(purpose) + g))
    key = _mix64(key ^ _mix64(np.uint64(chain) + np.uint64(2) * g))
    return _mix64(key ^ _mix64(np.uint64(step) + np.uint64(3) * g))


@nb.njit(cache=True)
def _ndtri(p):
    # inverse standard normal CDF, Wichura (1988) algorithm AS241 (PPND16)
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@nb.njit(cache=True)
def _normal(key, counter):
    # normal number ``counter`` of the stream ``key``: 53-bit uniform in (0, 1), then ndtri
    bits = _mix64(key + (counter + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))
    u = (np.float64(np.int64(bits >> np.uint64(11))) + 0.5) * 1.1102230246251565e-16
    return _ndtri(u)


@nb.njit(cache=True)
def _fill_rows(keys, offset, out):
    for i in range(keys.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = _normal(keys[i], np.uint64(offset + j))


@nb.njit(cache=True)
def _fill_block(seed, purpose, chains, steps, out):
    m = chains.shape[0]
    for s in range(steps.shape[0]):
        for i in range(m):
            key = _key(seed, purpose, chains[i], steps[s])
            for j in range(out.shape[1]):
                out[s * m + i, j] = _normal(key, np.uint64(j))


@nb.njit(cache=True)
def _keys(seed, purpose, chains, step):
    out = np.empty(chains.shape[0], dtype=np.uint64)
    for i in range(chains.shape[0]):
        out[i] = _key(seed, purpose, chains[i], step)
    return out


def _check_nonnegative(*values):
    for v in values:
        if np.any(np.asarray(v) < 0):
            raise ValueError("stream keys must be non-negative integers")


def derive_keys(seed, chains, step=0, purpose=0) -> np.ndarray:
    """One 64-bit key per chain for the given step and purpose."""
    chains = np.atleast_1d(np.asarray(chains, dtype=np.int64))
    _check_nonnegative(seed, chains, step, purpose)
    return _keys(int(seed), int(purpose), chains, int(step))


class CounterStream:
    """A batch of independent streams, one per chain.

    ``standard_normal((m, *shape))`` returns ``m`` rows, row ``i`` drawn
    from the stream of ``chains[i]``.  Successive calls continue each
    stream where the previous call stopped.

    Parameters
    ----------
    seed : int
        Experiment seed.
    chains : array-like of int
        Chain indices, one stream each.
    step : int, default=0
        Step index folded into the key.
    purpose : int, default=0
        Distinguishes streams used for different roles at the same step.
    """

    def __init__(self, seed: int, chains, step: int = 0, purpose: int = 0):
        self.seed = int(seed)
        self.chains = np.atleast_1d(np.asarray(chains, dtype=np.int64))
        self.step = int(step)
        self.purpose = int(purpose)
        self._keys = derive_keys(self.seed, self.chains, self.step, self.purpose)
        self._offset = 0

    def __len__(self) -> int:
        return self.chains.shape[0]

    def standard_normal(self, size) -> np.ndarray:
        size = tuple(int(v) for v in np.atleast_1d(size))
        if size[0] != len(self):
            raise ValueError(f"leading dimension {size[0]} does not match {len(self)} chains")
        per_chain = int(np.prod(size[1:], dtype=np.int64))
        out = np.empty((size[0], per_chain))
        _fill_rows(self._keys, self._offset, out)
        self._offset += per_chain
        return out.reshape(size)

    def spawn(self, purpose: int, step: int | None = None) -> "CounterStream":
        """Fresh stream over the same chains with a different purpose/step."""
        return CounterStream(
            self.seed, self.chains, self.step if step is None else step, purpose
        )


def normal_block(seed: int, chains, steps, purpose: int, dim: int) -> np.ndarray:
    """Normals of shape ``(len(steps), len(chains), dim)``.

    Row ``[j, i]`` equals ``CounterStream(seed, chains[i], steps[j],
    purpose).standard_normal((1, dim))``, so Langevin loops can pre-draw
    many steps at once without changing any value.
    """
    chains = np.atleast_1d(np.asarray(chains, dtype=np.int64))
    steps = np.atleast_1d(np.asarray(steps, dtype=np.int64))
    _check_nonnegative(seed, chains, steps, purpose)
    out = np.empty((len(steps) * len(chains), dim))
    _fill_block(int(seed), int(purpose), chains, steps, out)
    return out.reshape(len(steps), len(chains), dim)


class GeneratorStream:
    """Adapter giving a :class:`numpy.random.Generator` the stream interface."""

    def __init__(self, generator: np.random.Generator):
        self.generator = generator

    def standard_normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)


def as_stream(rng, n_rows: int):
    """Coerce ``rng`` (None, int, Generator or stream) into a stream object."""
    if isinstance(rng, (CounterStream, GeneratorStream)):
        return rng
    if isinstance(rng, np.random.Generator):
        return GeneratorStream(rng)
    if rng is None or isinstance(rng, (int, np.integer)):
        return GeneratorStream(np.random.default_rng(rng))
    if hasattr(rng, "standard_normal"):
        return rng
    raise TypeError(f"cannot use {type(rng).__name__} as a random stream")
