"""Reverse-diffusion and Langevin samplers.

The reverse sampler starts from ``N(0, I)`` and integrates

    dY = (Y + 2 s_k(Y_k)) dt + sqrt(2) dB

backwards over the grid ``t_k = k T / N``, with the score ``s_k`` frozen at
the state at the start of each interval.  With the score frozen the SDE is
linear, so each interval is integrated exactly (:func:`reverse_step`).

Randomness comes from :mod:`revdiff.rng` streams keyed by
(seed, chain, step, purpose): chains can be split into any blocks, run in
any order or on any number of threads and still produce identical output.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import rng as rngmod
from ._kernels import ula_mixture_steps
from ._validation import ConfigurationError, check_count, check_positive
from .scores import EstimatorSpec, NoiseLevel, auxiliary_ula_score, estimate_score
from .targets import GaussianMixture, Potential, QueryBudgetExceeded

THREADS_ENV = "REVDIFF_NUM_THREADS"
_MAX_COUNT = 2**63 - 1
# points evaluated per block; bounds peak memory of the particle arrays
_POINTS_PER_BLOCK = 400_000


class SamplerError(RuntimeError):
    """An estimator failed inside a sampler run; carries chain and step context."""


@dataclass
class Schedule:
    """Uniform time grid ``t_k = k T / N`` with per-step particle counts."""

    horizon: float
    steps: int
    particles: np.ndarray

    def __post_init__(self):
        self.horizon = check_positive(self.horizon, "horizon")
        self.steps = check_count(self.steps, "steps")
        particles = np.broadcast_to(np.asarray(self.particles, dtype=np.int64), (self.steps,)).copy()
        if np.any(particles < 1):
            raise ConfigurationError("particle counts must be >= 1")
        self.particles = particles

    @property
    def step_size(self) -> float:
        return self.horizon / self.steps

    @property
    def grid(self) -> np.ndarray:
        k = np.arange(1, self.steps + 1)
        return k * self.horizon / self.steps

    def time(self, k: int) -> float:
        return k * self.horizon / self.steps

    def total_particles(self) -> int:
        return int(self.particles.sum())

    def to_dict(self) -> dict:
        uniform = bool(np.all(self.particles == self.particles[0]))
        return {
            "T": self.horizon,
            "N": self.steps,
            "particles": int(self.particles[0]) if uniform else self.particles.tolist(),
        }


def schedule_practical(T: float, N: int, n: int) -> Schedule:
    """Uniform grid of ``N`` steps over ``[0, T]`` with ``n`` particles per step."""
    return Schedule(T, N, np.full(check_count(N, "N"), check_count(n, "n")))


def schedule_theory(epsilon: float, d: int) -> Schedule:
    """Parameters of the polynomial-complexity guarantee at accuracy ``epsilon``.

    ``T = log(1/eps)``, ``N = ceil(1/eps)``, ``n_k = ceil(d eps^-(2d+3))``.
    """
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    d = check_count(d, "d")
    N = _ceil_exact(1.0 / epsilon)
    n_float = d * (1.0 / epsilon) ** (2 * d + 3)
    if not math.isfinite(n_float) or n_float > _MAX_COUNT:
        raise OverflowError(
            f"theory schedule needs n_k = {n_float:.3e} particles per step "
            f"(total {N * n_float:.3e} queries); exceeds a 64-bit count"
        )
    n = _ceil_exact(n_float)
    if n > _MAX_COUNT or N * n > _MAX_COUNT:
        raise OverflowError(f"theory schedule total budget {N * n:.3e} queries exceeds a 64-bit count")
    return Schedule(math.log(1.0 / epsilon), N, np.full(N, n, dtype=np.int64))


def _ceil_exact(x: float) -> int:
    # 0.1 ** -5 evaluates to 100000.00000000001; snap values within rounding of an integer
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def reverse_step(y, s, h: float, xi) -> np.ndarray:
    """Exact solution over duration ``h`` of ``dY = (Y + 2 s) dt + sqrt(2) dB``, ``s`` frozen.

    ``e^h y + 2 (e^h - 1) s + sqrt(e^{2h} - 1) xi`` with ``xi ~ N(0, I)``.
    """
    if not h > 0:
        raise ValueError(f"step duration must be positive, got {h}")
    growth = math.exp(h)
    return growth * np.asarray(y) + 2.0 * math.expm1(h) * np.asarray(s) + math.sqrt(math.expm1(2.0 * h)) * np.asarray(xi)


@dataclass
class SampleRun:
    """Output of a sampler run and its cost."""

    samples: np.ndarray
    seed: int
    potential_queries: int
    gradient_queries: int
    wall_seconds: float
    method: str = ""
    info: dict = field(default_factory=dict)

    @property
    def total_queries(self) -> int:
        return self.potential_queries + self.gradient_queries


def _as_potential(target, budget=None) -> Potential:
    if isinstance(target, GaussianMixture):
        return target.as_potential(budget)
    if isinstance(target, Potential):
        return target
    raise ConfigurationError(f"target must be a Potential or GaussianMixture, got {type(target).__name__}")


def _n_workers(n_workers):
    if n_workers is None:
        n_workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(n_workers))


def _chain_blocks(num_chains: int, block: int):
    return [np.arange(i, min(i + block, num_chains)) for i in range(0, num_chains, block)]


def _run_blocks(fn, blocks, n_workers):
    if n_workers == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, blocks))


def expected_queries(schedule: Schedule, spec: EstimatorSpec, num_chains: int) -> tuple[int, int]:
    """Closed-form (potential, gradient) query counts of a reverse-diffusion run."""
    total = schedule.total_particles()
    if spec.kind == "self_normalized_dsi":
        return num_chains * total, 0
    if spec.kind == "tsi_gaussian":
        return num_chains * total, num_chains * total
    if spec.kind == "auxiliary_ula":
        return 0, num_chains * total * spec.inner_steps
    return 0, 0


def run_reverse_diffusion(
    target,
    schedule: Schedule,
    estimator: EstimatorSpec,
    num_chains: int,
    seed: int = 0,
    n_workers=None,
    chain_block=None,
) -> SampleRun:
    """Run ``num_chains`` independent reverse-diffusion chains.

    ``estimator.particles`` is ignored in favour of the schedule's
    per-step particle counts.  Chains are processed in blocks (sized to
    bound memory unless ``chain_block`` is given), optionally on
    ``n_workers`` threads; the output does not depend on either choice.
    """
    pot = _as_potential(target)
    num_chains = check_count(num_chains, "num_chains")
    if estimator.kind == "exact_oracle" and pot.mixture is None:
        raise ConfigurationError("exact_oracle requires a Gaussian mixture target")
    d = pot.dim
    h = schedule.step_size
    block = chain_block or max(1, _POINTS_PER_BLOCK // int(schedule.particles.max()))
    specs = {}

    def spec_at(k):
        n = int(schedule.particles[k - 1])
        if n not in specs:
            kw = estimator.to_dict()
            kw["particles"] = n
            specs[n] = EstimatorSpec.from_dict(kw)
        return specs[n]

    def run_block(chains):
        y = rngmod.CounterStream(seed, chains, 0, rngmod.INIT).standard_normal((len(chains), d))
        inner_states = None
        for k in range(schedule.steps, 0, -1):
            level = NoiseLevel(schedule.time(k))
            score_stream = rngmod.CounterStream(seed, chains, k, rngmod.SCORE)
            spec = spec_at(k)
            try:
                if spec.kind == "auxiliary_ula" and spec.warm_start:
                    s, inner_states = auxiliary_ula_score(
                        pot, level, y, spec, score_stream, init=inner_states, return_states=True
                    )
                else:
                    s = estimate_score(spec, pot, level, y, score_stream)
            except QueryBudgetExceeded:
                raise
            except Exception as exc:
                raise SamplerError(
                    f"{spec.kind} failed on chains {chains[0]}..{chains[-1]} at step k={k} (t={level.t:g}): {exc}"
                ) from exc
            xi = rngmod.CounterStream(seed, chains, k, rngmod.DIFFUSION).standard_normal((len(chains), d))
            y = reverse_step(y, s, h, xi)
        return y

    q0, g0 = pot.snapshot()
    start = time.perf_counter()
    parts = _run_blocks(run_block, _chain_blocks(num_chains, block), _n_workers(n_workers))
    wall = time.perf_counter() - start
    q1, g1 = pot.snapshot()
    return SampleRun(
        samples=np.concatenate(parts, axis=0),
        seed=int(seed),
        potential_queries=q1 - q0,
        gradient_queries=g1 - g0,
        wall_seconds=wall,
        method="rdmc" if estimator.kind == "auxiliary_ula" else "reverse_diffusion",
        info={"schedule": schedule.to_dict(), "estimator": estimator.to_dict()},
    )


def run_rdmc(target, schedule: Schedule, inner: EstimatorSpec, num_chains: int, seed: int = 0, **kwargs) -> SampleRun:
    """Reverse diffusion with scores from inner ULA chains on the auxiliary posterior."""
    if inner.kind != "auxiliary_ula":
        raise ConfigurationError(f"RDMC needs an auxiliary_ula estimator, got {inner.kind}")
    return run_reverse_diffusion(target, schedule, inner, num_chains, seed, **kwargs)


def _initial_states(init, chains, d, seed):
    if init is None or init == "standard":
        return rngmod.CounterStream(seed, chains, 0, rngmod.INIT).standard_normal((len(chains), d))
    if isinstance(init, dict):
        mean = np.broadcast_to(np.asarray(init.get("mean", 0.0), dtype=np.float64), (d,))
        scale = float(init.get("scale", 1.0))
        z = rngmod.CounterStream(seed, chains, 0, rngmod.INIT).standard_normal((len(chains), d))
        return mean + scale * z
    arr = np.asarray(init, dtype=np.float64)
    if arr.ndim == 1:
        return np.broadcast_to(arr, (len(chains), d)).copy()
    return arr[chains].copy()


def run_ula(
    target,
    step_size: float,
    steps: int,
    num_chains: int,
    init="standard",
    seed: int = 0,
    n_workers=None,
    chain_block=None,
    noise_block: int = 256,
) -> SampleRun:
    """Unadjusted Langevin: ``x <- x - h grad V(x) + sqrt(2h) xi``; final states returned.

    ``init`` is ``"standard"`` (``N(0, I)``), a mapping with ``mean`` and
    ``scale``, a single point, or an array with one row per chain.
    """
    pot = _as_potential(target)
    if not pot.has_gradient:
        raise ConfigurationError("ULA requires a potential with a gradient")
    h = check_positive(step_size, "step_size")
    steps = check_count(steps, "steps", minimum=0)
    num_chains = check_count(num_chains, "num_chains")
    d = pot.dim
    scale = math.sqrt(2.0 * h)
    block = chain_block or num_chains
    # mixture targets run whole noise blocks in compiled code; same arithmetic per step
    fused = pot.mixture is not None and pot._gradient == pot.mixture.potential_gradient

    def run_block(chains):
        x = np.ascontiguousarray(_initial_states(init, chains, d, seed), dtype=np.float64)
        for s0 in range(0, steps, noise_block):
            step_ids = np.arange(s0, min(s0 + noise_block, steps)) + 1
            noise = rngmod.normal_block(seed, chains, step_ids, rngmod.LANGEVIN, d)
            if fused:
                pot.charge(len(chains) * len(step_ids), gradient=True)
                x = ula_mixture_steps(x, noise, h, scale, *pot.mixture._args())
            else:
                for xi in noise:
                    x = x - h * pot.gradient(x) + scale * xi
        return x

    q0, g0 = pot.snapshot()
    start = time.perf_counter()
    parts = _run_blocks(run_block, _chain_blocks(num_chains, block), _n_workers(n_workers))
    wall = time.perf_counter() - start
    q1, g1 = pot.snapshot()
    return SampleRun(
        samples=np.concatenate(parts, axis=0),
        seed=int(seed),
        potential_queries=q1 - q0,
        gradient_queries=g1 - g0,
        wall_seconds=wall,
        method="ula",
        info={"step_size": h, "steps": steps},
    )


# -- estimator-style front ends ------------------------------------------------


class _SamplerMixin:
    def _check_fitted(self):
        if not hasattr(self, "potential_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit(target) first")

    def _bind(self, target):
        self.potential_ = _as_potential(target)
        self.n_features_in_ = self.potential_.dim
        return self

    def fit_sample(self, target, n_samples=None, random_state=None):
        return self.fit(target).sample(n_samples, random_state)


class ReverseDiffusionSampler(_SamplerMixin, BaseEstimator):
    """Reverse-diffusion sampler driven by Monte Carlo score estimates.

    ``fit(target)`` binds a :class:`Potential` or :class:`GaussianMixture` and
    builds the schedule; ``sample(n)`` runs ``n`` chains.

    Parameters
    ----------
    horizon : float, default=5.0
        Forward horizon ``T``.
    n_steps : int, default=500
        Number of reverse steps ``N``.
    particles : int, default=100
        Monte Carlo samples per score evaluation.
    estimator : str, default="self_normalized_dsi"
        One of ``self_normalized_dsi``, ``tsi_gaussian``, ``auxiliary_ula``,
        ``exact_oracle``.
    inner_steps, inner_step_size, inner_init, warm_start
        Inner-chain settings for ``auxiliary_ula``.
    t_floor : float, default=1e-4
    n_samples : int, default=1000
        Chains run by ``sample()`` when no count is given.
    random_state : int, default=0
    """

    def __init__(
        self,
        horizon=5.0,
        n_steps=500,
        particles=100,
        estimator="self_normalized_dsi",
        inner_steps=None,
        inner_step_size=None,
        inner_init="prior",
        warm_start=False,
        t_floor=1e-4,
        n_samples=1000,
        random_state=0,
    ):
        self.horizon = horizon
        self.n_steps = n_steps
        self.particles = particles
        self.estimator = estimator
        self.inner_steps = inner_steps
        self.inner_step_size = inner_step_size
        self.inner_init = inner_init
        self.warm_start = warm_start
        self.t_floor = t_floor
        self.n_samples = n_samples
        self.random_state = random_state

    def _make_spec(self) -> EstimatorSpec:
        return EstimatorSpec(
            kind=self.estimator,
            particles=self.particles,
            inner_steps=self.inner_steps,
            inner_step_size=self.inner_step_size,
            inner_init=self.inner_init,
            warm_start=self.warm_start,
            t_floor=self.t_floor,
        )

    def fit(self, target, y=None):
        self.schedule_ = schedule_practical(self.horizon, self.n_steps, self.particles)
        self.estimator_spec_ = self._make_spec()
        self._bind(target)
        if self.estimator_spec_.kind == "exact_oracle" and self.potential_.mixture is None:
            raise ConfigurationError("exact_oracle requires a Gaussian mixture target")
        return self

    def sample(self, n_samples=None, random_state=None):
        """Run the chains; returns the ``(n_samples, d)`` matrix and stores ``run_``."""
        self._check_fitted()
        n = self.n_samples if n_samples is None else n_samples
        seed = self.random_state if random_state is None else random_state
        self.run_ = run_reverse_diffusion(self.potential_, self.schedule_, self.estimator_spec_, n, seed)
        return self.run_.samples


class RDMCSampler(ReverseDiffusionSampler):
    """Reverse diffusion with inner-ULA posterior-mean scores.

    Same parameters as :class:`ReverseDiffusionSampler` with the estimator
    fixed to ``auxiliary_ula``; inner chains start from ``N(0, I)`` by default.
    """

    def __init__(
        self,
        horizon=5.0,
        n_steps=500,
        particles=100,
        inner_steps=100,
        inner_step_size=0.01,
        inner_init="standard",
        warm_start=False,
        t_floor=1e-4,
        n_samples=1000,
        random_state=0,
    ):
        super().__init__(
            horizon=horizon,
            n_steps=n_steps,
            particles=particles,
            estimator="auxiliary_ula",
            inner_steps=inner_steps,
            inner_step_size=inner_step_size,
            inner_init=inner_init,
            warm_start=warm_start,
            t_floor=t_floor,
            n_samples=n_samples,
            random_state=random_state,
        )

    def get_params(self, deep=True):
        params = super().get_params(deep)
        params.pop("estimator", None)
        return params


class ULASampler(_SamplerMixin, BaseEstimator):
    """Unadjusted Langevin baseline.

    Parameters
    ----------
    step_size : float, default=0.01
    n_steps : int, default=50000
    init : str, mapping or array, default="standard"
    n_samples : int, default=1000
    random_state : int, default=0
    """

    def __init__(self, step_size=0.01, n_steps=50_000, init="standard", n_samples=1000, random_state=0):
        self.step_size = step_size
        self.n_steps = n_steps
        self.init = init
        self.n_samples = n_samples
        self.random_state = random_state

    def fit(self, target, y=None):
        check_positive(self.step_size, "step_size")
        check_count(self.n_steps, "n_steps", minimum=0)
        self._bind(target)
        if not self.potential_.has_gradient:
            raise ConfigurationError("ULA requires a potential with a gradient")
        return self

    def sample(self, n_samples=None, random_state=None):
        self._check_fitted()
        n = self.n_samples if n_samples is None else n_samples
        seed = self.random_state if random_state is None else random_state
        self.run_ = run_ula(self.potential_, self.step_size, self.n_steps, n, self.init, seed)
        return self.run_.samples
