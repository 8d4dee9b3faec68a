"""Monte Carlo estimators of the intermediate scores ``grad log p_t``.

``p_t`` is the law at time ``t`` of the OU process started at the target
``mu ~ exp(-V)``.  With ``lambda_t = exp(-2t)``, every estimator here is a
different representation of the same quantity:

* ``self_normalized_dsi``: Gaussian proposals ``y ~ N(0, (1 - lambda_t) I)``
  reweighted by ``exp(-V(e^t (z - y)))``; numerator and denominator share
  the same draws.  Needs only ``V``.
* ``tsi_gaussian``: reweighted target scores at
  ``(z - sqrt(1 - lambda_t) y) / sqrt(lambda_t)``, ``y ~ N(0, I)``.  Needs
  ``grad V``.
* ``auxiliary_ula``: posterior mean of ``sqrt(lambda_t) X_0`` given
  ``X_t = z``, obtained by inner Langevin chains (the RDMC estimator).
* ``exact_oracle``: closed form for Gaussian mixtures.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import ConfigurationError, check_count, check_points, check_positive
from ._kernels import posterior_ula_steps
from .rng import as_stream
from .targets import GaussianMixture, Potential

KINDS = ("self_normalized_dsi", "tsi_gaussian", "auxiliary_ula", "exact_oracle")
INNER_INITS = ("prior", "standard")


@dataclass(frozen=True)
class NoiseLevel:
    """Forward time ``t`` with ``lambda = exp(-2t)`` cached."""

    t: float
    lam: float = field(init=False)
    one_minus_lambda: float = field(init=False)

    def __post_init__(self):
        t = float(self.t)
        if not t > 0 or not math.isfinite(t):
            raise ValueError(f"noise level requires t > 0, got {t}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "lam", math.exp(-2.0 * t))
        object.__setattr__(self, "one_minus_lambda", -math.expm1(-2.0 * t))


def _level(level) -> NoiseLevel:
    return level if isinstance(level, NoiseLevel) else NoiseLevel(level)


def _guard(level: NoiseLevel, t_floor: float) -> None:
    if level.t < t_floor:
        raise ValueError(
            f"score estimation refused at t={level.t:g} below t_floor={t_floor:g} "
            "(the estimator divides by 1 - exp(-2t))"
        )


@dataclass
class EstimatorSpec:
    """Which score representation to use and with how many samples.

    ``inner_steps`` and ``inner_step_size`` are required for
    ``auxiliary_ula`` and must be left unset otherwise.  ``inner_init`` is
    ``"prior"`` (start inner chains from ``N(z, (1 - lambda) I)``) or
    ``"standard"`` (from ``N(0, I)``).
    """

    kind: str = "self_normalized_dsi"
    particles: int = 100
    inner_steps: int | None = None
    inner_step_size: float | None = None
    inner_init: str = "prior"
    warm_start: bool = False
    t_floor: float = 1e-4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        self.particles = check_count(self.particles, "particles")
        self.t_floor = check_positive(self.t_floor, "t_floor")
        if self.kind == "auxiliary_ula":
            if self.inner_steps is None or self.inner_step_size is None:
                raise ConfigurationError("auxiliary_ula requires inner_steps and inner_step_size")
            self.inner_steps = check_count(self.inner_steps, "inner_steps", minimum=0)
            if float(self.inner_step_size) <= 0:
                raise ConfigurationError(f"inner_step_size must be > 0, got {self.inner_step_size}")
            self.inner_step_size = float(self.inner_step_size)
            if self.inner_init not in INNER_INITS:
                raise ConfigurationError(f"inner_init must be one of {INNER_INITS}")
        elif self.inner_steps is not None or self.inner_step_size is not None:
            raise ConfigurationError(f"inner chain parameters are only valid for auxiliary_ula, not {self.kind}")

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.kind != "auxiliary_ula":
            for key in ("inner_steps", "inner_step_size", "inner_init", "warm_start"):
                out.pop(key)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown estimator fields {sorted(unknown)}")
        return cls(**data)

    def queries_per_point(self) -> tuple[int, int]:
        """(potential, gradient) queries per score evaluation."""
        if self.kind == "self_normalized_dsi":
            return self.particles, 0
        if self.kind == "tsi_gaussian":
            return self.particles, self.particles
        if self.kind == "auxiliary_ula":
            return 0, self.particles * self.inner_steps
        return 0, 0


# inner-chain noise is drawn this many numbers at a time
_INNER_NOISE_POINTS = 1 << 21


def _softmax_weights(v: np.ndarray) -> np.ndarray:
    """``exp(-V + min V)`` along the last axis; the largest weight is 1."""
    return np.exp(-(v - v.min(axis=-1, keepdims=True)))


def self_normalized_from_samples(pot: Potential, level, z, y) -> np.ndarray:
    """Self-normalized estimate for given proposal draws ``y``.

    ``y`` has shape ``(n, d)`` (shared by all points) or ``(m, n, d)``.
    Draws are used as given, i.e. already scaled to ``N(0, (1 - lambda) I)``.
    """
    level = _level(level)
    Z, single = check_points(z, pot.dim, "z")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = np.broadcast_to(y, (Z.shape[0],) + y.shape)
    v = pot.evaluate(math.exp(level.t) * (Z[:, None, :] - y))
    w = _softmax_weights(v)
    est = -np.einsum("mn,mnd->md", w, y) / (level.one_minus_lambda * w.sum(axis=1))[:, None]
    return est[0] if single else est


def self_normalized_score(pot: Potential, level, z, n: int, rng=None, t_floor: float = 1e-4):
    """Self-normalized importance-sampling estimate of ``grad log p_t(z)``.

    Consumes exactly ``n`` potential queries per point.  Fresh proposals are
    drawn on every call.

    Parameters
    ----------
    pot : Potential
    level : NoiseLevel or float
        Forward time ``t``.
    z : array-like, shape (d,) or (m, d)
    n : int
        Proposals per point.
    rng : int, Generator or stream, optional
        Source of standard normals; a stream must provide ``m`` rows.
    """
    level = _level(level)
    _guard(level, t_floor)
    n = check_count(n, "n")
    Z, single = check_points(z, pot.dim, "z")
    stream = as_stream(rng, Z.shape[0])
    y = math.sqrt(level.one_minus_lambda) * stream.standard_normal((Z.shape[0], n, pot.dim))
    est = self_normalized_from_samples(pot, level, Z, y)
    return est[0] if single else est


def tsi_gaussian_score(pot: Potential, level, z, n: int, rng=None, t_floor: float = 1e-4):
    """Target-score-identity estimate with Gaussian proposals.

    Averages ``grad log mu`` at ``(z - sqrt(1 - lambda) y) / sqrt(lambda)``
    with self-normalized weights ``mu`` at the same points, then rescales by
    ``1 / sqrt(lambda)``.  Consumes ``n`` potential and ``n`` gradient
    queries per point.
    """
    if not pot.has_gradient:
        raise ConfigurationError("tsi_gaussian requires a potential with a gradient")
    level = _level(level)
    _guard(level, t_floor)
    n = check_count(n, "n")
    Z, single = check_points(z, pot.dim, "z")
    stream = as_stream(rng, Z.shape[0])
    y = stream.standard_normal((Z.shape[0], n, pot.dim))
    sqrt_lam = math.sqrt(level.lam)
    x = (Z[:, None, :] - math.sqrt(level.one_minus_lambda) * y) / sqrt_lam
    w = _softmax_weights(pot.evaluate(x))
    target_score = -pot.gradient(x)
    est = np.einsum("mn,mnd->md", w, target_score) / (sqrt_lam * w.sum(axis=1))[:, None]
    return est[0] if single else est


def auxiliary_ula_score(
    pot: Potential, level, z, spec: EstimatorSpec, rng=None, init=None, return_states=False
):
    """Posterior-mean estimate via inner ULA chains (the RDMC estimator).

    The auxiliary law ``y | z ~ mu(y / sqrt(lambda)) N(y; z, (1 - lambda) I)``
    is sampled in the clean coordinate ``x = y / sqrt(lambda)``, whose
    potential ``V(x) + |z - sqrt(lambda) x|^2 / (2 (1 - lambda))`` keeps the
    curvature of ``V`` instead of inflating it by ``exp(2t)``.  The estimate
    is ``(sqrt(lambda) mean(x) - z) / (1 - lambda)``.

    ``init`` overrides the starting clean states (shape ``(m, particles, d)``),
    which is how warm starts are implemented.  With ``return_states`` the
    final inner states are returned as a second value.
    """
    if spec.kind != "auxiliary_ula":
        raise ConfigurationError(f"auxiliary_ula_score needs an auxiliary_ula spec, got {spec.kind}")
    if not pot.has_gradient:
        raise ConfigurationError("auxiliary_ula requires a potential with a gradient")
    level = _level(level)
    _guard(level, spec.t_floor)
    Z, single = check_points(z, pot.dim, "z")
    m, d, P = Z.shape[0], pot.dim, spec.particles
    stream = as_stream(rng, m)
    sigma2 = level.one_minus_lambda
    sqrt_lam = math.sqrt(level.lam)

    if init is not None:
        x = np.array(init, dtype=np.float64).reshape(m, P, d)
    elif spec.inner_init == "prior":
        # y ~ N(z, (1 - lambda) I) mapped to the clean coordinate
        x = (Z[:, None, :] + math.sqrt(sigma2) * stream.standard_normal((m, P, d))) / sqrt_lam
    else:
        x = stream.standard_normal((m, P, d))
    x = np.ascontiguousarray(x)

    h = spec.inner_step_size
    noise_scale = math.sqrt(2.0 * h)
    fused = pot.mixture is not None and pot._gradient == pot.mixture.potential_gradient
    block = max(1, _INNER_NOISE_POINTS // max(1, m * P * d))
    for s0 in range(0, spec.inner_steps, block):
        s = min(block, spec.inner_steps - s0)
        noise = stream.standard_normal((m, s * P * d)).reshape(m, s, P, d)
        if fused:
            pot.charge(m * P * s, gradient=True)
            x = posterior_ula_steps(x, Z, noise, h, noise_scale, sqrt_lam, sigma2, *pot.mixture._args())
            continue
        for j in range(s):
            grad = pot.gradient(x) + sqrt_lam * (sqrt_lam * x - Z[:, None, :]) / sigma2
            x = (x - h * grad) + noise_scale * noise[:, j]

    est = (sqrt_lam * x.mean(axis=1) - Z) / sigma2
    if single:
        est = est[0]
    return (est, x) if return_states else est


def exact_oracle_score(gm, level, z) -> np.ndarray:
    """Exact ``grad log p_t(z)`` of a Gaussian mixture; no queries are charged."""
    if isinstance(gm, Potential):
        gm = gm.mixture
    if not isinstance(gm, GaussianMixture):
        raise ConfigurationError("exact_oracle requires a Gaussian mixture target")
    level = _level(level)
    return gm.noised(level.t).score(z)


def estimate_score(spec: EstimatorSpec, pot: Potential, level, z, rng=None) -> np.ndarray:
    """Dispatch to the estimator named by ``spec.kind``."""
    if spec.kind == "self_normalized_dsi":
        return self_normalized_score(pot, level, z, spec.particles, rng, spec.t_floor)
    if spec.kind == "tsi_gaussian":
        return tsi_gaussian_score(pot, level, z, spec.particles, rng, spec.t_floor)
    if spec.kind == "auxiliary_ula":
        return auxiliary_ula_score(pot, level, z, spec, rng)
    level = _level(level)
    _guard(level, spec.t_floor)
    return exact_oracle_score(pot, level, z)


class ScoreEstimator(BaseEstimator):
    """Estimator-style wrapper: ``fit`` binds a target, ``predict`` returns scores.

    Parameters
    ----------
    kind : str, default="self_normalized_dsi"
    particles : int, default=100
    inner_steps, inner_step_size, inner_init
        Inner-chain settings for ``kind="auxiliary_ula"``.
    t_floor : float, default=1e-4
    random_state : int, optional
    """

    def __init__(
        self,
        kind="self_normalized_dsi",
        particles=100,
        inner_steps=None,
        inner_step_size=None,
        inner_init="prior",
        t_floor=1e-4,
        random_state=None,
    ):
        self.kind = kind
        self.particles = particles
        self.inner_steps = inner_steps
        self.inner_step_size = inner_step_size
        self.inner_init = inner_init
        self.t_floor = t_floor
        self.random_state = random_state

    def _spec(self) -> EstimatorSpec:
        return EstimatorSpec(
            kind=self.kind,
            particles=self.particles,
            inner_steps=self.inner_steps,
            inner_step_size=self.inner_step_size,
            inner_init=self.inner_init,
            t_floor=self.t_floor,
        )

    def fit(self, target, y=None):
        """Bind ``target`` (a :class:`Potential` or :class:`GaussianMixture`)."""
        self.spec_ = self._spec()
        self.potential_ = target.as_potential() if isinstance(target, GaussianMixture) else target
        if not isinstance(self.potential_, Potential):
            raise ConfigurationError(f"cannot fit on {type(target).__name__}")
        self.n_features_in_ = self.potential_.dim
        self._rng = np.random.default_rng(self.random_state)
        return self

    def predict(self, Z, t):
        """Estimated ``grad log p_t`` at each row of ``Z``."""
        if not hasattr(self, "spec_"):
            raise NotFittedError("call fit before predict")
        return estimate_score(self.spec_, self.potential_, NoiseLevel(t), Z, self._rng)
