"""Target distributions: the potential-query interface and Gaussian mixtures.

A :class:`Potential` wraps user callables for ``V`` and ``grad V`` (with
``mu ~ exp(-V)``) and counts every point at which they are evaluated.
:class:`GaussianMixture` is the analytic target: exact log-density, score,
the law of the OU forward process at any time, and the curvature and
dissipativity constants that bound the sampler's behaviour.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from ._validation import ConfigurationError, check_count, check_points

_LOG_2PI = math.log(2.0 * math.pi)


class QueryBudgetExceeded(RuntimeError):
    """Raised when a potential is queried beyond its configured budget."""

    def __init__(self, queries: int, gradient_queries: int, budget: int):
        self.queries = queries
        self.gradient_queries = gradient_queries
        self.budget = budget
        super().__init__(
            f"query budget {budget} exceeded "
            f"({queries} potential + {gradient_queries} gradient queries requested)"
        )


class Potential:
    """Query access to a potential ``V`` with ``mu ~ exp(-V)``.

    ``evaluate`` and ``gradient`` must be vectorized: they receive an array
    of shape ``(..., d)`` and return ``(...)`` and ``(..., d)``
    respectively.  Each point counts as one query.

    Parameters
    ----------
    dim : int
        Dimension of the state space.
    evaluate : callable
        ``V``.
    gradient : callable, optional
        ``grad V``; required by the Langevin-based methods.
    budget : int, optional
        Cap on potential plus gradient queries.  Exceeding it raises
        :class:`QueryBudgetExceeded` before the offending batch is run.
    mixture : GaussianMixture, optional
        Set when the potential comes from an analytic mixture, which
        enables the exact score oracle.
    """

    def __init__(self, dim, evaluate, gradient=None, budget=None, mixture=None):
        self.dim = check_count(dim, "dim")
        self._evaluate = evaluate
        self._gradient = gradient
        self.budget = None if budget is None else int(budget)
        self.mixture = mixture
        self._lock = threading.Lock()
        self._queries = 0
        self._gradient_queries = 0

    @classmethod
    def from_pointwise(cls, dim, evaluate, gradient=None, **kwargs):
        """Build a potential from functions of a single point."""

        def batched_v(x):
            flat = x.reshape(-1, dim)
            return np.array([evaluate(row) for row in flat]).reshape(x.shape[:-1])

        batched_g = None
        if gradient is not None:

            def batched_g(x):
                flat = x.reshape(-1, dim)
                return np.array([gradient(row) for row in flat]).reshape(x.shape)

        return cls(dim, batched_v, batched_g, **kwargs)

    @property
    def has_gradient(self) -> bool:
        return self._gradient is not None

    @property
    def queries(self) -> int:
        return self._queries

    @property
    def gradient_queries(self) -> int:
        return self._gradient_queries

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self._queries, self._gradient_queries

    def reset(self) -> None:
        with self._lock:
            self._queries = 0
            self._gradient_queries = 0

    def charge(self, n_points: int, gradient: bool = False) -> None:
        """Record ``n_points`` queries evaluated outside :meth:`evaluate`/:meth:`gradient`."""
        with self._lock:
            q = self._queries + (0 if gradient else n_points)
            g = self._gradient_queries + (n_points if gradient else 0)
            if self.budget is not None and q + g > self.budget:
                raise QueryBudgetExceeded(q, g, self.budget)
            self._queries, self._gradient_queries = q, g

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point dimension {x.shape[-1]} does not match potential dimension {self.dim}")
        self.charge(x.size // self.dim, gradient=False)
        return np.asarray(self._evaluate(x), dtype=np.float64)

    def gradient(self, x) -> np.ndarray:
        if self._gradient is None:
            raise ConfigurationError("this potential has no gradient")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point dimension {x.shape[-1]} does not match potential dimension {self.dim}")
        self.charge(x.size // self.dim, gradient=True)
        return np.asarray(self._gradient(x), dtype=np.float64)

    def __repr__(self) -> str:
        return (
            f"Potential(dim={self.dim}, gradient={self.has_gradient}, "
            f"queries={self._queries}, gradient_queries={self._gradient_queries})"
        )


@dataclass(frozen=True)
class MixtureConstants:
    """Semi-log-convexity and dissipativity constants of a mixture.

    ``-hess log mu <= beta * I`` and
    ``<grad V(x), x> >= a * |x|^2 - b`` hold everywhere.
    """

    beta: float
    a: float
    b: float
    lambda_min: float
    lambda_max: float
    r_max: float


def _as_covariance(cov, dim: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        return float(cov) * np.eye(dim)
    if cov.ndim == 1:
        if cov.shape[0] != dim:
            raise ValueError(f"diagonal covariance has length {cov.shape[0]}, expected {dim}")
        return np.diag(cov)
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance has shape {cov.shape}, expected {(dim, dim)}")
    return cov


class GaussianMixture:
    """Finite mixture ``sum_i w_i N(m_i, S_i)``.

    Covariances may be given per component as a scalar (``s * I``), a
    diagonal vector or a full matrix.  All evaluations go through
    log-space with a max-shifted log-sum-exp, so far-tail points neither
    overflow nor underflow.

    Parameters
    ----------
    weights : array-like, shape (p,)
    means : array-like, shape (p, d)
    covariances : sequence of length p
    """

    def __init__(self, weights, means, covariances):
        weights = np.asarray(weights, dtype=np.float64).ravel()
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        p, d = means.shape
        if weights.shape[0] != p:
            raise ValueError(f"{weights.shape[0]} weights for {p} means")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum():.15g}, not 1")
        if not np.all(np.isfinite(means)):
            raise ValueError("mixture means must be finite")
        if isinstance(covariances, (int, float, np.number)) or (
            isinstance(covariances, np.ndarray) and covariances.ndim == 0
        ):
            covariances = [covariances] * p
        if len(covariances) != p:
            raise ValueError(f"{len(covariances)} covariances for {p} components")
        covs = np.stack([_as_covariance(c, d) for c in covariances])
        if np.max(np.abs(covs - covs.transpose(0, 2, 1))) > 1e-12:
            raise ValueError("covariance matrices must be symmetric")
        covs = 0.5 * (covs + covs.transpose(0, 2, 1))
        eig = np.linalg.eigvalsh(covs)
        if np.any(eig <= 0):
            raise ValueError("covariance matrices must be positive definite")

        self.weights = weights
        self.means = means
        self.covariances = covs
        self._eigenvalues = eig
        try:
            self._chol = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance matrix is not SPD") from exc
        eye = np.eye(d)
        self._chol_inv = np.ascontiguousarray(
            np.stack([solve_triangular(L, eye, lower=True) for L in self._chol])
        )
        log_det = 2.0 * np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1)
        self._log_norm = np.log(weights) - 0.5 * (d * _LOG_2PI + log_det)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def __repr__(self) -> str:
        return f"GaussianMixture(n_components={self.n_components}, dim={self.dim})"

    # -- evaluation -------------------------------------------------------

    def _args(self):
        return self.means, self._chol_inv, self._log_norm

    def log_density(self, x) -> np.ndarray:
        """Normalized ``log mu(x)`` for a point or a batch of points."""
        X, single = check_points(x, self.dim)
        out = _kernels.mixture_log_density(X, *self._args())
        return out[0] if single else out

    def responsibilities(self, x) -> np.ndarray:
        """Posterior component probabilities ``gamma_i(x)``; rows sum to 1."""
        X, single = check_points(x, self.dim)
        lt = _kernels.mixture_log_terms(X, *self._args())
        gamma = np.exp(lt - lt.max(axis=1, keepdims=True))
        gamma /= gamma.sum(axis=1, keepdims=True)
        return gamma[0] if single else gamma

    def score(self, x) -> np.ndarray:
        """``grad log mu(x) = -sum_i gamma_i(x) S_i^{-1}(x - m_i)``."""
        X, single = check_points(x, self.dim)
        out = _kernels.mixture_score(X, *self._args())
        return out[0] if single else out

    def potential(self, x) -> np.ndarray:
        """``V = -log mu`` on arrays of shape ``(..., d)``."""
        x = np.asarray(x, dtype=np.float64)
        flat = np.ascontiguousarray(x.reshape(-1, self.dim))
        return -_kernels.mixture_log_density(flat, *self._args()).reshape(x.shape[:-1])

    def potential_gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = np.ascontiguousarray(x.reshape(-1, self.dim))
        return -_kernels.mixture_score(flat, *self._args()).reshape(x.shape)

    def as_potential(self, budget=None) -> Potential:
        """Counted query access to ``V = -log mu`` and its gradient."""
        return Potential(
            self.dim, self.potential, self.potential_gradient, budget=budget, mixture=self
        )

    # -- analytic transforms ---------------------------------------------

    def noised(self, t: float) -> "GaussianMixture":
        """Law at time ``t`` of the OU process ``dX = -X dt + sqrt(2) dB``."""
        t = float(t)
        if t < 0:
            raise ValueError(f"time must be non-negative, got {t}")
        if t == 0:
            return self
        lam = math.exp(-2.0 * t)
        covs = lam * self.covariances + (1.0 - lam) * np.eye(self.dim)
        return GaussianMixture(self.weights, math.exp(-t) * self.means, covs)

    def constants(self) -> MixtureConstants:
        lam_min = float(self._eigenvalues.min())
        lam_max = float(self._eigenvalues.max())
        r_max = float(np.linalg.norm(self.means, axis=1).max())
        return MixtureConstants(
            beta=1.0 / lam_min,
            a=1.0 / (2.0 * lam_max),
            b=lam_max * (r_max / lam_min) ** 2,
            lambda_min=lam_min,
            lambda_max=lam_max,
            r_max=r_max,
        )

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Draw ``n`` i.i.d. points (component labels from the weights)."""
        return self.sample_with_labels(n, seed)[0]

    def sample_with_labels(self, n: int, seed=None):
        n = check_count(n, "n")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        x = self.means[labels] + np.einsum("nde,ne->nd", self._chol[labels], z)
        return x, labels

    def second_moment(self) -> float:
        """Exact ``E|X|^2 = sum_i w_i (|m_i|^2 + tr S_i)``."""
        per = (self.means**2).sum(axis=1) + np.trace(self.covariances, axis1=1, axis2=2)
        return float(self.weights @ per)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        missing = {"weights", "means", "covariances"} - set(data)
        if missing:
            raise ValueError(f"mixture definition lacks {sorted(missing)}")
        return cls(data["weights"], data["means"], data["covariances"])

    @classmethod
    def from_json(cls, path) -> "GaussianMixture":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- functional aliases ------------------------------------------------------


def gm_log_density(gm: GaussianMixture, x):
    return gm.log_density(x)


def gm_score(gm: GaussianMixture, x):
    return gm.score(x)


def gm_noised(gm: GaussianMixture, t: float) -> GaussianMixture:
    return gm.noised(t)


def gm_constants(gm: GaussianMixture) -> MixtureConstants:
    return gm.constants()


def sample_gm(gm: GaussianMixture, n: int, seed=None) -> np.ndarray:
    return gm.sample(n, seed)


def load_mixture(path) -> GaussianMixture:
    return GaussianMixture.from_json(path)


# -- named targets -----------------------------------------------------------


def standard_gaussian(dim: int = 2) -> GaussianMixture:
    return GaussianMixture([1.0], np.zeros((1, dim)), [1.0])


def sixteen_gaussians(seed: int = 0, box: float = 40.0) -> GaussianMixture:
    """16 equally weighted unit-variance Gaussians, centers uniform in ``[-box, box]^2``."""
    centers = np.random.default_rng(seed).uniform(-box, box, size=(16, 2))
    return GaussianMixture(np.full(16, 1.0 / 16), centers, [1.0] * 16)


def three_mode_ring(radius: float) -> GaussianMixture:
    """Three equal-weight modes at angles 90, 210, 330 degrees with covariances I, I/2, I/4."""
    angles = np.deg2rad([90.0, 210.0, 330.0])
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixture(np.full(3, 1.0 / 3), means, [1.0, 0.5, 0.25])


def non_holder_mixture() -> GaussianMixture:
    """``0.5 N(0, diag(1, 0.5)) + 0.5 N(0, diag(0.5, 1))``: score not Hoelder."""
    return GaussianMixture([0.5, 0.5], np.zeros((2, 2)), [[1.0, 0.5], [0.5, 1.0]])


def asymmetric_pair(radius: float, lambda_max: float, lambda_min: float, dim: int = 2) -> GaussianMixture:
    """``0.5 N(c, lambda_max I) + 0.5 N(-c, lambda_min I)`` with ``c = radius * e_1``."""
    c = np.zeros(dim)
    c[0] = radius
    return GaussianMixture([0.5, 0.5], np.stack([c, -c]), [lambda_max, lambda_min])


def random_mixture(seed, max_components: int = 5, max_dim: int = 3) -> GaussianMixture:
    """Random mixture with full covariances, used by property sweeps."""
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, max_components + 1))
    d = int(rng.integers(1, max_dim + 1))
    w = rng.dirichlet(np.ones(p))
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    means = rng.uniform(-4.0, 4.0, size=(p, d))
    covs = []
    for _ in range(p):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eig = rng.uniform(0.2, 2.0, size=d)
        covs.append((q * eig) @ q.T)
    covs = [0.5 * (c + c.T) for c in covs]
    return GaussianMixture(w, means, covs)


def make_target(spec, seed: int = 0) -> GaussianMixture:
    """Resolve a target description from a config.

    ``spec`` is a path to a mixture file, an inline mixture mapping, or a
    mapping with ``preset`` (one of ``standard-gaussian``, ``sixteen-gaussians``,
    ``three-mode-ring``, ``non-holder``, ``asymmetric-pair``) plus its
    keyword arguments.
    """
    if isinstance(spec, (str, Path)):
        return load_mixture(spec)
    if not isinstance(spec, dict):
        raise ConfigurationError(f"cannot interpret target {spec!r}")
    if "file" in spec:
        return load_mixture(spec["file"])
    if "weights" in spec:
        return GaussianMixture.from_dict(spec)
    name = spec.get("preset")
    kwargs = {k: v for k, v in spec.items() if k != "preset"}
    if name == "standard-gaussian":
        return standard_gaussian(int(kwargs.get("dim", 2)))
    if name == "sixteen-gaussians":
        return sixteen_gaussians(int(kwargs.get("seed", seed)), float(kwargs.get("box", 40.0)))
    if name == "three-mode-ring":
        return three_mode_ring(float(kwargs["R"]))
    if name == "non-holder":
        return non_holder_mixture()
    if name == "asymmetric-pair":
        return asymmetric_pair(
            float(kwargs["R"]),
            float(kwargs.get("lambda_max", 1.0)),
            float(kwargs.get("lambda_min", 0.5)),
            int(kwargs.get("dim", 2)),
        )
    raise ConfigurationError(f"unknown target preset {name!r}")
