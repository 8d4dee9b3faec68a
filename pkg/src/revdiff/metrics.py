"""Sample-based error measures: empirical W2, score MSE, mode coverage, moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ._validation import ConfigurationError, check_count, check_positive, check_samples
from .rng import SCORE, CounterStream
from .scores import EstimatorSpec, NoiseLevel, estimate_score
from .targets import GaussianMixture

EXACT_LIMIT = 2000


@dataclass(frozen=True)
class W2Result:
    """Empirical 2-Wasserstein distance and how it was obtained.

    ``iterations``, ``dual_gap`` and ``marginal_error`` (L1 violation of
    the row marginals at exit) are only set by the Sinkhorn solver.
    """

    distance: float
    method: str
    iterations: int | None = None
    dual_gap: float | None = None
    marginal_error: float | None = None

    def __float__(self) -> float:
        return self.distance


def _exact(A, B) -> W2Result:
    if A.shape[0] != B.shape[0]:
        raise ValueError(
            f"exact assignment needs equal sample sizes, got {A.shape[0]} and {B.shape[0]}"
        )
    cost = cdist(A, B, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return W2Result(math.sqrt(max(cost[rows, cols].mean(), 0.0)), "exact_assignment")


def _sinkhorn(A, B, reg=None, tol=1e-8, max_iter=10_000, check_every=10) -> W2Result:
    cost = cdist(A, B, "sqeuclidean")
    n, m = cost.shape
    log_a = np.full(n, -math.log(n))
    log_b = np.full(m, -math.log(m))
    if reg is None:
        med = float(np.median(cost))
        reg = 0.01 * med if med > 0 else 1e-12
    reg = check_positive(reg, "reg")
    f = np.zeros(n)
    g = np.zeros(m)
    it = 0
    viol = np.inf
    while it < max_iter:
        it += 1
        f = -reg * logsumexp((g[None, :] - cost) / reg + log_b[None, :], axis=1)
        g = -reg * logsumexp((f[:, None] - cost) / reg + log_a[:, None], axis=0)
        if it % check_every == 0 or it == max_iter:
            # after the g update the column marginals are exact; check the rows
            log_plan = (f[:, None] + g[None, :] - cost) / reg + log_a[:, None] + log_b[None, :]
            viol = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - np.exp(log_a)).sum())
            if viol < tol:
                break
    log_plan = (f[:, None] + g[None, :] - cost) / reg + log_a[:, None] + log_b[None, :]
    plan = np.exp(log_plan)
    primal = float((plan * cost).sum())
    # gap of the entropic problem: cost + reg * KL(plan | a x b) minus the dual objective
    kl = float((plan * (log_plan - log_a[:, None] - log_b[None, :])).sum())
    dual = float(np.exp(log_a) @ f + np.exp(log_b) @ g) - reg * (float(plan.sum()) - 1.0)
    return W2Result(math.sqrt(max(primal, 0.0)), "sinkhorn", it, primal + reg * kl - dual, viol)


def wasserstein2(A, B, method: str = "auto", reg=None, tol: float = 1e-8, max_iter: int = 10_000) -> W2Result:
    """W2 between the uniform empirical measures on the rows of ``A`` and ``B``.

    Parameters
    ----------
    A, B : array-like of shape (n, d) and (m, d)
    method : {"auto", "exact_assignment", "sinkhorn"}
        ``auto`` solves the assignment problem exactly when ``n == m <= 2000``
        and falls back to log-domain Sinkhorn otherwise.
    reg : float, optional
        Entropic regularization for Sinkhorn; defaults to 1% of the median
        pairwise squared distance.
    tol : float
        Sinkhorn stops once the L1 marginal violation drops below ``tol`` or
        after ``max_iter`` sweeps; the violation reached is reported.

    Returns
    -------
    W2Result
    """
    A = check_samples(A, "A")
    B = check_samples(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if method == "auto":
        method = "exact_assignment" if A.shape[0] == B.shape[0] <= EXACT_LIMIT else "sinkhorn"
    if method == "exact_assignment":
        return _exact(A, B)
    if method == "sinkhorn":
        return _sinkhorn(A, B, reg, tol, max_iter)
    raise ConfigurationError(f"unknown W2 method {method!r}")


def score_mse(
    spec: EstimatorSpec,
    gm: GaussianMixture,
    t: float,
    eval_points,
    replications: int = 1,
    seed: int = 0,
    return_stderr: bool = False,
):
    """Mean of ``|s_hat(z) - grad log p_t(z)|^2`` over points and replications.

    Draw ``eval_points`` from ``gm.noised(t)`` for an ``L2(p_t)`` weighted
    estimate.  Replication ``r`` uses the counter stream with step ``r``,
    so every (point, replication) pair sees independent particles.  With
    ``return_stderr`` the standard error over replications is returned too.
    """
    if not isinstance(gm, GaussianMixture):
        raise ConfigurationError("score_mse needs a GaussianMixture for the exact oracle")
    replications = check_count(replications, "replications")
    level = NoiseLevel(t)
    Z = check_samples(eval_points, "eval_points")
    exact = gm.noised(level.t).score(Z)
    pot = gm.as_potential()
    chains = np.arange(Z.shape[0])
    per_rep = np.empty(replications)
    for r in range(replications):
        est = estimate_score(spec, pot, level, Z, CounterStream(seed, chains, r, SCORE))
        per_rep[r] = np.mean(np.sum((est - exact) ** 2, axis=1))
    mse = float(per_rep.mean())
    if not return_stderr:
        return mse
    se = float(per_rep.std(ddof=1) / math.sqrt(replications)) if replications > 1 else float("nan")
    return mse, se


@dataclass(frozen=True)
class ModeCoverage:
    fractions: np.ndarray
    stray: float
    counts: np.ndarray

    def covered(self, min_fraction: float = 0.01) -> int:
        """Number of modes holding at least ``min_fraction`` of the samples."""
        return int(np.sum(self.fractions >= min_fraction))


def mode_coverage(samples, centers, radius: float) -> ModeCoverage:
    """Assign each sample to its nearest center if within ``radius``.

    Samples farther than ``radius`` from every center count as stray.
    Fractions are relative to the total number of samples.
    """
    X = check_samples(samples)
    C = check_samples(centers, "centers")
    radius = check_positive(radius, "radius")
    dist = cdist(X, C)
    nearest = dist.argmin(axis=1)
    inside = dist[np.arange(X.shape[0]), nearest] <= radius
    counts = np.bincount(nearest[inside], minlength=C.shape[0])
    n = X.shape[0]
    return ModeCoverage(counts / n, float(np.sum(~inside)) / n, counts)


def moment2(samples) -> float:
    """Empirical second moment ``mean |x|^2``."""
    X = check_samples(samples)
    return float(np.mean(np.sum(X * X, axis=1)))
