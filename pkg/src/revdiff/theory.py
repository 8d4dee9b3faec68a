"""Numeric checks of the structural assumptions on Gaussian-mixture targets.

Semi-log-convexity and dissipativity are probed pointwise with the
constants of :meth:`GaussianMixture.constants`; the second-moment bound
is checked against samples.  Two appendix examples are reproduced: the
mixture whose score is not Hoelder continuous, and the lower bound on the
Poincare constant of an asymmetric two-mode mixture obtained from a
piecewise-linear test function.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_count, check_positive
from .targets import GaussianMixture, asymmetric_pair, non_holder_mixture


@dataclass
class CheckReport:
    """Outcome of a pointwise check.

    ``worst_violation`` is the largest value of ``lhs - rhs`` over the
    tested points, so a negative number is the smallest margin.
    """

    name: str
    points_tested: int
    worst_violation: float
    tolerance: float
    passed: bool = field(init=False)
    details: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.worst_violation <= self.tolerance)

    def to_dict(self, with_details: bool = False) -> dict:
        out = asdict(self)
        if not with_details:
            out.pop("details")
        return out


def _envelope_points(gm: GaussianMixture, num_points: int, seed) -> np.ndarray:
    c = gm.constants()
    scale = c.r_max + 3.0 * math.sqrt(c.lambda_max)
    return scale * np.random.default_rng(seed).standard_normal((num_points, gm.dim))


def fd_hessian(fun, X: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central second differences of a batched scalar function, shape (m, d, d).

    The step is ``rel_step * max(1, |x|)`` per point; the result is
    symmetrized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    m, d = X.shape
    h = rel_step * np.maximum(1.0, np.linalg.norm(X, axis=1))
    eye = np.eye(d)
    f0 = fun(X)
    H = np.empty((m, d, d))
    for i in range(d):
        ei = h[:, None] * eye[i]
        H[:, i, i] = (fun(X + ei) - 2.0 * f0 + fun(X - ei)) / h**2
        for j in range(i + 1, d):
            ej = h[:, None] * eye[j]
            v = fun(X + ei + ej) - fun(X + ei - ej) - fun(X - ei + ej) + fun(X - ei - ej)
            H[:, i, j] = H[:, j, i] = v / (4.0 * h**2)
    return H


def check_semi_log_convexity(gm: GaussianMixture, num_points: int = 100, seed=0, tol: float = 1e-3) -> CheckReport:
    """Largest eigenvalue of the Hessian of ``V = -log mu`` against ``beta``.

    Points are drawn from ``N(0, (r_max + 3 sqrt(lambda_max))^2 I)``.
    """
    num_points = check_count(num_points, "num_points")
    beta = gm.constants().beta
    X = _envelope_points(gm, num_points, seed)
    H = fd_hessian(gm.potential, X)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("finite-difference Hessian is not finite")
    top = np.linalg.eigvalsh(H)[:, -1]
    viol = top - beta
    details = [{"x": x.tolist(), "max_eigenvalue": float(e)} for x, e in zip(X, top)]
    return CheckReport(
        "semi_log_convexity", num_points, float(viol.max()), tol, details,
        {"beta": beta, "max_eigenvalue": float(top.max())},
    )


def check_dissipativity(gm: GaussianMixture, num_points: int = 500, seed=0, tol: float = 1e-3) -> CheckReport:
    """``<grad V(x), x> >= a |x|^2 - b`` at envelope points and on far shells.

    Half of the points come from the envelope used by the curvature
    check, the other half have uniformly random radii up to
    ``10 (r_max + sqrt(lambda_max))``; the origin is always included.
    """
    num_points = check_count(num_points, "num_points")
    c = gm.constants()
    rng = np.random.default_rng(seed)
    n_env = num_points // 2
    n_far = num_points - n_env - 1
    X = [np.zeros((1, gm.dim)), _envelope_points(gm, n_env, rng)]
    if n_far > 0:
        u = rng.standard_normal((n_far, gm.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = rng.uniform(0.0, 10.0 * (c.r_max + math.sqrt(c.lambda_max)), size=n_far)
        X.append(u * r[:, None])
    X = np.concatenate(X)[:num_points]
    lhs = np.sum(gm.potential_gradient(X) * X, axis=1)
    rhs = c.a * np.sum(X * X, axis=1) - c.b
    viol = rhs - lhs
    details = [{"x": x.tolist(), "lhs": float(p), "rhs": float(q)} for x, p, q in zip(X, lhs, rhs)]
    return CheckReport(
        "dissipativity", X.shape[0], float(viol.max()), tol, details, {"a": c.a, "b": c.b}
    )


def check_second_moment(gm: GaussianMixture, n_samples: int = 100_000, seed=0) -> CheckReport:
    """Empirical ``E|X|^2`` against ``(b + 2d) / a``, allowing 3 standard errors.

    The looser ``(b + 2d) / a`` is what the dissipativity argument
    actually delivers; ``(b + d) / a`` is reported alongside.
    """
    n_samples = check_count(n_samples, "n_samples", minimum=10_000)
    c = gm.constants()
    sq = np.sum(gm.sample(n_samples, seed) ** 2, axis=1)
    m2 = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(n_samples))
    bound = (c.b + 2 * gm.dim) / c.a
    return CheckReport(
        "second_moment", n_samples, m2 - 3.0 * se - bound, 0.0, [],
        {"m2": m2, "stderr": se, "bound": bound, "statement_bound": (c.b + gm.dim) / c.a,
         "exact_m2": gm.second_moment()},
    )


def run_checks(gm: GaussianMixture, seed=0, tol: float = 1e-3, num_points: int = 100,
               n_samples: int = 100_000) -> list[CheckReport]:
    """All three structural checks with shared settings."""
    return [
        check_semi_log_convexity(gm, num_points, seed, tol),
        check_dissipativity(gm, max(num_points, 2), seed, tol),
        check_second_moment(gm, n_samples, seed),
    ]


def non_holder_demo(x_values, eta: float = 0.1) -> list[dict]:
    """``-grad log mu`` on and just off the diagonal for the non-Hoelder mixture.

    On the diagonal the value is ``1.5 (x, x)``; at ``(x, x + eta)`` it
    approaches ``(2x, x)`` as ``x`` grows, so a vanishing displacement
    moves the score by an unbounded amount.
    """
    gm = non_holder_mixture()
    x = np.asarray(x_values, dtype=np.float64).ravel()
    on = -gm.score(np.stack([x, x], axis=1))
    off = -gm.score(np.stack([x, x + eta], axis=1))
    rows = []
    for xi, a, b in zip(x, on, off):
        rows.append({
            "x": float(xi),
            "eta": float(eta),
            "diagonal": a.tolist(),
            "off_diagonal": b.tolist(),
            "first_over_x": float(b[0] / xi) if xi != 0 else float("nan"),
            "jump": float(np.linalg.norm(b - a)),
        })
    return rows


@dataclass
class PoincareEstimate:
    """Rayleigh quotient of the slab test function and the analytic bounds.

    Iterating yields ``(ratio, bound)``.  ``bound`` is the published value
    ``R^2 exp(R^2 / (2 lambda_max)) / 2``; ``corrected_bound`` is
    ``R^2 exp(R^2 / (8 lambda_max)) / 4``, what the same argument gives once
    the Gaussian tail is evaluated at ``R / (2 sqrt(lambda_max))``.
    """

    ratio: float
    bound: float
    corrected_bound: float
    variance: float
    variance_stderr: float
    dirichlet: float
    slab_mass: float
    rel_error: float
    n_samples: int

    def __iter__(self):
        return iter((self.ratio, self.bound))


def slab_test_function(x1, radius: float):
    """``g(s) = clip(2 s / R, -1, 1)`` and its derivative, applied to ``x1``."""
    x1 = np.asarray(x1, dtype=np.float64)
    inside = np.abs(x1) <= radius / 2.0
    return np.clip(2.0 * x1 / radius, -1.0, 1.0), np.where(inside, 2.0 / radius, 0.0)


def poincare_ratio(c_norm: float, lambda_max: float, lambda_min: float, d: int = 2,
                   n_samples: int = 1_000_000, seed=0) -> PoincareEstimate:
    """Monte Carlo ``Var(f) / E|grad f|^2`` for ``mu = N(c, lambda_max I)/2 + N(-c, lambda_min I)/2``.

    ``f(x) = g(x_1)`` with the slab function of :func:`slab_test_function`.
    The variance is centered (``f`` is not mean zero when the covariances
    differ).  The relative error combines the binomial error of the slab
    mass with the sampling error of the variance.
    """
    R = check_positive(c_norm, "c_norm")
    if not lambda_max >= lambda_min > 0:
        raise ValueError("need lambda_max >= lambda_min > 0")
    n = check_count(n_samples, "n_samples", minimum=2)
    X = asymmetric_pair(R, lambda_max, lambda_min, d).sample(n, seed)
    f, df = slab_test_function(X[:, 0], R)
    var = float(f.var())
    dev2 = (f - f.mean()) ** 2
    var_se = float(dev2.std(ddof=1) / math.sqrt(n))
    slab = float(np.mean(df > 0))
    dirichlet = float(np.mean(df**2))
    ratio = var / dirichlet if dirichlet > 0 else float("inf")
    rel = math.sqrt((var_se / var) ** 2 + (1.0 - slab) / max(n * slab, 1.0)) if var > 0 else float("inf")
    return PoincareEstimate(
        ratio=ratio,
        bound=R**2 * math.exp(R**2 / (2.0 * lambda_max)) / 2.0,
        corrected_bound=R**2 * math.exp(R**2 / (8.0 * lambda_max)) / 4.0,
        variance=var,
        variance_stderr=var_se,
        dirichlet=dirichlet,
        slab_mass=slab,
        rel_error=rel,
        n_samples=n,
    )
