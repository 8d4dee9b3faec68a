"""Compiled Gaussian-mixture kernels.

Each row is processed independently with a fixed operation order, so a
point's result never depends on the batch it is evaluated in.  The loop
bodies are written out in every kernel: calling a helper that takes
arrays costs reference-count traffic per call and triples the run time.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def mixture_log_terms(X, means, chol_inv, log_norm):
    """``log w_j N(x_i; m_j, S_j)`` for every row and component, shape (m, p)."""
    m = X.shape[0]
    p, d = means.shape
    out = np.empty((m, p))
    for i in range(m):
        for j in range(p):
            quad = 0.0
            for e in range(d):
                acc = 0.0
                for k in range(e + 1):
                    acc += chol_inv[j, e, k] * (X[i, k] - means[j, k])
                quad += acc * acc
            out[i, j] = log_norm[j] - 0.5 * quad
    return out


@nb.njit(cache=True)
def mixture_log_density(X, means, chol_inv, log_norm):
    m = X.shape[0]
    p, d = means.shape
    out = np.empty(m)
    lt = np.empty(p)
    for i in range(m):
        top = -np.inf
        for j in range(p):
            quad = 0.0
            for e in range(d):
                acc = 0.0
                for k in range(e + 1):
                    acc += chol_inv[j, e, k] * (X[i, k] - means[j, k])
                quad += acc * acc
            lt[j] = log_norm[j] - 0.5 * quad
            if lt[j] > top:
                top = lt[j]
        s = 0.0
        for j in range(p):
            s += math.exp(lt[j] - top)
        out[i] = top + math.log(s)
    return out


@nb.njit(cache=True)
def mixture_score(X, means, chol_inv, log_norm):
    """``grad log mu`` per row: ``-sum_j gamma_j S_j^{-1}(x - m_j)``."""
    m = X.shape[0]
    p, d = means.shape
    out = np.zeros((m, d))
    lt = np.empty(p)
    u = np.empty((p, d))
    for i in range(m):
        top = -np.inf
        for j in range(p):
            quad = 0.0
            for e in range(d):
                acc = 0.0
                for k in range(e + 1):
                    acc += chol_inv[j, e, k] * (X[i, k] - means[j, k])
                u[j, e] = acc
                quad += acc * acc
            lt[j] = log_norm[j] - 0.5 * quad
            if lt[j] > top:
                top = lt[j]
        s = 0.0
        for j in range(p):
            lt[j] = math.exp(lt[j] - top)
            s += lt[j]
        for j in range(p):
            g = lt[j] / s
            # S^{-1}(x - m) = L^{-T} u with L^{-1} lower triangular
            for k in range(d):
                acc = 0.0
                for e in range(k, d):
                    acc += chol_inv[j, e, k] * u[j, e]
                out[i, k] -= g * acc
    return out


@nb.njit(cache=True)
def ula_mixture_steps(x, noise, h, scale, means, chol_inv, log_norm):
    """Run ``len(noise)`` ULA steps in place on ``x`` for ``V = -log mu``.

    Bit-for-bit equal to ``x - h * grad V(x) + scale * xi`` applied step by
    step with :func:`mixture_score`.
    """
    m, d = x.shape
    p = means.shape[0]
    lt = np.empty(p)
    u = np.empty((p, d))
    score = np.empty(d)
    for step in range(noise.shape[0]):
        for i in range(m):
            top = -np.inf
            for j in range(p):
                quad = 0.0
                for e in range(d):
                    acc = 0.0
                    for k in range(e + 1):
                        acc += chol_inv[j, e, k] * (x[i, k] - means[j, k])
                    u[j, e] = acc
                    quad += acc * acc
                lt[j] = log_norm[j] - 0.5 * quad
                if lt[j] > top:
                    top = lt[j]
            s = 0.0
            for j in range(p):
                lt[j] = math.exp(lt[j] - top)
                s += lt[j]
            for k in range(d):
                score[k] = 0.0
            for j in range(p):
                g = lt[j] / s
                for k in range(d):
                    acc = 0.0
                    for e in range(k, d):
                        acc += chol_inv[j, e, k] * u[j, e]
                    score[k] -= g * acc
            for k in range(d):
                x[i, k] = (x[i, k] - h * (-score[k])) + scale * noise[step, i, k]
    return x


@nb.njit(cache=True)
def posterior_ula_steps(x, z, noise, h, scale, sqrt_lam, sigma2, means, chol_inv, log_norm):
    """Inner ULA steps on ``V(x) + |z - sqrt(lam) x|^2 / (2 sigma2)``, in place.

    ``x`` has shape (m, P, d), ``z`` (m, d) and ``noise`` (m, s, P, d).
    Per coordinate the update is ``(x - h * (grad V + sqrt_lam * (sqrt_lam * x - z) / sigma2)) + scale * xi``.
    """
    m, P, d = x.shape
    p = means.shape[0]
    lt = np.empty(p)
    u = np.empty((p, d))
    gv = np.empty(d)
    for i in range(m):
        for step in range(noise.shape[1]):
            for q in range(P):
                top = -np.inf
                for j in range(p):
                    quad = 0.0
                    for e in range(d):
                        acc = 0.0
                        for k in range(e + 1):
                            acc += chol_inv[j, e, k] * (x[i, q, k] - means[j, k])
                        u[j, e] = acc
                        quad += acc * acc
                    lt[j] = log_norm[j] - 0.5 * quad
                    if lt[j] > top:
                        top = lt[j]
                s = 0.0
                for j in range(p):
                    lt[j] = math.exp(lt[j] - top)
                    s += lt[j]
                for k in range(d):
                    gv[k] = 0.0
                for j in range(p):
                    g = lt[j] / s
                    for k in range(d):
                        acc = 0.0
                        for e in range(k, d):
                            acc += chol_inv[j, e, k] * u[j, e]
                        gv[k] -= g * acc
                for k in range(d):
                    grad = -gv[k] + sqrt_lam * (sqrt_lam * x[i, q, k] - z[i, k]) / sigma2
                    x[i, q, k] = (x[i, q, k] - h * grad) + scale * noise[i, step, q, k]
    return x
