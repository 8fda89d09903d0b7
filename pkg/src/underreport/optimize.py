"""BFGS minimizer driven by central finite differences, plus a numeric Hessian.

Plays the role of a general-purpose ``nlm``-style optimizer: the objective is
only ever evaluated, never differentiated analytically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str


def _steps(x, rel):
    return rel * np.maximum(1.0, np.abs(x))


def fd_gradient(f, x, rel_step=1e-5):
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (f(xp) - f(xm)) / (2.0 * h[i])
    return g


def fd_hessian(f, x, rel_step=1e-4):
    """Symmetric central-difference Hessian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = _steps(x, rel_step)
    f0 = f(x)
    H = np.empty((n, n))

    def shifted(i, di, j=None, dj=0.0):
        z = x.copy()
        z[i] += di
        if j is not None:
            z[j] += dj
        return f(z)

    for i in range(n):
        H[i, i] = (shifted(i, h[i]) - 2.0 * f0 + shifted(i, -h[i])) / (h[i] * h[i])
        for j in range(i):
            v = (shifted(i, h[i], j, h[j]) - shifted(i, h[i], j, -h[j])
                 - shifted(i, -h[i], j, h[j]) + shifted(i, -h[i], j, -h[j])) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


def _line_search(f, x, fx, g, d, max_halvings=40):
    slope = float(g @ d)
    t = 1.0
    for _ in range(max_halvings):
        xn = x + t * d
        fn = f(xn)
        if math.isfinite(fn) and fn <= fx + 1e-4 * t * slope:
            return xn, fn, t
        t *= 0.5
    return None, fx, 0.0


def bfgs(f, x0, gtol=1e-5, ftol=1e-8, max_iter=500, rel_step=1e-5, max_step=5.0):
    """Minimize ``f`` from ``x0``.

    Converged means both the relative change in ``f`` is below ``ftol`` and the
    gradient max-norm is below ``gtol``. A Newton polish on the numeric
    Hessian finishes the run when BFGS stalls on a flat ridge.
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    if not math.isfinite(fx):
        return OptimResult(x, fx, np.full_like(x, np.nan), 0, False, "non-finite objective at start")
    g = fd_gradient(f, x, rel_step)
    n = x.size
    B = np.eye(n) / max(1.0, np.abs(g).max())
    it = 0
    rel_change = np.inf
    message = "iteration limit reached"
    first = True
    while it < max_iter:
        if np.abs(g).max() < gtol and rel_change < ftol:
            message = "gradient and objective change below tolerance"
            break
        d = -B @ g
        if g @ d >= 0:
            B = np.eye(n) / max(1.0, np.abs(g).max())
            d = -B @ g
        big = np.abs(d).max()
        if big > max_step:
            d *= max_step / big
        xn, fn, t = _line_search(f, x, fx, g, d)
        it += 1
        if xn is None:
            message = "line search failed"
            break
        gn = fd_gradient(f, xn, rel_step)
        if not np.all(np.isfinite(gn)):
            x, fx = xn, fn
            message = "non-finite gradient"
            g = gn
            break
        s = xn - x
        yv = gn - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first:
                B = np.eye(n) * sy / float(yv @ yv)
                first = False
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, yv)
            B = V @ B @ V.T + rho * np.outer(s, s)
        rel_change = abs(fn - fx) / max(1.0, abs(fx))
        x, fx, g = xn, fn, gn
    if not np.all(np.isfinite(g)):
        return OptimResult(x, fx, g, it, False, message)
    x, fx, g, polished = _newton_polish(f, x, fx, g, rel_step, gtol, min(20, max_iter - it))
    it += polished
    converged = bool(np.abs(g).max() < gtol)
    if converged:
        message = "gradient and objective change below tolerance"
    return OptimResult(x, fx, g, it, converged, message)


def _newton_polish(f, x, fx, g, rel_step, gtol, max_steps=20):
    steps = 0
    while steps < max_steps and np.abs(g).max() >= gtol:
        H = fd_hessian(f, x)
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            break
        d = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        xn, fn, _ = _line_search(f, x, fx, g, d, max_halvings=20)
        steps += 1
        if xn is None:
            break
        x, fx, g = xn, fn, fd_gradient(f, xn, rel_step)
    return x, fx, g, steps
