"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with numba and a vectorized
numpy form. The module-level names dispatch on ``_accel.USE_NUMBA``; the
``*_nb`` / ``*_np`` variants stay importable so tests and the benchmark can
compare them directly.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# -- mixture log density ---------------------------------------------------

def mixture_logpdf_np(y, mu1, omega, q, sigma, scaled):
    sd2 = q * sigma if scaled else sigma
    z1 = (y - mu1) / sigma
    z2 = (y - q * mu1) / sd2
    with np.errstate(divide="ignore"):
        l1 = np.log1p(-omega) - 0.5 * z1 * z1 - math.log(sigma) - LOG_SQRT_2PI
        l2 = np.log(omega) - 0.5 * z2 * z2 - math.log(sd2) - LOG_SQRT_2PI
    return np.logaddexp(l1, l2)


@njit
def mixture_logpdf_nb(y, mu1, omega, q, sigma, scaled):
    n = y.shape[0]
    out = np.empty(n)
    sd2 = q * sigma if scaled else sigma
    c1 = math.log(sigma) + LOG_SQRT_2PI
    c2 = math.log(sd2) + LOG_SQRT_2PI
    for i in range(n):
        z1 = (y[i] - mu1[i]) / sigma
        z2 = (y[i] - q * mu1[i]) / sd2
        w = omega[i]
        l1 = (math.log1p(-w) if w < 1.0 else -np.inf) - 0.5 * z1 * z1 - c1
        l2 = (math.log(w) if w > 0.0 else -np.inf) - 0.5 * z2 * z2 - c2
        hi = max(l1, l2)
        if hi == -np.inf:
            out[i] = -np.inf
        else:
            out[i] = hi + math.log(math.exp(l1 - hi) + math.exp(l2 - hi))
    return out


@njit
def mixture_loglik_nb(y, mu1, omega, q, sigma, scaled):
    return mixture_logpdf_nb(y, mu1, omega, q, sigma, scaled).sum()


def mixture_loglik_np(y, mu1, omega, q, sigma, scaled):
    return float(mixture_logpdf_np(y, mu1, omega, q, sigma, scaled).sum())


# -- posterior probability of the shrunken component -----------------------

def posterior_np(y, mu1, omega, q, sigma, scaled):
    sd2 = q * sigma if scaled else sigma
    z1 = (y - mu1) / sigma
    z2 = (y - q * mu1) / sd2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        l1 = np.log1p(-omega) - 0.5 * z1 * z1 - math.log(sigma)
        l2 = np.log(omega) - 0.5 * z2 * z2 - math.log(sd2)
        # logistic of the log-odds; exact 0 and 1 at the omega endpoints
        p = 1.0 / (1.0 + np.exp(l1 - l2))
    bad = ~np.isfinite(l1) & ~np.isfinite(l2)
    p = np.where(bad, 0.5, p)
    return p, bad


@njit
def posterior_nb(y, mu1, omega, q, sigma, scaled):
    n = y.shape[0]
    p = np.empty(n)
    bad = np.zeros(n, dtype=np.bool_)
    sd2 = q * sigma if scaled else sigma
    for i in range(n):
        z1 = (y[i] - mu1[i]) / sigma
        z2 = (y[i] - q * mu1[i]) / sd2
        w = omega[i]
        l1 = (math.log1p(-w) if w < 1.0 else -np.inf) - 0.5 * z1 * z1 - math.log(sigma)
        l2 = (math.log(w) if w > 0.0 else -np.inf) - 0.5 * z2 * z2 - math.log(sd2)
        if l1 == -np.inf and l2 == -np.inf:
            p[i] = 0.5
            bad[i] = True
        elif l2 == -np.inf:
            p[i] = 0.0
        elif l1 == -np.inf:
            p[i] = 1.0
        else:
            p[i] = 1.0 / (1.0 + math.exp(l1 - l2))
    return p, bad


# -- two-component univariate normal EM ------------------------------------

def em_two_np(ys, m1, m2, s1, s2, w2, tol, max_iter, sd_floor):
    trace = np.empty(max_iter + 1)
    n_done = 0
    for it in range(max_iter + 1):
        l1 = np.log1p(-w2) - 0.5 * ((ys - m1) / s1) ** 2 - math.log(s1)
        l2 = math.log(w2) - 0.5 * ((ys - m2) / s2) ** 2 - math.log(s2)
        lse = np.logaddexp(l1, l2)
        trace[it] = lse.sum() - ys.shape[0] * LOG_SQRT_2PI
        n_done = it
        if it > 0 and abs(trace[it] - trace[it - 1]) < tol:
            break
        if it == max_iter:
            break
        r2 = np.exp(l2 - lse)
        r1 = 1.0 - r2
        n1 = r1.sum()
        n2 = r2.sum()
        m1 = (r1 * ys).sum() / n1
        m2 = (r2 * ys).sum() / n2
        s1 = max(math.sqrt((r1 * (ys - m1) ** 2).sum() / n1), sd_floor)
        s2 = max(math.sqrt((r2 * (ys - m2) ** 2).sum() / n2), sd_floor)
        w2 = min(max(n2 / ys.shape[0], 1e-12), 1.0 - 1e-12)
    return m1, m2, s1, s2, w2, trace[: n_done + 1]


@njit
def em_two_nb(ys, m1, m2, s1, s2, w2, tol, max_iter, sd_floor):
    n = ys.shape[0]
    trace = np.empty(max_iter + 1)
    r2 = np.empty(n)
    n_done = 0
    for it in range(max_iter + 1):
        ll = 0.0
        lw1 = math.log1p(-w2)
        lw2 = math.log(w2)
        ls1 = math.log(s1)
        ls2 = math.log(s2)
        for i in range(n):
            z1 = (ys[i] - m1) / s1
            z2 = (ys[i] - m2) / s2
            a = lw1 - 0.5 * z1 * z1 - ls1
            b = lw2 - 0.5 * z2 * z2 - ls2
            hi = max(a, b)
            lse = hi + math.log(math.exp(a - hi) + math.exp(b - hi))
            ll += lse
            r2[i] = math.exp(b - lse)
        trace[it] = ll - n * LOG_SQRT_2PI
        n_done = it
        if it > 0 and abs(trace[it] - trace[it - 1]) < tol:
            break
        if it == max_iter:
            break
        n1 = 0.0
        n2 = 0.0
        a1 = 0.0
        a2 = 0.0
        for i in range(n):
            n2 += r2[i]
            n1 += 1.0 - r2[i]
            a2 += r2[i] * ys[i]
            a1 += (1.0 - r2[i]) * ys[i]
        m1 = a1 / n1
        m2 = a2 / n2
        v1 = 0.0
        v2 = 0.0
        for i in range(n):
            v1 += (1.0 - r2[i]) * (ys[i] - m1) ** 2
            v2 += r2[i] * (ys[i] - m2) ** 2
        s1 = max(math.sqrt(v1 / n1), sd_floor)
        s2 = max(math.sqrt(v2 / n2), sd_floor)
        w2 = min(max(n2 / n, 1e-12), 1.0 - 1e-12)
    return m1, m2, s1, s2, w2, trace[: n_done + 1]


# -- autocorrelation -------------------------------------------------------

def acf_np(x, max_lag):
    d = x - x.mean()
    denom = np.dot(d, d)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    n = x.shape[0]
    for k in range(1, max_lag + 1):
        out[k] = np.dot(d[: n - k], d[k:]) / denom
    return out


@njit
def acf_nb(x, max_lag):
    n = x.shape[0]
    mean = 0.0
    for i in range(n):
        mean += x[i]
    mean /= n
    denom = 0.0
    for i in range(n):
        denom += (x[i] - mean) ** 2
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        s = 0.0
        for t in range(n - k):
            s += (x[t] - mean) * (x[t + k] - mean)
        out[k] = s / denom
    return out


def durbin_levinson_np(rho):
    """PACF at lags 1..L from autocorrelations ``rho`` at lags 0..L."""
    L = rho.shape[0] - 1
    pacf = np.empty(L)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, L + 1):
        if k == 1:
            a = rho[1]
        else:
            a = (rho[k] - np.dot(phi, rho[k - 1:0:-1])) / v
        phi = np.concatenate((phi - a * phi[::-1], [a]))
        v *= 1.0 - a * a
        pacf[k - 1] = a
    return pacf


@njit
def durbin_levinson_nb(rho):
    L = rho.shape[0] - 1
    pacf = np.empty(L)
    phi = np.zeros(L)
    prev = np.zeros(L)
    v = 1.0
    for k in range(1, L + 1):
        s = rho[k]
        for j in range(1, k):
            s -= prev[j - 1] * rho[k - j]
        a = s / v
        for j in range(1, k):
            phi[j - 1] = prev[j - 1] - a * prev[k - j - 1]
        phi[k - 1] = a
        for j in range(k):
            prev[j] = phi[j]
        v *= 1.0 - a * a
        pacf[k - 1] = a
    return pacf


if USE_NUMBA:
    mixture_logpdf = mixture_logpdf_nb
    mixture_loglik = mixture_loglik_nb
    posterior = posterior_nb
    em_two = em_two_nb
    acf = acf_nb
    durbin_levinson = durbin_levinson_nb
else:
    mixture_logpdf = mixture_logpdf_np
    mixture_loglik = mixture_loglik_np
    posterior = posterior_np
    em_two = em_two_np
    acf = acf_np
    durbin_levinson = durbin_levinson_np
