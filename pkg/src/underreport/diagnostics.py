"""Residual checks: the fitted mixture mean should leave white noise behind."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from . import kernels
from .model import ModelParams, ObservationSeries, build_design, mu1_vector, omega_vector

BAND_Z = 1.96


class UndefinedACFError(ValueError):
    pass


@dataclass
class Residuals:
    month: np.ndarray
    total: np.ndarray
    per_record: np.ndarray
    standardized: bool = False


def mixture_mean(params: ModelParams, data: ObservationSeries, link: str = "logit") -> np.ndarray:
    design = build_design(data)
    mu1 = mu1_vector(params, design)
    omega = omega_vector(params, design, link)
    return omega * params.q * mu1 + (1.0 - omega) * mu1


def mixture_variance(params: ModelParams, data: ObservationSeries, link: str = "logit",
                     variance: str = "scaled") -> np.ndarray:
    design = build_design(data)
    mu1 = mu1_vector(params, design)
    w = omega_vector(params, design, link)
    sd2 = params.q * params.sigma if variance == "scaled" else params.sigma
    m = (1.0 - w) * mu1 + w * params.q * mu1
    second = (1.0 - w) * (params.sigma ** 2 + mu1 ** 2) + w * (sd2 ** 2 + (params.q * mu1) ** 2)
    return second - m * m


def residuals(data: ObservationSeries, params: ModelParams, link: str = "logit",
              variance: str = "scaled", standardize: bool = False) -> Residuals:
    """Observed minus fitted mixture mean, ``y - mu1 * (1 - omega * (1 - q))``.

    ``total`` sums strata per month; ``per_record`` keeps the stratum rows.
    The fitted mean includes trend and harmonic terms.
    """
    design = build_design(data)
    mu1 = mu1_vector(params, design)
    omega = omega_vector(params, design, link)
    fitted = mu1 * (1.0 - omega * (1.0 - params.q))
    per = data.y - fitted
    total = np.bincount(data.month - 1, weights=per, minlength=data.t_max)
    if standardize:
        var = mixture_variance(params, data, link, variance)
        per = per / np.sqrt(var)
        total = total / np.sqrt(np.bincount(data.month - 1, weights=var, minlength=data.t_max))
    return Residuals(month=np.arange(1, data.t_max + 1), total=total, per_record=per, standardized=standardize)


def _check_series(series, max_lag):
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if max_lag < 1 or x.size <= max_lag:
        raise ValueError(f"need 1 <= max_lag < n; got max_lag={max_lag}, n={x.size}")
    if np.ptp(x) == 0.0:
        raise UndefinedACFError("series is constant; autocorrelation is undefined")
    return x


def acf(series, max_lag: int, include_zero: bool = False) -> np.ndarray:
    """Sample autocorrelation at lags 1..max_lag (0..max_lag with ``include_zero``)."""
    x = _check_series(series, max_lag)
    r = np.asarray(kernels.acf(x, int(max_lag)))
    return r if include_zero else r[1:]


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelation at lags 1..max_lag via Durbin-Levinson."""
    x = _check_series(series, max_lag)
    rho = np.asarray(kernels.acf(x, int(max_lag)))
    return np.asarray(kernels.durbin_levinson(rho))


def portmanteau(acf_values, n: int, dof_adjust: int = 0) -> Tuple[float, int, float]:
    """Ljung-Box Q over the supplied lags 1..L; returns (Q, dof, p-value)."""
    r = np.asarray(acf_values, dtype=float)
    L = r.size
    dof = L - int(dof_adjust)
    if dof <= 0:
        raise ValueError(f"Ljung-Box needs more lags ({L}) than fitted dof adjustments ({dof_adjust})")
    k = np.arange(1, L + 1)
    q = float(n * (n + 2) * np.sum(r * r / (n - k)))
    return q, dof, float(stats.chi2.sf(q, dof))


def band_halfwidth(n: int) -> float:
    return BAND_Z / np.sqrt(n)


def default_max_lag(n: int) -> int:
    return max(1, min(20, n // 4))


@dataclass
class DiagnosticsReport:
    residuals: np.ndarray
    acf: np.ndarray
    pacf: np.ndarray
    band: float
    portmanteau: Tuple[float, int, float]
    lags_outside_band: int
    metadata: dict = field(default_factory=dict)


def diagnose_series(series, max_lag: Optional[int] = None, dof_adjust: int = 0) -> DiagnosticsReport:
    x = np.asarray(series, dtype=float)
    L = default_max_lag(x.size) if max_lag is None else int(max_lag)
    r = acf(x, L)
    pr = pacf(x, L)
    band = band_halfwidth(x.size)
    return DiagnosticsReport(
        residuals=x, acf=r, pacf=pr, band=band,
        portmanteau=portmanteau(r, x.size, dof_adjust),
        lags_outside_band=int(np.sum(np.abs(r) > band)),
    )


def diagnose(data: ObservationSeries, params: ModelParams, max_lag: Optional[int] = None,
             link: str = "logit", variance: str = "scaled", standardize: bool = False,
             dof_adjust: int = 0) -> DiagnosticsReport:
    """White-noise checks on the stratum-summed residual series."""
    res = residuals(data, params, link, variance, standardize)
    report = diagnose_series(res.total, max_lag, dof_adjust)
    report.metadata = {
        "series": "stratum-summed total",
        "fitted_mean": "full linear predictor (trend and harmonic terms included)",
        "standardized": standardize,
        "n": int(res.total.size),
    }
    return report
