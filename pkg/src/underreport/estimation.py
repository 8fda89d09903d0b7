"""Maximum-likelihood fitting of the under-reporting mixture."""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .model import (
    BETA_NAMES, PARAM_NAMES, Design, ModelParams, ObservationSeries, InvalidParameterError,
    build_design, log_likelihood, _check_link, _check_variance,
)
from .optimize import bfgs, fd_gradient, fd_hessian

Z95 = 1.959963984540054

# model variants: beta coefficients held at zero
VARIANTS: Dict[str, Tuple[str, ...]] = {
    "full": (),
    "no-trend": ("beta1",),
    "one-harmonic": ("beta6",),
    "no-seasonality": ("beta5", "beta6"),
}

_Q_IDX = PARAM_NAMES.index("q")
_Q_GRID = (0.5, 0.7, 0.9)
# component sds below this fraction of sd(y) count as collapsed
SD_FLOOR_FRACTION = 1e-3
_SIGMA_IDX = PARAM_NAMES.index("sigma")


class DegenerateDataError(ValueError):
    pass


class DegenerateFitError(RuntimeError):
    pass


class InvalidInitError(ValueError):
    pass


class DataMismatchError(ValueError):
    pass


class EMMonotonicityError(AssertionError):
    pass


# -- initial values ---------------------------------------------------------

@dataclass
class InitSummary:
    mix_means: Tuple[float, float]
    mix_sds: Tuple[float, float]
    mix_weight: float
    derived_q0: float
    derived_omega0: float
    q0_clipped: bool = False
    converged: bool = True
    iterations: int = 0
    loglik_trace: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def to_dict(self) -> dict:
        return {
            "mix_means": list(self.mix_means), "mix_sds": list(self.mix_sds),
            "mix_weight": self.mix_weight, "derived_q0": self.derived_q0,
            "derived_omega0": self.derived_omega0, "q0_clipped": self.q0_clipped,
            "converged": self.converged, "iterations": self.iterations,
        }


def derive_q0(m1: float, m2: float) -> Tuple[float, bool]:
    """q0 = m2 / m1 clipped to [0.01, 1]; the flag marks a clipped or boundary value."""
    if m1 == 0.0 or not math.isfinite(m2 / m1):
        raise InvalidInitError(f"cannot derive q from component means {m1}, {m2}")
    raw = m2 / m1
    q0 = min(max(raw, 0.01), 1.0)
    return q0, q0 != raw or q0 == 1.0


def em_two_component(ys, tol: float = 1e-8, max_iter: int = 1000) -> InitSummary:
    """Two-component univariate normal mixture by EM.

    Component 1 is the one with the larger mean; ``mix_weight`` is the weight
    of component 2, which seeds the under-reporting frequency.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim != 1 or ys.size < 2:
        raise DegenerateDataError("EM needs at least two observations")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    spread = float(ys.std())
    if spread <= 1e-12 * max(1.0, float(np.abs(ys).max())):
        raise DegenerateDataError("all observations are equal; a two-component mixture is undefined")
    srt = np.sort(ys)
    half = ys.size // 2
    m1, m2 = float(srt[half:].mean()), float(srt[:half].mean())
    sd_floor = 1e-6 * spread
    m1, m2, s1, s2, w2, trace = kernels.em_two(
        ys, m1, m2, spread, spread, 0.5, float(tol), int(max_iter), sd_floor)
    diffs = np.diff(trace)
    if np.any(diffs < -1e-9 * np.maximum(1.0, np.abs(trace[:-1]))):
        raise EMMonotonicityError(f"EM log-likelihood decreased: min step {diffs.min()}")
    converged = trace.size >= 2 and abs(trace[-1] - trace[-2]) < tol
    if m2 > m1:
        m1, m2, s1, s2, w2 = m2, m1, s2, s1, 1.0 - w2
    q0, clipped = derive_q0(m1, m2)
    return InitSummary(
        mix_means=(float(m1), float(m2)), mix_sds=(float(s1), float(s2)),
        mix_weight=float(w2), derived_q0=q0, derived_omega0=float(w2), q0_clipped=clipped,
        converged=bool(converged), iterations=int(trace.size - 1), loglik_trace=trace,
    )


def _logit(p):
    return math.log(p / (1.0 - p))


def initial_params(init: InitSummary, data: Optional[ObservationSeries] = None) -> ModelParams:
    q0 = init.derived_q0
    if not 0.0 < q0 <= 1.0:
        raise InvalidInitError(f"derived q0 {q0} outside (0, 1]")
    w = min(max(init.mix_weight, 1e-6), 1.0 - 1e-6)
    return ModelParams(
        alpha0=_logit(w), alpha1=0.0, beta0=init.mix_means[0],
        q=q0, sigma=max(init.mix_sds[0], 1e-8),
    )


# -- transformed parameter space --------------------------------------------

def to_transformed(params: ModelParams) -> np.ndarray:
    v = params.to_vector()
    if params.q >= 1.0:
        raise InvalidParameterError("q = 1 has no finite logit; hold q fixed instead")
    v[_Q_IDX] = _logit(params.q)
    v[_SIGMA_IDX] = math.log(params.sigma)
    return v


def from_transformed(theta) -> ModelParams:
    v = np.array(theta, dtype=float)
    v[_Q_IDX] = 1.0 / (1.0 + math.exp(-v[_Q_IDX]))
    v[_SIGMA_IDX] = math.exp(v[_SIGMA_IDX])
    return ModelParams.from_vector(v)


class _Problem:
    """Negative log-likelihood over the free coordinates of the transformed vector."""

    def __init__(self, data, design, base: ModelParams, free: Sequence[str], link, variance,
                 sd_floor: float = 0.0):
        self.y = data.y
        self.sd_floor = sd_floor
        self.design = design
        self.base = base.to_vector()
        self.free_idx = np.array([PARAM_NAMES.index(n) for n in free], dtype=int)
        self.free = tuple(free)
        self.link = link
        self.scaled = variance == "scaled"

    def natural(self, x) -> np.ndarray:
        v = self.base.copy()
        for j, i in enumerate(self.free_idx):
            if i == _Q_IDX:
                v[i] = 1.0 / (1.0 + math.exp(-x[j])) if x[j] > -700 else 0.0
            elif i == _SIGMA_IDX:
                v[i] = math.exp(min(x[j], 700.0))
            else:
                v[i] = x[j]
        return v

    def transformed(self, params: ModelParams) -> np.ndarray:
        v = params.to_vector()
        x = v[self.free_idx].copy()
        for j, i in enumerate(self.free_idx):
            if i == _Q_IDX:
                q = min(v[i], 1.0 - 1e-6)
                x[j] = _logit(q)
            elif i == _SIGMA_IDX:
                x[j] = math.log(v[i])
        return x

    def params(self, x) -> ModelParams:
        return ModelParams.from_vector(self.natural(x))

    def __call__(self, x) -> float:
        v = self.natural(x)
        q, sigma = v[_Q_IDX], v[_SIGMA_IDX]
        if not (q > 0.0 and sigma > self.sd_floor):
            return math.inf
        if self.scaled and q * sigma <= self.sd_floor:
            return math.inf
        eta = v[0] + v[1] * self.design.tau
        if self.link == "logit":
            omega = 0.5 * (1.0 + np.tanh(0.5 * eta))
            omega = np.clip(omega, 5e-324, 1.0 - 1.1102230246251565e-16)
        else:
            omega = np.clip(np.exp(np.minimum(eta, 0.0)), 1e-12, 1.0 - 1e-12)
        mu1 = self.design.X @ v[2:9]
        ll = kernels.mixture_loglik(self.y, mu1, omega, q, sigma, self.scaled)
        return -ll if math.isfinite(ll) else math.inf


# -- standard errors --------------------------------------------------------

@dataclass
class StandardErrors:
    names: Tuple[str, ...]
    transformed: np.ndarray
    natural: np.ndarray
    available: np.ndarray
    hessian: np.ndarray = field(repr=False)

    def as_dict(self, scale: str = "natural") -> Dict[str, Optional[float]]:
        vals = self.natural if scale == "natural" else self.transformed
        return {n: (float(v) if ok else None) for n, v, ok in zip(self.names, vals, self.available)}


def _delta_factor(name, value):
    if name == "q":
        return value * (1.0 - value)
    if name == "sigma":
        return value
    return 1.0


def _covariance_from_hessian(H):
    n = H.shape[0]
    try:
        np.linalg.cholesky(H)
        return np.linalg.inv(H), np.ones(n, dtype=bool)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(H)
    tol = 1e-10 * max(1.0, np.abs(w).max())
    bad_dirs = V[:, w <= tol]
    ok = np.all(np.abs(bad_dirs) < 0.1, axis=1) if bad_dirs.size else np.ones(n, dtype=bool)
    cov = np.full((n, n), np.nan)
    if ok.any():
        sub = H[np.ix_(ok, ok)]
        try:
            np.linalg.cholesky(sub)
            cov[np.ix_(ok, ok)] = np.linalg.inv(sub)
        except np.linalg.LinAlgError:
            ok[:] = False
    return cov, ok


def standard_errors(params: ModelParams, data: ObservationSeries, step: float = 1e-4,
                    free: Optional[Sequence[str]] = None, link: str = "logit",
                    variance: str = "scaled", design: Optional[Design] = None) -> StandardErrors:
    """Square roots of the inverse numeric Hessian diagonal, transformed scale.

    Parameters whose curvature is not positive definite come back flagged as
    unavailable instead of raising.
    """
    free = tuple(PARAM_NAMES) if free is None else tuple(free)
    design = build_design(data) if design is None else design
    prob = _Problem(data, design, params, free, link, variance)
    x = prob.transformed(params)
    H = fd_hessian(prob, x, rel_step=step)
    cov, ok = _covariance_from_hessian(H)
    diag = np.diag(cov).copy()
    ok &= np.isfinite(diag) & (diag > 0)
    se_t = np.where(ok, np.sqrt(np.where(ok, diag, 1.0)), np.nan)
    nat = params.to_vector()
    se_n = np.array([se_t[j] * abs(_delta_factor(n, nat[PARAM_NAMES.index(n)])) for j, n in enumerate(free)])
    return StandardErrors(names=free, transformed=se_t, natural=se_n, available=ok, hessian=H)


# -- fitting ----------------------------------------------------------------

@dataclass
class FitOptions:
    max_iterations: int = 500
    gradient_step: float = 1e-5
    convergence_tol: float = 1e-5
    loglik_rel_tol: float = 1e-8
    link: str = "logit"
    variance_mode: str = "scaled"
    seed: int = 0
    restarts: int = 3
    jitter: float = 0.25
    variant: str = "full"
    hessian_step: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.gradient_step <= 0 or self.convergence_tol <= 0 or self.loglik_rel_tol <= 0:
            raise ValueError("steps and tolerances must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        _check_link(self.link)
        _check_variance(self.variance_mode)


@dataclass
class FitResult:
    params: ModelParams
    se: Dict[str, Optional[float]]
    se_transformed: Dict[str, Optional[float]]
    ci95: Dict[str, Optional[Tuple[float, float]]]
    loglik: float
    n_params: int
    converged: bool
    iterations: int
    init_used: InitSummary
    init_loglik: float
    variant: str
    free: Tuple[str, ...]
    n_obs: int
    data_key: str
    link: str = "logit"
    variance_mode: str = "scaled"
    message: str = ""
    start_logliks: List[float] = field(default_factory=list)

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    def to_dict(self) -> dict:
        theta = {}
        for n in self.free:
            v = getattr(self.params, n)
            theta[n] = _logit(v) if n == "q" and v < 1.0 else (math.log(v) if n == "sigma" else v)
        return {
            "variant": self.variant,
            "link": self.link,
            "variance_mode": self.variance_mode,
            "params": self.params.to_dict(),
            "transformed_params": theta,
            "transform": {"q": "logit", "sigma": "log", "other": "identity"},
            "se": self.se,
            "se_transformed": self.se_transformed,
            "ci95": {k: (list(v) if v is not None else None) for k, v in self.ci95.items()},
            "loglik": self.loglik,
            "aic": self.aic,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "message": self.message,
            "free": list(self.free),
            "init_used": self.init_used.to_dict(),
            "init_loglik": self.init_loglik,
            "start_logliks": self.start_logliks,
            "data_key": self.data_key,
        }


def data_key(data: ObservationSeries) -> str:
    h = hashlib.sha256()
    for arr in (data.month, data.sex, data.age_band, data.y):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def free_parameters(variant: str = "full") -> Tuple[str, ...]:
    dropped = VARIANTS[variant]
    return tuple(n for n in PARAM_NAMES if n not in dropped)


def _regression_starts(data, design, free_beta) -> List[ModelParams]:
    """Starts that account for the covariates: OLS for the mean, then q from
    EM on y / fitted plus a coarse grid of q values."""
    cols = [BETA_NAMES.index(n) for n in free_beta]
    X = design.X[:, cols]
    coef, *_ = np.linalg.lstsq(X, data.y, rcond=None)
    fitted = X @ coef
    resid_sd = float(np.sqrt(np.mean((data.y - fitted) ** 2)))
    keep = fitted > max(3.0 * resid_sd, 1e-8)
    candidates = []
    if keep.sum() >= 8:
        try:
            r = em_two_component(data.y[keep] / fitted[keep])
            candidates.append((min(max(r.derived_q0, 0.3), 0.99), min(max(r.mix_weight, 0.05), 0.95)))
        except (DegenerateDataError, InvalidInitError):
            pass
    candidates += [(q, 0.5) for q in _Q_GRID]
    out = []
    for q0, w0 in candidates:
        beta = np.zeros(7)
        beta[cols] = coef / (1.0 - w0 * (1.0 - q0))
        try:
            out.append(ModelParams(
                alpha0=_logit(w0), alpha1=0.0, **{n: float(b) for n, b in zip(BETA_NAMES, beta)},
                q=q0, sigma=max(resid_sd, 1e-6),
            ))
        except InvalidParameterError:
            pass
    return out


def _is_degenerate(params: ModelParams, sd_floor: float, variance: str) -> bool:
    sd2 = params.q * params.sigma if variance == "scaled" else params.sigma
    return min(params.sigma, sd2) < 1.05 * sd_floor


def fit(data: ObservationSeries, options: Optional[FitOptions] = None,
        start: Optional[ModelParams] = None) -> FitResult:
    """Maximize the likelihood from mixture-based and regression-based starts
    plus jittered restarts; the best non-degenerate optimum wins."""
    options = FitOptions() if options is None else options
    if len(data) < 10:
        raise DegenerateDataError("fit needs at least 10 records")
    if data.t_max < 2:
        raise DegenerateDataError("fit needs at least 2 months")
    design = build_design(data)
    free = free_parameters(options.variant)
    free_beta = [n for n in BETA_NAMES if n in free]
    link, variance = options.link, options.variance_mode

    init = em_two_component(data.y)
    init_params = initial_params(init, data)
    init_loglik = log_likelihood(init_params, data, design, link, variance)
    sd_floor = SD_FLOOR_FRACTION * (float(np.std(data.y)) or 1.0)
    prob = _Problem(data, design, init_params, free, link, variance, sd_floor)

    starts = []
    if start is not None:
        starts.append(prob.transformed(start))
    else:
        starts.append(prob.transformed(init_params))
        starts += [prob.transformed(p) for p in _regression_starts(data, design, free_beta)]
    start_vals = [prob(s) for s in starts]
    anchor = starts[int(np.argmin(start_vals))]
    # jitter ~10% of each coordinate's magnitude on the transformed scale
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(options.seed), 0x5EED])))
    for _ in range(options.restarts):
        starts.append(anchor + options.jitter * 0.4 * rng.standard_normal(anchor.size) * np.maximum(1.0, np.abs(anchor)))

    best = None
    logliks = []
    for x0 in starts:
        res = bfgs(prob, x0, gtol=options.convergence_tol, ftol=options.loglik_rel_tol,
                   max_iter=options.max_iterations, rel_step=options.gradient_step)
        if not math.isfinite(res.fun):
            logliks.append(None)
            continue
        p = prob.params(res.x)
        if _is_degenerate(p, sd_floor, variance):
            logliks.append(None)
            continue
        logliks.append(-res.fun)
        # strict improvement only, so ties keep the earlier start
        if best is None or res.fun < best.fun - 1e-9:
            best = res
    if best is None:
        raise DegenerateFitError("every start collapsed to a zero-variance component")

    params = prob.params(best.x)
    loglik = log_likelihood(params, data, design, link, variance)
    ses = standard_errors(params, data, options.hessian_step, free, link, variance, design)
    se, se_t, ci = {}, {}, {}
    theta = prob.transformed(params) if params.q < 1.0 else None
    for j, n in enumerate(free):
        if not ses.available[j] or theta is None:
            se[n] = se_t[n] = ci[n] = None
            continue
        s = float(ses.transformed[j])
        se_t[n] = s
        se[n] = float(ses.natural[j])
        ci[n] = _back_transform_interval(n, theta[j] - Z95 * s, theta[j] + Z95 * s)
    if not best.converged:
        warnings.warn(f"optimizer did not converge: {best.message}", RuntimeWarning, stacklevel=2)
    return FitResult(
        params=params, se=se, se_transformed=se_t, ci95=ci, loglik=loglik, n_params=len(free),
        converged=best.converged, iterations=best.iterations, init_used=init,
        init_loglik=init_loglik, variant=options.variant, free=free, n_obs=len(data),
        data_key=data_key(data), link=link, variance_mode=variance, message=best.message,
        start_logliks=logliks,
    )


def _back_transform_interval(name, lo, hi):
    if name == "q":
        f = lambda t: 1.0 / (1.0 + math.exp(-t))
    elif name == "sigma":
        f = math.exp
    else:
        return (float(lo), float(hi))
    return (f(lo), f(hi))


def gradient_at(result: FitResult, data: ObservationSeries, step: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of the log-likelihood on the transformed free scale."""
    design = build_design(data)
    prob = _Problem(data, design, result.params, result.free, result.link, result.variance_mode)
    return -fd_gradient(prob, prob.transformed(result.params), step)


# -- model comparison -------------------------------------------------------

@dataclass
class ComparisonRow:
    rank: int
    variant: str
    loglik: float
    n_params: int
    aic: float


def compare_models(fits: Sequence[FitResult]) -> List[ComparisonRow]:
    """Rank fits on the same data by AIC (lower first); ties keep input order."""
    if not fits:
        return []
    keys = {f.data_key for f in fits}
    if len(keys) > 1:
        raise DataMismatchError("fits were computed on different datasets")
    order = sorted(range(len(fits)), key=lambda i: (fits[i].aic, i))
    return [
        ComparisonRow(rank=r + 1, variant=fits[i].variant, loglik=fits[i].loglik,
                      n_params=fits[i].n_params, aic=fits[i].aic)
        for r, i in enumerate(order)
    ]
