"""Observation model: a registered series that is, at each time point, either
the true incidence or a shrunken copy of it.

    Y = X        with probability 1 - omega(t)
    Y = q * X    with probability omega(t)

with X ~ N(mu1(t), sigma^2), mu1 a linear predictor in normalized time, age
band, sex, their interaction and a period-3 harmonic, and omega(t) a logistic
curve in normalized time.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import kernels

PARAM_NAMES = (
    "alpha0", "alpha1",
    "beta0", "beta1", "beta2", "beta3", "beta4", "beta5", "beta6",
    "q", "sigma",
)
BETA_NAMES = PARAM_NAMES[2:9]
LINKS = ("logit", "clamped-log")
VARIANCE_MODES = ("scaled", "shared")

# keeps the clamped log link strictly inside (0, 1)
_OMEGA_EPS = 1e-12


class InvalidParameterError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class SeriesValidationError(ValueError):
    pass


class LikelihoodUnderflowWarning(RuntimeWarning):
    pass


def _check_link(link):
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}; expected one of {LINKS}")


def _check_variance(variance):
    if variance not in VARIANCE_MODES:
        raise ValueError(f"unknown variance mode {variance!r}; expected one of {VARIANCE_MODES}")


@dataclass(frozen=True, order=True)
class StratumKey:
    """Sex (0 female, 1 male) and age band (0 for 15-29, 1 for 30-94)."""

    sex: int
    age_band: int

    def __post_init__(self):
        if self.sex not in (0, 1) or self.age_band not in (0, 1):
            raise SeriesValidationError(f"stratum indicators must be 0/1, got {self}")

    @property
    def sex_label(self) -> str:
        return "M" if self.sex else "F"

    @property
    def age_label(self) -> str:
        return "30-94" if self.age_band else "15-29"

    @property
    def label(self) -> str:
        return f"{self.sex_label} {self.age_label}"


STRATA = tuple(StratumKey(s, a) for s in (0, 1) for a in (0, 1))


@dataclass(frozen=True)
class ModelParams:
    alpha0: float
    alpha1: float
    beta0: float
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0
    beta5: float = 0.0
    beta6: float = 0.0
    q: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise InvalidParameterError(f"{f.name} must be finite, got {v}")
        if not 0.0 < self.q <= 1.0:
            raise InvalidParameterError(f"q must lie in (0, 1], got {self.q}")
        if not self.sigma > 0.0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")

    @property
    def beta(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in BETA_NAMES])

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(PARAM_NAMES),):
            raise InvalidParameterError(f"expected {len(PARAM_NAMES)} values, got shape {vec.shape}")
        return cls(**{n: float(v) for n, v in zip(PARAM_NAMES, vec)})

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise InvalidParameterError(f"unknown parameter names: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def with_values(self, **changes) -> "ModelParams":
        return replace(self, **changes)


# Point estimates reported for the genital warts series. sigma was not
# reported; 2.0 is the scenario default.
TABLE2_PARAMS = ModelParams(
    alpha0=2.99, alpha1=-4.31,
    beta0=13.76, beta1=0.36, beta2=-13.53, beta3=-1.60, beta4=3.25,
    beta5=4.16, beta6=0.52,
    q=0.75, sigma=2.0,
)


@dataclass
class ObservationSeries:
    """Stratified monthly incidence rates (per 100,000 person-months).

    Records are stored sorted by stratum, then month. Every stratum covers
    months 1..t_max without gaps.
    """

    month: np.ndarray
    sex: np.ndarray
    age_band: np.ndarray
    y: np.ndarray
    t_max: int
    population: Optional[np.ndarray] = None

    def __post_init__(self):
        self.month = np.asarray(self.month, dtype=np.int64)
        self.sex = np.asarray(self.sex, dtype=np.int64)
        self.age_band = np.asarray(self.age_band, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        if self.population is not None:
            self.population = np.asarray(self.population, dtype=float)
        self.t_max = int(self.t_max)
        self._validate()

    @classmethod
    def from_records(cls, records: Iterable[Sequence], t_max: Optional[int] = None) -> "ObservationSeries":
        """Build from ``(month, StratumKey, y)`` or ``(month, StratumKey, y, population)`` tuples."""
        rows = sorted(records, key=lambda r: (r[1].sex, r[1].age_band, r[0]))
        if not rows:
            raise EmptyInputError("no records")
        has_pop = all(len(r) > 3 and r[3] is not None for r in rows)
        month = [r[0] for r in rows]
        if t_max is None:
            t_max = max(month)
        return cls(
            month=month,
            sex=[r[1].sex for r in rows],
            age_band=[r[1].age_band for r in rows],
            y=[r[2] for r in rows],
            t_max=t_max,
            population=[r[3] for r in rows] if has_pop else None,
        )

    def _validate(self):
        n = self.y.shape[0]
        if n == 0 or self.t_max < 1:
            raise EmptyInputError("series is empty")
        for arr, name in ((self.month, "month"), (self.sex, "sex"), (self.age_band, "age_band")):
            if arr.shape != (n,):
                raise SeriesValidationError(f"{name} has shape {arr.shape}, expected ({n},)")
        if self.population is not None:
            if self.population.shape != (n,):
                raise SeriesValidationError("population length does not match records")
            if not np.all(self.population > 0):
                raise SeriesValidationError("population values must be positive")
        if not np.all(np.isfinite(self.y)):
            raise SeriesValidationError("incidence values must be finite")
        if np.any(self.y < 0):
            raise SeriesValidationError("incidence values must be non-negative")
        if not (np.isin(self.sex, (0, 1)).all() and np.isin(self.age_band, (0, 1)).all()):
            raise SeriesValidationError("sex and age_band must be 0/1 indicators")
        expected = np.arange(1, self.t_max + 1)
        for key in self.strata:
            m = self.month[self.stratum_mask(key)]
            if m.shape != expected.shape or not np.array_equal(m, expected):
                missing = sorted(set(expected.tolist()) - set(m.tolist()))
                raise SeriesValidationError(
                    f"stratum {key.label}: months must run 1..{self.t_max} without gaps"
                    + (f"; missing month {missing[0]}" if missing else "")
                )

    def __len__(self):
        return self.y.shape[0]

    @property
    def strata(self) -> list:
        keys = {(int(s), int(a)) for s, a in zip(self.sex, self.age_band)}
        return [StratumKey(s, a) for s, a in sorted(keys)]

    def stratum_mask(self, key: StratumKey) -> np.ndarray:
        return (self.sex == key.sex) & (self.age_band == key.age_band)

    def subset(self, mask) -> "ObservationSeries":
        return ObservationSeries(
            month=self.month[mask], sex=self.sex[mask], age_band=self.age_band[mask],
            y=self.y[mask], t_max=self.t_max,
            population=None if self.population is None else self.population[mask],
        )

    def with_y(self, y) -> "ObservationSeries":
        return ObservationSeries(
            month=self.month, sex=self.sex, age_band=self.age_band, y=np.asarray(y, float),
            t_max=self.t_max, population=self.population,
        )

    def replicated(self, times: int) -> "ObservationSeries":
        """Stack ``times`` copies of the records (used for information checks)."""
        rep = lambda a: None if a is None else np.tile(a, times)
        obj = object.__new__(ObservationSeries)
        obj.month, obj.sex, obj.age_band = rep(self.month), rep(self.sex), rep(self.age_band)
        obj.y, obj.population, obj.t_max = rep(self.y), rep(self.population), self.t_max
        return obj

    def total_by_month(self) -> np.ndarray:
        """Sum of the strata at each month, indexed by month - 1."""
        return np.bincount(self.month - 1, weights=self.y, minlength=self.t_max)


@dataclass(frozen=True)
class DesignRow:
    tau: float
    m: int
    a: int
    s: int
    axs: int
    sin3: float
    cos3: float

    def covariates(self) -> np.ndarray:
        return np.array([1.0, self.tau, self.a, self.s, self.axs, self.sin3, self.cos3])


def normalized_time(month, t_max):
    month = np.asarray(month, dtype=float)
    if t_max <= 1:
        return np.zeros_like(month)
    return (month - 1.0) / (t_max - 1.0)


class Design:
    """Column-wise design for a series; iterating yields :class:`DesignRow`."""

    def __init__(self, month, age_band, sex, t_max):
        self.m = np.asarray(month, dtype=np.int64)
        self.a = np.asarray(age_band, dtype=np.int64)
        self.s = np.asarray(sex, dtype=np.int64)
        self.t_max = int(t_max)
        self.tau = normalized_time(self.m, self.t_max)
        angle = 2.0 * np.pi * self.m / 3.0
        self.X = np.column_stack([
            np.ones_like(self.tau), self.tau, self.a, self.s, self.a * self.s,
            np.sin(angle), np.cos(angle),
        ]).astype(float)

    def __len__(self):
        return self.m.shape[0]

    def __getitem__(self, i) -> DesignRow:
        x = self.X[i]
        return DesignRow(
            tau=float(self.tau[i]), m=int(self.m[i]), a=int(self.a[i]), s=int(self.s[i]),
            axs=int(self.a[i] * self.s[i]), sin3=float(x[5]), cos3=float(x[6]),
        )

    def __iter__(self) -> Iterator[DesignRow]:
        for i in range(len(self)):
            yield self[i]


def build_design(data: ObservationSeries) -> Design:
    if data.t_max < 1 or len(data) == 0:
        raise EmptyInputError("cannot build a design for an empty series")
    return Design(data.month, data.age_band, data.sex, data.t_max)


def design_row(m: int, a: int, s: int, t_max: int) -> DesignRow:
    return Design([m], [a], [s], t_max)[0]


# -- link and mean structure ------------------------------------------------

def omega_at(alpha0, alpha1, tau, link: str = "logit"):
    """Under-reporting frequency at normalized time ``tau``.

    Scalars in, float out; arrays broadcast.
    """
    _check_link(link)
    eta = np.asarray(alpha0 + alpha1 * np.asarray(tau, dtype=float), dtype=float)
    if not np.all(np.isfinite(eta)):
        raise InvalidParameterError("omega link received non-finite input")
    if link == "logit":
        out = 0.5 * (1.0 + np.tanh(0.5 * eta))
        # tanh saturates to exactly 0/1 far out; keep the open interval
        out = np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    else:
        out = np.clip(np.exp(np.minimum(eta, 0.0)), _OMEGA_EPS, 1.0 - _OMEGA_EPS)
    return float(out) if out.ndim == 0 else out


def mean_mu1(params: ModelParams, row: DesignRow) -> float:
    return float(row.covariates() @ params.beta)


def mu1_vector(params: ModelParams, design: Design) -> np.ndarray:
    return design.X @ params.beta


def omega_vector(params: ModelParams, design: Design, link: str = "logit") -> np.ndarray:
    return np.atleast_1d(omega_at(params.alpha0, params.alpha1, design.tau, link))


@dataclass(frozen=True)
class MixtureEval:
    mu1: float
    mu2: float
    omega: float
    density: float


def normal_pdf(y, mean, sd):
    z = (y - mean) / sd
    return math.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))


def mixture_density(y: float, params: ModelParams, row: DesignRow,
                    link: str = "logit", variance: str = "scaled") -> MixtureEval:
    _check_variance(variance)
    if params.q <= 0.0:
        raise InvalidParameterError("q = 0 gives a degenerate second component")
    mu1 = mean_mu1(params, row)
    mu2 = params.q * mu1
    omega = omega_at(params.alpha0, params.alpha1, row.tau, link)
    sd2 = params.q * params.sigma if variance == "scaled" else params.sigma
    dens = (1.0 - omega) * normal_pdf(y, mu1, params.sigma) + omega * normal_pdf(y, mu2, sd2)
    return MixtureEval(mu1=mu1, mu2=mu2, omega=omega, density=dens)


def log_density_vector(params: ModelParams, data: ObservationSeries, design: Optional[Design] = None,
                       link: str = "logit", variance: str = "scaled") -> np.ndarray:
    """Per-record log mixture density, evaluated in log space."""
    _check_variance(variance)
    design = build_design(data) if design is None else design
    return kernels.mixture_logpdf(
        data.y, mu1_vector(params, design), omega_vector(params, design, link),
        params.q, params.sigma, variance == "scaled",
    )


def log_likelihood(params: ModelParams, data: ObservationSeries, design: Optional[Design] = None,
                   link: str = "logit", variance: str = "scaled") -> float:
    """Total log-likelihood. Returns ``-inf`` (with a warning) if any record has zero density."""
    if len(data) == 0:
        raise EmptyInputError("log-likelihood of an empty series")
    _check_variance(variance)
    design = build_design(data) if design is None else design
    ll = float(kernels.mixture_loglik(
        data.y, mu1_vector(params, design), omega_vector(params, design, link),
        params.q, params.sigma, variance == "scaled",
    ))
    if not math.isfinite(ll):
        warnings.warn("a record has zero mixture density; log-likelihood is -inf",
                      LikelihoodUnderflowWarning, stacklevel=2)
        return -math.inf
    return ll
