"""Generate registered series with known latent truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .model import (
    STRATA, Design, ModelParams, ObservationSeries, StratumKey, SeriesValidationError,
    mu1_vector, omega_vector,
)


@dataclass
class SimScenario:
    params: ModelParams
    t_max: int = 96
    strata: Sequence[StratumKey] = field(default_factory=lambda: list(STRATA))
    seed: int = 0
    replicate_count: int = 1
    link: str = "logit"

    def __post_init__(self):
        if self.t_max < 2:
            raise SeriesValidationError(f"t_max must be at least 2, got {self.t_max}")
        if not self.strata:
            raise SeriesValidationError("scenario needs at least one stratum")
        if self.replicate_count < 1:
            raise SeriesValidationError("replicate_count must be at least 1")


@dataclass
class SimResult:
    series: ObservationSeries
    latent: np.ndarray
    flags: np.ndarray
    truncated: int


def replicate_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """PCG64 stream keyed on (seed, replicate) so replicates are order independent."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(replicate)])))


def simulate(scenario: SimScenario, replicate: int = 0) -> SimResult:
    """One replicate: X ~ N(mu1, sigma^2) clipped at 0, flag ~ Bernoulli(omega), Y = q X if flagged."""
    rng = replicate_rng(scenario.seed, replicate)
    p = scenario.params
    T = scenario.t_max
    months = np.arange(1, T + 1)
    strata = sorted(scenario.strata)
    sex = np.concatenate([np.full(T, k.sex) for k in strata])
    age = np.concatenate([np.full(T, k.age_band) for k in strata])
    month = np.tile(months, len(strata))
    design = Design(month, age, sex, T)
    mu1 = mu1_vector(p, design)
    omega = omega_vector(p, design, scenario.link)

    x = mu1 + p.sigma * rng.standard_normal(mu1.shape[0])
    flags = rng.random(mu1.shape[0]) < omega
    negative = x < 0.0
    x[negative] = 0.0
    y = np.where(flags, p.q * x, x)
    series = ObservationSeries(month=month, sex=sex, age_band=age, y=y, t_max=T)
    return SimResult(series=series, latent=x, flags=flags, truncated=int(negative.sum()))


def simulate_replicates(scenario: SimScenario) -> List[SimResult]:
    return [simulate(scenario, r) for r in range(scenario.replicate_count)]
