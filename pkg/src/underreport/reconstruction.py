"""Posterior under-reporting probabilities, latent series reconstruction and
the incidence / projection / cost reports built on top of it."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from . import kernels
from .model import (
    STRATA, DesignRow, ModelParams, ObservationSeries, StratumKey, build_design,
    mean_mu1, mu1_vector, omega_at, omega_vector, _check_variance,
)

DEFAULT_COVERAGE = 0.74


class PosteriorUnderflowWarning(RuntimeWarning):
    pass


class InvalidCoverageError(ValueError):
    pass


def posterior_underreport(y: float, params: ModelParams, row: DesignRow,
                          link: str = "logit", variance: str = "scaled") -> float:
    """Probability that ``y`` came from the shrunken component."""
    _check_variance(variance)
    mu1 = np.array([mean_mu1(params, row)])
    omega = np.array([omega_at(params.alpha0, params.alpha1, row.tau, link)])
    p, bad = kernels.posterior(np.array([float(y)]), mu1, omega, params.q, params.sigma,
                               variance == "scaled")
    if bad[0]:
        warnings.warn("both component densities underflowed; posterior set to 0.5",
                      PosteriorUnderflowWarning, stacklevel=2)
    return float(p[0])


@dataclass
class ReconstructionResult:
    posterior_p: np.ndarray
    latent_x: np.ndarray
    flagged: np.ndarray
    underflow: np.ndarray
    rule: str = "map"


def reconstruct(data: ObservationSeries, params: ModelParams, link: str = "logit",
                variance: str = "scaled", rule: str = "map") -> ReconstructionResult:
    """Most likely latent series.

    ``rule="map"`` assigns each record to its more probable component and
    divides by q when the shrunken one wins. ``rule="expected"`` blends
    ``y`` and ``y/q`` by the posterior instead.
    """
    _check_variance(variance)
    if rule not in ("map", "expected"):
        raise ValueError(f"unknown reconstruction rule {rule!r}")
    design = build_design(data)
    p, bad = kernels.posterior(data.y, mu1_vector(params, design), omega_vector(params, design, link),
                               params.q, params.sigma, variance == "scaled")
    p = np.asarray(p)
    bad = np.asarray(bad)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} records underflowed; posterior set to 0.5",
                      PosteriorUnderflowWarning, stacklevel=2)
    flagged = p > 0.5
    if params.q == 1.0:
        latent = data.y.copy()
    elif rule == "map":
        latent = np.where(flagged, data.y / params.q, data.y)
    else:
        latent = (1.0 - p) * data.y + p * data.y / params.q
    return ReconstructionResult(posterior_p=p, latent_x=latent, flagged=flagged, underflow=bad, rule=rule)


# -- incidence summary ------------------------------------------------------

def pct_diff(registered: float, estimated: float) -> float:
    return 100.0 * (estimated - registered) / registered


@dataclass
class SummaryRow:
    group: str
    registered_mean: float
    estimated_mean: float
    pct_diff: float


@dataclass
class IncidenceSummary:
    rows: List[SummaryRow]
    weights: Dict[str, float]
    warnings: List[str]

    def row(self, group: str) -> SummaryRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(group)


def _stratum_weights(data, weights):
    notes = []
    if weights is not None:
        return {k: float(weights[k]) for k in weights}, notes
    if data.population is not None:
        return {k: float(data.population[data.stratum_mask(k)].mean()) for k in data.strata}, notes
    notes.append("no stratum populations given; averages use equal weights")
    return {k: 1.0 for k in data.strata}, notes


def summarize_incidence(data: ObservationSeries, recon: ReconstructionResult,
                        weights: Optional[Mapping[StratumKey, float]] = None) -> IncidenceSummary:
    """Monthly average registered vs reconstructed rates per stratum, per sex
    (population-weighted over age bands) and globally."""
    if recon.latent_x.shape != data.y.shape:
        raise ValueError("reconstruction is not aligned with the series")
    w, notes = _stratum_weights(data, weights)
    rows = []
    means = {}
    for key in STRATA:
        mask = data.stratum_mask(key)
        if not mask.any():
            if key in w:
                notes.append(f"stratum {key.label} has no records; omitted")
            continue
        reg = float(data.y[mask].mean())
        est = float(recon.latent_x[mask].mean())
        means[key] = (reg, est)
        rows.append(SummaryRow(key.label, reg, est, pct_diff(reg, est) if reg else math.nan))

    def pooled(label, keys):
        keys = [k for k in keys if k in means]
        if not keys:
            return
        tot = sum(w[k] for k in keys)
        reg = sum(w[k] * means[k][0] for k in keys) / tot
        est = sum(w[k] * means[k][1] for k in keys) / tot
        rows.append(SummaryRow(label, reg, est, pct_diff(reg, est) if reg else math.nan))

    pooled("F average", [k for k in STRATA if k.sex == 0])
    pooled("M average", [k for k in STRATA if k.sex == 1])
    pooled("Global", list(STRATA))
    for n in notes:
        warnings.warn(n, RuntimeWarning, stacklevel=2)
    return IncidenceSummary(rows=rows, weights={k.label: v for k, v in w.items()}, warnings=notes)


def stratum_counts(data: ObservationSeries, recon: ReconstructionResult) -> Dict[StratumKey, Tuple[float, float]]:
    """Registered and reconstructed case counts per stratum (needs populations)."""
    if data.population is None:
        raise ValueError("case counts need the population column")
    out = {}
    for key in data.strata:
        mask = data.stratum_mask(key)
        pm = data.population[mask] / 100000.0
        out[key] = (float((data.y[mask] * pm).sum()), float((recon.latent_x[mask] * pm).sum()))
    return out


# -- projection and cost ----------------------------------------------------

def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class ProjectionRow:
    group: str
    registered_count: float
    estimated_count: float
    coverage: Optional[float]
    projected_registered: int
    projected_estimated: int


@dataclass
class ProjectionReport:
    rows: List[ProjectionRow]

    def row(self, group: str) -> ProjectionRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(group)

    @property
    def total(self) -> ProjectionRow:
        return self.row("Global")


def project_population(counts: Mapping[StratumKey, Tuple[float, float]],
                       coverage: Union[float, Mapping[StratumKey, float]] = DEFAULT_COVERAGE) -> ProjectionReport:
    """Scale registry counts to the whole population: count / coverage.

    ``counts`` maps each stratum to ``(registered, estimated)``. Stratum cells
    round half-up; sex and global totals add the rounded stratum cells.
    """
    rows = []
    per = {}
    for key in sorted(counts):
        c = coverage if isinstance(coverage, (int, float)) else coverage[key]
        if not (0.0 < c <= 1.0):
            raise InvalidCoverageError(f"coverage for {key.label} must be in (0, 1], got {c}")
        reg, est = counts[key]
        row = ProjectionRow(key.label, reg, est, float(c), round_half_up(reg / c), round_half_up(est / c))
        per[key] = row
        rows.append(row)

    def total(label, keys):
        keys = [k for k in keys if k in per]
        if keys:
            rows.append(ProjectionRow(
                label,
                sum(per[k].registered_count for k in keys),
                sum(per[k].estimated_count for k in keys),
                None,
                sum(per[k].projected_registered for k in keys),
                sum(per[k].projected_estimated for k in keys),
            ))

    total("F total", [k for k in per if k.sex == 0])
    total("M total", [k for k in per if k.sex == 1])
    total("Global", list(per))
    return ProjectionReport(rows)


def cost_impact(projected_estimated: float, projected_registered: float, unit_cost: float) -> float:
    """Cost of the cases the registry misses; negative when it over-reports."""
    if projected_estimated < 0 or projected_registered < 0 or unit_cost < 0:
        raise ValueError("cost inputs must be non-negative")
    return (projected_estimated - projected_registered) * unit_cost
