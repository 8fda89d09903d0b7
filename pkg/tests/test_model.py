import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.stats import norm

from conftest import scalar_mixture_density, series_from
from underreport.model import (
    PARAM_NAMES, TABLE2_PARAMS, EmptyInputError, InvalidParameterError, ModelParams,
    ObservationSeries, SeriesValidationError, StratumKey, build_design, design_row,
    log_likelihood, mean_mu1, mixture_density, omega_at,
)


def logit(p):
    return math.log(p / (1 - p))


finite = st.floats(-50, 50, allow_nan=False)


class TestOmega:
    def test_reported_endpoints(self):
        assert omega_at(2.99, -4.31, 0.0) == pytest.approx(0.9521, abs=1e-4)
        assert omega_at(2.99, -4.31, 1.0) == pytest.approx(0.2108, abs=1e-4)

    def test_symmetry(self):
        assert omega_at(0.0, 0.0, 0.5) == 0.5

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidParameterError):
            omega_at(float("nan"), 0.0, 0.0)
        with pytest.raises(InvalidParameterError):
            omega_at(0.0, float("inf"), 0.5)

    @given(finite, finite, st.floats(0, 1))
    def test_open_interval(self, a0, a1, tau):
        w = omega_at(a0, a1, tau)
        assert 0.0 < w < 1.0

    @given(st.floats(-5, 5), st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3))
    def test_monotone_with_slope_sign(self, a0, a1):
        taus = np.linspace(0, 1, 11)
        w = omega_at(a0, a1, taus)
        steps = np.diff(w)
        assert np.all(np.sign(steps[steps != 0]) == np.sign(a1))

    def test_clamped_log_link(self):
        assert omega_at(-1.0, 0.0, 0.3, link="clamped-log") == pytest.approx(math.exp(-1.0))
        w = omega_at(2.99, -4.31, 0.0, link="clamped-log")
        assert 0.0 < w < 1.0

    def test_unknown_link(self):
        with pytest.raises(ValueError):
            omega_at(0, 0, 0, link="probit")


class TestMean:
    def test_intercept_only(self):
        p = ModelParams(alpha0=0, alpha1=0, beta0=13.76)
        for row in (design_row(1, 0, 0, 96), design_row(50, 1, 1, 96)):
            assert mean_mu1(p, row) == pytest.approx(13.76)

    def test_harmonic_vanishes_at_multiple_of_three(self):
        p = ModelParams(alpha0=0, alpha1=0, beta0=1.0, beta5=4.16)
        assert mean_mu1(p, design_row(3, 0, 0, 96)) == pytest.approx(1.0, abs=1e-12)

    def test_age_effect(self):
        p = ModelParams(alpha0=0, alpha1=0, beta0=2.0, beta2=-1.0)
        assert mean_mu1(p, design_row(10, 1, 0, 96)) == 1.0

    def test_full_predictor(self):
        p = TABLE2_PARAMS
        row = design_row(7, 1, 1, 96)
        tau = 6 / 95
        expected = (13.76 + 0.36 * tau - 13.53 - 1.60 + 3.25
                    + 4.16 * math.sin(2 * math.pi * 7 / 3) + 0.52 * math.cos(2 * math.pi * 7 / 3))
        assert mean_mu1(p, row) == pytest.approx(expected, abs=1e-12)


class TestDesign:
    def test_tau_endpoints_and_harmonic(self):
        y = np.ones(4 * 96)
        d = build_design(series_from(y, 96))
        rows = list(d)
        assert rows[0].m == 1 and rows[0].tau == 0.0
        assert rows[95].m == 96 and rows[95].tau == 1.0
        assert rows[1].sin3 == pytest.approx(-0.8660254037844384, abs=1e-12)

    def test_row_invariants(self):
        d = build_design(series_from(np.ones(40), 10))
        for r in d:
            assert r.axs == r.a * r.s
            assert abs(r.sin3 ** 2 + r.cos3 ** 2 - 1) < 1e-12
            assert r.tau == pytest.approx((r.m - 1) / 9)

    def test_single_month(self):
        s = ObservationSeries(month=[1], sex=[0], age_band=[0], y=[1.0], t_max=1)
        assert build_design(s)[0].tau == 0.0

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            ObservationSeries(month=[], sex=[], age_band=[], y=[], t_max=0)


class TestSeries:
    def test_gap_rejected(self):
        with pytest.raises(SeriesValidationError, match="missing month 2"):
            ObservationSeries(month=[1, 3], sex=[0, 0], age_band=[0, 0], y=[1, 1], t_max=3)

    def test_negative_rejected(self):
        with pytest.raises(SeriesValidationError):
            ObservationSeries(month=[1, 2], sex=[0, 0], age_band=[0, 0], y=[1, -1], t_max=2)

    def test_from_records_sorts(self):
        k = StratumKey(1, 0)
        s = ObservationSeries.from_records([(2, k, 5.0), (1, k, 4.0)])
        assert s.month.tolist() == [1, 2] and s.y.tolist() == [4.0, 5.0]

    def test_bad_stratum(self):
        with pytest.raises(SeriesValidationError):
            StratumKey(2, 0)


class TestParams:
    def test_constraints(self):
        with pytest.raises(InvalidParameterError):
            ModelParams(alpha0=0, alpha1=0, beta0=1, q=0.0)
        with pytest.raises(InvalidParameterError):
            ModelParams(alpha0=0, alpha1=0, beta0=1, q=1.2)
        with pytest.raises(InvalidParameterError):
            ModelParams(alpha0=0, alpha1=0, beta0=1, sigma=0.0)
        with pytest.raises(InvalidParameterError):
            ModelParams(alpha0=float("nan"), alpha1=0, beta0=1)

    def test_vector_roundtrip(self):
        v = TABLE2_PARAMS.to_vector()
        assert ModelParams.from_vector(v) == TABLE2_PARAMS
        assert list(TABLE2_PARAMS.to_dict()) == list(PARAM_NAMES)


class TestMixtureDensity:
    row = design_row(4, 0, 0, 96)

    def params(self, omega, q=0.5, mu1=10.0, sigma=2.0):
        return ModelParams(alpha0=logit(omega), alpha1=0.0, beta0=mu1, q=q, sigma=sigma)

    def test_q_one_collapses(self):
        for omega in (0.1, 0.5, 0.9):
            ev = mixture_density(7.3, self.params(omega, q=1.0), self.row)
            assert ev.density == pytest.approx(norm.pdf(7.3, 10, 2), rel=1e-14)

    def test_against_pdf_oracle(self):
        ev = mixture_density(5.0, self.params(0.3), self.row)
        expected = 0.7 * norm.pdf(5, 10, 2) + 0.3 * norm.pdf(5, 5, 1)
        assert ev.density == pytest.approx(expected, rel=1e-12)
        assert ev.density == pytest.approx(0.1258175892931788, rel=1e-12)
        assert ev.mu2 == pytest.approx(0.5 * ev.mu1, abs=1e-12)

    def test_all_underreported(self):
        # omega = 1 is reached through the clamped log link at eta >= 0
        p = ModelParams(alpha0=0.0, alpha1=0.0, beta0=10.0, q=0.5, sigma=2.0)
        ev = mixture_density(5.0, p, self.row, link="clamped-log")
        assert ev.density == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-9)

    def test_shared_variance_option(self):
        ev = mixture_density(5.0, self.params(0.3), self.row, variance="shared")
        assert ev.density == pytest.approx(0.7 * norm.pdf(5, 10, 2) + 0.3 * norm.pdf(5, 5, 2), rel=1e-12)

    @pytest.mark.parametrize("omega", [1e-9, 1 - 1e-9])
    def test_endpoint_components(self, omega):
        p = self.params(omega, q=0.6)
        ev = mixture_density(6.5, p, self.row)
        expected = norm.pdf(6.5, 10, 2) if omega < 0.5 else norm.pdf(6.5, 6, 1.2)
        assert ev.density == pytest.approx(expected, abs=1e-8)

    def test_normalization(self, rng):
        for _ in range(5):
            q = rng.uniform(0.1, 1.0)
            p = ModelParams(alpha0=rng.normal(), alpha1=rng.normal(), beta0=rng.uniform(-5, 25),
                            beta5=rng.normal(), q=q, sigma=rng.uniform(0.3, 4))
            row = design_row(int(rng.integers(1, 97)), 1, 0, 96)
            ev = mixture_density(0.0, p, row)
            pts = sorted({ev.mu1, ev.mu2})
            total, _ = integrate.quad(lambda y: mixture_density(y, p, row).density, -np.inf, np.inf,
                                      points=None, epsabs=1e-12, epsrel=1e-12, limit=200)
            assert total == pytest.approx(1.0, abs=1e-6), pts


class TestLogLikelihood:
    def test_single_record_closed_form(self):
        s = ObservationSeries(month=[1], sex=[0], age_band=[0], y=[12.0], t_max=1)
        p = ModelParams(alpha0=0.3, alpha1=0, beta0=12.0, q=1.0, sigma=1.7)
        assert log_likelihood(p, s) == pytest.approx(-math.log(1.7 * math.sqrt(2 * math.pi)), rel=1e-14)

    def test_oracle_sum(self, rng):
        t = 25
        y = rng.uniform(0, 25, 4 * t)
        s = series_from(y, t)
        p = ModelParams(alpha0=0.4, alpha1=-1.2, beta0=12, beta1=0.5, beta2=-6, beta3=-1, beta4=2,
                        beta5=2, beta6=0.7, q=0.7, sigma=3.0)
        expected = 0.0
        for i, row in enumerate(build_design(s)):
            mu1 = mean_mu1(p, row)
            w = 1 / (1 + math.exp(-(p.alpha0 + p.alpha1 * row.tau)))
            expected += math.log(scalar_mixture_density(y[i], mu1, p.sigma, p.q, w))
        assert log_likelihood(p, s) == pytest.approx(expected, abs=1e-10)

    def test_additivity(self):
        p = ModelParams(alpha0=0.2, alpha1=0, beta0=5, q=0.8, sigma=1.5)
        one = ObservationSeries(month=[1], sex=[0], age_band=[0], y=[4.2], t_max=1)
        two = ObservationSeries(month=[1, 1], sex=[0, 1], age_band=[0, 0], y=[4.2, 4.2], t_max=1)
        assert log_likelihood(p, two) == 2 * log_likelihood(p, one)

    def test_permutation_invariance(self, table2_sim, rng):
        s = table2_sim.series
        d = build_design(s)
        perm = rng.permutation(len(s))
        ll = log_likelihood(TABLE2_PARAMS, s)
        from underreport.model import Design
        shuffled = ObservationSeries.__new__(ObservationSeries)
        shuffled.month, shuffled.sex, shuffled.age_band = s.month[perm], s.sex[perm], s.age_band[perm]
        shuffled.y, shuffled.t_max, shuffled.population = s.y[perm], s.t_max, None
        d2 = Design(d.m[perm], d.a[perm], d.s[perm], s.t_max)
        assert log_likelihood(TABLE2_PARAMS, shuffled, d2) == pytest.approx(ll, rel=1e-12)

    def test_continuity(self, table2_sim):
        s = table2_sim.series
        base = log_likelihood(TABLE2_PARAMS, s)
        for name in PARAM_NAMES:
            bumped = TABLE2_PARAMS.with_values(**{name: getattr(TABLE2_PARAMS, name) + 1e-6})
            assert abs(log_likelihood(bumped, s) - base) < 1e-3, name

    def test_underflow_sentinel(self):
        from underreport.model import LikelihoodUnderflowWarning
        s = ObservationSeries(month=[1], sex=[0], age_band=[0], y=[1e200], t_max=1)
        p = ModelParams(alpha0=0, alpha1=0, beta0=0.0, q=0.5, sigma=1e-150)
        with pytest.warns(LikelihoodUnderflowWarning):
            assert log_likelihood(p, s) == -math.inf
