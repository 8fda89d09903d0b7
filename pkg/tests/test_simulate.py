import numpy as np
import pytest
from scipy.special import expit

from underreport.model import STRATA, TABLE2_PARAMS, ModelParams, SeriesValidationError, build_design, mu1_vector
from underreport.simulate import SimScenario, replicate_rng, simulate, simulate_replicates


@pytest.fixture(scope="module")
def table2_runs():
    return [simulate(SimScenario(TABLE2_PARAMS, t_max=96, seed=s)) for s in range(50)]


def test_deterministic():
    a = simulate(SimScenario(TABLE2_PARAMS, seed=7))
    b = simulate(SimScenario(TABLE2_PARAMS, seed=7))
    assert np.array_equal(a.series.y, b.series.y) and np.array_equal(a.flags, b.flags)
    c = simulate(SimScenario(TABLE2_PARAMS, seed=8))
    assert not np.array_equal(a.series.y, c.series.y)


def test_replicate_streams_are_order_independent():
    sc = SimScenario(TABLE2_PARAMS, t_max=12, seed=3, replicate_count=4)
    serial = simulate_replicates(sc)
    assert np.array_equal(serial[2].series.y, simulate(sc, replicate=2).series.y)
    assert replicate_rng(3, 2).random() == replicate_rng(3, 2).random()


def test_q_one_identity():
    sim = simulate(SimScenario(TABLE2_PARAMS.with_values(q=1.0), seed=1))
    assert np.array_equal(sim.series.y, sim.latent)


def test_forced_underreporting():
    p = TABLE2_PARAMS.with_values(alpha0=30.0, alpha1=0.0)
    sim = simulate(SimScenario(p, seed=2))
    assert sim.flags.all()
    assert np.array_equal(sim.series.y, p.q * sim.latent)


def test_flagged_records_consistent(table2_runs):
    for sim in table2_runs[:5]:
        f = sim.flags
        assert np.array_equal(sim.series.y[f], TABLE2_PARAMS.q * sim.latent[f])
        assert np.array_equal(sim.series.y[~f], sim.latent[~f])
        assert np.all(sim.latent >= 0)


def test_flag_frequency_tracks_omega(table2_runs):
    flags = np.array([s.flags for s in table2_runs])
    month = table2_runs[0].series.month
    freq = np.array([flags[:, month == m].mean() for m in range(1, 97)])
    tau = (np.arange(1, 97) - 1) / 95
    assert np.mean(np.abs(freq - expit(2.99 - 4.31 * tau))) < 0.05


def test_flagged_to_unflagged_ratio(table2_runs):
    y = np.array([s.series.y for s in table2_runs])
    f = np.array([s.flags for s in table2_runs])
    assert y[f].mean() / y[~f].mean() == pytest.approx(0.75, abs=0.03)


def test_marginal_mean():
    p = TABLE2_PARAMS
    sc = SimScenario(p, t_max=24, seed=5, strata=[STRATA[0]])
    ys = np.array([simulate(sc, r).series.y for r in range(2000)])
    sim0 = simulate(sc)
    design = build_design(sim0.series)
    mu1 = mu1_vector(p, design)
    omega = expit(p.alpha0 + p.alpha1 * design.tau)
    expect = (1 - omega * (1 - p.q)) * mu1
    se = ys.std(axis=0, ddof=1) / np.sqrt(ys.shape[0])
    assert np.all(np.abs(ys.mean(axis=0) - expect) < 3.5 * se)
    assert np.mean(np.abs(ys.mean(axis=0) - expect) < 3 * se) >= 0.95


def test_no_truncation_far_from_zero():
    p = ModelParams(alpha0=0.0, alpha1=0.0, beta0=30.0, beta2=-5.0, beta5=3.0, q=0.75, sigma=2.0)
    assert simulate(SimScenario(p, seed=0)).truncated == 0


def test_truncation_counted():
    sim = simulate(SimScenario(TABLE2_PARAMS, seed=0))
    assert sim.truncated == int(np.sum(sim.latent == 0.0)) > 0


@pytest.mark.parametrize("bad", [dict(t_max=1), dict(strata=[]), dict(replicate_count=0)])
def test_scenario_validation(bad):
    with pytest.raises(SeriesValidationError):
        SimScenario(TABLE2_PARAMS, **bad)
