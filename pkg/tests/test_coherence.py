import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cavity_feedback import coherence as co
from cavity_feedback.analytics import first_detection_rate
from cavity_feedback.model import PRESETS, AncillaState
from cavity_feedback.trajectory import CycleRecord, ProtocolConfig, ShotRecord, run_ensemble

REP = PRESETS["repeated"]


def _shot(theta, k=0, n=10, t_m=1e-6, n_meas=None):
    return ShotRecord((), n, t_m, 1.0, n if n_meas is None else n_meas, theta, k)


def test_phase_average_limits():
    pt = co.phase_average(np.zeros(100))
    assert pt.value == 1 and pt.std_err == 0 and pt.n_samples == 100
    rng = np.random.default_rng(0)
    u = co.phase_average(rng.uniform(-math.pi, math.pi, 40_000))
    assert u.std_err == pytest.approx(1 / math.sqrt(2 * 40_000), rel=0.05)
    assert u.magnitude < 4 * u.std_err
    with pytest.raises(ValueError):
        co.phase_average([])


def test_coherence_of_applies_deterministic_factors():
    p = REP.replace(c_ro=0.99, t1_cavity=1e-3)
    recs = [_shot(0.0, n_meas=10) for _ in range(5)]
    pt = co.coherence_of(recs, p)
    assert pt.value == pytest.approx(0.99 ** 10 * math.exp(-10e-6 / 2e-3))
    with pytest.raises(ValueError):
        co.coherence_of([], p)
    with pytest.raises(ValueError, match="different durations"):
        co.coherence_of([_shot(0.0), _shot(0.0, n=11)], p)


def test_postselect_and_k_distribution():
    recs = [_shot(0.0, k=0), _shot(1.0, k=1), _shot(0.5, k=1)]
    assert co.k_distribution(recs) == {0: 1, 1: 2}
    assert co.postselect(recs, 0, REP.replace(c_ro=1.0, t1_cavity=math.inf)).value == pytest.approx(1.0)
    with pytest.raises(ValueError, match=r"k=3.*\{0: 1, 1: 2\}"):
        co.postselect(recs, 3, REP)


@given(st.floats(0, 1), st.floats(-math.pi, math.pi))
def test_fringe_fit_recovers_exact_coherence(mag, phase):
    c = mag * complex(math.cos(phase), math.sin(phase))
    fit = co.fit_fringe(co.fringe_samples(c, np.linspace(0, 2 * math.pi, 6, endpoint=False)))
    assert fit.magnitude == pytest.approx(mag, abs=1e-12)
    if mag > 1e-9:
        assert fit.value == pytest.approx(c, abs=1e-12)
    assert -math.pi < fit.phase <= math.pi


def test_fringe_fit_degenerate_and_zero():
    with pytest.raises(ValueError, match="degenerate"):
        co.fit_fringe([(0.0, 0.7), (2 * math.pi, 0.7)])
    assert not co.fit_fringe(co.fringe_samples(0j, [0, 1, 2])).phase_defined
    with pytest.raises(ValueError):
        co.ramsey_probability(1.5 + 0j, 0.0)


def test_unwrap_and_tphi_conversion():
    assert np.allclose(np.diff(co.unwrap_phases([3.0, -3.0, -2.5])), [2 * math.pi - 6.0, 0.5])
    assert co.tphi_from_t2(1e-3, 1.57e-3) == pytest.approx(1 / (1e3 - 1 / 3.14e-3))
    assert co.tphi_from_t2(4e-3, 1.57e-3) == math.inf


def test_fit_decay_recovers_known_rate():
    t = np.linspace(0, 8e-3, 11)
    t2 = 2e-3
    rng = np.random.default_rng(1)
    err = 0.002
    series = [(ti, co.CoherencePoint(complex(math.exp(-ti / t2) + rng.normal(0, err)), err, 10_000)) for ti in t]
    fit = co.fit_decay(series, 1.57e-3)
    assert fit.t2 == pytest.approx(t2, rel=0.02)
    assert fit.tphi_lower < fit.tphi < fit.tphi_upper
    assert fit.tphi == pytest.approx(co.tphi_from_t2(fit.t2, 1.57e-3))


def test_fit_decay_errors():
    pt = co.CoherencePoint(1.0, 0.01, 10)
    with pytest.raises(ValueError):
        co.fit_decay([(0.0, pt), (1.0, pt)], 1.0)
    with pytest.raises(ValueError):
        co.fit_decay([(0.0, pt), (0.0, pt), (1.0, pt)], 1.0)
    z = co.CoherencePoint(0.0, 0.01, 10)
    with pytest.raises(co.FitError):
        co.fit_decay([(0.0, z), (1.0, z), (2.0, z)], 1.0)


def test_fit_decay_photon_loss_limited():
    t1 = 1e-3
    series = [(t, co.CoherencePoint(complex(math.exp(-t / (2 * t1))), 1e-4, 10**6)) for t in np.linspace(0, 2e-3, 6)]
    fit = co.fit_decay(series, t1)
    assert fit.t2 == pytest.approx(2 * t1, rel=1e-6)


def test_survival_and_erasure_mle_on_simulation():
    p = REP.replace(gamma_up=1e3, p_e_given_g=1e-3)
    recs = run_ensemble(ProtocolConfig(2e-3), p, 2000, master_seed=2)
    table = co.survival_fraction(recs, np.linspace(0, 2e-3, 9))
    fracs = [f for _, f in table]
    assert fracs[0] == 1.0 and all(a >= b for a, b in zip(fracs, fracs[1:]))
    mle = co.erasure_rate_mle(recs)
    assert abs(mle.rate - first_detection_rate(p)) < 4 * mle.rate_err
    surv = co.fit_survival(table, len(recs))
    assert surv.rate == pytest.approx(mle.rate, rel=0.1)


def test_erasure_mle_geometric_oracle():
    """Synthetic first-detection indices from a geometric law recover the hazard."""
    rng = np.random.default_rng(3)
    h, n_cycles, t_m = 0.002, 1000, 1e-6
    first = rng.geometric(h, 50_000) - 1
    recs = []
    for f in first:
        cycles = ()
        if f < n_cycles:
            cycles = (CycleRecord(int(f), 0.0, AncillaState.E, AncillaState.E),)
        recs.append(ShotRecord(cycles, n_cycles, t_m, 1.0, n_cycles, 0.0, len(cycles)))
    mle = co.erasure_rate_mle(recs)
    assert abs(mle.rate - (-math.log1p(-h) / t_m)) < 4 * mle.rate_err
    assert co.erasure_rate_mle([_shot(0.0)]).n_events == 0


def test_csv_helpers():
    assert co.fringe_csv([(0.0, 0.5)]) == "theta,P\n0.0,0.5\n"
    assert co.decay_csv([(0.0, co.CoherencePoint(1 + 0j, 0.0, 1))]).startswith("t,abs_C,err\n0.0,1.0,0.0")
    assert co.survival_csv([(1e-3, 0.9)]) == "t,fraction\n0.001,0.9\n"


def test_interval_coherence_from_conditioned():
    recs = [ShotRecord((), 1, 1e-6, 1.0, 1, 0.3, 1, weight=0.01) for _ in range(10)]
    pt = co.interval_coherence_from_conditioned(recs, REP.replace(c_ro=1.0))
    assert pt.value == pytest.approx(0.99 + 0.01 * complex(math.cos(0.3), math.sin(0.3)))
