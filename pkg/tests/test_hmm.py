import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavity_feedback import hmm

T_M = 2.6e-6
SUPP = hmm.HmmParams(0.06, 0.14, 10e3, 56e3)


def test_build_model_and_inverse_map():
    m = hmm.build_model(SUPP, T_M)
    assert np.allclose(m.transition.sum(axis=1), 1) and np.allclose(m.emission.sum(axis=1), 1)
    assert m.p_up == pytest.approx(10e3 * T_M)
    back = m.to_params()
    for k in ("p_eg", "p_ge", "gamma_up", "gamma"):
        assert getattr(back, k) == pytest.approx(getattr(SUPP, k), rel=1e-12)
    assert np.allclose(m.initial @ m.transition, m.initial)
    with pytest.raises(ValueError, match=">= 1"):
        hmm.build_model(hmm.HmmParams(0, 0, 1 / T_M, 1e3), T_M)
    with pytest.raises(ValueError):
        hmm.build_model(hmm.HmmParams(1.2, 0, 1e3, 1e3), T_M)


def test_forward_example_perfect_emission():
    m = hmm.build_model(hmm.HmmParams(0.0, 0.0, 1e4, 5e4), T_M, initial=[1.0, 0.0])
    fw = hmm.forward([0], m)
    assert np.allclose(fw.f_hat[0], [1.0, 0.0])
    assert fw.normalizers[0] == pytest.approx(1 - m.p_up)
    bw = hmm.backward([0], m, normalizers=fw.normalizers)
    assert np.allclose(bw.b_hat[-1], [1.0, 1.0])


def test_zero_likelihood_is_reported():
    m = hmm.build_model(hmm.HmmParams(0.0, 0.0, 0.0, 5e4), T_M, initial=[1.0, 0.0])
    with pytest.raises(hmm.ZeroLikelihoodError) as exc:
        hmm.forward([0, 0, 1], m)
    assert exc.value.step == 3


def test_observation_validation():
    with pytest.raises(ValueError):
        hmm.as_observations([0, 2])
    with pytest.raises(ValueError):
        hmm.as_observations([])
    assert hmm.as_observations(np.array(["g", "e"])).tolist() == [0, 1]


def _zero_or(lo, hi):
    return st.one_of(st.just(0.0), st.floats(lo, hi))


# exact zeros exercise impossible observations; subnormal magnitudes are excluded
lam_st = st.builds(hmm.HmmParams, _zero_or(1e-6, 0.5), _zero_or(1e-6, 0.5), _zero_or(1.0, 3e5), _zero_or(1.0, 1e6))


@given(lam_st, st.lists(st.integers(0, 1), min_size=1, max_size=10), st.booleans())
@settings(max_examples=200, deadline=None)
def test_matches_brute_force(lam, obs, stationary):
    m = hmm.build_model(lam, T_M, initial=None if stationary else [0.3, 0.7])
    try:
        like, post = hmm.brute_force_posterior(obs, m)
    except hmm.ZeroLikelihoodError:
        with pytest.raises(hmm.ZeroLikelihoodError):
            hmm.forward(obs, m)
        return
    fw, sm = hmm.forward(obs, m), hmm.smooth(obs, m)
    bw = hmm.backward(obs, m)
    assert abs(fw.log_likelihood - math.log(like)) <= 1e-10 * max(1, abs(math.log(like)))
    assert abs(bw.log_likelihood - fw.log_likelihood) <= 1e-10 * max(1, abs(fw.log_likelihood))
    assert np.abs(sm.smoothed - post).max() <= 1e-10
    assert np.abs(sm.smoothed.sum(axis=1) - 1).max() <= 1e-10


def test_brute_force_limit():
    m = hmm.build_model(SUPP, T_M)
    with pytest.raises(ValueError):
        hmm.brute_force_posterior([0] * 21, m)


def test_long_record_is_stable():
    m = hmm.build_model(SUPP, T_M)
    _, obs = hmm.simulate_observations(m, 10**7, np.random.default_rng(0))
    fw = hmm.forward(obs, m)
    assert math.isfinite(fw.log_likelihood)
    assert fw.log_likelihood == pytest.approx(np.log(fw.normalizers).sum())


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_baum_welch_monotone_and_stochastic(seed):
    truth = hmm.build_model(SUPP, T_M)
    _, obs = hmm.simulate_observations(truth, 5000, np.random.default_rng(seed))
    for free in (False, True):
        fit = hmm.baum_welch(obs, hmm.HmmParams(0.2, 0.3, 3e4, 2e4), T_M, free_initial=free)
        tr = np.array(fit.log_likelihood)
        assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[1:]))
        assert np.allclose(fit.model.transition.sum(axis=1), 1, atol=1e-12)
        assert np.allclose(fit.model.emission.sum(axis=1), 1, atol=1e-12)


def test_baum_welch_recovers_default_parameters():
    truth = hmm.build_model(SUPP, T_M)
    _, obs = hmm.simulate_observations(truth, 10**6, np.random.default_rng(4))
    fit = hmm.baum_welch(obs, hmm.HmmParams(0.03, 0.21, 20e3, 33.6e3), T_M)
    assert fit.converged
    for k in ("p_eg", "p_ge", "gamma_up", "gamma"):
        assert getattr(fit.lam, k) == pytest.approx(getattr(SUPP, k), rel=0.10)


def test_reconstruction_reaches_bayes_ceiling():
    """Per-step argmax of the smoothed posterior is the accuracy-optimal decoder, so the fitted model
    should decode as well as the true model."""
    truth = hmm.build_model(SUPP, T_M)
    states, obs = hmm.simulate_observations(truth, 200_000, np.random.default_rng(5))
    fit = hmm.baum_welch(obs, hmm.HmmParams(0.03, 0.21, 20e3, 33.6e3), T_M)
    acc_fit = (hmm.reconstruct(obs, fit.model) == states).mean()
    acc_true = (hmm.reconstruct(obs, truth) == states).mean()
    assert acc_fit == pytest.approx(acc_true, abs=0.002)
    assert acc_fit > (obs == states).mean()


@pytest.mark.xfail(strict=True, reason="per-step accuracy at these parameters is capped near 97.5% "
                                       "even with the true model")
def test_reconstruction_accuracy_above_99_percent():
    truth = hmm.build_model(SUPP, T_M)
    states, obs = hmm.simulate_observations(truth, 200_000, np.random.default_rng(6))
    assert (hmm.reconstruct(obs, truth) == states).mean() > 0.99


def test_reconstruct_ties_go_to_ground():
    m = hmm.HmmModel(np.full((2, 2), 0.5), np.full((2, 2), 0.5), np.array([0.5, 0.5]), T_M)
    assert hmm.reconstruct([1, 0, 1], m).tolist() == [0, 0, 0]


def test_io_roundtrips():
    obs = np.array([0, 0, 1, 1, 1, 0, 1], dtype=np.int8)
    assert np.array_equal(hmm.observations_from_text(hmm.observations_to_text(obs)), obs)
    back, t_m = hmm.observations_from_rle_json(hmm.observations_to_rle_json(obs, T_M))
    assert np.array_equal(back, obs) and t_m == T_M
    import json
    d = json.loads(hmm.fitted_params_json(hmm.build_model(SUPP, T_M), -1.0))
    assert {"p_up", "p_down", "gamma_up", "gamma", "p_e_given_g", "p_g_given_e"} <= set(d)
