import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from molchan import (
    Cir,
    DomainError,
    ObservationVector,
    PhysicalScenario,
    TrainingSequence,
    choose_symbol_params,
    concentration_at,
    design_matrix,
    mean_observations,
    peak_sample_time,
    simulate_observations,
    synthesize_cir,
)
from molchan.channel import integrate_over_receiver, trial_rng
from molchan.errors import ConfigurationError

BASE = PhysicalScenario()


def test_concentration_value():
    assert concentration_at(BASE, 500e-9, 9.546e-5) == pytest.approx(5.89e22, rel=2e-3)


def test_concentration_peak_by_golden_section():
    res = minimize_scalar(
        lambda t: -concentration_at(BASE, 500e-9, t),
        bracket=(1e-5, 9e-5, 1e-3),
        method="golden",
        tol=1e-10,
    )
    assert res.x == pytest.approx(peak_sample_time(BASE), rel=1e-5)
    assert peak_sample_time(BASE) == pytest.approx(9.546e-5, rel=1e-3)


def test_concentration_linear_and_decaying():
    doubled = BASE.replace(n_tx=2 * BASE.n_tx)
    c1 = concentration_at(BASE, 500e-9, 1e-4)
    assert concentration_at(doubled, 500e-9, 1e-4) == 2 * c1
    assert concentration_at(BASE, 500e-9, 1e3) < 1e-6 * c1


@pytest.mark.parametrize("bad", [(0.0, 1e-4), (-1e-9, 1e-4), (5e-7, 0.0), (5e-7, -1.0)])
def test_concentration_domain(bad):
    with pytest.raises(DomainError):
        concentration_at(BASE, *bad)


def test_peak_time_scaling():
    t = peak_sample_time(BASE)
    assert peak_sample_time(BASE.replace(mean_distance=1e-6)) == pytest.approx(4 * t)
    assert peak_sample_time(BASE.replace(diffusion_coeff=2 * BASE.diffusion_coeff)) == pytest.approx(t / 2)


def test_synthesized_cir_defaults():
    sc = BASE.replace(num_taps=1, symbol_duration=1e-3)
    cir = synthesize_cir(sc)
    assert cir.taps[0] == pytest.approx(22.5, rel=2e-3)
    assert cir.noise_mean == pytest.approx(11.2, rel=5e-3)
    assert cir.noise_mean == pytest.approx(0.5 * cir.taps[0])


def test_point_approximation_matches_volume_integral():
    sc = BASE.replace(num_taps=1, symbol_duration=1e-3)
    exact = integrate_over_receiver(sc, sc.mean_distance, peak_sample_time(sc))
    assert synthesize_cir(sc).taps[0] == pytest.approx(exact, rel=0.02)


def test_long_symbol_duration_kills_later_taps():
    cir = synthesize_cir(BASE.replace(num_taps=4, symbol_duration=10.0))
    assert np.all(cir.taps[1:] < 1e-6 * cir.taps[0])


@pytest.mark.parametrize("L", [1, 2, 3, 5])
def test_choose_symbol_params_meets_threshold(L):
    T, n = choose_symbol_params(BASE, num_taps=L)
    assert n == L
    cir = synthesize_cir(BASE.replace(num_taps=L + 1, symbol_duration=T))
    assert cir.taps[L] < 0.1 * cir.taps[0]


def test_choose_symbol_params_shorter_for_more_taps():
    assert choose_symbol_params(BASE, num_taps=5)[0] < choose_symbol_params(BASE, num_taps=1)[0]


def test_choose_symbol_params_threshold_one():
    T, L = choose_symbol_params(BASE, symbol_duration=1.0, threshold=1.0)
    assert (T, L) == (1.0, 1)


def test_choose_symbol_params_unreachable():
    with pytest.raises(ConfigurationError):
        choose_symbol_params(BASE, symbol_duration=1e-9, max_taps=3)


def test_design_matrix_rows():
    S = design_matrix(TrainingSequence([1, 1, 0, 0, 1]), 2)
    np.testing.assert_array_equal(S, [[1, 1, 1], [0, 1, 1], [0, 0, 1], [1, 0, 1]])


def test_mean_observations_examples(cir92, alt4):
    np.testing.assert_array_equal(mean_observations(cir92, alt4), [11, 2, 11, 2])
    np.testing.assert_array_equal(mean_observations(cir92, TrainingSequence([0, 0, 0])), [2, 2, 2])
    np.testing.assert_array_equal(mean_observations(Cir([9.0], 0.0), TrainingSequence([0, 0])), [0, 0])


def test_zero_channel_gives_zero_counts(alt4):
    obs = simulate_observations(Cir([0.0], 0.0), alt4, 7)
    assert np.all(obs.counts == 0)


def test_simulation_is_deterministic(cir92, alt4):
    a = simulate_observations(cir92, alt4, 11, trial_index=5)
    b = simulate_observations(cir92, alt4, 11, trial_index=5)
    c = simulate_observations(cir92, alt4, 11, trial_index=6)
    assert isinstance(a, ObservationVector)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert len(a) == 4
    assert not np.array_equal(trial_rng(11, 5).random(8), trial_rng(11, 6).random(8))
    assert c.counts.shape == a.counts.shape


def test_sample_moments(cir92, alt4):
    rng = np.random.default_rng(3)
    draws = rng.poisson(mean_observations(cir92, alt4), size=(250_000, 4))
    on = draws[:, [0, 2]].ravel()
    off = draws[:, [1, 3]].ravel()
    assert on.mean() == pytest.approx(11, rel=0.01)
    assert off.mean() == pytest.approx(2, rel=0.01)


def test_training_sequence_validation():
    with pytest.raises(DomainError):
        TrainingSequence([0, 2, 1])
    seq = TrainingSequence.from_bits("1100100101")
    assert seq.bits() == "1100100101"
    assert seq.repeated(2).length == 20


@settings(max_examples=50, deadline=None)
@given(
    bits=st.lists(st.integers(0, 1), min_size=2, max_size=20),
    taps=st.lists(st.floats(0, 50), min_size=1, max_size=3),
    noise=st.floats(0, 20),
)
def test_mean_relation_is_linear(bits, taps, noise):
    L = len(taps)
    if len(bits) < L:
        return
    seq = TrainingSequence(bits)
    cir = Cir(taps, noise)
    S = design_matrix(seq, L)
    assert S.shape == (len(bits) - L + 1, L + 1)
    np.testing.assert_allclose(mean_observations(cir.scaled(2.0), seq), 2 * S @ cir.as_vector())
    assert math.isclose(float(S[:, -1].sum()), S.shape[0])
