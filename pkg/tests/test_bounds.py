import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molchan import (
    Cir,
    DomainError,
    PhysicalScenario,
    SingularDesignError,
    TrainingSequence,
    cr_bound,
    design_matrix,
    error_stats,
    fisher_matrix,
    lsse_error_upper_bound,
    prior_mean_cir,
    synthesize_cir,
)
from molchan.bounds import to_db
from molchan.experiment import scenario_for_taps

from helpers import alternating


def test_fisher_by_groups(cir92):
    seq = alternating(100)  # L = 1 observes k = 1..100: 50 ON, 50 OFF
    J = fisher_matrix(cir92, seq)
    np.testing.assert_allclose(J, [[50 / 11, 50 / 11], [50 / 11, 50 / 11 + 25]], rtol=1e-14)


def test_fisher_single_sample():
    J = fisher_matrix(Cir([3.0], 1.0), TrainingSequence([1]))
    np.testing.assert_allclose(J, np.ones((2, 2)) / 4)
    assert np.linalg.matrix_rank(J) == 1


def test_fisher_homogeneous(cir92):
    seq = TrainingSequence.from_bits("1100100101")
    np.testing.assert_allclose(fisher_matrix(cir92.scaled(3.0), seq), fisher_matrix(cir92, seq) / 3)


def test_fisher_zero_mean():
    with pytest.raises(DomainError):
        fisher_matrix(Cir([1.0], 0.0), TrainingSequence([0, 0, 1]))


def test_cr_closed_form(cir92):
    seq = alternating(100)
    assert abs(cr_bound(cir92, seq) - 0.30) <= 1e-12
    J = fisher_matrix(cir92, seq)
    assert cr_bound(cir92, seq) == pytest.approx(np.trace(np.linalg.inv(J)), rel=1e-13)


def test_cr_halves_on_duplication(cir92):
    # duplicating every observation doubles the Fisher matrix
    seq = alternating(100)
    doubled = TrainingSequence(np.concatenate([seq.symbols, seq.symbols]))
    assert cr_bound(cir92, doubled) == pytest.approx(cr_bound(cir92, seq) / 2, rel=1e-12)


def test_cr_singular_fig1_l5():
    sc = scenario_for_taps(PhysicalScenario(), 5)
    with pytest.raises(SingularDesignError, match="singular Fisher"):
        cr_bound(synthesize_cir(sc), TrainingSequence.from_bits("1100100101"))


def test_lsse_bound_2x2():
    c1, cn = 7.0, 3.0
    assert lsse_error_upper_bound(TrainingSequence([1, 0]), [c1, cn]) == pytest.approx(c1 + 3 * cn)
    assert lsse_error_upper_bound(TrainingSequence([1, 0]), [0.0, 0.0]) == 0.0


def test_lsse_bound_matches_2x2_monte_carlo():
    mu = np.array([7.0, 3.0])
    seq = TrainingSequence([1, 0])
    S = design_matrix(seq, 1)
    R = np.random.default_rng(5).poisson(S @ mu, size=(400_000, 2))
    est = R @ np.linalg.inv(S).T
    mse = np.mean(np.sum((est - mu) ** 2, axis=1))
    assert mse == pytest.approx(lsse_error_upper_bound(seq, mu), rel=0.01)


def test_lsse_bound_singular():
    with pytest.raises(SingularDesignError):
        lsse_error_upper_bound(TrainingSequence([1, 1, 1]), [1.0, 1.0])


def test_prior_mean_cir():
    sc = scenario_for_taps(PhysicalScenario(distance_halfwidth=100e-9), 2)
    mu = prior_mean_cir(sc, 1)
    fixed = synthesize_cir(sc)
    assert mu.noise_mean == fixed.noise_mean
    assert mu.taps[0] > fixed.taps[0]  # convex in distance near the peak
    assert prior_mean_cir(sc, 1).as_vector().tolist() == mu.as_vector().tolist()
    flat = sc.replace(distance_halfwidth=0.0)
    np.testing.assert_array_equal(prior_mean_cir(flat, 1).as_vector(), synthesize_cir(flat).as_vector())


def test_error_stats_examples():
    truth = np.array([[9.0, 2.0], [9.0, 2.0]])
    zero = error_stats(truth, truth)
    assert (zero.normalized_mean, zero.normalized_var) == (0.0, 0.0)
    assert zero.mean_db == -math.inf

    single = error_stats([Cir([9.5], 2.25)], [Cir([9.0], 2.0)])
    assert single.normalized_var == 0.0

    delta = 0.5
    u = np.array([0.6, 0.8])
    stats = error_stats(truth + np.array([delta * u, -delta * u]), truth)
    assert stats.normalized_mean == pytest.approx(0, abs=1e-30)
    assert stats.normalized_var == pytest.approx(delta**2 / 85)


def test_error_stats_rejects():
    with pytest.raises(DomainError):
        error_stats(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DomainError):
        error_stats(np.zeros((2, 2)), np.ones((3, 2)))


def test_error_stats_order_independent():
    rng = np.random.default_rng(2)
    est = rng.normal(10, 3, size=(1000, 3))
    tru = rng.normal(10, 1, size=(1000, 3))
    perm = rng.permutation(1000)
    a, b = error_stats(est, tru), error_stats(est[perm], tru[perm])
    assert (a.normalized_mean, a.normalized_var) == (b.normalized_mean, b.normalized_var)


def test_to_db():
    assert to_db(100.0) == 20.0
    assert to_db(0.0) == -math.inf


positive = st.floats(0.1, 100)


@settings(max_examples=60, deadline=None)
@given(
    taps=st.lists(positive, min_size=1, max_size=3),
    noise=positive,
    bits=st.lists(st.integers(0, 1), min_size=6, max_size=14),
)
def test_fisher_psd_and_bound_nonnegative(taps, noise, bits):
    cir = Cir(taps, noise)
    seq = TrainingSequence(bits)
    J = fisher_matrix(cir, seq)
    eig = np.linalg.eigvalsh(J)
    assert eig.min() >= -1e-12 * np.trace(J)
    S = design_matrix(seq, len(taps))
    if np.linalg.matrix_rank(S) == len(taps) + 1:
        assert lsse_error_upper_bound(seq, cir) >= 0
        twice = TrainingSequence(list(bits) + list(bits))
        # for L = 1 repetition duplicates every row exactly
        if len(taps) == 1 and np.all(S @ cir.as_vector() > 0):
            assert cr_bound(cir, twice) == pytest.approx(cr_bound(cir, seq) / 2, rel=1e-9)
