import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freespectra import matops, rmt
from freespectra.errors import ContractError, ParameterError, SizeError
from freespectra.ncalg import parse_polynomial
from freespectra.rmt import EntryLaw


def test_size_one():
    w = rmt.sample_wigner(1, "gaussian", 3)
    assert w.matrix.shape == (1, 1) and w.matrix[0, 0].imag == 0


def test_rejects_empty():
    with pytest.raises(SizeError):
        rmt.sample_wigner(0)


@pytest.mark.parametrize("law", ["gaussian", "rademacher", "uniform", "student_t(5)", "two_point(0.3)"])
def test_variance_profile(law):
    w = rmt.sample_wigner(400, law, 1)
    X = w.matrix * math.sqrt(400)
    assert matops.is_hermitian(X)
    off = X[~np.eye(400, dtype=bool)]
    assert np.mean(np.abs(off) ** 2) == pytest.approx(1.0, abs=0.1)
    assert abs(np.mean(off)) < 0.05
    assert np.mean(np.diag(X).real ** 2) == pytest.approx(1.0, abs=0.2)


def test_streams_are_reproducible_and_distinct():
    a = rmt.sample_wigner(20, "gaussian", 42, trial=3, purpose=4).matrix
    b = rmt.sample_wigner(20, "gaussian", 42, trial=3, purpose=4).matrix
    np.testing.assert_array_equal(a, b)
    for other in (dict(trial=4, purpose=4), dict(trial=3, purpose=6)):
        assert not np.allclose(a, rmt.sample_wigner(20, "gaussian", 42, **other).matrix)


def test_purpose_tags():
    assert [rmt.purpose_tag(v) for v in (1, 2, 3)] == [2, 4, 6]
    assert rmt.purpose_tag(2, gaussian=True) == 5


def test_bai_yin_edge():
    hits = 0
    for trial in range(20):
        eigs = np.linalg.eigvalsh(rmt.sample_wigner(500, "gaussian", 77, trial).matrix)
        hits += abs(eigs[-1] - 2) < 0.1
    assert hits >= 19


# -- laws ----------------------------------------------------------------------

def test_law_parsing():
    assert EntryLaw.parse("gue") == EntryLaw("gaussian")
    assert EntryLaw.parse(" student_t( 5 ) ") == EntryLaw("student_t", 5.0)
    assert str(EntryLaw.parse("two_point(0.3)")) == "two_point(0.3)"


@pytest.mark.parametrize("text", ["cauchy", "student_t(3)", "two_point(1)", "gaussian(2)", "uniform(", "student_t(x)"])
def test_law_errors(text):
    with pytest.raises(ParameterError):
        EntryLaw.parse(text)


@pytest.mark.parametrize("law", ["rademacher", "uniform", "student_t(7)", "two_point(0.2)"])
def test_laws_are_standardized(law):
    xi = EntryLaw.parse(law).draw(rmt.rng_for(5), 400_000)
    assert abs(xi.mean()) < 0.01
    assert xi.var() == pytest.approx(1.0, abs=0.02)


def test_theta_star_closed_forms():
    assert rmt.theta_star(EntryLaw("gaussian")) == pytest.approx(3 * math.sqrt(math.pi) / 4)
    assert rmt.theta_star(EntryLaw("rademacher")) == pytest.approx(1.0)


@pytest.mark.parametrize("law", ["uniform", "two_point(0.3)"])
def test_theta_star_against_monte_carlo(law):
    law = EntryLaw.parse(law)
    rng = np.random.default_rng(0)
    z = (law.draw(rng, 200_000) + 1j * law.draw(rng, 200_000)) / math.sqrt(2)
    mc = np.mean(np.abs(z) ** 3)
    # Monte Carlo values carry a 10% safety margin
    assert mc * 0.98 <= rmt.theta_star(law) <= mc * 1.15


def test_truncated_moments():
    m1, m2 = EntryLaw("gaussian").truncated_moments(50.0)
    assert m1 == pytest.approx(0, abs=1e-12) and m2 == pytest.approx(1)
    assert EntryLaw("rademacher").truncated_moments(0.5) == (0.0, 0.0)
    p = 0.3
    m1, m2 = EntryLaw("two_point", p).truncated_moments(1.0)
    lo = -math.sqrt(p / (1 - p))
    assert m1 == pytest.approx((1 - p) * lo) and m2 == pytest.approx((1 - p) * lo**2)


# -- truncation and Gaussian convolution ----------------------------------------

def test_truncation_is_noop_for_bounded_law():
    w = rmt.sample_wigner(50, "rademacher", 9)
    out = rmt.truncate_convolve(w, 10.0, 0.0)
    np.testing.assert_allclose(out.matrix, w.matrix, atol=1e-14)
    assert out.preprocessing == {"C": 10.0, "delta": 0.0, "gauss_seed": 9}


def test_truncation_level_must_exceed_bound():
    w = rmt.sample_wigner(10, "student_t(5)", 1)
    with pytest.raises(ParameterError):
        rmt.truncate_convolve(w, 10.0, 0.5)
    with pytest.raises(ParameterError):
        rmt.truncate_convolve(rmt.sample_wigner(10, "gaussian"), 12.0, -1.0)


def test_heavy_tail_preprocessing_keeps_unit_variance():
    w = rmt.sample_wigner(1000, "student_t(5)", 12)
    X = rmt.truncate_convolve(w, 16.0, 0.5).matrix * math.sqrt(1000)
    assert matops.is_hermitian(X)
    off = X[~np.eye(1000, dtype=bool)]
    assert np.mean(np.abs(off) ** 2) == pytest.approx(1.0, abs=0.05)
    assert abs(off.mean()) < 0.01


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_convolution_keeps_variance(seed, delta):
    w = rmt.sample_wigner(300, "uniform", seed)
    X = rmt.truncate_convolve(w, 12.0, delta).matrix * math.sqrt(300)
    off = X[~np.eye(300, dtype=bool)]
    assert np.mean(np.abs(off) ** 2) == pytest.approx(1.0, abs=0.05)


def test_convolution_uses_its_own_stream():
    w = rmt.sample_wigner(30, "uniform", 4, trial=1, purpose=2)
    a = rmt.truncate_convolve(w, 12.0, 1.0).matrix
    b = rmt.truncate_convolve(w, 12.0, 1.0, gauss_seed=5).matrix
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, rmt.truncate_convolve(w, 12.0, 1.0).matrix)


# -- deterministic matrices --------------------------------------------------------

def test_diag_spec_cycles():
    np.testing.assert_array_equal(np.diag(rmt.diag_spec([1, -1], 5)).real, [1, -1, 1, -1, 1])


@pytest.mark.parametrize("f, n, rank", [(0.5, 4, 2), (0.3, 5, 2), (0.25, 2, 1), (0.0, 3, 0), (1.0, 3, 3)])
def test_projection_rank(f, n, rank):
    P = rmt.projection(f, n)
    np.testing.assert_allclose(P @ P, P)
    assert round(np.trace(P).real) == rank


def test_toeplitz_hermitian_and_edges():
    T = rmt.toeplitz([0, 1], 200)
    assert matops.is_hermitian(T)
    eigs = np.linalg.eigvalsh(T)
    assert eigs.min() == pytest.approx(-2, abs=0.05) and eigs.max() == pytest.approx(2, abs=0.05)
    C = rmt.toeplitz([1, 0.5j], 3)
    assert C[0, 1] == pytest.approx(0.5j) and C[1, 0] == pytest.approx(-0.5j)
    assert matops.is_hermitian(C)


def test_make_deterministic_specs(tmp_path):
    np.testing.assert_array_equal(rmt.make_deterministic("diag(2, -1)", 3), np.diag([2, -1, 2]))
    np.testing.assert_array_equal(rmt.make_deterministic("projection(0.5)", 2), np.diag([1, 0]))
    np.testing.assert_array_equal(rmt.make_deterministic("toeplitz(0,1)", 3), rmt.toeplitz([0, 1], 3))
    path = tmp_path / "a.csv"
    matops.write_matrix_csv(path, np.diag([1.0, 3.0]))
    np.testing.assert_array_equal(rmt.make_deterministic(f"file({path})", 2), np.diag([1, 3]))
    with pytest.raises(SizeError):
        rmt.make_deterministic(f"file({path})", 3)


@pytest.mark.parametrize("spec", ["circle(1)", "diag()", "diag(1i)", "projection(2)", "projection(0.1, 0.2)", "toeplitz(1i)", "diag(x)"])
def test_make_deterministic_errors(spec):
    with pytest.raises(ParameterError):
        rmt.make_deterministic(spec, 4)


# -- empirical spectra -------------------------------------------------------------

def test_empirical_spectrum_of_deterministic():
    eigs = rmt.empirical_spectrum(parse_polynomial("a1^2 + a1", 0, 1), [], [np.diag([1.0, -2.0])])
    np.testing.assert_allclose(eigs, [2.0, 2.0])


def test_empirical_spectrum_commutator_square():
    p = parse_polynomial("i*x1*x2 - i*x2*x1", 2, 0)
    ws = [rmt.sample_wigner(100, "gaussian", 3, purpose=rmt.purpose_tag(v)) for v in (1, 2)]
    eigs = rmt.empirical_spectrum(p, ws)
    assert len(eigs) == 100 and np.all(np.diff(eigs) >= 0)
    assert eigs.sum() == pytest.approx(0, abs=1e-8)


def test_empirical_spectrum_checks():
    with pytest.raises(ContractError):
        rmt.empirical_spectrum(parse_polynomial("x1*a1", 1, 1), [np.eye(2)], [np.eye(2)])
    with pytest.raises(SizeError):
        rmt.empirical_spectrum(parse_polynomial("x1 + a1", 1, 1), [np.eye(2)], [np.eye(3)])
    with pytest.raises(SizeError):
        rmt.empirical_spectrum(parse_polynomial("x1", 1, 0), [])
