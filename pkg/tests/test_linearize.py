import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freespectra.errors import ContractError, SpectralPointError
from freespectra.linearize import (
    Linearization,
    corner_deviation,
    corner_resolvent_check,
    gap_constants,
    linearize,
    linearize_monomial,
    linearized_gap_bound,
)
from freespectra.ncalg import Generator, Monomial, NCPolynomial, evaluate, parse_polynomial
from modelgen import random_selfadjoint


def X(i, k=2):
    return NCPolynomial.generator(i, k)


def rand_herm(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def test_degree_one_is_its_own_linearization():
    lin = linearize(X(1, 1))
    assert lin.m == 1
    np.testing.assert_array_equal(lin.gamma, [[0]])
    np.testing.assert_array_equal(lin.zetas[0], [[1]])


def test_degree_one_monomial_block():
    block = linearize_monomial(Monomial(2.5, (Generator(1),)), 1)
    assert block.u is None and block.head[1, 0, 0] == 2.5


def test_empty_word_is_not_linearized():
    with pytest.raises(ContractError):
        linearize_monomial(Monomial(1.0, ()), 1)


@pytest.mark.parametrize("indices", [(1, 2), (1, 2, 1), (2, 1, 1, 2)])
def test_monomial_block_reproduces_word(indices):
    rng = np.random.default_rng(len(indices))
    mats = [rand_herm(rng, 5) for _ in range(2)]
    block = linearize_monomial(Monomial(1.0, tuple(Generator(i) for i in indices)), 2)

    def at(aff):
        return sum(np.kron(aff[j], np.eye(5) if j == 0 else mats[j - 1]) for j in range(3))

    u, v, Q = at(block.u), at(block.v), at(block.Q)
    got = -u @ np.linalg.solve(Q, v)
    want = np.linalg.multi_dot([mats[i - 1] for i in indices])
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_degree_two_block_layout():
    block = linearize_monomial(Monomial(1.0, (Generator(1), Generator(2))), 2)
    full = np.concatenate([np.concatenate([np.zeros((3, 1, 1)), block.u], 2), np.concatenate([block.v, block.Q], 2)], 1)
    assert full[1, 0, 1] == 1  # X1 top-right
    assert full[2, 1, 0] == 1  # X2 bottom-left
    assert full[0, 1, 1] != 0 or block.Q.shape[1] == 1


def test_square_has_size_three():
    lin = linearize(X(1, 1) ** 2)
    assert lin.m == 3
    rng = np.random.default_rng(0)
    assert corner_resolvent_check(lin, X(1, 1) ** 2, [rand_herm(rng, 5)], 2 + 1j, 1e-10)


def test_scalar_corner_examples():
    p = X(1, 1)
    assert corner_deviation(linearize(p), p, [np.zeros((1, 1))], 1j) < 1e-15
    sq = p**2
    lin = linearize(sq)
    assert corner_resolvent_check(lin, sq, [np.diag([1.0, 2.0])], 5.0, 1e-12)


def test_symmetrized_product_corner():
    p = X(1) * X(2) + X(2) * X(1)
    rng = np.random.default_rng(8)
    assert corner_resolvent_check(linearize(p), p, [rand_herm(rng, 8), rand_herm(rng, 8)], 3j, 1e-10)


def test_rejects_nonselfadjoint():
    with pytest.raises(ContractError):
        linearize(X(1) * X(2))


def test_size_bound_and_hermitian_coefficients():
    p = parse_polynomial("x1*x2*x1*x2 + x2*x1*x2*x1 + 2*x1^2 + x2 - 1", 2, 0)
    lin = linearize(p)
    # P0 = x1x2x1x2 + x1^2 + (x2, const in the corner): 1 + 2 * (3 + 1)
    assert lin.m <= 1 + 2 * (4 + 2)
    for M in (lin.gamma, *lin.zetas):
        assert np.abs(M - M.conj().T).max() <= 1e-14


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_corner_identity_random(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    p = random_selfadjoint(rng, k)
    N = int(rng.integers(2, 9))
    args = [rand_herm(rng, N) for _ in range(k)]
    z = complex(rng.uniform(-3, 3), rng.choice([-1, 1]) * rng.uniform(0.5, 3))
    assert corner_deviation(linearize(p), p, args, z) <= 1e-9


def test_invertibility_equivalence():
    rng = np.random.default_rng(11)
    p = parse_polynomial("x1*x2 + x2*x1 + x1^2", 2, 0)
    lin = linearize(p)
    args = [rand_herm(rng, 4) for _ in range(2)]
    eigs = np.linalg.eigvalsh(evaluate(p, args))
    E11 = np.zeros((lin.m, lin.m))
    E11[0, 0] = 1

    def smallest_sv(z):
        pencil = np.kron(z * E11, np.eye(4)) - lin.pencil(args)
        s = np.linalg.svd(pencil, compute_uv=False)
        return s[-1] / s[0]

    for e in eigs:
        assert smallest_sv(e) <= 1e-8
        with pytest.raises(SpectralPointError):
            corner_deviation(lin, p, args, e)
    outside = eigs.max() + 1.0
    assert smallest_sv(outside) > 1e-6
    assert corner_deviation(lin, p, args, outside) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 3.0))
def test_q_block_bounded_by_kappa(seed, C):
    rng = np.random.default_rng(seed)
    p = random_selfadjoint(rng, 2, max_degree=4)
    lin = linearize(p)
    if lin.m == 1:
        return
    kappa, _ = gap_constants(lin, C)
    args = []
    for _ in range(2):
        h = rand_herm(rng, 3)
        args.append(C * h / np.linalg.norm(h, 2))
    Q = lin.pencil(args)[3:, 3:]
    assert np.linalg.norm(np.linalg.inv(Q), 2) <= kappa * (1 + 1e-9)


def test_gap_bound_degree_one():
    assert linearized_gap_bound(linearize(X(1, 1)), 2.0, 0.3) == 0.3


def test_gap_bound_symmetric_product():
    lin = linearize(X(1) * X(2) + X(2) * X(1))
    eps = linearized_gap_bound(lin, 1.0, 0.5)
    assert 0 < eps <= 0.5


def test_gap_bound_zero_norm():
    lin = linearize(parse_polynomial("x1*x2*x1", 2, 0))
    kappa, ell = gap_constants(lin, 0.0)
    assert ell == pytest.approx(np.linalg.norm(lin.gamma[0, 1:]))
    assert linearized_gap_bound(lin, 0.0, 1.0) > 0


def test_json_round_trip():
    lin = linearize(parse_polynomial("x1*a1 + a1*x1 + x1^2", 1, 1))
    back = Linearization.from_json(json.loads(json.dumps(lin.to_json())))
    assert back.m == lin.m
    np.testing.assert_array_equal(back.gamma, lin.gamma)
    for a, b in zip(back.zetas, lin.zetas):
        np.testing.assert_array_equal(a, b)
