"""Self-adjoint linearizations of self-adjoint noncommutative polynomials.

A linearization of ``P`` is a Hermitian pencil
``L_P = gamma (x) 1 + sum_j zeta_j (x) X_j`` of size ``m`` such that

    (z - P(X))^{-1} = [(z E_11 (x) 1 - L_P(X))^{-1}]_{11}

for every tuple of self-adjoint ``X``.  We use the block form
``L_P = [[h, u], [u*, Q]]`` where ``h`` carries the degree <= 1 part of ``P``
and ``P = h - u Q^{-1} u*``.

Affine matrix entries are stored as arrays of shape ``(k + 1, rows, cols)``:
slot 0 holds the constant part and slot ``j`` the coefficient of ``X_j``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from . import matops
from .errors import ContractError, SpectralPointError
from .ncalg import Monomial, NCPolynomial, evaluate, is_selfadjoint, split_selfadjoint


@dataclass(frozen=True)
class Linearization:
    """Hermitian pencil ``gamma (x) 1 + sum_j zetas[j] (x) X_{j+1}``."""

    m: int
    gamma: np.ndarray
    zetas: tuple
    source_degree: int

    @property
    def arity(self) -> int:
        return len(self.zetas)

    def pencil(self, args) -> np.ndarray:
        """``L_P`` evaluated at a tuple of ``N x N`` matrices, as an ``mN x mN`` array."""
        args = [np.asarray(a, dtype=complex) for a in args]
        size = args[0].shape[0] if args else 1
        return matops.kron_assemble([self.gamma, *self.zetas], [np.eye(size), *args])

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "source_degree": self.source_degree,
            "gamma": matops.matrix_to_json(self.gamma),
            "zetas": [matops.matrix_to_json(z) for z in self.zetas],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Linearization":
        gamma = matops.matrix_from_json(data["gamma"])
        zetas = tuple(matops.matrix_from_json(z) for z in data["zetas"])
        lin = cls(int(data["m"]), gamma, zetas, int(data.get("source_degree", 0)))
        _check_hermitian(lin)
        return lin


class MonomialBlock(NamedTuple):
    """Pieces of the linearization of one monomial.

    For degree <= 1 only ``head`` (a ``(k+1, 1, 1)`` affine scalar) is set.
    Otherwise ``u`` is ``(k+1, 1, l-1)``, ``v`` is ``(k+1, l-1, 1)`` and ``Q``
    is ``(k+1, l-1, l-1)``, with ``mono = -u Q^{-1} v``.
    """

    head: np.ndarray | None
    u: np.ndarray | None
    v: np.ndarray | None
    Q: np.ndarray | None


def _require_selfadjoint_generators(k, flags):
    if not all(flags):
        raise ContractError("linearization requires every generator to be self-adjoint")


def _monomial_block(indices, coefficient, k):
    l = len(indices)
    block = np.zeros((k + 1, l, l), dtype=complex)
    block[indices[0], 0, l - 1] = coefficient
    for j in range(1, l):
        block[indices[j], j, l - 1 - j] = 1.0
        block[0, j, l - j] = -1.0
    return block


def linearize_monomial(mono: Monomial, k: int) -> MonomialBlock:
    """Antidiagonal block for ``c * X_{i1} ... X_{il}``.

    Row 0 of the ``l x l`` block holds ``c X_{i1}`` in its last column; row
    ``j`` holds ``X_{i(j+1)}`` at column ``l-1-j`` and ``-1`` just right of it.
    """
    word = mono.word
    if not word:
        raise ContractError("constant terms are absorbed into gamma, not linearized")
    if any(g.starred for g in word):
        raise ContractError("linearization requires every generator to be self-adjoint")
    if len(word) == 1:
        head = np.zeros((k + 1, 1, 1), dtype=complex)
        head[word[0].index, 0, 0] = mono.coefficient
        return MonomialBlock(head, None, None, None)
    if __debug__:
        _check_sign_convention(len(word))
    block = _monomial_block([g.index for g in word], mono.coefficient, k)
    return MonomialBlock(None, block[:, :1, 1:], block[:, 1:, :1], block[:, 1:, 1:])


@functools.lru_cache(maxsize=None)
def _check_sign_convention(l: int):
    # one-time check per degree that -u Q^{-1} v reproduces the ordered word
    rng = np.random.default_rng(l)
    size = 3
    mats = [rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size)) for _ in range(l)]
    mats = [a + a.conj().T for a in mats]
    full = _evaluate_affine(_monomial_block(list(range(1, l + 1)), 1.0, l), mats)
    u, v, Q = full[:size, size:], full[size:, :size], full[size:, size:]
    got = -u @ np.linalg.solve(Q, v)
    assert np.allclose(got, np.linalg.multi_dot(mats), atol=1e-9), f"sign convention broken at degree {l}"


def _evaluate_affine(aff, args):
    size = args[0].shape[0]
    return matops.kron_assemble(list(aff), [np.eye(size), *args])


def _affine_adjoint(aff):
    return np.conj(np.swapaxes(aff, 1, 2))


def linearize(p: NCPolynomial) -> Linearization:
    """Build a Hermitian linearization of a self-adjoint polynomial.

    The degree <= 1 part of ``p`` sits in the ``(1,1)`` entry; the higher
    degree part of ``P0`` (with ``p = P0 + P0*``) is linearized monomial by
    monomial, stacked block-diagonally and symmetrized as
    ``[[h, u0, v0*], [u0*, 0, Q0*], [v0, Q0, 0]]``.
    """
    if not is_selfadjoint(p):
        raise ContractError("linearize requires a self-adjoint polynomial")
    _require_selfadjoint_generators(p.arity, p.selfadjoint)
    k = p.arity
    head = np.zeros((k + 1, 1, 1), dtype=complex)
    for mono in p.monomials:
        if mono.degree == 0:
            head[0, 0, 0] += mono.coefficient
        elif mono.degree == 1:
            head[mono.word[0].index, 0, 0] += mono.coefficient

    blocks = [linearize_monomial(mono, k) for mono in split_selfadjoint(p).monomials if mono.degree >= 2]
    S = sum(b.Q.shape[1] for b in blocks)
    m = 1 + 2 * S
    L = np.zeros((k + 1, m, m), dtype=complex)
    L[:, :1, :1] = (head + _affine_adjoint(head)) / 2
    offset = 0
    for b in blocks:
        s = b.Q.shape[1]
        cols = slice(1 + offset, 1 + offset + s)  # u0 / Q0* columns
        rows = slice(1 + S + offset, 1 + S + offset + s)  # v0 / Q0 rows
        L[:, 0:1, cols] = b.u
        L[:, cols, 0:1] = _affine_adjoint(b.u)
        L[:, rows, 0:1] = b.v
        L[:, 0:1, rows] = _affine_adjoint(b.v)
        L[:, rows, cols] = b.Q
        L[:, cols, rows] = _affine_adjoint(b.Q)
        offset += s
    lin = Linearization(m, L[0].copy(), tuple(L[j].copy() for j in range(1, k + 1)), p.degree)
    _check_hermitian(lin)
    return lin


def _check_hermitian(lin: Linearization):
    for name, mat in [("gamma", lin.gamma)] + [(f"zeta_{j+1}", z) for j, z in enumerate(lin.zetas)]:
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-14:
            raise ContractError(f"{name} is not Hermitian")


def corner_deviation(lin: Linearization, p: NCPolynomial, args, z: complex) -> float:
    """Max entrywise gap between ``(z - P)^{-1}`` and the pencil's corner inverse."""
    args = [np.asarray(a, dtype=complex) for a in args]
    N = args[0].shape[0]
    direct_pencil = z * np.eye(N) - evaluate(p, args)
    E11 = np.zeros((lin.m, lin.m))
    E11[0, 0] = 1.0
    big = np.kron(z * E11, np.eye(N)) - lin.pencil(args)
    for A in (direct_pencil, big):
        cond = np.linalg.cond(A)
        if not cond <= 1e13:
            raise SpectralPointError(f"z={z} lies on the spectrum", cond)
    left = la.solve(direct_pencil, np.eye(N))
    # only the first N columns of the inverse are needed
    rhs = np.zeros((lin.m * N, N), dtype=complex)
    rhs[:N] = np.eye(N)
    right = la.solve(big, rhs)[:N]
    return float(np.max(np.abs(left - right)))


def corner_resolvent_check(lin: Linearization, p: NCPolynomial, args, z: complex, tol: float) -> bool:
    for a in args:
        matops.require_hermitian(a, "argument")
    return corner_deviation(lin, p, args, z) <= tol


def _nilpotency_index(pattern) -> int | None:
    size = pattern.shape[0]
    power = np.eye(size)
    for d in range(1, size + 2):
        power = (power @ pattern > 0).astype(float)
        if not power.any():
            return d
    return None


def gap_constants(lin: Linearization, C: float) -> tuple:
    """Bounds ``(kappa, ell)`` on ``||Q^{-1}||`` and ``||u||`` over tuples with norms <= ``C``.

    ``Q = Qc + N(X)`` with ``Qc^{-1} N`` nilpotent of index ``d``, so
    ``Q^{-1} = sum_{k<d} (-Qc^{-1} N)^k Qc^{-1}`` and the Neumann series is
    bounded term by term.
    """
    if lin.m == 1:
        return 0.0, 0.0
    Qc = lin.gamma[1:, 1:]
    Qj = [z[1:, 1:] for z in lin.zetas]
    Qc_inv = np.linalg.inv(Qc)
    a = matops.operator_norm(Qc_inv)
    q = C * sum(matops.operator_norm(Z) for Z in Qj)
    pattern = sum((np.abs(Qc_inv @ Z) > 1e-14).astype(float) for Z in Qj) if Qj else np.zeros_like(Qc.real)
    d = _nilpotency_index(pattern)
    if d is not None:
        kappa = a * sum((a * q) ** k for k in range(d))
    elif a * q < 1:
        kappa = a / (1 - a * q)
    else:
        kappa = float("inf")
    uc = lin.gamma[0, 1:]
    ell = matops.operator_norm(uc[None, :]) + C * sum(matops.operator_norm(z[0:1, 1:]) for z in lin.zetas)
    return kappa, ell


def linearized_gap_bound(lin: Linearization, C: float, delta: float) -> float:
    """Distance ``eps`` from 0 to the spectrum of ``z0 E11 - L_P(y)`` when ``dist(z0, sp P(y)) > delta``.

    ``eps = min(1 / (2 kappa), delta / (1 + 2 kappa^2 ell^2))``; degree <= 1
    polynomials have no ``Q`` block and get ``eps = delta``.
    """
    if delta <= 0:
        raise ContractError("delta must be positive")
    if lin.m == 1:
        return float(delta)
    kappa, ell = gap_constants(lin, C)
    if not np.isfinite(kappa):
        return 0.0
    return float(min(1.0 / (2.0 * kappa), delta / (1.0 + 2.0 * kappa**2 * ell**2)))
