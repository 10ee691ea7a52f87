"""Operator-valued subordination for ``s = gamma (x) 1 + sum alpha_v (x) x_v + sum beta_u (x) a_u``.

The ``x_v`` are free semicircular elements and ``a = (a_1..a_t)`` is
distributed like the deterministic matrices ``(A_1..A_t)`` under the
normalized trace.  With ``eta(b) = sum_v alpha_v b alpha_v`` and

    G_a(rho) = (id_m (x) tr_n)(rho (x) I_n - sum_u beta_u (x) A_u)^{-1},

the matrix Stieltjes transform of ``s`` at ``lambda`` is
``G~(lambda) = G_a(omega(lambda))`` where ``omega`` is the unique fixed
point in the upper half-plane of

    omega = lambda - gamma - eta(G_a(omega)).

``Lambda(rho) = gamma + rho + eta(G_a(rho))`` is a left inverse of ``omega``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import matops
from .errors import ConditioningError, ContractError, DivergenceError, SizeError, StructureError


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of :func:`solve_subordination`.

    ``tol`` is relative: the fixed-point defect must fall below
    ``tol * max(1, ||lambda||_F)``.  ``method`` picks the update direction,
    a Newton step (default) or the plain Picard map; both are damped.
    """

    tol: float = 1e-11
    max_iter: int = 2000
    damping_min: float = 0.05
    continuation_start: float = 1.0
    continuation_below: float = 0.05
    method: str = "newton"

    def __post_init__(self):
        if self.method not in ("newton", "picard"):
            raise ContractError(f"unknown solver method {self.method!r}")
        if not 0 < self.damping_min <= 1:
            raise ContractError("damping_min must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1:
            raise ContractError("tol must be positive and max_iter at least 1")


DEFAULT_OPTIONS = SolverOptions()


class ModelSpec:
    """Coefficients ``(gamma, alphas, betas)`` and deterministic matrices ``dets``.

    All matrices are checked Hermitian (and symmetrized).  When the ``dets``
    can be diagonalized simultaneously (``t == 1``, all diagonal, or pairwise
    commuting) ``G_a`` reduces to a weighted sum of ``m x m`` inverses over
    the distinct joint eigenvalues; otherwise the dense ``mn x mn`` inverse
    is used.
    """

    def __init__(self, gamma, alphas: Sequence = (), betas: Sequence = (), dets: Sequence = ()):
        gamma = matops.require_hermitian(np.atleast_2d(gamma), "gamma")
        m = gamma.shape[0]
        self.gamma = gamma
        self.alphas = tuple(matops.require_hermitian(np.atleast_2d(a), f"alpha_{v+1}") for v, a in enumerate(alphas))
        self.betas = tuple(matops.require_hermitian(np.atleast_2d(b), f"beta_{u+1}") for u, b in enumerate(betas))
        self.dets = tuple(matops.require_hermitian(np.atleast_2d(A), f"A_{u+1}") for u, A in enumerate(dets))
        for mat in self.alphas + self.betas:
            if mat.shape != (m, m):
                raise SizeError(f"coefficient of shape {mat.shape} does not match m={m}")
        if len(self.betas) != len(self.dets):
            raise SizeError(f"{len(self.betas)} betas but {len(self.dets)} deterministic matrices")
        sizes = {A.shape[0] for A in self.dets}
        if len(sizes) > 1:
            raise SizeError(f"deterministic matrices have different sizes {sorted(sizes)}")
        for A in self.dets:
            if not np.all(np.isfinite(A)):
                raise StructureError("deterministic matrices must be finite")
        self.m = m
        self.r = len(self.alphas)
        self.t = len(self.betas)
        self.n = sizes.pop() if sizes else 1
        self.alpha_norms = tuple(matops.operator_norm(a) for a in self.alphas)
        self.beta_norms = tuple(matops.operator_norm(b) for b in self.betas)
        self.det_norms = tuple(matops.operator_norm(A) for A in self.dets)
        self._atoms = self._joint_spectrum()
        if self._atoms is None:
            self._dense = matops.kron_assemble(list(self.betas), list(self.dets))

    @classmethod
    def from_linearization(cls, lin, r: int, dets: Sequence = ()):
        """Model of ``L_P(x_1..x_r, a_1..a_t)``: generators ``1..r`` are semicircular."""
        if lin.arity != r + len(dets):
            raise SizeError(f"linearization has {lin.arity} generators, expected r + t = {r + len(dets)}")
        return cls(lin.gamma, lin.zetas[:r], lin.zetas[r:], dets)

    @property
    def radius(self) -> float:
        """A priori bound ``||gamma|| + 2 sum ||alpha_v|| + sum ||beta_u|| ||A_u||`` on ``||s||``."""
        return (
            matops.operator_norm(self.gamma)
            + 2 * sum(self.alpha_norms)
            + sum(b * a for b, a in zip(self.beta_norms, self.det_norms))
        )

    def _joint_spectrum(self):
        if self.t == 0:
            return np.ones(1), np.zeros((1, self.m, self.m), dtype=complex)
        if all(np.count_nonzero(A - np.diag(np.diag(A))) == 0 for A in self.dets):
            mu = np.stack([np.diag(A).real for A in self.dets], axis=1)
        else:
            if self.t == 1:
                V = np.linalg.eigh(self.dets[0])[1]
            else:
                rng = np.random.default_rng(0)
                mix = sum(c * A for c, A in zip(rng.standard_normal(self.t), self.dets))
                V = np.linalg.eigh(mix)[1]
            mu = []
            for A in self.dets:
                D = V.conj().T @ A @ V
                off = D - np.diag(np.diag(D))
                if np.linalg.norm(off) > 1e-10 * max(1.0, np.linalg.norm(A)):
                    return None
                mu.append(np.diag(D).real)
            mu = np.stack(mu, axis=1)
        values, counts = np.unique(np.round(mu, 12), axis=0, return_counts=True)
        weights = counts / mu.shape[0]
        B = np.einsum("ku,uij->kij", values, np.array(self.betas))
        return weights, B

    # -- building blocks -------------------------------------------------------
    def eta(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        out = np.zeros((self.m, self.m), dtype=complex)
        for a in self.alphas:
            out += a @ b @ a
        return out

    def _eta_matrix(self):
        # vec(eta(X))[(i,j)] = sum_{p,q} E[(i,j),(p,q)] X[p,q] (row-major vec)
        if not hasattr(self, "_eta_mat"):
            m = self.m
            E = np.zeros((m * m, m * m), dtype=complex)
            for a in self.alphas:
                E += np.einsum("ip,qj->ijpq", a, a).reshape(m * m, m * m)
            self._eta_mat = E
        return self._eta_mat

    def _resolvents(self, rho):
        weights, B = self._atoms
        pencils = rho[None, :, :] - B
        try:
            R = np.linalg.inv(pencils)
        except np.linalg.LinAlgError:
            raise ConditioningError("singular pencil in G_a", float("inf")) from None
        return weights, R

    def g_det(self, rho, with_jacobian: bool = False):
        rho = np.asarray(rho, dtype=complex)
        m = self.m
        if self._atoms is not None:
            weights, R = self._resolvents(rho)
            G = np.einsum("k,kij->ij", weights, R)
            if not with_jacobian:
                return G
            J = -np.einsum("k,kia,kbj->ijab", weights, R, R).reshape(m * m, m * m)
            return G, J
        n = self.n
        R = matops._inverse(np.kron(rho, np.eye(n)) - self._dense, "pencil in G_a")
        G = matops.partial_trace_n(R, m)
        if not with_jacobian:
            return G
        Rb = matops.blocks_of(R, m)
        J = -np.einsum("iapq,bjqp->ijab", Rb, Rb).reshape(m * m, m * m) / n
        return G, J


def eta(model: ModelSpec, b) -> np.ndarray:
    """Completely positive map ``b -> sum_v alpha_v b alpha_v``."""
    return model.eta(b)


def g_deterministic(model: ModelSpec, rho) -> np.ndarray:
    """Operator-valued Stieltjes transform of ``sum_u beta_u (x) a_u`` at ``rho``."""
    rho = matops.half_plane_point(rho)
    if rho.shape != (model.m, model.m):
        raise SizeError(f"rho must be {model.m}x{model.m}")
    return model.g_det(rho)


def capital_lambda(model: ModelSpec, rho) -> np.ndarray:
    """``gamma + rho + eta(G_a(rho))``."""
    rho = matops.half_plane_point(rho)
    return model.gamma + rho + model.eta(model.g_det(rho))


@dataclass
class SubordinationState:
    lam: np.ndarray
    omega: np.ndarray
    gtilde: np.ndarray
    residual: float
    iterations: int
    converged: bool
    projected: bool = False
    stages: int = 1
    history: list = field(default_factory=list, repr=False)


def _defect(model, lam, omega):
    G = model.g_det(omega)
    return G, omega - lam + model.gamma + model.eta(G)


def _iterate(model: ModelSpec, lam, omega, opts: SolverOptions, tol_abs: float):
    """Damped fixed-point iteration from ``omega``; returns a state (converged or not)."""
    m = model.m
    G, F = _defect(model, lam, omega)
    res = float(np.linalg.norm(F))
    theta = 1.0
    projected = False
    newton = opts.method == "newton" and model.r > 0
    E = model._eta_matrix() if newton else None
    it = 0
    while it < opts.max_iter and res > tol_abs:
        it += 1
        step = -F
        if newton:
            _, DG = model.g_det(omega, with_jacobian=True)
            J = np.eye(m * m) + E @ DG
            try:
                step = np.linalg.solve(J, -F.reshape(-1)).reshape(m, m)
            except np.linalg.LinAlgError:
                step = -F
        while True:
            trial = omega + theta * step
            ok = matops.in_upper_half_plane(trial)
            if ok:
                try:
                    G_t, F_t = _defect(model, lam, trial)
                    res_t = float(np.linalg.norm(F_t))
                except ConditioningError:
                    ok = False
            if ok and res_t < res:
                omega, G, F, res = trial, G_t, F_t, res_t
                theta = min(1.0, 2.0 * theta)
                break
            if theta > opts.damping_min:
                theta = max(opts.damping_min, theta / 2)
                continue
            # smallest step still fails: accept it, projecting back into the half-plane if needed
            if not matops.in_upper_half_plane(trial):
                lo = matops.min_imag_eig(trial)
                trial = trial + 1j * (abs(lo) + 1e-10) * np.eye(m)
                projected = True
            omega = trial
            G, F = _defect(model, lam, omega)
            res = float(np.linalg.norm(F))
            break
    return SubordinationState(lam, omega, G, res, it, res <= tol_abs, projected)


def _heights(start: float, stop: float):
    """Geometric 1-2-5 ladder from ``start`` down to (and ending at) ``stop``."""
    out = []
    h = start
    factors = (0.5, 0.4, 0.5)  # 1 -> 0.5 -> 0.2 -> 0.1 -> ...
    i = 0
    while h > stop * (1 + 1e-12):
        out.append(h)
        h *= factors[i % 3]
        i += 1
    out.append(stop)
    return out


def solve_subordination(model: ModelSpec, lam, opts: SolverOptions = DEFAULT_OPTIONS, omega0=None) -> SubordinationState:
    """Fixed point ``omega = lambda - gamma - eta(G_a(omega))`` and ``G~ = G_a(omega)``.

    Parameters
    ----------
    model : ModelSpec
    lam : (m, m) complex array
        Point with positive definite imaginary part.
    opts : SolverOptions
    omega0 : (m, m) complex array, optional
        Warm start.  Without one the iteration starts at ``lambda``, and if
        ``Im lambda`` is smaller than ``opts.continuation_below`` the point
        is approached from above through a ladder of heights.

    Raises
    ------
    DivergenceError
        If the defect does not reach tolerance; ``exc.state`` holds the last
        iterate.
    """
    lam = matops.half_plane_point(lam)
    if lam.shape != (model.m, model.m):
        raise SizeError(f"lambda must be {model.m}x{model.m}, got {lam.shape}")
    tol_abs = opts.tol * max(1.0, float(np.linalg.norm(lam)))
    if model.r == 0:
        omega = lam - model.gamma
        return SubordinationState(lam, omega, model.g_det(omega), 0.0, 1, True)

    if omega0 is not None and matops.in_upper_half_plane(omega0):
        state = _iterate(model, lam, np.asarray(omega0, dtype=complex), opts, tol_abs)
        if state.converged and _physical(state, lam):
            return state

    height = matops.min_imag_eig(lam)
    ladders = []
    if height >= opts.continuation_below:
        ladders.append([height])
    if height < opts.continuation_start:
        # approach from above when the point is close to the axis or a direct solve fails
        ladders.append(_heights(opts.continuation_start, height))
    total = 0
    for ladder in ladders:
        state, used = _continue(model, lam, height, ladder, opts)
        total += used
        if state.converged:
            state.iterations = total
            return state
    raise DivergenceError("subordination iteration did not converge", state.residual, total, state)


def _continue(model, lam, height, ladder, opts):
    total = 0
    omega = None
    for stage, h in enumerate(ladder, start=1):
        lam_h = lam + 1j * (h - height) * np.eye(model.m)
        tol_h = opts.tol * max(1.0, float(np.linalg.norm(lam_h)))
        if h != ladder[-1]:
            tol_h = max(tol_h, 1e-8)
        state = _iterate(model, lam_h, lam_h.copy() if omega is None else omega, opts, tol_h)
        total += state.iterations
        omega = state.omega
    state.stages = stage
    return state, total


def _physical(state: SubordinationState, lam) -> bool:
    # the fixed point in the upper half-plane is unique and satisfies Im omega >= Im lambda
    return matops.min_imag_eig(state.omega) >= matops.min_imag_eig(lam) - 1e-8


def scalar_gtilde(model: ModelSpec, z: complex, eps: float = 0.0, opts: SolverOptions = DEFAULT_OPTIONS, omega0=None):
    """Scalar transform ``tr_m G~(z I_m)``.

    ``eps`` lifts real ``z`` into the half-plane; points below the real axis
    use ``g(conj z) = conj g(z)``.  Returns ``(value, state)``.
    """
    z = complex(z)
    if z.imag < 0:
        value, state = scalar_gtilde(model, z.conjugate(), eps, opts, omega0)
        return value.conjugate(), state
    if z.imag == 0:
        if eps <= 0:
            raise ContractError("real z needs eps > 0")
        z = z + 1j * eps
    lam = z * np.eye(model.m)
    state = solve_subordination(model, lam, opts, omega0)
    return complex(np.trace(state.gtilde) / model.m), state
