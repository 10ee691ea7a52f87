"""Densities, supports and norms recovered from the subordination solver.

Densities come from Stieltjes inversion, ``rho(x) = -Im g(x + i eps) / pi``.
For a polynomial ``P`` the scalar transform is read off the corner of the
operator-valued transform of its linearization at the regularized point
``b(x, eps) = x E_11 + i eps I_m``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import matops
from .errors import ContractError, DivergenceError, SolverQualityError
from .linearize import linearize
from .ncalg import NCPolynomial, format_polynomial, is_selfadjoint
from .subord import DEFAULT_OPTIONS, ModelSpec, SolverOptions, scalar_gtilde, solve_subordination

DEFAULT_EPS = 1e-3
DEFAULT_THRESHOLD = 1e-3
NEGATIVE_CLIP = 1e-9
ATOM_MIN_MASS = 1e-3


@dataclass
class DensityGrid:
    points: np.ndarray
    eps: float
    values: np.ndarray
    converged: np.ndarray
    mass: float

    def to_csv(self) -> str:
        lines = ["x,density,converged"]
        for x, v, ok in zip(self.points, self.values, self.converged):
            lines.append(f"{float(x)!r},{float(v)!r},{int(bool(ok))}")
        return "\n".join(lines) + "\n"

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral, normalized to end at 1."""
        vals = np.where(np.isfinite(self.values), self.values, 0.0)
        steps = np.diff(self.points) * (vals[1:] + vals[:-1]) / 2
        out = np.concatenate([[0.0], np.cumsum(steps)])
        return out / out[-1] if out[-1] > 0 else out

    def moments(self, count: int = 4) -> np.ndarray:
        """Normalized moments ``int x^k rho / int rho`` for ``k = 1..count``."""
        vals = np.where(np.isfinite(self.values), self.values, 0.0)
        total = np.trapezoid(vals, self.points)
        return np.array([np.trapezoid(self.points**k * vals, self.points) / total for k in range(1, count + 1)])


@dataclass
class SupportSet:
    intervals: list
    threshold: float
    eps: float
    refine_eps: float = 0.0
    atoms: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.intervals

    def contains(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.intervals)

    def gaps(self) -> list:
        """Bounded open gaps between consecutive intervals."""
        return [(a[1], b[0]) for a, b in zip(self.intervals, self.intervals[1:])]

    def to_json(self) -> str:
        data = asdict(self)
        data["intervals"] = [[float(a), float(b)] for a, b in self.intervals]
        data["atoms"] = [{"location": float(x), "mass": float(w)} for x, w in self.atoms]
        return json.dumps(data, indent=2, sort_keys=True)


def fatten_support(s: SupportSet, eps: float) -> SupportSet:
    """Expand every interval by ``eps`` and merge overlaps."""
    if eps < 0:
        raise ContractError("eps must be nonnegative")
    merged = []
    for lo, hi in sorted((a - eps, b + eps) for a, b in s.intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return SupportSet([tuple(iv) for iv in merged], s.threshold, s.eps, s.refine_eps, list(s.atoms), dict(s.params))


# ---------------------------------------------------------------------------
# Scalar transform evaluators
# ---------------------------------------------------------------------------

Evaluator = Callable  # (x, eps, omega0) -> (complex g, state)


def model_evaluator(model: ModelSpec, opts: SolverOptions = DEFAULT_OPTIONS) -> Evaluator:
    def evaluate(x, eps, omega0=None):
        return scalar_gtilde(model, x, eps, opts, omega0)

    return evaluate


def corner_evaluator(model: ModelSpec, opts: SolverOptions = DEFAULT_OPTIONS) -> Evaluator:
    """``[G~(x E_11 + i eps I)]_{11}`` for a linearized model."""
    E11 = np.zeros((model.m, model.m))
    E11[0, 0] = 1.0

    def evaluate(x, eps, omega0=None):
        lam = x * E11 + 1j * eps * np.eye(model.m)
        state = solve_subordination(model, lam, opts, omega0)
        return complex(state.gtilde[0, 0]), state

    return evaluate


def _density_at(evaluator, x, eps, omega0=None):
    g, state = evaluator(x, eps, omega0)
    return -g.imag / math.pi, state


def sweep_density(evaluator: Evaluator, grid, eps: float) -> DensityGrid:
    """Evaluate the density along ``grid`` with warm starts from the previous point."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or (grid.size > 1 and np.any(np.diff(grid) <= 0)):
        raise ContractError("grid must be a strictly ascending 1-d array")
    values = np.full(grid.shape, np.nan)
    converged = np.zeros(grid.shape, dtype=bool)
    omega = None
    for i, x in enumerate(grid):
        try:
            rho, state = _density_at(evaluator, x, eps, omega)
        except DivergenceError:
            omega = None
            continue
        omega = state.omega
        values[i] = rho
        converged[i] = True
    bad = values < -NEGATIVE_CLIP
    if np.any(bad):
        worst = float(np.nanmin(values))
        raise SolverQualityError(f"density {worst:.3e} at x={grid[bad][0]:.6g} is negative beyond round-off")
    values = np.where(values < 0, 0.0, values)
    finite = np.isfinite(values)
    mass = float(np.trapezoid(values[finite], grid[finite])) if finite.sum() > 1 else 0.0
    return DensityGrid(grid, float(eps), values, converged, mass)


def default_grid(radius: float, eps: float, step: float | None = None) -> np.ndarray:
    step = eps / 2 if step is None else step
    half = radius + 1.0
    count = int(round(2 * half / step))
    return -half + step * np.arange(count + 1)


def density_of_model(model: ModelSpec, grid=None, eps: float = DEFAULT_EPS, opts: SolverOptions = DEFAULT_OPTIONS) -> DensityGrid:
    """Density of ``s`` on ``grid`` (default: ``[-R-1, R+1]`` with step ``eps/2``)."""
    if grid is None:
        grid = default_grid(model.radius, eps)
    return sweep_density(model_evaluator(model, opts), grid, eps)


# ---------------------------------------------------------------------------
# Supports
# ---------------------------------------------------------------------------

def _runs(mask):
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _refine_edge(evaluator, inside, outside, eps, threshold, resolution):
    """Bisect for the threshold crossing of the density at height ``eps``.

    ``inside`` is a point where the coarse density exceeded ``threshold``,
    ``outside`` one where it did not.  Both are first moved until they
    bracket the crossing at the refined height.
    """
    direction = math.copysign(1.0, outside - inside)
    step = abs(outside - inside)

    def above(x):
        try:
            return _density_at(evaluator, x, eps)[0] > threshold
        except DivergenceError:
            return False

    walk = step
    while above(outside):
        outside += direction * walk
        walk *= 2
    probe = inside
    walk = step
    found = above(probe)
    for _ in range(40):
        if found:
            break
        probe = inside - direction * walk
        walk *= 2
        found = above(probe)
        if abs(probe - inside) > 1.0:
            break
    if not found:
        return None
    lo, hi = probe, outside
    while abs(hi - lo) > resolution:
        mid = (lo + hi) / 2
        if above(mid):
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _detect_atoms(evaluator, density: DensityGrid, threshold):
    """Local peaks whose height grows like ``1/eps`` when ``eps`` shrinks."""
    vals = np.where(np.isfinite(density.values), density.values, 0.0)
    x, eps = density.points, density.eps
    atoms = []
    for i in range(1, len(vals) - 1):
        if not (vals[i] > threshold and vals[i] >= vals[i - 1] and vals[i] > vals[i + 1]):
            continue
        if math.pi * eps * vals[i] < ATOM_MIN_MASS:
            continue
        try:
            lifted = _density_at(evaluator, x[i], eps / 4)[0]
        except DivergenceError:
            continue
        if lifted < 2.0 * vals[i]:
            continue
        step = x[i + 1] - x[i]
        res = minimize_scalar(
            lambda y: -_density_at(evaluator, y, eps)[0],
            bounds=(x[i] - step, x[i] + step),
            method="bounded",
            options={"xatol": step * 1e-3},
        )
        loc = float(res.x)
        mass = math.pi * eps * _density_at(evaluator, loc, eps)[0]
        atoms.append((loc, mass))
    return atoms


def support_from_evaluator(
    evaluator: Evaluator,
    radius: float,
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    step: float | None = None,
    refine_eps: float | None = None,
) -> SupportSet:
    """Intervals where the density exceeds ``threshold``.

    Candidate intervals come from a sweep at height ``eps``; every endpoint
    is then re-located by bisection on the density at the lower height
    ``refine_eps`` (default ``eps / 10``) to a resolution of ``step / 100``.
    The lower height removes most of the Cauchy tail that smearing at
    ``eps`` adds outside the true support.
    """
    step = eps / 2 if step is None else step
    refine_eps = eps / 10 if refine_eps is None else refine_eps
    density = sweep_density(evaluator, default_grid(radius, eps, step), eps)
    x = density.points
    mask = np.nan_to_num(density.values, nan=0.0) > threshold
    atoms = _detect_atoms(evaluator, density, threshold)
    intervals = []
    for a, b in _runs(mask):
        left_out = x[a - 1] if a > 0 else x[a] - step
        right_out = x[b + 1] if b + 1 < len(x) else x[b] + step
        lo = _refine_edge(evaluator, x[a], left_out, refine_eps, threshold, step / 100)
        hi = _refine_edge(evaluator, x[b], right_out, refine_eps, threshold, step / 100)
        if lo is None or hi is None or hi < lo:
            continue
        inner = [(loc, w) for loc, w in atoms if lo <= loc <= hi]
        if len(inner) == 1:
            # snap edges that are just the Lorentzian tail of an isolated atom
            loc, w = inner[0]
            tail = math.sqrt(max(w, 0.0) * refine_eps / (math.pi * threshold))
            if loc - lo <= 1.5 * tail + step:
                lo = loc
            if hi - loc <= 1.5 * tail + step:
                hi = loc
        intervals.append((float(lo), float(hi)))
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    params = {"radius": float(radius), "step": float(step)}
    return SupportSet(merged, float(threshold), float(eps), float(refine_eps), atoms, params)


def support_of_model(
    model: ModelSpec,
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    opts: SolverOptions = DEFAULT_OPTIONS,
    step: float | None = None,
    refine_eps: float | None = None,
) -> SupportSet:
    """Detected spectrum of ``s`` as a union of closed intervals."""
    return support_from_evaluator(model_evaluator(model, opts), model.radius, eps, threshold, step, refine_eps)


# ---------------------------------------------------------------------------
# Polynomials
# ---------------------------------------------------------------------------

def polynomial_model(p: NCPolynomial, dets: Sequence = ()) -> ModelSpec:
    """Linearized model of ``p(x_1..x_r, a_1..a_t)`` with ``t = len(dets)``."""
    if not is_selfadjoint(p):
        raise ContractError("polynomial must be self-adjoint")
    r = p.arity - len(dets)
    if r < 0:
        raise ContractError(f"{len(dets)} deterministic matrices for a polynomial in {p.arity} variables")
    return ModelSpec.from_linearization(linearize(p), r, dets)


def polynomial_radius(p: NCPolynomial, dets: Sequence = ()) -> float:
    """Crude bound on ``||p||``: sum of ``|c|`` times the product of generator norms (``||x_v|| = 2``)."""
    r = p.arity - len(dets)
    norms = [2.0] * r + [matops.operator_norm(A) for A in dets]
    return float(sum(abs(mono.coefficient) * math.prod(norms[g.index - 1] for g in mono.word) for mono in p.monomials))


def polynomial_distribution(
    p: NCPolynomial,
    dets: Sequence = (),
    grid=None,
    eps: float = DEFAULT_EPS,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> DensityGrid:
    """Density of ``p(x, a)``; generators beyond the semicircular ones take ``dets``."""
    model = polynomial_model(p, dets)
    if grid is None:
        grid = default_grid(polynomial_radius(p, dets), eps)
    return sweep_density(corner_evaluator(model, opts), grid, eps)


def support_of_polynomial(
    p: NCPolynomial,
    dets: Sequence = (),
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    opts: SolverOptions = DEFAULT_OPTIONS,
    step: float | None = None,
    refine_eps: float | None = None,
) -> SupportSet:
    model = polynomial_model(p, dets)
    support = support_from_evaluator(
        corner_evaluator(model, opts), polynomial_radius(p, dets), eps, threshold, step, refine_eps
    )
    support.params["polynomial"] = format_polynomial(p, p.arity - len(dets))
    return support


def norm_of_polynomial(
    p: NCPolynomial,
    dets: Sequence = (),
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    opts: SolverOptions = DEFAULT_OPTIONS,
    step: float | None = None,
    support: SupportSet | None = None,
) -> float:
    """``||p(x, a)||`` as the largest ``|endpoint|`` of its detected support."""
    if support is None:
        support = support_of_polynomial(p, dets, eps, threshold, opts, step)
    points = [abs(v) for iv in support.intervals for v in iv] + [abs(loc) for loc, _ in support.atoms]
    return max(points, default=0.0)
