"""Desk-scale experiments comparing the solver's predictions with sampled matrices.

Every experiment returns a :class:`Report` whose JSON form embeds all seeds
and tolerances, so re-running with the same parameters reproduces it byte
for byte.  Wall-clock time is kept out of the JSON and written to a
separate timing file.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import matops, rmt
from .errors import FreeSpectraError, SizeError
from .ncalg import NCPolynomial, format_polynomial, is_selfadjoint
from .spectra import (
    SupportSet,
    fatten_support,
    norm_of_polynomial,
    polynomial_distribution,
    support_of_model,
    support_of_polynomial,
)
from .subord import DEFAULT_OPTIONS, ModelSpec, SolverOptions

ENDPOINT_SLACK = 1e-9
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class WignerConfig:
    """How the Wigner generators of an experiment are drawn.

    ``truncation = (C, delta)`` routes every sample through
    :func:`rmt.truncate_convolve`.
    """

    law: rmt.EntryLaw = rmt.EntryLaw("gaussian")
    seed: int = 0
    truncation: tuple | None = None

    def samples(self, n: int, r: int, trial: int) -> list:
        out = []
        for v in range(1, r + 1):
            w = rmt.sample_wigner(n, self.law, self.seed, trial, rmt.purpose_tag(v))
            if self.truncation is not None:
                C, delta = self.truncation
                w = rmt.truncate_convolve(w, C, delta, self.seed)
            out.append(w)
        return out

    def describe(self) -> dict:
        return {
            "law": str(self.law),
            "seed": self.seed,
            "truncation": None if self.truncation is None else list(self.truncation),
            "streams": "Philox key [seed ^ trial, 2v] for generator v, [seed ^ trial, 2v + 1] for its Gaussian convolution",
        }


@dataclass
class Report:
    kind: str
    parameters: dict
    summary: dict = field(default_factory=dict)
    verdict: bool = False
    trials: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "verdict": "pass" if self.verdict else "fail",
            "parameters": self.parameters,
            "summary": self.summary,
            "trials": self.trials,
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """One row per trial record, restricted to scalar fields."""
        rows = [{k: v for k, v in rec.items() if isinstance(v, (int, float, str, bool))} for rec in self.trials]
        columns = sorted({k for row in rows for k in row})
        buf = io.StringIO()
        writer = csv.DictWriter(buf, columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def line(self) -> str:
        bits = ", ".join(f"{k}={_short(v)}" for k, v in sorted(self.summary.items()) if not isinstance(v, (list, dict)))
        return f"{self.kind}: {'PASS' if self.verdict else 'FAIL'} ({bits})"

    def write(self, out_dir, stem: str | None = None) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        paths = [out / f"{stem}.json", out / f"{stem}.csv", out / f"{stem}.timing.json"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.to_csv())
        paths[2].write_text(json.dumps({"wall_clock_seconds": self.wall_clock}) + "\n")
        return paths


def _short(v):
    return f"{v:.4g}" if isinstance(v, float) else v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _run_trials(fn: Callable, keys: Sequence, threads: int = 1):
    """Apply ``fn`` to every key, collecting ``(key, result, error)`` in key order."""

    def guarded(key):
        try:
            return key, fn(key), None
        except (FreeSpectraError, np.linalg.LinAlgError, ValueError) as exc:
            return key, None, f"{type(exc).__name__}: {exc}"

    if threads <= 1:
        return [guarded(k) for k in keys]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, keys))


def resolve_dets(dets: Sequence, n: int) -> list:
    """Deterministic matrices at size ``n``; strings go through :func:`rmt.make_deterministic`."""
    out = []
    for A in dets:
        if isinstance(A, str):
            out.append(rmt.make_deterministic(A, n))
        elif callable(A):
            out.append(np.asarray(A(n), dtype=complex))
        else:
            A = np.asarray(A, dtype=complex)
            if A.shape != (n, n):
                raise SizeError(f"deterministic matrix is {A.shape[0]}x{A.shape[1]}, simulation needs {n}x{n}")
            out.append(A)
    return out


def _describe_dets(dets):
    return [A if isinstance(A, str) else matops.matrix_to_json(A) for A in dets if not callable(A)]


def count_in_interval(eigs, lo: float, hi: float, slack: float = ENDPOINT_SLACK) -> int:
    """Eigenvalues in the closed interval ``[lo, hi]``, widened by ``slack``."""
    eigs = np.asarray(eigs)
    return int(np.count_nonzero((eigs >= lo - slack) & (eigs <= hi + slack)))


def count_outside(eigs, support: SupportSet) -> int:
    inside = np.zeros(len(eigs), dtype=bool)
    for lo, hi in support.intervals:
        inside |= (eigs >= lo) & (eigs <= hi)
    return int(np.count_nonzero(~inside))


# ---------------------------------------------------------------------------
# Spectrum inclusion
# ---------------------------------------------------------------------------

def check_spectrum_inclusion(
    model: ModelSpec,
    wigner: WignerConfig,
    n: int,
    eps: float,
    trials: int,
    sim_dets: Sequence | None = None,
    support: SupportSet | None = None,
    support_eps: float = 1e-3,
    threshold: float = 1e-3,
    threads: int = 1,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> Report:
    """Count eigenvalues of the sampled block matrix outside the ``eps``-fattened model spectrum.

    The sampled matrix is ``gamma (x) I + sum alpha_v (x) X_v + sum beta_u (x) A_u``
    with ``A_u = sim_dets[u]`` (default: the model's own matrices, which
    then must be ``n x n``).
    """
    start = time.perf_counter()
    if eps <= 0:
        raise ValueError("eps must be positive")
    dets = resolve_dets(model.dets if sim_dets is None else sim_dets, n)
    if support is None:
        support = support_of_model(model, support_eps, threshold, opts)
    target = fatten_support(support, eps)
    coeffs = [model.gamma, *model.alphas, *model.betas]

    def trial(k):
        X = [w.matrix for w in wigner.samples(n, model.r, k)]
        eigs = np.linalg.eigvalsh(matops.kron_assemble(coeffs, [np.eye(n), *X, *dets]))
        return {"trial": k, "outside": count_outside(eigs, target), "min_eig": float(eigs[0]), "max_eig": float(eigs[-1])}

    results = _run_trials(trial, range(trials), threads)
    report = Report(
        "inclusion",
        {
            "m": model.m,
            "r": model.r,
            "t": model.t,
            "n": n,
            "eps": eps,
            "trials": trials,
            "support_eps": support.eps,
            "threshold": support.threshold,
            "wigner": wigner.describe(),
            "gamma": matops.matrix_to_json(model.gamma),
            "alphas": [matops.matrix_to_json(a) for a in model.alphas],
            "betas": [matops.matrix_to_json(b) for b in model.betas],
            "sim_dets": "model" if sim_dets is None else _describe_dets(sim_dets),
        },
    )
    _collect(report, results)
    counts = [rec["outside"] for rec in report.trials]
    report.summary = {
        "support": [list(iv) for iv in support.intervals],
        "fattened": [list(iv) for iv in target.intervals],
        "total_outside": int(sum(counts)),
        "completed_trials": len(counts),
    }
    report.verdict = not report.errors and sum(counts) == 0
    report.wall_clock = time.perf_counter() - start
    return report


def _collect(report, results):
    for key, rec, err in results:
        if err is None:
            report.trials.append(rec)
        else:
            report.errors.append({"trial": key if not isinstance(key, tuple) else list(key), "error": err})


# ---------------------------------------------------------------------------
# Gaps
# ---------------------------------------------------------------------------

@dataclass
class GapExperiment:
    """Eigenvalue count of ``p(X, A)`` inside ``gap`` across trials and sizes.

    ``dets`` are resolved per simulated size (strings via
    :func:`rmt.make_deterministic`); ``model_dets`` feed the solver and
    default to ``dets`` at the first size.  When ``gap`` is ``None`` the
    largest gap of the predicted support, shrunk by ``delta`` on each side,
    is tested.
    """

    polynomial: NCPolynomial
    dets: Sequence = ()
    laws: Sequence = (rmt.EntryLaw("gaussian"),)
    n_list: Sequence = (512,)
    trials: int = 20
    delta: float = 0.1
    seed: int = 0
    gap: tuple | None = None
    truncation: tuple | None = None
    model_dets: Sequence | None = None
    predicted: SupportSet | None = None
    eps: float = 1e-3
    threshold: float = 1e-3
    threads: int = 1
    opts: SolverOptions = DEFAULT_OPTIONS

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        self.laws = tuple(rmt.EntryLaw.parse(l) if isinstance(l, str) else l for l in self.laws)

    @property
    def r(self) -> int:
        return self.polynomial.arity - len(self.dets)


def widest_gap(support: SupportSet) -> tuple | None:
    gaps = support.gaps()
    return max(gaps, key=lambda g: g[1] - g[0]) if gaps else None


def predicted_support(exp: GapExperiment) -> SupportSet:
    if exp.predicted is None:
        model_dets = resolve_dets(exp.dets, exp.n_list[0]) if exp.model_dets is None else list(exp.model_dets)
        exp.predicted = support_of_polynomial(exp.polynomial, model_dets, exp.eps, exp.threshold, exp.opts)
    return exp.predicted


def check_gap(exp: GapExperiment) -> Report:
    """Pass iff no trial puts an eigenvalue in ``[b, c]``.

    The interval is closed and eigenvalues within ``1e-9`` of an endpoint
    count as inside.  If ``[b - delta, c + delta]`` meets the predicted
    support the report says so but the count still runs (negative controls
    rely on this).
    """
    start = time.perf_counter()
    support = predicted_support(exp)
    if exp.gap is None:
        g = widest_gap(support)
        if g is None:
            report = Report("gap", _gap_params(exp, support, None, False))
            report.summary = {"reason": "predicted support has no gap"}
            report.wall_clock = time.perf_counter() - start
            return report
        b, c = g[0] + exp.delta, g[1] - exp.delta
    else:
        b, c = exp.gap
    if c < b:
        raise ValueError(f"empty gap interval [{b}, {c}]")
    margin = (b - exp.delta, c + exp.delta)
    disjoint = all(hi <= margin[0] or lo >= margin[1] for lo, hi in support.intervals)
    disjoint = disjoint and not any(margin[0] < loc < margin[1] for loc, _ in support.atoms)

    keys = [(law_idx, n, k) for law_idx in range(len(exp.laws)) for n in exp.n_list for k in range(exp.trials)]
    dets_by_n = {n: resolve_dets(exp.dets, n) for n in exp.n_list}

    def trial(key):
        law_idx, n, k = key
        wigner = WignerConfig(exp.laws[law_idx], exp.seed, _truncation(exp, law_idx))
        eigs = rmt.empirical_spectrum(exp.polynomial, wigner.samples(n, exp.r, k), dets_by_n[n])
        return {
            "law": str(exp.laws[law_idx]),
            "n": n,
            "trial": k,
            "in_gap": count_in_interval(eigs, b, c),
            "nearest_below": float(eigs[eigs < b].max(initial=-np.inf)),
            "nearest_above": float(eigs[eigs > c].min(initial=np.inf)),
        }

    results = _run_trials(trial, keys, exp.threads)
    report = Report("gap", _gap_params(exp, support, (b, c), disjoint))
    _collect(report, results)
    counts = [rec["in_gap"] for rec in report.trials]
    report.summary = {
        "gap": [b, c],
        "gap_disjoint_from_support": disjoint,
        "total_in_gap": int(sum(counts)),
        "trials_with_eigenvalues": int(sum(c > 0 for c in counts)),
        "completed_trials": len(counts),
    }
    report.verdict = not report.errors and sum(counts) == 0
    report.wall_clock = time.perf_counter() - start
    return report


def _truncation(exp, law_idx):
    # Gaussian entries are already well behaved; only other laws are preprocessed
    if exp.truncation is None or exp.laws[law_idx].kind == "gaussian":
        return None
    return tuple(exp.truncation)


def _gap_params(exp, support, gap, disjoint):
    return {
        "polynomial": format_polynomial(exp.polynomial, exp.r),
        "r": exp.r,
        "dets": _describe_dets(exp.dets),
        "laws": [str(l) for l in exp.laws],
        "n_list": list(exp.n_list),
        "trials": exp.trials,
        "delta": exp.delta,
        "seed": exp.seed,
        "truncation": None if exp.truncation is None else list(exp.truncation),
        "wigner": {"streams": WignerConfig().describe()["streams"]},
        "eps": exp.eps,
        "threshold": exp.threshold,
        "endpoint_slack": ENDPOINT_SLACK,
        "predicted_support": [list(iv) for iv in support.intervals],
        "predicted_atoms": [list(a) for a in support.atoms],
        "tested_interval": None if gap is None else list(gap),
        "gap_disjoint_from_support": disjoint,
    }


# ---------------------------------------------------------------------------
# Norm convergence
# ---------------------------------------------------------------------------

def check_strong_convergence(
    p: NCPolynomial,
    dets: Sequence,
    wigner: WignerConfig,
    n_list: Sequence,
    trials: int,
    tol: float = 0.07,
    limit: float | None = None,
    model_dets: Sequence | None = None,
    eps: float = 1e-3,
    threshold: float = 1e-3,
    threads: int = 1,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> Report:
    """Trial-median operator norms against the solver's limiting norm.

    Pass iff the relative error at the largest ``n`` is at most ``tol`` and
    the relative errors do not increase along ``n_list``.
    """
    start = time.perf_counter()
    if not is_selfadjoint(p):
        raise ValueError("check_strong_convergence needs a self-adjoint polynomial")
    n_list = sorted(n_list)
    r = p.arity - len(dets)
    if limit is None:
        mdets = resolve_dets(dets, n_list[-1]) if model_dets is None else list(model_dets)
        limit = norm_of_polynomial(p, mdets, eps, threshold, opts)
    dets_by_n = {n: resolve_dets(dets, n) for n in n_list}

    def trial(key):
        n, k = key
        eigs = rmt.empirical_spectrum(p, wigner.samples(n, r, k), dets_by_n[n])
        # Hermitian, so the operator norm is the largest |eigenvalue|
        return {"n": n, "trial": k, "norm": float(max(abs(eigs[0]), abs(eigs[-1])))}

    results = _run_trials(trial, [(n, k) for n in n_list for k in range(trials)], threads)
    report = Report(
        "strong_convergence",
        {
            "polynomial": format_polynomial(p, r),
            "r": r,
            "dets": _describe_dets(dets),
            "n_list": list(n_list),
            "trials": trials,
            "tol": tol,
            "eps": eps,
            "threshold": threshold,
            "wigner": wigner.describe(),
        },
    )
    _collect(report, results)
    medians, errors = [], []
    for n in n_list:
        norms = [rec["norm"] for rec in report.trials if rec["n"] == n]
        med = float(np.median(norms)) if norms else float("nan")
        medians.append(med)
        errors.append(abs(med - limit) / limit if limit else abs(med))
    steps = np.diff(errors)
    tau = stats.kendalltau(n_list, errors).statistic if len(n_list) > 1 else float("nan")
    monotone = bool(np.all(steps <= 0))
    report.summary = {
        "limit": float(limit),
        "medians": medians,
        "relative_errors": errors,
        "final_relative_error": errors[-1],
        "monotone": monotone,
        "kendall_tau": float(tau),
    }
    report.verdict = not report.errors and monotone and errors[-1] <= tol
    report.wall_clock = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# Density comparison
# ---------------------------------------------------------------------------

def ks_distance(samples, points, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a tabulated CDF."""
    x = np.sort(np.asarray(samples))
    F = np.interp(x, points, cdf, left=0.0, right=1.0)
    N = len(x)
    upper = np.arange(1, N + 1) / N
    lower = np.arange(N) / N
    return float(max(np.max(upper - F), np.max(F - lower)))


def moment_discrepancy(empirical, predicted) -> np.ndarray:
    """``|emp_k - pred_k| / max(|pred_k|, 1)`` so that vanishing moments are compared absolutely."""
    empirical, predicted = np.asarray(empirical), np.asarray(predicted)
    return np.abs(empirical - predicted) / np.maximum(np.abs(predicted), 1.0)


def compare_density(
    p: NCPolynomial,
    dets: Sequence,
    wigner: WignerConfig,
    n: int,
    trials: int,
    grid=None,
    eps: float = 1e-3,
    ks_tol: float = 0.02,
    moment_tol: float = 0.02,
    model_dets: Sequence | None = None,
    threads: int = 1,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> Report:
    """Pooled empirical eigenvalues of ``p(X, A)`` against the solver's density."""
    start = time.perf_counter()
    r = p.arity - len(dets)
    sim_dets = resolve_dets(dets, n)
    mdets = sim_dets if model_dets is None else list(model_dets)
    density = polynomial_distribution(p, mdets, grid, eps, opts)

    def trial(k):
        eigs = rmt.empirical_spectrum(p, wigner.samples(n, r, k), sim_dets)
        return k, eigs

    results = _run_trials(trial, range(trials), threads)
    report = Report(
        "density_comparison",
        {
            "polynomial": format_polynomial(p, r),
            "r": r,
            "dets": _describe_dets(dets),
            "n": n,
            "trials": trials,
            "eps": eps,
            "grid": [float(density.points[0]), float(density.points[-1]), len(density.points)],
            "ks_tol": ks_tol,
            "moment_tol": moment_tol,
            "wigner": wigner.describe(),
        },
    )
    pooled = []
    for key, res, err in results:
        if err is not None:
            report.errors.append({"trial": key, "error": err})
            continue
        k, eigs = res
        pooled.append(eigs)
        report.trials.append({"trial": k, "min_eig": float(eigs[0]), "max_eig": float(eigs[-1]), "mean": float(eigs.mean())})
    if not pooled:
        report.wall_clock = time.perf_counter() - start
        return report
    pooled = np.concatenate(pooled)
    ks = ks_distance(pooled, density.points, density.cdf())
    predicted = density.moments(4)
    empirical = np.array([np.mean(pooled**k) for k in range(1, 5)])
    disc = moment_discrepancy(empirical, predicted)
    report.summary = {
        "ks": ks,
        "mass": density.mass,
        "failed_points": int(np.count_nonzero(~density.converged)),
        "predicted_moments": predicted.tolist(),
        "empirical_moments": empirical.tolist(),
        "moment_discrepancy": disc.tolist(),
        "max_moment_discrepancy": float(disc.max()),
    }
    report.verdict = not report.errors and ks <= ks_tol and float(disc.max()) <= moment_tol
    report.wall_clock = time.perf_counter() - start
    return report
