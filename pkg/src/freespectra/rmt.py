"""Wigner matrices, entry-law preprocessing and deterministic matrix families.

Randomness comes from ``numpy.random.Philox`` with a 128-bit key
``[seed ^ trial, purpose]``: ``seed`` is the user's 64-bit seed, ``trial``
the trial index and ``purpose`` separates independent uses inside one trial
(see :func:`purpose_tag`).  Each (seed, trial, purpose) triple is therefore
its own reproducible stream, independent of scheduling order.
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, linalg, stats

from . import matops
from .errors import ContractError, ParameterError, SizeError
from .ncalg import NCPolynomial, evaluate, is_selfadjoint

MASK64 = (1 << 64) - 1
THETA_DRAWS = 10**6
THETA_SAFETY = 1.1


def rng_for(seed: int, trial: int = 0, purpose: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``[(seed ^ trial) mod 2^64, purpose]``."""
    key = np.array([(int(seed) ^ int(trial)) & MASK64, int(purpose) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def purpose_tag(generator: int, gaussian: bool = False) -> int:
    """Stream tag for Wigner generator ``generator`` (1-based); odd tags feed the Gaussian convolution."""
    return 2 * int(generator) + int(bool(gaussian))


# ---------------------------------------------------------------------------
# Entry laws
# ---------------------------------------------------------------------------

_LAW_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


@dataclass(frozen=True)
class EntryLaw:
    """Centred, unit-variance real law used for ``X_ii``, ``sqrt(2) Re X_ij`` and ``sqrt(2) Im X_ij``."""

    kind: str = "gaussian"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "uniform", "student_t", "two_point"):
            raise ParameterError(f"unknown entry law {self.kind!r}")
        if self.kind == "student_t" and (self.param is None or self.param <= 3):
            raise ParameterError("student_t needs df > 3 (finite third moment)")
        if self.kind == "two_point" and (self.param is None or not 0 < self.param < 1):
            raise ParameterError("two_point needs 0 < p < 1")
        if self.kind in ("gaussian", "rademacher", "uniform") and self.param is not None:
            raise ParameterError(f"{self.kind} takes no parameter")

    @classmethod
    def parse(cls, text: str) -> "EntryLaw":
        """``gaussian``, ``rademacher``, ``uniform``, ``student_t(5)``, ``two_point(0.3)``; ``gue`` aliases gaussian."""
        match = _LAW_RE.match(text)
        if not match:
            raise ParameterError(f"cannot parse entry law {text!r}")
        kind, arg = match.group(1), match.group(2)
        kind = "gaussian" if kind == "gue" else kind
        try:
            param = float(arg) if arg else None
        except ValueError:
            raise ParameterError(f"bad parameter in entry law {text!r}") from None
        return cls(kind, param)

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}({self.param:g})"

    @property
    def atoms(self):
        """``(values, probabilities)`` for discrete laws, else ``None``."""
        if self.kind == "rademacher":
            return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
        if self.kind == "two_point":
            p = self.param
            return np.array([math.sqrt((1 - p) / p), -math.sqrt(p / (1 - p))]), np.array([p, 1 - p])
        return None

    def continuous(self):
        """Frozen ``scipy.stats`` distribution for continuous laws."""
        if self.kind == "gaussian":
            return stats.norm()
        if self.kind == "uniform":
            return stats.uniform(loc=-math.sqrt(3), scale=2 * math.sqrt(3))
        if self.kind == "student_t":
            df = self.param
            return stats.t(df, scale=math.sqrt((df - 2) / df))
        return None

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "uniform":
            return rng.uniform(-math.sqrt(3), math.sqrt(3), size)
        if self.kind == "student_t":
            df = self.param
            return rng.standard_t(df, size) * math.sqrt((df - 2) / df)
        values, probs = self.atoms
        return np.where(rng.random(size) < probs[0], values[0], values[1])

    def truncated_moments(self, bound: float) -> tuple:
        """``(E[xi 1_{|xi|<=bound}], E[xi^2 1_{|xi|<=bound}])``."""
        if self.atoms is not None:
            values, probs = self.atoms
            keep = np.abs(values) <= bound
            return float(np.sum(probs * values * keep)), float(np.sum(probs * values**2 * keep))
        dist = self.continuous()
        lo, hi = dist.support()
        lo, hi = max(lo, -bound), min(hi, bound)
        if hi <= lo:
            return 0.0, 0.0
        m1 = integrate.quad(lambda x: x * dist.pdf(x), lo, hi, limit=200)[0]
        m2 = integrate.quad(lambda x: x * x * dist.pdf(x), lo, hi, limit=200)[0]
        return m1, m2

    def theta_star(self) -> float:
        return theta_star(self)


@functools.lru_cache(maxsize=None)
def theta_star(law: EntryLaw) -> float:
    """``E |X_ij|^3`` for an off-diagonal entry ``(xi + i xi') / sqrt(2)``.

    Closed forms for Gaussian (``3 sqrt(pi) / 4``) and discrete laws;
    otherwise a Monte Carlo estimate from ``10^6`` draws inflated by 10%.
    """
    if law.kind == "gaussian":
        return 3 * math.sqrt(math.pi) / 4
    if law.atoms is not None:
        values, probs = law.atoms
        mod2 = (values[:, None] ** 2 + values[None, :] ** 2) / 2
        return float(np.sum(probs[:, None] * probs[None, :] * mod2**1.5))
    rng = rng_for(0, 0, purpose=MASK64)
    re_, im_ = law.draw(rng, THETA_DRAWS), law.draw(rng, THETA_DRAWS)
    return float(THETA_SAFETY * np.mean(((re_**2 + im_**2) / 2) ** 1.5))


# ---------------------------------------------------------------------------
# Wigner samples
# ---------------------------------------------------------------------------

@dataclass
class WignerSample:
    n: int
    matrix: np.ndarray
    seed: int
    law: EntryLaw
    trial: int = 0
    purpose: int = 0
    preprocessing: dict | None = None

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "trial": self.trial,
            "purpose": self.purpose,
            "law": str(self.law),
            "preprocessing": self.preprocessing,
        }


def _raw_wigner(n, law, rng):
    diag = law.draw(rng, n)
    re_ = law.draw(rng, (n, n))
    im_ = law.draw(rng, (n, n))
    upper = np.triu(re_ + 1j * im_, 1) / math.sqrt(2)
    return upper + upper.conj().T + np.diag(diag).astype(complex)


def sample_wigner(n: int, law: EntryLaw | str = "gaussian", seed: int = 0, trial: int = 0, purpose: int = 2) -> WignerSample:
    """Hermitian Wigner matrix ``X / sqrt(n)``.

    ``X_ii``, ``sqrt(2) Re X_ij`` and ``sqrt(2) Im X_ij`` (``i < j``) are
    independent draws from ``law``.
    """
    if n < 1:
        raise SizeError("n must be at least 1")
    law = EntryLaw.parse(law) if isinstance(law, str) else law
    X = _raw_wigner(n, law, rng_for(seed, trial, purpose))
    return WignerSample(n, X / math.sqrt(n), int(seed), law, int(trial), int(purpose))


def _truncate_part(values, law, scale, C):
    # values = scale * xi with xi ~ law; returns the centred, truncated part and its variance
    m1, m2 = law.truncated_moments(C / scale)
    mean, var = scale * m1, scale**2 * (m2 - m1**2)
    return np.where(np.abs(values) <= C, values, 0.0) - mean, var


def truncate_convolve(sample: WignerSample, C: float, delta: float, gauss_seed: int | None = None) -> WignerSample:
    """Truncate at ``C``, re-centre, re-normalize and mix with an independent GUE.

    Real and imaginary parts are truncated separately at ``C`` and centred
    by their exact truncated means; each part is then rescaled to its
    original variance (1/2 off the diagonal, 1 on it).  The result is
    ``(X^C + delta G) / sqrt(1 + delta^2)`` with ``G`` a GUE drawn from the
    stream ``(gauss_seed, trial, purpose + 1)``.
    """
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    bound = 8 * theta_star(sample.law)
    if not C > bound:
        raise ParameterError(f"truncation level C={C} must exceed 8*theta* = {bound:.4g}")
    n, law = sample.n, sample.law
    X = sample.matrix * math.sqrt(n)
    offdiag = ~np.eye(n, dtype=bool)
    re_, var_re = _truncate_part(X.real, law, 1 / math.sqrt(2), C)
    im_, var_im = _truncate_part(X.imag, law, 1 / math.sqrt(2), C)
    diag, var_diag = _truncate_part(np.diag(X).real, law, 1.0, C)
    XC = np.where(offdiag, re_ / math.sqrt(2 * var_re) + 1j * im_ / math.sqrt(2 * var_im), 0.0)
    XC = np.triu(XC, 1)
    XC = XC + XC.conj().T + np.diag(diag / math.sqrt(var_diag))
    gauss_seed = sample.seed if gauss_seed is None else int(gauss_seed)
    if delta > 0:
        G = _raw_wigner(n, EntryLaw("gaussian"), rng_for(gauss_seed, sample.trial, sample.purpose + 1))
        XC = (XC + delta * G) / math.sqrt(1 + delta**2)
    record = {"C": float(C), "delta": float(delta), "gauss_seed": gauss_seed}
    return WignerSample(n, XC / math.sqrt(n), sample.seed, law, sample.trial, sample.purpose, record)


# ---------------------------------------------------------------------------
# Deterministic matrices
# ---------------------------------------------------------------------------

def diag_spec(values: Sequence[float], n: int) -> np.ndarray:
    """``diag`` of ``values`` repeated cyclically to length ``n``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ParameterError("diag_spec needs at least one value")
    return np.diag(np.resize(values, n)).astype(complex)


def projection(rank_fraction: float, n: int) -> np.ndarray:
    if not 0 <= rank_fraction <= 1:
        raise ParameterError("rank fraction must lie in [0, 1]")
    rank = math.floor(rank_fraction * n + 0.5)
    return np.diag([1.0] * rank + [0.0] * (n - rank)).astype(complex)


def toeplitz(symbol_coeffs: Sequence[complex], n: int) -> np.ndarray:
    """Hermitian Toeplitz matrix ``T_jk = c_{k-j}`` with ``c_{-k} = conj(c_k)``.

    ``symbol_coeffs = [c_0, c_1, ...]``; ``c_0`` must be real.  ``[0, 1]``
    is the symbol ``2 cos(theta)``.
    """
    c = np.asarray(symbol_coeffs, dtype=complex)
    if c.size == 0 or abs(c[0].imag) > 0:
        raise ParameterError("toeplitz needs a real c_0")
    col = np.zeros(n, dtype=complex)
    k = min(n, c.size)
    col[:k] = np.conj(c[:k])
    return linalg.toeplitz(col, np.conj(col))


def from_file(path, n: int | None = None) -> np.ndarray:
    A = matops.require_hermitian(matops.read_matrix_csv(path), f"matrix in {path}")
    if n is not None and A.shape[0] != n:
        raise SizeError(f"{path}: matrix is {A.shape[0]}x{A.shape[0]}, expected {n}x{n}")
    return A


_DET_RE = re.compile(r"^\s*(diag|projection|toeplitz|file)\s*\((.*)\)\s*$", re.S)


def make_deterministic(spec: str, n: int) -> np.ndarray:
    """Build a Hermitian ``n x n`` matrix from ``diag(1,-1)``, ``projection(0.5)``, ``toeplitz(0,1)`` or ``file(path)``."""
    match = _DET_RE.match(spec)
    if not match:
        raise ParameterError(f"cannot parse deterministic matrix spec {spec!r}")
    kind, body = match.group(1), match.group(2).strip()
    if kind == "file":
        return from_file(Path(body), n)
    try:
        args = [complex(tok.replace(" ", "").replace("i", "j")) for tok in body.split(",") if tok.strip()]
    except ValueError:
        raise ParameterError(f"bad numbers in {spec!r}") from None
    if kind == "diag":
        if any(a.imag for a in args):
            raise ParameterError("diag entries must be real")
        return diag_spec([a.real for a in args], n)
    if kind == "projection":
        if len(args) != 1:
            raise ParameterError("projection takes one rank fraction")
        return projection(args[0].real, n)
    return toeplitz(args, n)


def empirical_spectrum(p: NCPolynomial, wigners: Sequence, dets: Sequence = ()) -> np.ndarray:
    """Ascending eigenvalues of ``p(X_1/sqrt(n), ..., A_1, ...)``."""
    if not is_selfadjoint(p):
        raise ContractError("empirical_spectrum needs a self-adjoint polynomial")
    args = [w.matrix if isinstance(w, WignerSample) else np.asarray(w, dtype=complex) for w in wigners]
    args += [np.asarray(A, dtype=complex) for A in dets]
    if len(args) != p.arity:
        raise SizeError(f"polynomial has {p.arity} variables, got {len(args)} matrices")
    sizes = {a.shape for a in args}
    if len(sizes) != 1:
        raise SizeError(f"matrix sizes differ: {sorted(sizes)}")
    M = evaluate(p, args)
    dev = np.max(np.abs(M - M.conj().T), initial=0.0)
    scale = max(float(np.max(np.abs(M), initial=0.0)), 1.0)
    if dev > 1e-10 * scale:
        raise ContractError(f"evaluated matrix is not Hermitian (deviation {dev:.2e})")
    return np.linalg.eigvalsh((M + M.conj().T) / 2)
