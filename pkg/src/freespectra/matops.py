"""Dense complex matrix utilities.

Everything here works on plain ``numpy`` arrays.  A block operator on
``C^m (x) C^n`` is an ``(m*n, m*n)`` array whose ``(i, j)`` block of size
``n x n`` is ``M[i*n:(i+1)*n, j*n:(j+1)*n]``, i.e. the layout produced by
``numpy.kron(c, D)``.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .errors import ConditioningError, SizeError, StructureError

HERMITIAN_RTOL = 1e-10
PD_THRESHOLD = 1e-12


def hermitian_deviation(M) -> float:
    """Relative Frobenius distance between ``M`` and ``M*``."""
    M = np.asarray(M)
    scale = np.linalg.norm(M)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(M - M.conj().T) / scale)


def is_hermitian(M, rtol: float = HERMITIAN_RTOL) -> bool:
    M = np.asarray(M)
    return M.ndim == 2 and M.shape[0] == M.shape[1] and hermitian_deviation(M) <= rtol


def symmetrize(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    return (M + M.conj().T) / 2


def require_hermitian(M, name="matrix", rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Return the symmetrized ``M`` or raise :class:`StructureError`."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SizeError(f"{name} must be square, got shape {M.shape}")
    dev = hermitian_deviation(M)
    if dev > rtol:
        raise StructureError(f"{name} is not Hermitian (relative deviation {dev:.2e})")
    return symmetrize(M)


def imag_part(b) -> np.ndarray:
    """Hermitian imaginary part ``(b - b*) / 2i``."""
    b = np.asarray(b, dtype=complex)
    return (b - b.conj().T) / 2j


def min_imag_eig(b) -> float:
    return float(np.linalg.eigvalsh(imag_part(b))[0])


def in_upper_half_plane(b, threshold: float = PD_THRESHOLD) -> bool:
    """True iff ``Im b`` is positive definite (smallest eigenvalue > ``threshold``)."""
    return min_imag_eig(b) > threshold


def half_plane_point(b) -> np.ndarray:
    """Validate and return ``b`` as a point of the matrix upper half-plane."""
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    if b.shape[0] != b.shape[1]:
        raise SizeError(f"half-plane point must be square, got {b.shape}")
    lo = min_imag_eig(b)
    if lo <= PD_THRESHOLD:
        raise StructureError(f"Im(lambda) is not positive definite (min eigenvalue {lo:.3e})")
    return b


def kron_assemble(coeffs: Sequence[np.ndarray], blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Dense ``sum_i coeffs[i] (x) blocks[i]``."""
    if len(coeffs) != len(blocks):
        raise SizeError(f"{len(coeffs)} coefficients but {len(blocks)} blocks")
    if not coeffs:
        raise SizeError("nothing to assemble")
    coeffs = [np.atleast_2d(np.asarray(c, dtype=complex)) for c in coeffs]
    blocks = [np.atleast_2d(np.asarray(d, dtype=complex)) for d in blocks]
    cshape, bshape = coeffs[0].shape, blocks[0].shape
    for c in coeffs:
        if c.shape != cshape or c.shape[0] != c.shape[1]:
            raise SizeError(f"coefficient shapes differ: {c.shape} vs {cshape}")
    for d in blocks:
        if d.shape != bshape or d.shape[0] != d.shape[1]:
            raise SizeError(f"block shapes differ: {d.shape} vs {bshape}")
    out = np.zeros((cshape[0] * bshape[0],) * 2, dtype=complex)
    for c, d in zip(coeffs, blocks):
        out += np.kron(c, d)
    return out


def partial_trace_n(M, m: int) -> np.ndarray:
    """``(id_m (x) tr_n)(M)`` with the normalized trace ``tr_n = Tr / n``."""
    M = np.asarray(M)
    size = M.shape[0]
    if M.shape != (size, size) or size % m:
        raise SizeError(f"cannot split a {M.shape} matrix into {m}x{m} blocks")
    n = size // m
    blocks = M.reshape(m, n, m, n)
    return np.einsum("injn->ij", blocks) / n


def blocks_of(M, m: int) -> np.ndarray:
    """View ``M`` as an ``(m, m, n, n)`` array of its ``n x n`` blocks."""
    M = np.asarray(M)
    n = M.shape[0] // m
    return M.reshape(m, n, m, n).transpose(0, 2, 1, 3)


def resolvent(M, lam, m: int | None = None) -> np.ndarray:
    """Dense ``(lam (x) I_n - M)^{-1}``.

    Parameters
    ----------
    M : (m*n, m*n) array
        Hermitian block operator.
    lam : complex or (m, m) array
        Point with positive definite imaginary part.  A scalar is taken as
        ``lam * I``.
    m : int, optional
        Block size; inferred from ``lam`` when it is a matrix.
    """
    M = np.asarray(M, dtype=complex)
    size = M.shape[0]
    if np.ndim(lam) == 0:
        if complex(lam).imag == 0:
            raise StructureError("resolvent needs Im(lambda) != 0")
        pencil = complex(lam) * np.eye(size) - M
    else:
        lam = np.asarray(lam, dtype=complex)
        m = lam.shape[0] if m is None else m
        if lam.shape != (m, m) or size % m:
            raise SizeError(f"lambda of shape {lam.shape} does not fit a {size}x{size} operator")
        pencil = np.kron(lam, np.eye(size // m)) - M
    return _inverse(pencil)


def _inverse(A, what="pencil"):
    lu, piv, info = la.lapack.zgetrf(A)
    if info != 0:
        raise ConditioningError(f"singular {what}", float("inf"))
    inv, info = la.lapack.zgetri(lu, piv)
    if info != 0:
        raise ConditioningError(f"singular {what}", float("inf"))
    rcond = 1.0 / (np.linalg.norm(A, 1) * np.linalg.norm(inv, 1))
    if rcond < 1e3 * np.finfo(float).eps:
        raise ConditioningError(f"ill-conditioned {what}", 1.0 / rcond)
    return inv


def operator_norm(M) -> float:
    """Spectral norm (largest singular value)."""
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def hermitian_eigs(M, vectors: bool = False, rtol: float = HERMITIAN_RTOL):
    """Ascending eigenvalues of a Hermitian matrix (and eigenvectors if asked).

    Inputs within ``rtol`` of Hermitian are symmetrized first; anything
    further away raises :class:`StructureError`.
    """
    H = require_hermitian(M, rtol=rtol)
    if vectors:
        w, v = np.linalg.eigh(H)
        return w, v
    return np.linalg.eigvalsh(H)


# ---------------------------------------------------------------------------
# Matrix I/O
# ---------------------------------------------------------------------------

def matrix_to_csv(M) -> str:
    """CSV text with interleaved ``re,im`` columns, one matrix row per line."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in M:
        writer.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) % 2:
            raise SizeError(f"line {lineno}: odd number of columns ({len(row)}); expected re,im pairs")
        try:
            vals = [float(cell) for cell in row]
        except ValueError as exc:
            raise SizeError(f"line {lineno}: {exc}") from None
        rows.append([complex(vals[k], vals[k + 1]) for k in range(0, len(vals), 2)])
    if not rows:
        raise SizeError("empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows) or width != len(rows):
        raise SizeError(f"matrix is not square ({len(rows)} rows, {width} columns)")
    return np.array(rows, dtype=complex)


def write_matrix_csv(path, M):
    Path(path).write_text(matrix_to_csv(M))


def read_matrix_csv(path) -> np.ndarray:
    return matrix_from_csv(Path(path).read_text())


def matrix_to_json(M) -> list:
    """JSON-ready nested list of ``[re, im]`` pairs."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def matrix_from_json(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise SizeError(f"expected an array of [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def dumps_matrix(M) -> str:
    return json.dumps(matrix_to_json(M))
