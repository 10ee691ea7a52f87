"""Noncommutative *-polynomials in k indeterminates and their adjoints.

Polynomials are immutable values held in a canonical form: duplicate words
are merged, coefficients below :data:`DROP_TOL` are discarded and monomials
are sorted by ``(degree, word)``.  Two polynomials are equal iff their
canonical forms coincide.

A small text syntax is supported (see :func:`parse_polynomial`)::

    x1*x1 + 0.5*x1*a1 + 0.5*a1*x1 - 2

where ``x1..xr`` name semicircular (self-adjoint) generators and ``a1..at``
the deterministic ones; ``a1`` is generator ``r + 1``.
"""
from __future__ import annotations

import numbers
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, SizeError

DROP_TOL = 1e-14


@dataclass(frozen=True, order=True)
class Generator:
    """Indeterminate ``X_index`` (1-based) or its adjoint when ``starred``."""

    index: int
    starred: bool = False

    def star(self, selfadjoint: bool) -> "Generator":
        if selfadjoint:
            return self
        return Generator(self.index, not self.starred)


Word = tuple  # tuple[Generator, ...]


def _word_key(word):
    return (len(word), tuple((g.index, g.starred) for g in word))


@dataclass(frozen=True)
class Monomial:
    coefficient: complex
    word: Word = ()

    @property
    def degree(self) -> int:
        return len(self.word)


class NCPolynomial:
    """Canonical noncommutative polynomial.

    Parameters
    ----------
    arity : int
        Number of indeterminates ``k``.
    monomials : iterable of Monomial or (coefficient, word) pairs
        Terms in any order; duplicates are merged.
    selfadjoint : sequence of bool, optional
        Per-generator flag.  Defaults to all generators self-adjoint.
    """

    __slots__ = ("arity", "selfadjoint", "monomials")

    def __init__(self, arity: int, monomials: Iterable = (), selfadjoint: Sequence[bool] | None = None):
        if arity < 0:
            raise ContractError("arity must be nonnegative")
        flags = tuple(bool(f) for f in (selfadjoint if selfadjoint is not None else [True] * arity))
        if len(flags) != arity:
            raise SizeError(f"expected {arity} self-adjoint flags, got {len(flags)}")
        merged: dict = {}
        for term in monomials:
            if isinstance(term, Monomial):
                coeff, word = term.coefficient, term.word
            else:
                coeff, word = term
            norm_word = []
            for g in word:
                if not 1 <= g.index <= arity:
                    raise ContractError(f"generator index {g.index} outside 1..{arity}")
                norm_word.append(Generator(g.index, False) if flags[g.index - 1] else g)
            key = tuple(norm_word)
            merged[key] = merged.get(key, 0j) + complex(coeff)
        terms = [Monomial(c, w) for w, c in merged.items() if abs(c) >= DROP_TOL]
        terms.sort(key=lambda mono: _word_key(mono.word))
        object.__setattr__(self, "arity", arity)
        object.__setattr__(self, "selfadjoint", flags)
        object.__setattr__(self, "monomials", tuple(terms))

    def __setattr__(self, name, value):
        raise AttributeError("NCPolynomial is immutable")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def generator(cls, index: int, arity: int, selfadjoint=None, starred=False) -> "NCPolynomial":
        return cls(arity, [(1.0, (Generator(index, starred),))], selfadjoint)

    @classmethod
    def constant(cls, value, arity: int, selfadjoint=None) -> "NCPolynomial":
        return cls(arity, [(value, ())], selfadjoint)

    # -- properties -----------------------------------------------------------
    @property
    def degree(self) -> int:
        return max((m.degree for m in self.monomials), default=0)

    def _same_algebra(self, other: "NCPolynomial"):
        if self.arity != other.arity or self.selfadjoint != other.selfadjoint:
            raise SizeError("polynomials live in different algebras")

    def _lift(self, other):
        if isinstance(other, NCPolynomial):
            self._same_algebra(other)
            return other
        if isinstance(other, numbers.Number):
            return NCPolynomial.constant(other, self.arity, self.selfadjoint)
        return NotImplemented

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return NCPolynomial(self.arity, self.monomials + other.monomials, self.selfadjoint)

    __radd__ = __add__

    def __neg__(self):
        return NCPolynomial(self.arity, [(-m.coefficient, m.word) for m in self.monomials], self.selfadjoint)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        terms = [
            (a.coefficient * b.coefficient, a.word + b.word)
            for a in self.monomials
            for b in other.monomials
        ]
        return NCPolynomial(self.arity, terms, self.selfadjoint)

    def __rmul__(self, other):
        if isinstance(other, numbers.Number):
            return NCPolynomial.constant(other, self.arity, self.selfadjoint) * self
        return NotImplemented

    def __pow__(self, power: int):
        if not isinstance(power, int) or power < 0:
            raise ContractError("only nonnegative integer powers are supported")
        out = NCPolynomial.constant(1.0, self.arity, self.selfadjoint)
        for _ in range(power):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, NCPolynomial):
            return NotImplemented
        return (
            self.arity == other.arity
            and self.selfadjoint == other.selfadjoint
            and self.monomials == other.monomials
        )

    def __hash__(self):
        return hash((self.arity, self.selfadjoint, self.monomials))

    def __repr__(self):
        return f"NCPolynomial({format_polynomial(self)!r})"


def adjoint(p: NCPolynomial) -> NCPolynomial:
    """Return ``p*``: conjugate every coefficient and reverse-and-star every word."""
    terms = [
        (np.conj(m.coefficient), tuple(g.star(p.selfadjoint[g.index - 1]) for g in reversed(m.word)))
        for m in p.monomials
    ]
    return NCPolynomial(p.arity, terms, p.selfadjoint)


def is_selfadjoint(p: NCPolynomial) -> bool:
    return adjoint(p) == p


def _adjoint_word(word, flags):
    return tuple(g.star(flags[g.index - 1]) for g in reversed(word))


def split_selfadjoint(p: NCPolynomial) -> NCPolynomial:
    """Write a self-adjoint ``p`` as ``P0 + P0*`` and return ``P0``.

    For an adjoint pair of words ``{w, w*}`` with ``w < w*`` (canonical order)
    the ``w`` term goes to ``P0`` in full; self-paired words, constants
    included, contribute half their coefficient.
    """
    if not is_selfadjoint(p):
        raise ContractError("split_selfadjoint requires a self-adjoint polynomial")
    terms = []
    for m in p.monomials:
        partner = _adjoint_word(m.word, p.selfadjoint)
        if partner == m.word:
            terms.append((m.coefficient / 2, m.word))
        elif _word_key(m.word) < _word_key(partner):
            terms.append((m.coefficient, m.word))
    return NCPolynomial(p.arity, terms, p.selfadjoint)


def evaluate(p: NCPolynomial, args: Sequence[np.ndarray]) -> np.ndarray:
    """Substitute square matrices for the generators.

    ``args[i]`` is the value of ``X_{i+1}``; starred occurrences use its
    conjugate transpose.
    """
    if len(args) != p.arity:
        raise SizeError(f"expected {p.arity} matrices, got {len(args)}")
    mats = [np.asarray(a, dtype=complex) for a in args]
    if p.arity == 0:
        raise SizeError("cannot infer matrix size for a polynomial with no generators")
    size = mats[0].shape[0]
    for a in mats:
        if a.ndim != 2 or a.shape != (size, size):
            raise SizeError(f"all arguments must be {size}x{size}, got {a.shape}")
    adjs = [a.conj().T for a in mats]
    out = np.zeros((size, size), dtype=complex)
    for m in p.monomials:
        if not m.word:
            out += m.coefficient * np.eye(size)
            continue
        prod = None
        for g in m.word:
            factor = adjs[g.index - 1] if g.starred else mats[g.index - 1]
            prod = factor if prod is None else prod @ factor
        out += m.coefficient * prod
    return out


# ---------------------------------------------------------------------------
# Text syntax
# ---------------------------------------------------------------------------

class PolynomialSyntaxError(ContractError):
    """Malformed polynomial text; ``position`` is the 0-based column."""

    def __init__(self, message, text, position):
        super().__init__(f"{message} at column {position + 1}: {text!r}")
        self.text = text
        self.position = position


_TOKEN = re.compile(
    r"""\s*(?:
        (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?j?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>\^\*|\^|[-+*])
    )""",
    re.VERBOSE,
)


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            stripped = len(text) - len(text[pos:].lstrip())
            raise PolynomialSyntaxError("unexpected character", text, stripped)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append((kind, match.group(kind), start))
        pos = match.end()
    return tokens


def parse_polynomial(text: str, r: int, t: int, selfadjoint_dets: bool = True) -> NCPolynomial:
    """Parse ``text`` into a polynomial over ``x1..xr, a1..at``.

    Terms are separated by ``+``/``-``; factors by ``*``.  A factor is a
    number (``2``, ``0.5``, ``1e-3``, ``2j``), the imaginary unit ``i``, or a
    generator optionally followed by ``^*`` (adjoint) or ``^k`` (power).
    """
    tokens = _tokenize(text)
    flags = [True] * r + [selfadjoint_dets] * t
    arity = r + t
    terms = []
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else (None, None, len(text))

    if not tokens:
        raise PolynomialSyntaxError("empty polynomial", text, 0)
    while True:
        sign = 1.0
        kind, val, pos = peek()
        while kind == "op" and val in "+-":
            if val == "-":
                sign = -sign
            i += 1
            kind, val, pos = peek()
        coeff = complex(sign)
        word = []
        expect_factor = True
        while expect_factor:
            kind, val, pos = peek()
            if kind == "number":
                coeff *= complex(val)
                i += 1
            elif kind == "name":
                i += 1
                if val == "i":
                    coeff *= 1j
                    gens = []
                else:
                    match = re.fullmatch(r"([xa])(\d+)", val)
                    if match is None:
                        raise PolynomialSyntaxError(f"unknown name {val!r}", text, pos)
                    idx = int(match.group(2))
                    if match.group(1) == "x":
                        if not 1 <= idx <= r:
                            raise PolynomialSyntaxError(f"undeclared generator {val!r} (r={r})", text, pos)
                        gen_index = idx
                    else:
                        if not 1 <= idx <= t:
                            raise PolynomialSyntaxError(f"undeclared generator {val!r} (t={t})", text, pos)
                        gen_index = r + idx
                    gens = [Generator(gen_index)]
                k2, v2, p2 = peek()
                if k2 == "op" and v2 == "^*":
                    if val == "i":
                        raise PolynomialSyntaxError("cannot star the imaginary unit", text, p2)
                    gens = [Generator(gens[0].index, not flags[gens[0].index - 1])]
                    i += 1
                elif k2 == "op" and v2 == "^":
                    i += 1
                    k3, v3, p3 = peek()
                    if k3 != "number" or not v3.isdigit():
                        raise PolynomialSyntaxError("expected integer exponent", text, p3)
                    i += 1
                    if val == "i":
                        coeff *= 1j ** (int(v3) - 1)
                    gens = gens * int(v3)
                word.extend(gens)
            else:
                raise PolynomialSyntaxError("expected a number or generator", text, pos)
            kind, val, pos = peek()
            if kind == "op" and val == "*":
                i += 1
            else:
                expect_factor = False
        terms.append((coeff, tuple(word)))
        kind, val, pos = peek()
        if kind is None:
            break
        if not (kind == "op" and val in "+-"):
            raise PolynomialSyntaxError(f"unexpected token {val!r}", text, pos)
    return NCPolynomial(arity, terms, flags)


def _format_coeffs(c: complex) -> list:
    # a genuinely complex coefficient is written as two terms, which merge back on parse
    out = []
    if abs(c.real) >= DROP_TOL or abs(c.imag) < DROP_TOL:
        out.append(repr(float(c.real)))
    if abs(c.imag) >= DROP_TOL:
        out.append(f"{float(c.imag)!r}j")
    return out


def format_polynomial(p: NCPolynomial, r: int | None = None) -> str:
    """Render ``p`` in the text syntax.

    Without ``r`` the generic names ``X1..Xk`` are used; with ``r`` the
    first ``r`` generators print as ``x`` and the rest as ``a``, so the
    output re-parses with :func:`parse_polynomial`.
    """
    if not p.monomials:
        return "0"
    parts = []
    for m in p.monomials:
        names = []
        for g in m.word:
            if r is None:
                name = f"X{g.index}"
            elif g.index <= r:
                name = f"x{g.index}"
            else:
                name = f"a{g.index - r}"
            names.append(name + ("^*" if g.starred else ""))
        for coeff in _format_coeffs(complex(m.coefficient)):
            parts.append("*".join([coeff] + names))
    return " + ".join(parts)
