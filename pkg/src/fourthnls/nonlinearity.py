"""Polynomial nonlinearities in ``u``, ``conj(u)`` and their derivatives.

A nonlinearity is written as a sum of monomials, e.g.::

    lap(u)*conj(lap(u))
    d(1,1)u * d(2,2)u * d(1,2)u
    (0,1)*u*u - 0.5*u*conj(d(1)u)

Factor atoms are ``u``, ``d(j)u``, ``d(j,k)u`` (1-based axes), ``lap(u)``
and ``conj(...)`` of any of them.  ``|X|^2`` expands to ``X*conj(X)`` and
``X^p`` to ``p`` copies of ``X``.  A coefficient is a real literal or a
complex pair ``(re,im)`` in front of the first factor.  Constant and linear
monomials are rejected: every term must have degree at least two.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .spectral import Field

__all__ = ["FactorRef", "Term", "PolynomialNonlinearity", "NonlinearityError", "ParseError", "parse", "evaluate"]


class NonlinearityError(ValueError):
    pass


class ParseError(NonlinearityError):
    def __init__(self, message: str, source: str, position: int):
        self.source = source
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {source}\n  {pointer}")


@dataclass(frozen=True, order=True)
class FactorRef:
    """One factor ``d^alpha u`` (or its conjugate, or ``lap(u)``).

    ``alpha`` is the sorted tuple of 1-based differentiation axes, so
    ``d(2,1)u`` and ``d(1,2)u`` are the same factor.
    """

    laplacian: bool = False
    alpha: tuple[int, ...] = ()
    conjugated: bool = False

    def __post_init__(self):
        alpha = tuple(sorted(int(a) for a in self.alpha))
        if len(alpha) > 2:
            raise NonlinearityError(f"derivative order {len(alpha)} > 2 in factor")
        if any(a < 1 for a in alpha):
            raise NonlinearityError(f"axis indices are 1-based, got {alpha}")
        if self.laplacian and alpha:
            raise NonlinearityError("lap(u) takes no extra derivatives")
        object.__setattr__(self, "alpha", alpha)

    @property
    def order(self) -> int:
        return 2 if self.laplacian else len(self.alpha)

    def max_axis(self) -> int:
        return max(self.alpha, default=0)

    def __str__(self):
        if self.laplacian:
            core = "lap(u)"
        elif self.alpha:
            core = "d(" + ",".join(map(str, self.alpha)) + ")u"
        else:
            core = "u"
        return f"conj({core})" if self.conjugated else core

    def to_json(self) -> dict:
        return {"conjugated": self.conjugated, "alpha": list(self.alpha), "laplacian": self.laplacian}


@dataclass(frozen=True)
class Term:
    coefficient: complex
    factors: tuple[FactorRef, ...]

    @property
    def degree(self) -> int:
        return len(self.factors)

    def sort_key(self):
        return (self.degree, self.factors)


def _format_coefficient(c: complex) -> str:
    if c.imag == 0.0:
        return repr(c.real)
    return f"({c.real!r},{c.imag!r})"


@dataclass(frozen=True)
class PolynomialNonlinearity:
    terms: tuple[Term, ...]

    def __post_init__(self):
        if not self.terms:
            raise NonlinearityError("nonlinearity has no terms")
        for term in self.terms:
            if term.degree < 2:
                raise NonlinearityError(
                    f"term of degree {term.degree} present; constant and linear terms are excluded (l >= 2)"
                )

    @property
    def l(self) -> int:
        return min(t.degree for t in self.terms)

    @property
    def h(self) -> int:
        return max(t.degree for t in self.terms)

    @property
    def is_zero(self) -> bool:
        return all(t.coefficient == 0 for t in self.terms)

    def is_homogeneous(self) -> bool:
        return self.l == self.h

    def max_axis(self) -> int:
        return max((f.max_axis() for t in self.terms for f in t.factors), default=0)

    def canonical(self) -> str:
        out = ""
        for i, t in enumerate(self.terms):
            c = complex(t.coefficient)
            body = "*".join(map(str, t.factors))
            if i and c.imag == 0.0 and math.copysign(1.0, c.real) < 0:
                out += f" - {-c.real!r}*{body}"
            else:
                out += (" + " if i else "") + f"{_format_coefficient(c)}*{body}"
        return out

    def to_json(self) -> dict:
        return {
            "l": self.l,
            "h": self.h,
            "terms": [
                {
                    "coefficient": [float(t.coefficient.real), float(t.coefficient.imag)],
                    "factors": [f.to_json() for f in t.factors],
                }
                for t in self.terms
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, data: dict) -> "PolynomialNonlinearity":
        terms = []
        for t in data["terms"]:
            re_, im_ = t["coefficient"]
            factors = tuple(
                FactorRef(laplacian=f["laplacian"], alpha=tuple(f["alpha"]), conjugated=f["conjugated"])
                for f in t["factors"]
            )
            terms.append(Term(complex(re_, im_), factors))
        return _canonicalize(terms)

    def __str__(self):
        return self.canonical()


def _canonicalize(terms: Iterable[Term]) -> PolynomialNonlinearity:
    merged: dict[tuple[FactorRef, ...], complex] = {}
    for t in terms:
        key = tuple(sorted(t.factors))
        merged[key] = merged.get(key, 0j) + complex(t.coefficient)
    out = [Term(c, k) for k, c in merged.items()]
    out.sort(key=Term.sort_key)
    return PolynomialNonlinearity(tuple(out))


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>conj|lap|d|u)|(?P<op>[-+*^(),|]))"
)


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(source):
            if source[pos:].strip() == "":
                break
            m = _TOKEN.match(source, pos)
            if not m or m.end() == pos:
                bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
                raise ParseError(f"unexpected character {source[bad]!r}", source, bad)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    # token helpers
    def peek(self, value: str | None = None, kind: str | None = None) -> bool:
        if self.i >= len(self.tokens):
            return False
        k, v, _ = self.tokens[self.i]
        return (value is None or v == value) and (kind is None or k == kind)

    def position(self) -> int:
        if self.i < len(self.tokens):
            return self.tokens[self.i][2]
        return len(self.source)

    def fail(self, message: str):
        raise ParseError(message, self.source, self.position())

    def expect(self, value: str | None = None, kind: str | None = None) -> str:
        if not self.peek(value, kind):
            found = self.tokens[self.i][1] if self.i < len(self.tokens) else "end of input"
            self.fail(f"expected {value or kind!s}, found {found!r}")
        v = self.tokens[self.i][1]
        self.i += 1
        return v

    # grammar
    def parse(self) -> list[tuple[Term, int]]:
        if not self.tokens:
            self.fail("empty nonlinearity")
        terms = []
        sign = 1.0
        if self.peek("+") or self.peek("-"):
            sign = -1.0 if self.expect() == "-" else 1.0
        terms.append(self.term(sign))
        while self.i < len(self.tokens):
            if self.peek("+") or self.peek("-"):
                sign = -1.0 if self.expect() == "-" else 1.0
                terms.append(self.term(sign))
            else:
                self.fail("expected '+', '-' or '*'")
        return terms

    def number(self) -> float:
        sign = 1.0
        if self.peek("-") or self.peek("+"):
            sign = -1.0 if self.expect() == "-" else 1.0
        return sign * float(self.expect(kind="num"))

    def term(self, sign: float) -> tuple[Term, int]:
        start = self.position()
        coef = complex(sign)
        factors: list[FactorRef] = []
        if self.peek(kind="num"):
            coef *= float(self.expect(kind="num"))
            if not self.peek("*"):
                return Term(coef, ()), start
            self.expect("*")
        elif self.peek("("):
            self.expect("(")
            re_ = self.number()
            self.expect(",")
            im_ = self.number()
            self.expect(")")
            coef *= complex(re_, im_)
            if not self.peek("*"):
                return Term(coef, ()), start
            self.expect("*")
        factors.extend(self.factor())
        while self.peek("*"):
            self.expect("*")
            factors.extend(self.factor())
        return Term(coef, tuple(factors)), start

    def factor(self) -> list[FactorRef]:
        if self.peek("|"):
            self.expect("|")
            base = self.atom()
            self.expect("|")
            self.expect("^")
            pos = self.position()
            if self.expect(kind="num") != "2":
                raise ParseError("only |X|^2 is supported", self.source, pos)
            return [base, FactorRef(base.laplacian, base.alpha, not base.conjugated)]
        base = self.atom()
        if self.peek("^"):
            self.expect("^")
            pos = self.position()
            text = self.expect(kind="num")
            if not text.isdigit() or int(text) < 1:
                raise ParseError("exponent must be a positive integer", self.source, pos)
            return [base] * int(text)
        return [base]

    def atom(self, conjugated: bool = False) -> FactorRef:
        if self.peek("conj"):
            self.expect("conj")
            self.expect("(")
            inner = self.atom(conjugated=not conjugated)
            self.expect(")")
            return inner
        if self.peek("lap"):
            self.expect("lap")
            self.expect("(")
            self.expect("u")
            self.expect(")")
            return FactorRef(laplacian=True, conjugated=conjugated)
        if self.peek("d"):
            self.expect("d")
            self.expect("(")
            axes = [self.axis()]
            while self.peek(","):
                self.expect(",")
                axes.append(self.axis())
            self.expect(")")
            if len(axes) > 2:
                self.i -= 1
                self.fail(f"derivative order {len(axes)} exceeds 2 (|alpha| <= 2)")
            self.expect("u")
            return FactorRef(alpha=tuple(axes), conjugated=conjugated)
        if self.peek("u"):
            self.expect("u")
            return FactorRef(conjugated=conjugated)
        self.fail("expected a factor (u, d(j)u, d(j,k)u, lap(u), conj(...))")

    def axis(self) -> int:
        pos = self.position()
        text = self.expect(kind="num")
        if not text.isdigit() or int(text) < 1:
            raise ParseError("axis index must be a positive integer", self.source, pos)
        return int(text)


def parse(source: str) -> PolynomialNonlinearity:
    """Parse ``source`` into a canonical :class:`PolynomialNonlinearity`."""
    parser = _Parser(source)
    terms = parser.parse()
    for term, pos in terms:
        if term.degree < 2:
            kind = "constant" if term.degree == 0 else "linear"
            raise ParseError(
                f"{kind} term not allowed: the nonlinearity must start at degree l >= 2", source, pos
            )
    return _canonicalize(t for t, _ in terms)


def dealias_mask(grid, degree: int) -> np.ndarray:
    """Keep modes with ``|m| (degree + 1) < N`` on every axis."""
    mask = np.ones(grid.shape, dtype=bool)
    for ax, (m, n) in enumerate(zip(grid.mode_indices, grid.points_per_axis)):
        keep = np.abs(m) * (degree + 1) < n
        shape = [1] * grid.dim
        shape[ax] = n
        mask &= keep.reshape(shape)
    return mask


def _factor_samples(spec: np.ndarray, grid, factor: FactorRef) -> np.ndarray:
    xi = grid.wavevectors
    if factor.laplacian:
        s = spec * (-grid.xi_squared)
    else:
        s = spec
        for a in factor.alpha:
            s = s * (1j * xi[a - 1])
    out = np.fft.ifftn(s) * grid.size
    return np.conj(out) if factor.conjugated else out


def evaluate(P: PolynomialNonlinearity, u: Field) -> Field:
    """Pointwise value of ``P`` at ``u``, dealiased for degree ``P.h``.

    Inputs are truncated to ``|m| < N/(h+1)`` per axis before the products
    are formed and the result is truncated to the same band, which keeps
    every aliased product frequency out of the retained modes.
    """
    grid = u.grid
    if P.max_axis() > grid.dim:
        raise NonlinearityError(f"axis index {P.max_axis()} exceeds grid dimension {grid.dim}")
    mask = dealias_mask(grid, P.h)
    spec = np.where(mask, u.spectrum, 0.0)
    cache: dict[FactorRef, np.ndarray] = {}
    total = np.zeros(grid.shape, dtype=np.complex128)
    for term in P.terms:
        if term.coefficient == 0:
            continue
        prod = np.full(grid.shape, complex(term.coefficient))
        for factor, power in Counter(term.factors).items():
            if factor not in cache:
                cache[factor] = _factor_samples(spec, grid, factor)
            prod = prod * cache[factor] ** power
        total += prod
    out_spec = np.where(mask, np.fft.fftn(total) / grid.size, 0.0)
    return Field.from_spectrum(grid, out_spec)


def degree_scaling_exponent(P: PolynomialNonlinearity) -> int | None:
    """Homogeneity degree of ``P`` or ``None`` if the degrees are mixed."""
    return P.l if P.is_homogeneous() else None

