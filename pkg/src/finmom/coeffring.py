"""Exact coefficient arithmetic for transfer-matrix entries.

Every entry of a moment transfer matrix is a Laurent polynomial in the two
matrix dimensions n and N with rational coefficients.  ``CoeffPoly`` stores
such a polynomial as a mapping from exponent pairs (a, b), meaning n^a N^b,
to nonzero ``fractions.Fraction`` coefficients.  The representation is kept
canonical (no zero coefficients), so structural equality is polynomial
equality.

For presentation the aspect ratio c = n/N is often substituted: the monomial
n^a N^b is rewritten as c^a N^(a+b).  The substitution is presentation only;
the internal form is always in (n, N).  ``render`` produces plain text or
LaTeX in either style and ``parse`` reads the plain style back, so rendered
entries round-trip to the identical canonical polynomial.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Union

Exponents = tuple[int, int]
RationalLike = Union[int, Fraction]


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        # Floats are read as their shortest decimal literal so that e.g.
        # 0.1 means exactly 1/10.
        return Fraction(str(x))
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as an exact rational")


class CoeffPoly:
    """Bivariate Laurent polynomial in (n, N) over the rationals."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Exponents, RationalLike] | None = None):
        canon: dict[Exponents, Fraction] = {}
        if terms:
            for (a, b), coeff in terms.items():
                c = _as_fraction(coeff)
                if c:
                    key = (int(a), int(b))
                    c += canon.get(key, Fraction(0))
                    if c:
                        canon[key] = c
                    else:
                        canon.pop(key, None)
        self.terms = canon

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls) -> "CoeffPoly":
        return cls()

    @classmethod
    def one(cls) -> "CoeffPoly":
        return cls({(0, 0): 1})

    @classmethod
    def constant(cls, value) -> "CoeffPoly":
        return cls({(0, 0): _as_fraction(value)})

    @classmethod
    def monomial(cls, n_exp: int, N_exp: int, coeff=1) -> "CoeffPoly":
        return cls({(n_exp, N_exp): _as_fraction(coeff)})

    # -- ring structure ----------------------------------------------------

    def __add__(self, other) -> "CoeffPoly":
        other = _coerce(other)
        out = dict(self.terms)
        for key, coeff in other.terms.items():
            s = out.get(key, Fraction(0)) + coeff
            if s:
                out[key] = s
            else:
                out.pop(key, None)
        res = CoeffPoly.__new__(CoeffPoly)
        res.terms = out
        return res

    __radd__ = __add__

    def __neg__(self) -> "CoeffPoly":
        res = CoeffPoly.__new__(CoeffPoly)
        res.terms = {key: -coeff for key, coeff in self.terms.items()}
        return res

    def __sub__(self, other) -> "CoeffPoly":
        return self + (-_coerce(other))

    def __rsub__(self, other) -> "CoeffPoly":
        return _coerce(other) + (-self)

    def __mul__(self, other) -> "CoeffPoly":
        if isinstance(other, (int, Fraction)):
            c = _as_fraction(other)
            if not c:
                return CoeffPoly.zero()
            res = CoeffPoly.__new__(CoeffPoly)
            res.terms = {key: coeff * c for key, coeff in self.terms.items()}
            return res
        other = _coerce(other)
        out: dict[Exponents, Fraction] = {}
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                key = (a1 + a2, b1 + b2)
                s = out.get(key, Fraction(0)) + c1 * c2
                if s:
                    out[key] = s
                else:
                    out.pop(key, None)
        res = CoeffPoly.__new__(CoeffPoly)
        res.terms = out
        return res

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "CoeffPoly":
        if k < 0:
            inv = self.invert_monomial()
            return inv ** (-k)
        out = CoeffPoly.one()
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def invert_monomial(self) -> "CoeffPoly":
        """Invert a single-term polynomial; anything else has no Laurent inverse here."""
        if len(self.terms) != 1:
            raise ValueError("only monomials can be inverted exactly")
        ((a, b), c), = self.terms.items()
        return CoeffPoly({(-a, -b): Fraction(1) / c})

    # -- queries -----------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def eval(self, n, N) -> Fraction:
        """Exact value at integer or rational (n, N)."""
        n = _as_fraction(n)
        N = _as_fraction(N)
        total = Fraction(0)
        for (a, b), coeff in self.terms.items():
            total += coeff * n**a * N**b
        return total

    def eval_float(self, n, N) -> float:
        return float(self.eval(n, N))

    def c_terms(self) -> dict[Exponents, Fraction]:
        """Exponent map after substituting c = n/N: n^a N^b -> c^a N^(a+b)."""
        return {(a, a + b): coeff for (a, b), coeff in self.terms.items()}

    def n_degree_range(self) -> tuple[int, int]:
        if not self.terms:
            return (0, 0)
        exps = [a for a, _ in self.terms]
        return (min(exps), max(exps))

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = CoeffPoly.constant(other)
        if not isinstance(other, CoeffPoly):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __bool__(self):
        return bool(self.terms)

    def __repr__(self):
        return f"CoeffPoly({render(self, style='raw')!r})"


def _coerce(x) -> CoeffPoly:
    if isinstance(x, CoeffPoly):
        return x
    return CoeffPoly.constant(x)


# -- the operation surface used by the rest of the package -----------------

def add(x: CoeffPoly, y: CoeffPoly) -> CoeffPoly:
    return x + y


def mul(x: CoeffPoly, y: CoeffPoly) -> CoeffPoly:
    return x * y


def negate(x: CoeffPoly) -> CoeffPoly:
    return -x


def scale(x: CoeffPoly, factor) -> CoeffPoly:
    return x * factor if isinstance(factor, (int, Fraction)) else x * _coerce(factor)


def evaluate(x: CoeffPoly, n, N) -> Fraction:
    return x.eval(n, N)


# -- rendering -------------------------------------------------------------

def _coeff_split(coeff: Fraction) -> tuple[int, int]:
    return coeff.numerator, coeff.denominator


def _power_txt(var: str, exp: int, latex: bool) -> str:
    if exp == 1:
        return var
    if latex:
        return f"{var}^{{{exp}}}"
    return f"{var}^{exp}"


def _term_text(exps: Exponents, coeff: Fraction, vars_: tuple[str, str], latex: bool) -> str:
    num_factors: list[str] = []
    den_factors: list[str] = []
    cnum, cden = _coeff_split(abs(coeff))
    for var, exp in zip(vars_, exps):
        if exp > 0:
            num_factors.append(_power_txt(var, exp, latex))
        elif exp < 0:
            den_factors.append(_power_txt(var, -exp, latex))
    if cnum != 1 or not num_factors:
        num_factors.insert(0, str(cnum))
    if cden != 1:
        den_factors.insert(0, str(cden))
    num = "".join(num_factors)
    if not den_factors:
        return num
    den = "".join(den_factors)
    if latex:
        return rf"\frac{{{num}}}{{{den}}}"
    # Parenthesize composite denominators so the text parses back unambiguously.
    if len(den_factors) > 1:
        return f"{num}/({den})"
    return f"{num}/{den}"


def render(x: CoeffPoly, style: str = "c", fmt: str = "plain") -> str:
    """Format a polynomial.

    style: "c" substitutes c = n/N (paper-style presentation);
           "raw" keeps monomials in n and N.
    fmt:   "plain" (parseable by :func:`parse`) or "latex".
    """
    if style not in ("c", "c_substituted", "raw"):
        raise ValueError(f"unknown style {style!r}")
    if fmt not in ("plain", "latex"):
        raise ValueError(f"unknown format {fmt!r}")
    latex = fmt == "latex"
    if x.is_zero:
        return "0"
    if style == "raw":
        terms = dict(x.terms)
        vars_ = ("n", "N")
    else:
        terms = x.c_terms()
        vars_ = ("c", "N")
    # Stable display order: N-power descending, then first-variable power ascending.
    ordered = sorted(terms.items(), key=lambda kv: (-kv[0][1], kv[0][0]))
    pieces: list[str] = []
    for i, (exps, coeff) in enumerate(ordered):
        text = _term_text(exps, coeff, vars_, latex)
        if i == 0:
            pieces.append(text if coeff > 0 else "-" + text)
        else:
            pieces.append((" + " if coeff > 0 else " - ") + text)
    return "".join(pieces)


# -- parsing of the plain format -------------------------------------------

_C_MONO = {"c": (1, -1), "n": (1, 0), "N": (0, 1)}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg: str):
        raise ValueError(f"{msg} at position {self.pos} in {self.text!r}")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    def parse_poly(self) -> CoeffPoly:
        sign = 1
        if self.peek() == "-":
            self.take()
            sign = -1
        elif self.peek() == "+":
            self.take()
        total = self.parse_term() * sign
        while True:
            ch = self.peek()
            if ch == "+":
                self.take()
                total = total + self.parse_term()
            elif ch == "-":
                self.take()
                total = total - self.parse_term()
            else:
                return total

    def parse_term(self) -> CoeffPoly:
        result = self.parse_factor()
        while True:
            ch = self.peek()
            if ch == "*":
                self.take()
                result = result * self.parse_factor()
            elif ch == "/":
                self.take()
                result = result * self.parse_factor().invert_monomial()
            elif ch.isdigit() or ch in _C_MONO or ch == "(":
                result = result * self.parse_factor()
            else:
                return result

    def parse_factor(self) -> CoeffPoly:
        ch = self.peek()
        if ch == "(":
            self.take()
            inner = self.parse_poly()
            if self.peek() != ")":
                self.error("expected ')'")
            self.take()
            base = inner
        elif ch.isdigit():
            base = CoeffPoly.constant(self.parse_int())
        elif ch in _C_MONO:
            self.take()
            a, b = _C_MONO[ch]
            base = CoeffPoly.monomial(a, b)
        else:
            self.error(f"unexpected character {ch!r}")
        if self.peek() == "^":
            self.take()
            exp = self.parse_int(signed=True)
            base = base**exp
        return base

    def parse_int(self, signed: bool = False) -> int:
        self.skip_ws()
        start = self.pos
        if signed and self.pos < len(self.text) and self.text[self.pos] in "+-":
            self.pos += 1
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.error("expected integer")
        return int(self.text[start : self.pos])


def parse(text: str) -> CoeffPoly:
    """Parse the plain rendering (either raw n,N or c-substituted style)."""
    p = _Parser(text)
    poly = p.parse_poly()
    p.skip_ws()
    if p.pos != len(p.text):
        p.error("trailing input")
    return poly


def parse_all(texts: Iterable[str]) -> list[CoeffPoly]:
    return [parse(t) for t in texts]
