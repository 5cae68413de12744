"""Exact scaled p-adic scalars.

A scalar is p^e * u with e an integer offset and u a unit (or zero) residue.
All unit arithmetic happens modulo p^(prec + guard); anything reported to the
outside world is reduced modulo p^prec.  The guard digits absorb the
divisions by small integers (integration indices, factorials) that the series
layer performs, so that identities checked modulo p^prec come out exact
without interval bookkeeping.

Negative offsets e are allowed down to -denom_bound; crossing that floor
raises PrecisionExhausted instead of silently truncating.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import ExpDomain, InvertNonUnit, LogDomain, PrecisionExhausted


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


class PadicContext:
    """Fixed prime, reported precision, guard digits and denominator floor.

    guard defaults to 0 (pure scalar work); series-level code should build
    contexts through for_degree(), which sizes the guard for truncated
    calculus at a given degree cap: D + ceil(D/(p-1)) digits cover the worst
    accumulated loss from integrations and factorial divisions, and the
    denominator floor 3 + guard covers the p^-3 twists of the level-3 theory.
    """

    kind = "padic"

    __slots__ = ("p", "prec", "guard", "denom_bound", "work_digits", "modulus")

    def __init__(self, p: int, prec: int, guard: int = 0, denom_bound: int | None = None):
        if not is_prime(p):
            raise ValueError(f"p = {p} is not prime")
        if prec < 1:
            raise ValueError("prec must be >= 1")
        if guard < 0:
            raise ValueError("guard must be >= 0")
        self.p = p
        self.prec = prec
        self.guard = guard
        self.denom_bound = 3 + guard if denom_bound is None else denom_bound
        self.work_digits = prec + guard
        self.modulus = p ** self.work_digits

    @classmethod
    def for_degree(cls, p: int, prec: int, degree: int) -> "PadicContext":
        guard = degree + -(-degree // (p - 1))
        return cls(p, prec, guard)

    def __eq__(self, other):
        return (
            isinstance(other, PadicContext)
            and self.p == other.p
            and self.prec == other.prec
            and self.guard == other.guard
            and self.denom_bound == other.denom_bound
        )

    def __hash__(self):
        return hash((self.p, self.prec, self.guard, self.denom_bound))

    def __repr__(self):
        return f"PadicContext(p={self.p}, prec={self.prec}, guard={self.guard}, denom_bound={self.denom_bound})"

    # -- integer helpers -------------------------------------------------

    def valuation(self, n: int) -> int:
        """v_p of a nonzero integer."""
        if n == 0:
            raise ValueError("valuation of 0")
        v = 0
        while n % self.p == 0:
            n //= self.p
            v += 1
        return v

    def split_unit(self, n: int) -> tuple[int, int]:
        """n = p^v * w with p coprime to w; returns (v, w)."""
        if n == 0:
            raise ValueError("cannot split 0")
        v = 0
        while n % self.p == 0:
            n //= self.p
            v += 1
        return v, n

    def unit_inverse(self, u: int) -> int:
        return pow(u, -1, self.modulus)

    # -- scalar factories ------------------------------------------------

    def zero(self) -> "PadicScalar":
        return PadicScalar(self, 0, 0)

    def one(self) -> "PadicScalar":
        return PadicScalar(self, 0, 1)

    def from_int(self, n: int) -> "PadicScalar":
        return PadicScalar(self, 0, n % self.modulus, normalize=True)

    def from_fraction(self, q: Fraction | int) -> "PadicScalar":
        if isinstance(q, int):
            return self.from_int(q)
        num, den = q.numerator, q.denominator
        if num == 0:
            return self.zero()
        b, w = self.split_unit(den)
        return PadicScalar(self, -b, (num * self.unit_inverse(w)) % self.modulus, normalize=True)


class PadicScalar:
    """Canonical p^e * u with u == 0 (then e == 0) or p coprime to u.

    Instances are immutable; arithmetic returns new scalars.  Two scalars
    compare equal when they agree at full working precision; use
    congruent(other, digits) for the reported-precision notion.
    """

    __slots__ = ("ctx", "e", "u")

    def __init__(self, ctx: PadicContext, e: int, u: int, normalize: bool = False):
        u %= ctx.modulus
        if normalize and u != 0:
            v, u = ctx.split_unit(u)
            e += v
            u %= ctx.modulus
        if u == 0:
            e = 0
        elif e < -ctx.denom_bound:
            raise PrecisionExhausted(f"offset {e} below floor -{ctx.denom_bound}")
        self.ctx = ctx
        self.e = e
        self.u = u

    # -- predicates --------------------------------------------------------

    def is_zero(self) -> bool:
        return self.u == 0

    def valuation(self) -> int | None:
        """Total valuation, or None for zero."""
        return None if self.u == 0 else self.e

    def is_integral(self) -> bool:
        return self.u == 0 or self.e >= 0

    def is_unit(self) -> bool:
        return self.u != 0 and self.e == 0

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, PadicScalar):
            if other.ctx != self.ctx:
                raise ValueError("mixed p-adic contexts")
            return other
        if isinstance(other, int):
            return self.ctx.from_int(other)
        if isinstance(other, Fraction):
            return self.ctx.from_fraction(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self.u == 0:
            return other
        if other.u == 0:
            return self
        ctx = self.ctx
        m = min(self.e, other.e)
        s = (self.u * pow(ctx.p, self.e - m) + other.u * pow(ctx.p, other.e - m)) % ctx.modulus
        if s == 0:
            return ctx.zero()
        return PadicScalar(ctx, m, s, normalize=True)

    __radd__ = __add__

    def __neg__(self):
        return PadicScalar(self.ctx, self.e, -self.u % self.ctx.modulus)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self.u == 0 or other.u == 0:
            return self.ctx.zero()
        return PadicScalar(self.ctx, self.e + other.e, (self.u * other.u) % self.ctx.modulus)

    __rmul__ = __mul__

    def invert(self) -> "PadicScalar":
        """Multiplicative inverse; requires a unit (valuation 0, e >= 0)."""
        if self.u == 0 or self.e != 0:
            raise InvertNonUnit(f"cannot invert p^{self.e}*{self.u}")
        return PadicScalar(self.ctx, 0, self.ctx.unit_inverse(self.u))

    def divide_int(self, n: int) -> "PadicScalar":
        if n == 0:
            raise ZeroDivisionError
        if self.u == 0:
            return self
        b, w = self.ctx.split_unit(n)
        return PadicScalar(self.ctx, self.e - b, (self.u * self.ctx.unit_inverse(w)) % self.ctx.modulus)

    def __pow__(self, k: int):
        if k < 0:
            return self.invert() ** (-k)
        out = self.ctx.one()
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- comparison and reporting -------------------------------------------

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = self._coerce(other)
        if not isinstance(other, PadicScalar):
            return NotImplemented
        return self.ctx == other.ctx and self.e == other.e and self.u == other.u

    def __hash__(self):
        return hash((self.e, self.u, self.ctx.p))

    def congruent(self, other, digits: int | None = None) -> bool:
        """True when self - other has valuation >= digits (default: prec)."""
        other = self._coerce(other)
        digits = self.ctx.prec if digits is None else digits
        d = self - other
        return d.u == 0 or d.e >= digits

    def residue(self, digits: int | None = None) -> int:
        """Integer residue mod p^digits; requires integrality."""
        digits = self.ctx.prec if digits is None else digits
        if self.u == 0:
            return 0
        if self.e < 0:
            raise PrecisionExhausted("residue of a non-integral scalar")
        return (self.u * pow(self.ctx.p, self.e)) % self.ctx.p ** digits

    def serialize(self) -> str:
        """'p^e*u' with u reduced so the value is pinned mod p^prec."""
        if self.u == 0:
            return "0"
        k = self.ctx.prec - self.e
        if k <= 0:
            return "0"
        return f"p^{self.e}*{self.u % self.ctx.p ** k}"

    @classmethod
    def parse(cls, ctx: PadicContext, text: str) -> "PadicScalar":
        text = text.strip()
        if "*" in text:
            head, u = text.split("*")
            if not head.startswith("p^"):
                raise ValueError(f"bad p-adic scalar {text!r}")
            return cls(ctx, int(head[2:]), int(u), normalize=True)
        return ctx.from_int(int(text))

    def __repr__(self):
        if self.u == 0:
            return "0"
        return f"p^{self.e}*{self.u}"


# ----------------------------------------------------------------------
# Scalar exponential / logarithm.
#
# exp(x) converges for v(x) >= 1 when p >= 3 (v(x^m/m!) grows at least like
# m(1 - 1/(p-1))) and for v(x) >= 2 when p = 2.  log(x) converges whenever
# v(x - 1) >= 1.  Both loops run until the term underflows the working
# window, with a hard iteration bound derived from the same valuation
# estimate.
# ----------------------------------------------------------------------


def _exp_iterations(ctx: PadicContext) -> int:
    p = ctx.p
    if p == 2:
        return 2 * ctx.work_digits + 4
    return (ctx.work_digits * (p - 1)) // (p - 2) + 3


def scalar_exp(x: PadicScalar) -> PadicScalar:
    ctx = x.ctx
    if x.u == 0:
        return ctx.one()
    v = x.e
    need = 2 if ctx.p == 2 else 1
    if v < need:
        raise ExpDomain(f"exp needs valuation >= {need}, got {v}")
    acc = ctx.one()
    term = ctx.one()
    for m in range(1, _exp_iterations(ctx) + 1):
        term = (term * x).divide_int(m)
        if term.u == 0:
            break
        if ctx.p > 3:
            # v(x^m/m!) >= m - m/(p-1); sanity-check the scaled representation
            bound = m - (-(-m // (ctx.p - 1)))  # m - ceil(m/(p-1)) <= m - m/(p-1)
            assert term.e >= bound, (term.e, bound, m)
        acc = acc + term
    return acc


def scalar_log(x: PadicScalar) -> PadicScalar:
    ctx = x.ctx
    y = x - ctx.one()
    if y.u == 0:
        return ctx.zero()
    if y.e < 1:
        raise LogDomain(f"log needs argument = 1 mod p, got offset {y.e}")
    acc = ctx.zero()
    power = ctx.one()
    sign = 1
    for m in range(1, _exp_iterations(ctx) + 1):
        power = power * y
        if power.u == 0:
            break
        term = power.divide_int(m)
        acc = acc + term if sign > 0 else acc - term
        sign = -sign
    return acc
