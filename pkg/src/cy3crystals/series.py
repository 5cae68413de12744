"""Truncated multivariate power series and dense series matrices.

Series live in t_1..t_n, truncated at a fixed total degree cap, over one of
two coefficient rings:

* the scaled p-adic ring of a PadicContext.  Coefficients are stored as
  plain integers modulo p^(prec+guard) together with one per-series shift
  s <= 0, the whole series meaning p^s * (stored polynomial).  Keeping the
  shift per series rather than per coefficient makes ring operations plain
  modular integer arithmetic.
* exact rationals (fractions.Fraction), shift always 0.

Multiplication of p-adic series is done by Kronecker packing: coefficients
are laid out in fixed-width slots of one big integer, indexed by a
carry-free mixed-radix encoding of the exponent vector, so that a single
Python big-integer multiply performs the whole truncated convolution.
Matrix products accumulate packed integers before unpacking, which is where
the bulk of the crystal computations spend their time.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

from .errors import (
    ExpDomain,
    InvertNonUnit,
    LogDomain,
    NotUnit,
    PrecisionExhausted,
    RevertSingular,
    SubstituteDomain,
)
from .padic import PadicContext, PadicScalar, scalar_exp, scalar_log


class RationalRing:
    """Marker ring object for exact rational coefficients."""

    kind = "rational"

    def __repr__(self):
        return "QQ"

    def __eq__(self, other):
        return isinstance(other, RationalRing)

    def __hash__(self):
        return hash("rational-ring")


QQ = RationalRing()

_MAX_INNER_DIM = 64  # matrix accumulation bound baked into the slot headroom


@lru_cache(maxsize=None)
def _pack_spec(p: int, work_digits: int, nvars: int, cap: int):
    """Layout for carry-free packed multiplication at (ring, nvars, cap)."""
    modulus = p ** work_digits
    exps = _exponents(nvars, cap)
    if nvars == 0:
        index = {(): 0}
    else:
        radix = 2 * cap + 1
        index = {}
        for m in exps:
            idx = 0
            for k in range(nvars - 1, -1, -1):
                idx = idx * radix + m[k]
            index[m] = idx
    max_idx = max(index.values())
    pair_bound = len(exps) * _MAX_INNER_DIM
    slot_bits = 2 * modulus.bit_length() + pair_bound.bit_length() + 1
    slot_bytes = (slot_bits + 7) // 8
    offsets = {m: index[m] * slot_bytes for m in exps}
    buf_bytes = (max_idx + 1) * slot_bytes
    tot_bytes = (2 * max_idx + 1) * slot_bytes + 16
    return modulus, exps, offsets, slot_bytes, buf_bytes, tot_bytes


@lru_cache(maxsize=None)
def _exponents(nvars: int, cap: int) -> tuple[tuple[int, ...], ...]:
    """All exponent vectors of total degree <= cap, by total degree."""
    if nvars == 0:
        return ((),)
    out = []

    def rec(prefix, remaining, budget):
        if remaining == 1:
            for k in range(budget + 1):
                out.append(prefix + (k,))
            return
        for k in range(budget + 1):
            rec(prefix + (k,), remaining - 1, budget - k)

    rec((), nvars, cap)
    out.sort(key=lambda m: (sum(m), m))
    return tuple(out)


def _add_exps(a, b):
    return tuple(x + y for x, y in zip(a, b))


class Series:
    """Immutable truncated power series; see module docstring."""

    __slots__ = ("ring", "nvars", "cap", "coeffs", "shift", "_packed")

    def __init__(self, ring, nvars, cap, coeffs, shift=0, _trust=False):
        self.ring = ring
        self.nvars = nvars
        self.cap = cap
        self._packed = None
        if ring.kind == "rational":
            self.coeffs = {m: c for m, c in coeffs.items() if c} if not _trust else coeffs
            self.shift = 0
            return
        modulus = ring.modulus
        if shift > 0:
            scale = ring.p ** shift
            coeffs = {m: (c * scale) % modulus for m, c in coeffs.items()}
            shift = 0
        clean = {}
        for m, c in coeffs.items():
            c %= modulus
            if c:
                clean[m] = c
        if not clean:
            shift = 0
        elif shift < -ring.denom_bound:
            # try to raise the shift by a common p power before giving up
            g = min(_ival(ring, c) for c in clean.values())
            lift = min(g, -shift)
            if lift > 0:
                q = ring.p ** lift
                clean = {m: c // q for m, c in clean.items()}
                shift += lift
            if shift < -ring.denom_bound:
                raise PrecisionExhausted(
                    f"series denominator p^{-shift} exceeds floor p^{ring.denom_bound}"
                )
        self.coeffs = clean
        self.shift = shift

    # -- factories ---------------------------------------------------------

    @staticmethod
    def zero(ring, nvars, cap):
        return Series(ring, nvars, cap, {}, 0, _trust=True)

    @staticmethod
    def one(ring, nvars, cap):
        return Series.constant(ring, nvars, cap, 1)

    @staticmethod
    def constant(ring, nvars, cap, value):
        z = (0,) * nvars
        if ring.kind == "rational":
            v = Fraction(value)
            return Series(ring, nvars, cap, {z: v} if v else {})
        sc = _as_padic(ring, value)
        if sc.is_zero():
            return Series.zero(ring, nvars, cap)
        return Series(ring, nvars, cap, {z: sc.u}, sc.e)

    @staticmethod
    def variable(ring, nvars, cap, j):
        if not 0 <= j < nvars:
            raise ValueError("variable index out of range")
        if cap < 1:
            return Series.zero(ring, nvars, cap)
        m = tuple(1 if k == j else 0 for k in range(nvars))
        one = Fraction(1) if ring.kind == "rational" else 1
        return Series(ring, nvars, cap, {m: one})

    @staticmethod
    def from_terms(ring, nvars, cap, terms):
        """Build from {exponent tuple: int | Fraction | PadicScalar}."""
        if ring.kind == "rational":
            return Series(ring, nvars, cap, {m: Fraction(c) for m, c in terms.items()})
        scalars = {m: _as_padic(ring, c) for m, c in terms.items()}
        scalars = {m: s for m, s in scalars.items() if not s.is_zero()}
        if not scalars:
            return Series.zero(ring, nvars, cap)
        shift = min(0, min(s.e for s in scalars.values()))
        coeffs = {m: s.u * ring.p ** (s.e - shift) for m, s in scalars.items()}
        return Series(ring, nvars, cap, coeffs, shift)

    # -- accessors -----------------------------------------------------------

    def is_zero(self):
        return not self.coeffs

    def coefficient(self, exps):
        exps = tuple(exps)
        if self.ring.kind == "rational":
            return self.coeffs.get(exps, Fraction(0))
        c = self.coeffs.get(exps, 0)
        if c == 0:
            return self.ring.zero()
        return PadicScalar(self.ring, self.shift, c, normalize=True)

    def constant_scalar(self):
        return self.coefficient((0,) * self.nvars)

    def terms(self):
        for m in sorted(self.coeffs, key=lambda e: (sum(e), e)):
            yield m, self.coefficient(m)

    def min_valuation(self):
        """Smallest coefficient valuation, or None for the zero series."""
        if self.ring.kind == "rational":
            raise TypeError("valuation is a p-adic notion")
        if not self.coeffs:
            return None
        return self.shift + min(_ival(self.ring, c) for c in self.coeffs.values())

    def is_integral(self):
        v = self.min_valuation() if self.ring.kind == "padic" else 0
        return v is None or v >= 0

    def degree(self):
        return max((sum(m) for m in self.coeffs), default=0)

    # -- comparison ------------------------------------------------------------

    def agrees(self, other, digits=None, max_degree=None):
        return self.deficit(other, digits, max_degree)[0] == 0

    def deficit(self, other, digits=None, max_degree=None):
        """Worst reported-precision deficit of self - other.

        Returns (deficit, exponent-or-None); deficit 0 means congruence
        modulo p^digits (exact equality for rationals) up to max_degree.
        """
        d = self - other
        if max_degree is not None:
            d = d.truncated_to_degree(max_degree)
        if self.ring.kind == "rational":
            if not d.coeffs:
                return 0, None
            m = min(d.coeffs, key=lambda e: (sum(e), e))
            return 1, m
        if digits is None:
            digits = self.ring.prec
        worst, where = 0, None
        for m, c in d.coeffs.items():
            v = d.shift + _ival(self.ring, c)
            if digits - v > worst:
                worst, where = digits - v, m
        return worst, where

    def __eq__(self, other):
        if not isinstance(other, Series):
            return NotImplemented
        return self.agrees(other)

    __hash__ = None

    def __repr__(self):
        parts = []
        for m, s in list(self.terms())[:6]:
            parts.append(f"{s}*t^{m}")
        body = " + ".join(parts) if parts else "0"
        more = " + ..." if len(self.coeffs) > 6 else ""
        return f"<Series {body}{more}>"

    # -- ring operations ---------------------------------------------------------

    def _compat(self, other):
        if self.ring != other.ring or self.nvars != other.nvars or self.cap != other.cap:
            raise ValueError("incompatible series")

    def __add__(self, other):
        if isinstance(other, (int, Fraction, PadicScalar)):
            other = Series.constant(self.ring, self.nvars, self.cap, other)
        if not isinstance(other, Series):
            return NotImplemented
        self._compat(other)
        if self.ring.kind == "rational":
            out = dict(self.coeffs)
            for m, c in other.coeffs.items():
                v = out.get(m, 0) + c
                if v:
                    out[m] = v
                elif m in out:
                    del out[m]
            return Series(self.ring, self.nvars, self.cap, out, _trust=True)
        a, b = self, other
        shift = min(a.shift, b.shift)
        pa = self.ring.p ** (a.shift - shift)
        pb = self.ring.p ** (b.shift - shift)
        modulus = self.ring.modulus
        out = {m: (c * pa) % modulus for m, c in a.coeffs.items()} if pa != 1 else dict(a.coeffs)
        for m, c in b.coeffs.items():
            out[m] = (out.get(m, 0) + c * pb) % modulus
        return Series(self.ring, self.nvars, self.cap, out, shift)

    __radd__ = __add__

    def __neg__(self):
        if self.ring.kind == "rational":
            return Series(self.ring, self.nvars, self.cap, {m: -c for m, c in self.coeffs.items()}, _trust=True)
        modulus = self.ring.modulus
        return Series(self.ring, self.nvars, self.cap, {m: modulus - c for m, c in self.coeffs.items()}, self.shift)

    def __sub__(self, other):
        if isinstance(other, (int, Fraction, PadicScalar)):
            other = Series.constant(self.ring, self.nvars, self.cap, other)
        if not isinstance(other, Series):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, PadicScalar)):
            return self._scale(other)
        if not isinstance(other, Series):
            return NotImplemented
        self._compat(other)
        if not self.coeffs or not other.coeffs:
            return Series.zero(self.ring, self.nvars, self.cap)
        if self.ring.kind == "rational":
            cap = self.cap
            out = {}
            for m1, c1 in self.coeffs.items():
                d1 = sum(m1)
                for m2, c2 in other.coeffs.items():
                    if d1 + sum(m2) > cap:
                        continue
                    k = _add_exps(m1, m2)
                    v = out.get(k, 0) + c1 * c2
                    if v:
                        out[k] = v
                    elif k in out:
                        del out[k]
            return Series(self.ring, self.nvars, self.cap, out, _trust=True)
        acc = self._pack() * other._pack()
        return _unpack(self.ring, self.nvars, self.cap, acc, self.shift + other.shift)

    __rmul__ = __mul__

    def _scale(self, value):
        if self.ring.kind == "rational":
            v = Fraction(value)
            if not v:
                return Series.zero(self.ring, self.nvars, self.cap)
            return Series(self.ring, self.nvars, self.cap, {m: c * v for m, c in self.coeffs.items()}, _trust=True)
        sc = _as_padic(self.ring, value)
        if sc.is_zero() or not self.coeffs:
            return Series.zero(self.ring, self.nvars, self.cap)
        modulus = self.ring.modulus
        out = {m: (c * sc.u) % modulus for m, c in self.coeffs.items()}
        return Series(self.ring, self.nvars, self.cap, out, self.shift + sc.e)

    def shifted(self, k):
        """Multiply by p^k (k may be negative)."""
        if self.ring.kind == "rational":
            raise TypeError("shift is a p-adic notion")
        if not self.coeffs or k == 0:
            return self
        return Series(self.ring, self.nvars, self.cap, self.coeffs, self.shift + k)

    def divide_int(self, n):
        """Exact division by a nonzero integer."""
        if n == 0:
            raise ZeroDivisionError
        if self.ring.kind == "rational":
            inv = Fraction(1, n)
            return self._scale(inv)
        b, w = self.ring.split_unit(n)
        winv = self.ring.unit_inverse(w)
        modulus = self.ring.modulus
        out = {m: (c * winv) % modulus for m, c in self.coeffs.items()}
        return Series(self.ring, self.nvars, self.cap, out, self.shift - b)

    def normalized(self):
        """Raise a negative shift as far as the content allows."""
        if self.ring.kind == "rational" or self.shift == 0 or not self.coeffs:
            return self
        g = min(_ival(self.ring, c) for c in self.coeffs.values())
        k = min(-self.shift, g)
        if k == 0:
            return self
        q = self.ring.p ** k
        out = {m: c // q for m, c in self.coeffs.items()}
        return Series(self.ring, self.nvars, self.cap, out, self.shift + k)

    def truncated_to_degree(self, degree):
        if degree >= self.cap:
            return self
        out = {m: c for m, c in self.coeffs.items() if sum(m) <= degree}
        return Series(self.ring, self.nvars, self.cap, out, self.shift, _trust=self.ring.kind == "rational")

    def with_cap(self, cap):
        """Reinterpret at a different degree cap.

        Lowering truncates.  Raising asserts that the data is polynomial
        knowledge (used by generators working with exact polynomials), not a
        truncation being silently promoted.
        """
        if cap == self.cap:
            return self
        out = {m: c for m, c in self.coeffs.items() if sum(m) <= cap}
        return Series(self.ring, self.nvars, cap, out, self.shift,
                      _trust=self.ring.kind == "rational")

    def __pow__(self, k):
        if k < 0:
            return self.invert() ** (-k)
        out = Series.one(self.ring, self.nvars, self.cap)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out.normalized() if self.ring.kind == "padic" else out

    def _pack(self):
        if self._packed is None:
            ring = self.ring
            modulus, exps, offsets, slot_bytes, buf_bytes, _ = _pack_spec(
                ring.p, ring.work_digits, self.nvars, self.cap
            )
            buf = bytearray(buf_bytes)
            for m, c in self.coeffs.items():
                off = offsets[m]
                buf[off:off + slot_bytes] = c.to_bytes(slot_bytes, "little")
            self._packed = int.from_bytes(buf, "little")
        return self._packed

    # -- inversion, exp, log --------------------------------------------------

    def invert(self):
        """Multiplicative inverse up to the degree cap.

        The constant term must be a unit: valuation exactly 0 for p-adic
        coefficients, nonzero for rationals.
        """
        c0 = self.constant_scalar()
        if self.ring.kind == "rational":
            if c0 == 0:
                raise InvertNonUnit("constant term is zero")
            inv0 = Series.constant(self.ring, self.nvars, self.cap, Fraction(1, 1) / c0)
        else:
            if c0.is_zero() or c0.e != 0:
                raise InvertNonUnit(f"constant term {c0!r} is not a unit")
            inv0 = Series.constant(self.ring, self.nvars, self.cap, c0.invert())
        unit = self * inv0
        s = Series.one(self.ring, self.nvars, self.cap) - unit  # order >= 1
        acc = Series.one(self.ring, self.nvars, self.cap)
        pw = s
        for _ in range(self.cap):
            if pw.is_zero():
                break
            acc = acc + pw
            pw = pw * s
        out = acc * inv0
        return out.normalized() if self.ring.kind == "padic" else out

    def exp(self):
        """Truncated exponential.

        p-adic: the constant term must have valuation >= 1 (>= 2 for p = 2);
        it is exponentiated as a convergent scalar sum while the rest is the
        finite polynomial sum
        sum_m tail^m / m!.  Rational: constant term must be 0.
        """
        c0 = self.constant_scalar()
        if self.ring.kind == "rational":
            if c0 != 0:
                raise ExpDomain("rational exp needs zero constant term")
            head = Series.one(self.ring, self.nvars, self.cap)
            tail = self
        else:
            head = Series.constant(self.ring, self.nvars, self.cap, scalar_exp(c0))
            tail = self - c0
        acc = Series.one(self.ring, self.nvars, self.cap)
        term = Series.one(self.ring, self.nvars, self.cap)
        for m in range(1, self.cap + 1):
            term = (term * tail).divide_int(m)
            if term.is_zero():
                break
            acc = acc + term
        out = acc * head
        return out.normalized() if self.ring.kind == "padic" else out

    def log(self):
        """Truncated logarithm; constant term must be 1 mod p (exactly 1
        over the rationals)."""
        c0 = self.constant_scalar()
        if self.ring.kind == "rational":
            if c0 != 1:
                raise LogDomain("rational log needs constant term 1")
            head = Series.zero(self.ring, self.nvars, self.cap)
            unit = self
        else:
            delta_v = (c0 - 1).valuation()
            if c0.is_zero() or (delta_v is not None and delta_v < 1):
                raise LogDomain(f"log needs constant term = 1 mod p, got {c0!r}")
            head = Series.constant(self.ring, self.nvars, self.cap, scalar_log(c0))
            unit = self * c0.invert()
        s = unit - 1
        acc = Series.zero(self.ring, self.nvars, self.cap)
        pw = Series.one(self.ring, self.nvars, self.cap)
        sign = 1
        for m in range(1, self.cap + 1):
            pw = pw * s
            if pw.is_zero():
                break
            acc = acc + pw.divide_int(m) * sign
            sign = -sign
        out = acc + head
        return out.normalized() if self.ring.kind == "padic" else out

    # -- calculus ---------------------------------------------------------------

    def deriv(self, j):
        """d/dt_j, coefficientwise."""
        out = {}
        for m, c in self.coeffs.items():
            k = m[j]
            if k:
                out[m[:j] + (k - 1,) + m[j + 1:]] = c * k
        return Series(self.ring, self.nvars, self.cap, out, self.shift)

    def theta(self, j):
        """t_j * d/dt_j."""
        out = {}
        for m, c in self.coeffs.items():
            if m[j]:
                out[m] = c * m[j]
        return Series(self.ring, self.nvars, self.cap, out, self.shift)

    def integrate(self, j):
        """Antiderivative in t_j with zero constant term; divisions by the
        new exponent are exact in the scaled representation (they move the
        shift), terms beyond the cap are dropped."""
        if self.ring.kind == "rational":
            out = {}
            for m, c in self.coeffs.items():
                if sum(m) + 1 > self.cap:
                    continue
                k = m[j] + 1
                out[m[:j] + (k,) + m[j + 1:]] = c / k
            return Series(self.ring, self.nvars, self.cap, out, _trust=True)
        ring = self.ring
        prepared = []
        bmax = 0
        for m, c in self.coeffs.items():
            if sum(m) + 1 > self.cap:
                continue
            k = m[j] + 1
            b, w = ring.split_unit(k)
            bmax = max(bmax, b)
            prepared.append((m[:j] + (k,) + m[j + 1:], c, b, w))
        out = {}
        modulus = ring.modulus
        for m, c, b, w in prepared:
            out[m] = (c * ring.unit_inverse(w) * ring.p ** (bmax - b)) % modulus
        return Series(ring, self.nvars, self.cap, out, self.shift - bmax).normalized()

    # -- substitution -------------------------------------------------------------

    def substitute(self, images, _cache=None):
        """Evaluate at t_j = images[j]; truncated composition.

        Every image must have a constant term of positive valuation (zero
        over the rationals) so the composition is well defined on
        truncations.  Passing the same _cache dict across several
        substitutions with the same images shares the monomial powers.
        """
        if len(images) != self.nvars:
            raise ValueError(f"expected {self.nvars} images, got {len(images)}")
        if self.nvars == 0:
            return self
        target = images[0]
        for im in images:
            if im.ring != self.ring or im.cap != self.cap or im.nvars != target.nvars:
                raise ValueError("inconsistent substitution images")
            c0 = im.constant_scalar()
            if self.ring.kind == "rational":
                if c0 != 0:
                    raise SubstituteDomain("image has nonzero constant term")
            elif not c0.is_zero() and c0.e < 1:
                raise SubstituteDomain(f"image constant term {c0!r} is a unit")
        cache = {} if _cache is None else _cache
        acc = Series.zero(self.ring, target.nvars, self.cap)
        if not self.coeffs:
            return acc
        groups = {}
        for m, c in self.coeffs.items():
            pw = _monomial_power(m, images, cache)
            if pw.is_zero():
                continue
            if self.ring.kind == "rational":
                g = groups.setdefault(0, {})
                for k, v in pw.coeffs.items():
                    w = g.get(k, 0) + c * v
                    if w:
                        g[k] = w
                    elif k in g:
                        del g[k]
            else:
                g = groups.setdefault(pw.shift, {})
                modulus = self.ring.modulus
                for k, v in pw.coeffs.items():
                    g[k] = (g.get(k, 0) + c * v) % modulus
        for s, g in groups.items():
            acc = acc + Series(self.ring, target.nvars, self.cap, g, s)
        if self.ring.kind == "padic":
            acc = acc.shifted(self.shift).normalized()
        return acc

    def frobenius_substitute(self, p):
        """Fast path for t_j -> t_j^p: pure exponent remapping."""
        out = {}
        for m, c in self.coeffs.items():
            if sum(m) * p <= self.cap:
                out[tuple(x * p for x in m)] = c
        return Series(self.ring, self.nvars, self.cap, out, self.shift,
                      _trust=self.ring.kind == "rational")


def _monomial_power(m, images, cache):
    """images^m with memoization; recursion along the first nonzero slot."""
    hit = cache.get(m)
    if hit is not None:
        return hit
    if sum(m) == 0:
        target = images[0]
        out = Series.one(target.ring, target.nvars, target.cap)
    else:
        j = next(i for i, x in enumerate(m) if x)
        prev = m[:j] + (m[j] - 1,) + m[j + 1:]
        out = _monomial_power(prev, images, cache) * images[j]
    cache[m] = out
    return out


def _ival(ring, c):
    v = 0
    p = ring.p
    while c % p == 0:
        c //= p
        v += 1
    return v


def _as_padic(ring, value):
    if isinstance(value, PadicScalar):
        if value.ctx != ring:
            raise ValueError("scalar from a different context")
        return value
    if isinstance(value, int):
        return ring.from_int(value)
    if isinstance(value, Fraction):
        return ring.from_fraction(value)
    raise TypeError(f"cannot coerce {type(value).__name__} into p-adic scalar")


def _unpack(ring, nvars, cap, acc, shift):
    modulus, exps, offsets, slot_bytes, _, tot_bytes = _pack_spec(ring.p, ring.work_digits, nvars, cap)
    b = acc.to_bytes(tot_bytes, "little")
    out = {}
    for m in exps:
        off = offsets[m]
        v = int.from_bytes(b[off:off + slot_bytes], "little") % modulus
        if v:
            out[m] = v
    return Series(ring, nvars, cap, out, shift)


# ----------------------------------------------------------------------
# Reversion (compositional inverse) of a system of n series in n variables.
# ----------------------------------------------------------------------


def revert(images):
    """Compositional inverse: returns g with g(images(t)) = t = images(g(s)).

    Preconditions: every image has zero constant term and the constant
    Jacobian is invertible (RevertSingular otherwise).  Computed by
    fixed-point iteration, one degree per round.
    """
    n = len(images)
    if n == 0:
        return []
    ring, cap = images[0].ring, images[0].cap
    for im in images:
        if im.nvars != n:
            raise ValueError("revert needs n series in n variables")
        c0 = im.constant_scalar()
        if (c0 != 0) if ring.kind == "rational" else not c0.is_zero():
            raise RevertSingular("image has nonzero constant term")
    unit_vec = [(0,) * j + (1,) + (0,) * (n - j - 1) for j in range(n)]
    if ring.kind == "rational":
        jac = [[images[i].coefficient(unit_vec[j]) for j in range(n)] for i in range(n)]
        jinv = _invert_rational_matrix(jac)
    else:
        sc = [[images[i].coefficient(unit_vec[j]) for j in range(n)] for i in range(n)]
        for row in sc:
            for s in row:
                if not s.is_zero() and s.e < 0:
                    raise RevertSingular("non-integral linear part")
        jac = [[0 if s.is_zero() else s.residue(ring.work_digits) for s in row] for row in sc]
        jinv = _invert_int_matrix_mod(jac, ring, RevertSingular)
    svars = [Series.variable(ring, n, cap, j) for j in range(n)]

    def lin_apply(mat, vec):
        out = []
        for i in range(n):
            acc = Series.zero(ring, n, cap)
            for j in range(n):
                acc = acc + vec[j] * mat[i][j]
            out.append(acc)
        return out

    higher = []
    for i in range(n):
        lin = Series.zero(ring, n, cap)
        for j in range(n):
            lin = lin + svars[j] * images[i].coefficient(unit_vec[j])
        higher.append(images[i] - lin)
    g = lin_apply(jinv, svars)
    for _ in range(2, cap + 1):
        cache = {}
        hg = [h.substitute(g, _cache=cache) for h in higher]
        g = lin_apply(jinv, [svars[j] - hg[j] for j in range(n)])
    if ring.kind == "padic":
        g = [x.normalized() for x in g]
    cache = {}
    for j in range(n):
        assert images[j].substitute(g, _cache=cache).agrees(svars[j]), "reversion failed to verify"
    return g


def _invert_rational_matrix(rows):
    n = len(rows)
    a = [[Fraction(rows[i][j]) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            raise RevertSingular("singular rational matrix")
        a[col], a[piv] = a[piv], a[col]
        inv = 1 / a[col][col]
        a[col] = [x * inv for x in a[col]]
        for r in range(n):
            if r != col and a[r][col]:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [row[n:] for row in a]


def _invert_int_matrix_mod(rows, ring, err=NotUnit):
    """Inverse of an integer matrix modulo p^work_digits; needs a unit
    pivot in every column (i.e. determinant a p-adic unit)."""
    n = len(rows)
    modulus = ring.modulus
    p = ring.p
    a = [[rows[i][j] % modulus for j in range(n)] + [int(i == j) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] % p != 0), None)
        if piv is None:
            raise err("matrix is singular modulo p")
        a[col], a[piv] = a[piv], a[col]
        inv = pow(a[col][col], -1, modulus)
        a[col] = [(x * inv) % modulus for x in a[col]]
        for r in range(n):
            if r != col and a[r][col]:
                f = a[r][col]
                a[r] = [(x - f * y) % modulus for x, y in zip(a[r], a[col])]
    return [row[n:] for row in a]


# ----------------------------------------------------------------------
# Dense matrices of series.
# ----------------------------------------------------------------------


class SeriesMatrix:
    """Rectangular matrix of series sharing ring, variables and cap."""

    __slots__ = ("ring", "nvars", "cap", "rows", "cols", "entries")

    def __init__(self, entries):
        if not entries or not entries[0]:
            raise ValueError("empty matrix")
        first = entries[0][0]
        self.ring, self.nvars, self.cap = first.ring, first.nvars, first.cap
        self.rows, self.cols = len(entries), len(entries[0])
        for row in entries:
            if len(row) != self.cols:
                raise ValueError("ragged matrix")
            for e in row:
                if e.ring != self.ring or e.nvars != self.nvars or e.cap != self.cap:
                    raise ValueError("inconsistent matrix entries")
        self.entries = [list(row) for row in entries]

    # -- factories ----------------------------------------------------------

    @staticmethod
    def zero(ring, nvars, cap, rows, cols):
        z = Series.zero(ring, nvars, cap)
        return SeriesMatrix([[z for _ in range(cols)] for _ in range(rows)])

    @staticmethod
    def identity(ring, nvars, cap, n):
        z = Series.zero(ring, nvars, cap)
        o = Series.one(ring, nvars, cap)
        return SeriesMatrix([[o if i == j else z for j in range(n)] for i in range(n)])

    @staticmethod
    def from_constants(ring, nvars, cap, rows):
        return SeriesMatrix(
            [[Series.constant(ring, nvars, cap, v) for v in row] for row in rows]
        )

    @staticmethod
    def assemble(blocks, row_sizes, col_sizes, ring=None, nvars=None, cap=None):
        """Glue a grid of SeriesMatrix blocks (None = zero block)."""
        for brow in blocks:
            for b in brow:
                if b is not None:
                    ring, nvars, cap = b.ring, b.nvars, b.cap
        rows = sum(row_sizes)
        cols = sum(col_sizes)
        out = SeriesMatrix.zero(ring, nvars, cap, rows, cols).entries
        r0 = 0
        for bi, rs in enumerate(row_sizes):
            c0 = 0
            for bj, cs in enumerate(col_sizes):
                b = blocks[bi][bj]
                if b is not None:
                    if (b.rows, b.cols) != (rs, cs):
                        raise ValueError("block shape mismatch")
                    for i in range(rs):
                        for j in range(cs):
                            out[r0 + i][c0 + j] = b.entries[i][j]
                c0 += cs
            r0 += rs
        return SeriesMatrix(out)

    # -- structure ------------------------------------------------------------

    def entry(self, i, j):
        return self.entries[i][j]

    def submatrix(self, r0, r1, c0, c1):
        return SeriesMatrix([row[c0:c1] for row in self.entries[r0:r1]])

    def column(self, j):
        return [row[j] for row in self.entries]

    def transpose(self):
        return SeriesMatrix([[self.entries[i][j] for i in range(self.rows)] for j in range(self.cols)])

    def map_entries(self, fn):
        return SeriesMatrix([[fn(e) for e in row] for row in self.entries])

    def with_entry(self, i, j, series):
        out = [list(row) for row in self.entries]
        out[i][j] = series
        return SeriesMatrix(out)

    def is_zero(self):
        return all(e.is_zero() for row in self.entries for e in row)

    # -- arithmetic --------------------------------------------------------------

    def __add__(self, other):
        return SeriesMatrix([[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.entries, other.entries)])

    def __sub__(self, other):
        return SeriesMatrix([[a - b for a, b in zip(r1, r2)] for r1, r2 in zip(self.entries, other.entries)])

    def __neg__(self):
        return self.map_entries(lambda e: -e)

    def scale(self, value):
        return self.map_entries(lambda e: e * value)

    def __matmul__(self, other):
        if self.cols != other.rows:
            raise ValueError("matmul shape mismatch")
        if self.cols > _MAX_INNER_DIM:
            raise ValueError("inner dimension beyond packing headroom")
        if self.ring.kind == "rational":
            out = []
            for i in range(self.rows):
                row = []
                for j in range(other.cols):
                    acc = Series.zero(self.ring, self.nvars, self.cap)
                    for k in range(self.cols):
                        a, b = self.entries[i][k], other.entries[k][j]
                        if a.coeffs and b.coeffs:
                            acc = acc + a * b
                    row.append(acc)
                out.append(row)
            return SeriesMatrix(out)
        out = []
        for i in range(self.rows):
            arow = self.entries[i]
            row = []
            for j in range(other.cols):
                groups = {}
                for k in range(self.cols):
                    a = arow[k]
                    if not a.coeffs:
                        continue
                    b = other.entries[k][j]
                    if not b.coeffs:
                        continue
                    s = a.shift + b.shift
                    groups[s] = groups.get(s, 0) + a._pack() * b._pack()
                if not groups:
                    row.append(Series.zero(self.ring, self.nvars, self.cap))
                elif len(groups) == 1:
                    (s, acc), = groups.items()
                    row.append(_unpack(self.ring, self.nvars, self.cap, acc, s))
                else:
                    total = Series.zero(self.ring, self.nvars, self.cap)
                    for s, acc in groups.items():
                        total = total + _unpack(self.ring, self.nvars, self.cap, acc, s)
                    row.append(total)
            out.append(row)
        return SeriesMatrix(out)

    def matvec(self, vec):
        out = []
        for i in range(self.rows):
            acc = Series.zero(self.ring, self.nvars, self.cap)
            for k in range(self.cols):
                a = self.entries[i][k]
                if a.coeffs and vec[k].coeffs:
                    acc = acc + a * vec[k]
            out.append(acc)
        return out

    # -- calculus and substitution --------------------------------------------------

    def deriv(self, j):
        return self.map_entries(lambda e: e.deriv(j))

    def substitute(self, images):
        cache = {}
        return self.map_entries(lambda e: e.substitute(images, _cache=cache))

    def frobenius_substitute(self, p):
        return self.map_entries(lambda e: e.frobenius_substitute(p))

    def p_scale_rows(self, exponents):
        """Row i multiplied by p^exponents[i]."""
        return SeriesMatrix(
            [[e.shifted(a) for e in row] for a, row in zip(exponents, self.entries)]
        )

    def p_scale_cols(self, exponents):
        return SeriesMatrix(
            [[e.shifted(exponents[j]) for j, e in enumerate(row)] for row in self.entries]
        )

    # -- inverses -------------------------------------------------------------------

    def inverse_unipotent(self):
        """Inverse of I + N with N nilpotent (e.g. strictly upper
        triangular): finite geometric series."""
        n = self.rows
        ident = SeriesMatrix.identity(self.ring, self.nvars, self.cap, n)
        nil = ident - self
        acc = ident
        pw = nil
        for _ in range(n * (self.cap + 1) + 1):
            if pw.is_zero():
                break
            acc = acc + pw
            pw = pw @ nil
        else:
            raise NotUnit("matrix is not unipotent")
        return acc

    def inverse(self):
        """General inverse via constant-term inverse plus Newton lifting."""
        if self.rows != self.cols:
            raise ValueError("inverse of non-square matrix")
        n = self.rows
        zero_m = (0,) * self.nvars
        if self.ring.kind == "rational":
            c0 = [[e.coefficient(zero_m) for e in row] for row in self.entries]
            x0 = _invert_rational_matrix(c0)
        else:
            consts = [[e.constant_scalar() for e in row] for row in self.entries]
            for row in consts:
                for s in row:
                    if not s.is_zero() and s.e < 0:
                        raise NotUnit("constant term not integral")
            c0 = [[0 if s.is_zero() else s.residue(self.ring.work_digits) for s in row] for row in consts]
            x0 = _invert_int_matrix_mod(c0, self.ring, NotUnit)
        x = SeriesMatrix.from_constants(self.ring, self.nvars, self.cap, x0)
        ident2 = SeriesMatrix.identity(self.ring, self.nvars, self.cap, n).scale(2)
        known = 1
        while known <= self.cap:
            x = x @ (ident2 - self @ x)
            known *= 2
        return x

    # -- diagnostics -------------------------------------------------------------------

    def agrees(self, other, digits=None, max_degree=None):
        return self.deficit(other, digits, max_degree)[0] == 0

    def deficit(self, other, digits=None, max_degree=None):
        worst, where = 0, None
        for i in range(self.rows):
            for j in range(self.cols):
                d, m = self.entries[i][j].deficit(other.entries[i][j], digits, max_degree)
                if d > worst:
                    worst, where = d, {"entry": [i, j], "exponent": list(m)}
        return worst, where

    def min_valuation(self):
        vals = [e.min_valuation() for row in self.entries for e in row]
        vals = [v for v in vals if v is not None]
        return min(vals) if vals else None

    def constant_residues(self):
        """Constant terms as plain integers mod p^work (requires
        integrality)."""
        out = []
        for row in self.entries:
            r = []
            for e in row:
                s = e.constant_scalar()
                if s.is_zero():
                    r.append(0)
                else:
                    if s.e < 0:
                        raise PrecisionExhausted("non-integral constant term")
                    r.append(s.residue(self.ring.work_digits))
            out.append(r)
        return out

    def __repr__(self):
        return f"<SeriesMatrix {self.rows}x{self.cols} over {self.ring!r}>"
