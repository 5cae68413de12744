"""F-crystal machinery over Zp[[t_1..t_n]].

An instance is presented by its unipotent upper-block-triangular structure
matrix T in a graded basis, together with the diagonal p-power matrix P
determined by the Hodge numbers.  The connection matrix is T^-1 dT, the
Frobenius matrix of a lift psi is T^-1 P psi(T), and independence of the
lift is witnessed by the Taylor transport sum.  All operations here are
pure; diagnostics return Verdict objects instead of raising.
"""

from __future__ import annotations

from fractions import Fraction
from math import factorial

from .errors import NotIntegrable, NotUnipotent, PrecisionExhausted, SingularModPM
from .padic import PadicContext
from .series import Series, SeriesMatrix, _monomial_power
from .verdict import Verdict, from_deficit


class FrobeniusLift:
    """Substitution endomorphism t_j -> images[j] with images[j] = t_j^p mod p.

    The standard lift t_j -> t_j^p is flagged so it can be applied by pure
    exponent remapping.
    """

    def __init__(self, ring, nvars, cap, images, standard=False):
        self.ring = ring
        self.nvars = nvars
        self.cap = cap
        self.images = list(images)
        self.standard = standard
        if len(self.images) != nvars:
            raise ValueError("lift needs one image per variable")
        for j, im in enumerate(self.images):
            v = im.min_valuation()
            if v is not None and v < 0:
                raise ValueError(f"lift image {j} is not integral")
            tp = Series.variable(ring, nvars, cap, j).frobenius_substitute(ring.p)
            d = (im - tp).min_valuation()
            if d is not None and d < 1:
                raise ValueError(f"image {j} is not t^p modulo p")

    @staticmethod
    def standard_lift(ring, nvars, cap):
        images = [Series.variable(ring, nvars, cap, j).frobenius_substitute(ring.p)
                  for j in range(nvars)]
        return FrobeniusLift(ring, nvars, cap, images, standard=True)

    @staticmethod
    def standard_plus_linear(ring, nvars, cap):
        """t_j -> t_j^p + p t_j, the stock second lift for change-of-lift tests."""
        p = ring.p
        images = [Series.variable(ring, nvars, cap, j).frobenius_substitute(p)
                  + Series.variable(ring, nvars, cap, j) * ring.from_int(p)
                  for j in range(nvars)]
        return FrobeniusLift(ring, nvars, cap, images)

    def apply_series(self, s: Series, cache=None) -> Series:
        if self.nvars == 0:
            return s
        if self.standard:
            return s.frobenius_substitute(self.ring.p)
        return s.substitute(self.images, _cache=cache)

    def apply_matrix(self, mat: SeriesMatrix, cache=None) -> SeriesMatrix:
        if self.nvars == 0:
            return mat
        if self.standard:
            return mat.frobenius_substitute(self.ring.p)
        cache = {} if cache is None else cache
        return mat.map_entries(lambda e: e.substitute(self.images, _cache=cache))

    def apply_vector(self, vec, cache=None):
        cache = {} if cache is None else cache
        return [self.apply_series(v, cache) for v in vec]


class Connection:
    """First-order connection data: the matrix of dt_j-components."""

    def __init__(self, ring, nvars, cap, rank, parts):
        self.ring = ring
        self.nvars = nvars
        self.cap = cap
        self.rank = rank
        self.parts = list(parts)
        if len(self.parts) != nvars:
            raise ValueError("one connection part per variable required")

    def apply_D(self, j, mat: SeriesMatrix) -> SeriesMatrix:
        """D_j = d/dt_j + (left multiplication by the j-th part) on coordinate
        columns."""
        return mat.deriv(j) + self.parts[j] @ mat

    def apply_D_vector(self, j, vec):
        return [v.deriv(j) + w for v, w in zip(vec, self.parts[j].matvec(vec))]

    def integrability_verdict(self, digits=None) -> Verdict:
        """[D_j, D_k] = 0, i.e. d_j M^(k) - d_k M^(j) + [M^(j), M^(k)] = 0,
        checked up to degree cap-2 (one derivative is consumed)."""
        worst, where = 0, None
        limit = self.cap - 2
        for j in range(self.nvars):
            for k in range(j + 1, self.nvars):
                lhs = self.parts[k].deriv(j) - self.parts[j].deriv(k) \
                    + self.parts[j] @ self.parts[k] - self.parts[k] @ self.parts[j]
                zero = SeriesMatrix.zero(self.ring, self.nvars, self.cap, self.rank, self.rank)
                d, loc = lhs.deficit(zero, digits, max_degree=limit)
                if d > worst:
                    worst, where = d, dict(loc, pair=[j, k])
        return from_deficit("integrability", worst, where)


class FCrystalInstance:
    """Crystal presented by a unipotent structure matrix in a graded basis.

    hodge is the list of block ranks (h^0..h^N); the Frobenius scaling
    exponents are i on the i-th block.  The connection is derived from T.
    """

    def __init__(self, ring: PadicContext, hodge, T: SeriesMatrix):
        self.ring = ring
        self.hodge = list(hodge)
        self.level = len(self.hodge) - 1
        self.rank = sum(self.hodge)
        if T.rows != self.rank or T.cols != self.rank:
            raise ValueError("structure matrix shape disagrees with Hodge numbers")
        self.T = T
        self.nvars = T.nvars
        self.cap = T.cap
        self.p_exponents = [i for i, h in enumerate(self.hodge) for _ in range(h)]
        self._T_inv = None
        self._conn = None

    @property
    def T_inv(self) -> SeriesMatrix:
        if self._T_inv is None:
            self._T_inv = self.T.inverse_unipotent()
        return self._T_inv

    @property
    def connection(self) -> Connection:
        if self._conn is None:
            parts = [self.T_inv @ self.T.deriv(j) for j in range(self.nvars)]
            self._conn = Connection(self.ring, self.nvars, self.cap, self.rank, parts)
        return self._conn

    def block_of(self, index: int) -> int:
        acc = 0
        for b, h in enumerate(self.hodge):
            acc += h
            if index < acc:
                return b
        raise IndexError(index)

    def structure_verdicts(self, digits=None) -> list[Verdict]:
        """Shape conditions: unipotent block triangularity of T, p-power
        divisibility of the constant terms above the diagonal, strict
        upper-block-triangularity of the connection (the finite stand-in for
        topological nilpotence)."""
        digits = self.ring.prec if digits is None else digits
        worst, where = 0, None
        for i in range(self.rank):
            bi = self.block_of(i)
            for j in range(self.rank):
                bj = self.block_of(j)
                e = self.T.entry(i, j)
                if bj < bi or (bj == bi and i != j):
                    d, m = e.deficit(Series.zero(self.ring, self.nvars, self.cap), digits)
                elif bj == bi:
                    d, m = e.deficit(Series.one(self.ring, self.nvars, self.cap), digits)
                else:
                    c = e.constant_scalar()
                    v = c.valuation()
                    need = bj - bi
                    d = max(0, need - v) if v is not None else 0
                    d = min(d, digits)
                    m = (0,) * self.nvars if d else None
                if d > worst:
                    worst, where = d, {"entry": [i, j], "exponent": list(m)}
        shape = from_deficit("structure_matrix_shape", worst, where)

        worst, where = 0, None
        conn = self.connection
        for k, part in enumerate(conn.parts):
            for i in range(self.rank):
                for j in range(self.rank):
                    if self.block_of(j) > self.block_of(i):
                        continue
                    d, m = part.entry(i, j).deficit(
                        Series.zero(self.ring, self.nvars, self.cap), digits,
                        max_degree=self.cap - 1)
                    if d > worst:
                        worst, where = d, {"part": k, "entry": [i, j], "exponent": list(m)}
        nilshape = from_deficit("connection_block_shape", worst, where)
        return [shape, nilshape, conn.integrability_verdict(digits)]


# ----------------------------------------------------------------------
# Frobenius matrices and change of lift.
# ----------------------------------------------------------------------


def frobenius_matrix(inst: FCrystalInstance, lift: FrobeniusLift) -> SeriesMatrix:
    """Matrix of the Frobenius-semilinear map for the given lift in the
    graded basis: T^-1 * P * lift(T)."""
    moved = lift.apply_matrix(inst.T)
    return inst.T_inv @ moved.p_scale_rows(inst.p_exponents)


def check_horizontality(inst: FCrystalInstance, lift: FrobeniusLift,
                        M_phi: SeriesMatrix, digits=None) -> Verdict:
    """Compatibility of Frobenius with the connection, written with the
    pullback of 1-forms made explicit:

        M_phi * sum_j phi(M^(j)) d(phi t_j)/dt_k  =  M^(k) M_phi + d M_phi/dt_k

    for every k, up to degree cap-1."""
    conn = inst.connection
    cache = {}
    moved_parts = [lift.apply_matrix(part, cache) for part in conn.parts]
    worst, where = 0, None
    for k in range(inst.nvars):
        pulled = SeriesMatrix.zero(inst.ring, inst.nvars, inst.cap, inst.rank, inst.rank)
        for j in range(inst.nvars):
            jac = lift.images[j].deriv(k)
            if not jac.is_zero():
                pulled = pulled + moved_parts[j].scale(jac)
        lhs = M_phi @ pulled
        rhs = conn.parts[k] @ M_phi + M_phi.deriv(k)
        d, loc = lhs.deficit(rhs, digits, max_degree=inst.cap - 1)
        if d > worst:
            worst, where = d, dict(loc, component=k)
    return from_deficit("horizontality", worst, where)


def taylor_transport(inst: FCrystalInstance, phi: FrobeniusLift,
                     psi: FrobeniusLift, M_phi: SeriesMatrix) -> SeriesMatrix:
    """Frobenius matrix of psi computed from the one of phi by the Taylor
    sum over multi-indices m:

        M_psi = sum_m  prod_j (p^{m_j}/m_j!) u_j^{m_j}  *  M_phi * phi(D^m)

    with u_j = (psi(t_j) - phi(t_j))/p.  The sum is truncated when either
    the total degree passes the cap (all u_j with zero constant term) or the
    p-valuation of the prefactor clears the working window."""
    if inst.nvars == 0:
        return M_phi
    ring = inst.ring
    u = []
    for j in range(inst.nvars):
        diff = psi.images[j] - phi.images[j]
        v = diff.min_valuation()
        if v is not None and v < 1:
            raise ValueError("lifts do not agree modulo p")
        u.append(diff.divide_int(ring.p).normalized())
    if all(uj.constant_scalar().is_zero() for uj in u):
        level_cap = inst.cap
    else:
        level_cap = (ring.work_digits * (ring.p - 1)) // (ring.p - 2) + 1
    conn = inst.connection
    ident = SeriesMatrix.identity(ring, inst.nvars, inst.cap, inst.rank)
    w_cache = {(0,) * inst.nvars: ident}
    pw_cache = {}
    sub_cache = {}
    acc = SeriesMatrix.zero(ring, inst.nvars, inst.cap, inst.rank, inst.rank)
    for level in range(0, level_cap + 1):
        for m in _level_indices(inst.nvars, level):
            w = _taylor_w(m, conn, w_cache)
            upow = _monomial_power(m, u, pw_cache) if level else None
            if level and upow.is_zero():
                continue
            c = ring.from_fraction(Fraction(ring.p ** level, _mfact(m)))
            if c.is_zero():
                continue
            moved = phi.apply_matrix(w, sub_cache)
            term = (M_phi @ moved).scale(c if level == 0 else upow * c)
            acc = acc + term
    return acc


def _mfact(m):
    out = 1
    for x in m:
        out *= factorial(x)
    return out


def _level_indices(nvars, level):
    if nvars == 1:
        yield (level,)
        return
    if nvars == 0:
        if level == 0:
            yield ()
        return
    for first in range(level + 1):
        for rest in _level_indices(nvars - 1, level - first):
            yield (first,) + rest


def _taylor_w(m, conn, cache):
    hit = cache.get(m)
    if hit is not None:
        return hit
    j = next(i for i, x in enumerate(m) if x)
    prev = m[:j] + (m[j] - 1,) + m[j + 1:]
    out = conn.apply_D(j, _taylor_w(prev, conn, cache))
    cache[m] = out
    return out


# ----------------------------------------------------------------------
# Constant term of the structure matrix from the unipotent Frobenius part.
# ----------------------------------------------------------------------


def constant_term_product(L0, p_exponents, ctx: PadicContext, steps=None):
    """Convergent product prod_{m>=1} P^-m L0 P^m (factors right to left,
    increasing m), truncated at steps = prec+guard factors.

    L0 must be unipotent upper triangular with integral entries; the result
    satisfies T0 = P^-1 T0 L0 P modulo p^prec."""
    n = len(L0)
    modulus = ctx.modulus
    for i in range(n):
        for j in range(n):
            v = L0[i][j] % modulus
            if j < i and v:
                raise NotUnipotent("lower triangular entry present")
            if j == i and v != 1:
                raise NotUnipotent("diagonal entry differs from 1")
    if any(b < a for a, b in zip(p_exponents, p_exponents[1:])):
        raise ValueError("p-power exponents must be nondecreasing")
    steps = ctx.work_digits if steps is None else steps
    out = [[int(i == j) for j in range(n)] for i in range(n)]
    for m in range(steps, 0, -1):
        factor = [[(L0[i][j] * pow(ctx.p, m * (p_exponents[j] - p_exponents[i]), modulus)) % modulus
                   if j >= i else 0 for j in range(n)] for i in range(n)]
        out = _int_matmul(out, factor, modulus)
    return out


def fixed_point_verdict(T0, L0, p_exponents, ctx: PadicContext, digits=None) -> Verdict:
    """T0 = P^-1 * (T0 @ L0) * P modulo p^digits."""
    digits = ctx.prec if digits is None else digits
    modulus = ctx.modulus
    n = len(T0)
    prod = _int_matmul(T0, L0, modulus)
    worst, where = 0, None
    for i in range(n):
        for j in range(n):
            conj = prod[i][j] * ctx.p ** (p_exponents[j] - p_exponents[i]) if p_exponents[j] >= p_exponents[i] else None
            if conj is None:
                # strictly lower block: entries are zero anyway
                conj = 0
            diff = (T0[i][j] - conj) % ctx.p ** digits
            if diff:
                v = ctx.valuation(diff)
                if digits - v > worst:
                    worst, where = digits - v, {"entry": [i, j]}
    return from_deficit("constant_term_fixed_point", worst, where)


def _int_matmul(a, b, modulus):
    n, mid, cols = len(a), len(b), len(b[0])
    out = [[0] * cols for _ in range(n)]
    for i in range(n):
        ai = a[i]
        for j in range(cols):
            s = 0
            for k in range(mid):
                s += ai[k] * b[k][j]
            out[i][j] = s % modulus
    return out


# ----------------------------------------------------------------------
# Solving dT = T * M for T given the connection and a constant term.
# ----------------------------------------------------------------------


def integrate_connection(conn: Connection, T0: SeriesMatrix) -> SeriesMatrix:
    """Unique T with dT = T M and T(0) = T0, built degree by degree via the
    Euler identity sum_j t_j dT/dt_j = d * T_d on homogeneous parts.
    Divisions by the degree are exact in the scaled representation.

    Raises NotIntegrable when the result fails dT = T M (the closedness
    obstruction shows up exactly here at some degree)."""
    ring, nvars, cap, rank = conn.ring, conn.nvars, conn.cap, conn.rank
    T = T0
    if nvars == 0:
        return T
    tvars = [Series.variable(ring, nvars, cap, j) for j in range(nvars)]
    for d in range(1, cap + 1):
        euler = SeriesMatrix.zero(ring, nvars, cap, rank, rank)
        for j in range(nvars):
            euler = euler + (T @ conn.parts[j]).map_entries(
                lambda e, j=j: _homog(e * tvars[j], d))
        T = T + euler.map_entries(lambda e: e.divide_int(d))
    T = T.map_entries(lambda e: e.normalized())
    for j in range(nvars):
        d, loc = T.deriv(j).deficit(T @ conn.parts[j], None, max_degree=cap - 1)
        if d:
            raise NotIntegrable(f"closedness fails in direction {j} at {loc}")
    return T


def _homog(s: Series, d: int) -> Series:
    out = {m: c for m, c in s.coeffs.items() if sum(m) == d}
    return Series(s.ring, s.nvars, s.cap, out, s.shift,
                  _trust=s.ring.kind == "rational")


# ----------------------------------------------------------------------
# Divisibility, ordinarity profile, flat sections.
# ----------------------------------------------------------------------


def check_divisibility(M_phi: SeriesMatrix, p_exponents, digits=None) -> Verdict:
    """Column j of the Frobenius matrix must be divisible by p^exponents[j]
    (equivalently M * P^-1 is integral)."""
    worst, where = 0, None
    for j, need in enumerate(p_exponents):
        if need == 0:
            continue
        for i in range(M_phi.rows):
            v = M_phi.entry(i, j).min_valuation()
            if v is not None and need - v > worst:
                worst, where = need - v, {"entry": [i, j]}
    return from_deficit("divisibility", worst, where)


def newton_hodge_profile(M0, ctx: PadicContext, digits=None):
    """Elementary-divisor exponents of a constant integral matrix over Zp,
    by Smith reduction with full pivoting on minimal-valuation entries
    (row-major tie break).  Raises SingularModPM when the remaining block
    vanishes at the detection precision."""
    digits = ctx.prec if digits is None else digits
    modulus = ctx.modulus
    n = len(M0)
    a = [[x % modulus for x in row] for row in M0]
    exps = []
    for step in range(n):
        best = None
        for i in range(step, n):
            for j in range(step, n):
                if a[i][j]:
                    v = ctx.valuation(a[i][j])
                    if best is None or v < best[0]:
                        best = (v, i, j)
        if best is None or best[0] >= digits:
            raise SingularModPM(
                f"rank collapses at step {step}: no entry below p^{digits}")
        v, bi, bj = best
        a[step], a[bi] = a[bi], a[step]
        for row in a:
            row[step], row[bj] = row[bj], row[step]
        piv_unit = a[step][step] // ctx.p ** v
        inv = pow(piv_unit, -1, modulus)
        for i in range(step + 1, n):
            if a[i][step]:
                f = (a[i][step] // ctx.p ** v) * inv % modulus
                a[i] = [(x - f * y) % modulus for x, y in zip(a[i], a[step])]
        for j in range(step + 1, n):
            if a[step][j]:
                f = (a[step][j] // ctx.p ** v) * inv % modulus
                for i in range(step, n):
                    a[i][j] = (a[i][j] - f * a[i][step]) % modulus
        exps.append(v)
    return sorted(exps)


def flat_fixed_section_check(inst: FCrystalInstance, lift: FrobeniusLift,
                             vec, second_lift: FrobeniusLift | None = None,
                             M_phi: SeriesMatrix | None = None,
                             digits=None) -> Verdict:
    """A coordinate vector fixed by one Frobenius lift must be flat and
    fixed by every other lift; checks all three statements."""
    if M_phi is None:
        M_phi = frobenius_matrix(inst, lift)
    worst, where = 0, None

    def upd(d, loc, tag):
        nonlocal worst, where
        if d > worst:
            worst, where = d, {"check": tag, "at": loc}

    moved = lift.apply_vector(vec)
    img = M_phi.matvec(moved)
    for i in range(inst.rank):
        d, m = img[i].deficit(vec[i], digits)
        upd(d, {"row": i, "exponent": m}, "frobenius_fixed")
    conn = inst.connection
    zero = Series.zero(inst.ring, inst.nvars, inst.cap)
    for j in range(inst.nvars):
        dv = conn.apply_D_vector(j, vec)
        for i in range(inst.rank):
            d, m = dv[i].deficit(zero, digits, max_degree=inst.cap - 1)
            upd(d, {"direction": j, "row": i, "exponent": m}, "flatness")
    if second_lift is not None:
        M_psi = frobenius_matrix(inst, second_lift)
        moved2 = second_lift.apply_vector(vec)
        img2 = M_psi.matvec(moved2)
        for i in range(inst.rank):
            d, m = img2[i].deficit(vec[i], digits)
            upd(d, {"row": i, "exponent": m}, "second_lift_fixed")
    return from_deficit("flat_section", worst, where)
