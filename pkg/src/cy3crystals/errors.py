"""Exception hierarchy for the toolkit.

Every failure mode that callers are expected to catch gets its own class;
they all derive from CrystalsError so a CLI driver can distinguish "the math
rejected your input" from genuine bugs.
"""


class CrystalsError(Exception):
    """Base class for all toolkit errors."""


class PrecisionExhausted(CrystalsError):
    """A result needs more p-adic digits (or a deeper denominator) than the
    context budget allows."""


class InvertNonUnit(CrystalsError):
    """Multiplicative inversion of an element whose constant term is not a
    unit."""


class ExpDomain(CrystalsError):
    """exp() applied outside its convergence domain."""


class LogDomain(CrystalsError):
    """log() applied to a series whose constant term is not 1 mod p."""


class SubstituteDomain(CrystalsError):
    """Substitution image has a unit constant term, so composition is not
    defined on truncations."""


class RevertSingular(CrystalsError):
    """Series reversion with a non-invertible linear part."""


class NotUnipotent(CrystalsError):
    """A matrix that must be unipotent upper-triangular is not."""


class NotIntegrable(CrystalsError):
    """Connection data fails the integrability (flatness) identity."""


class SingularModPM(CrystalsError):
    """Elementary-divisor computation ran out of detectable rank at the
    working precision."""


class RiemannViolation(CrystalsError):
    """The unipotent structure matrix does not satisfy the symplectic
    (Riemann bilinear) block relations."""


class KodairaSpencerSingular(CrystalsError):
    """The matrix of first tau-derivatives is not invertible, so t- and
    tau-derivations cannot be converted into each other."""


class NotIntegral(CrystalsError):
    """A quantity that the structure theory promises to be integral has a
    coefficient of negative valuation; the input crystal is not
    divisible/ordinary."""


class MatcanfrobMismatch(CrystalsError):
    """The two independent routes to the canonical Frobenius matrix
    disagree; signals a construction bug or a non-divisible instance."""


class NotUnit(CrystalsError):
    """A series required to be invertible has non-unit constant term."""


class NotMUM(CrystalsError):
    """The differential operator does not have maximally unipotent local
    monodromy at 0 (indicial polynomial is not a constant times x^order)."""


class NormalizationMismatch(CrystalsError):
    """The coupling normalization computed from family data disagrees with
    the declared constant (wrong kappa in the configuration)."""


class ConfigError(CrystalsError):
    """Malformed run configuration or input file."""
