"""Exception hierarchy shared by all coneharm modules."""


class ConeHarmError(Exception):
    """Base class for all library errors."""


class PatternNotClosed(ConeHarmError):
    """The triangular zero-pattern is not closed under the pattern product."""


class NotInCone(ConeHarmError):
    """Point failed the pattern factorization (not in the open cone)."""


class NotInDualCone(ConeHarmError):
    """Functional failed the reverse factorization (not in the dual cone)."""


class NotInTube(ConeHarmError):
    """Complex argument has real part outside the cone."""


class BranchAmbiguity(ConeHarmError):
    """Homotopy continuation of a complex power failed (step underflow)."""


class NotInDomain(ConeHarmError):
    """Point is not inside the Siegel domain."""


class GammaDomainError(ConeHarmError):
    """Gamma-function argument outside the convergence region.

    Attributes:
        offending_index: first coordinate j violating the constraint.
        constraint: human-readable description of the violated inequality.
    """

    def __init__(self, offending_index, constraint):
        self.offending_index = offending_index
        self.constraint = constraint
        super().__init__(f"component {offending_index}: {constraint}")


class DomainError(ConeHarmError):
    """A closed-form formula was evaluated outside its validity region."""


class NotPolynomialIndex(ConeHarmError):
    """Exponent vector does not index a polynomial power function."""


class AllRejected(ConeHarmError):
    """Monte-Carlo acceptance rate fell below the usable threshold."""


class ToleranceNotMet(ConeHarmError):
    """Adaptive quadrature could not reach the requested tolerance."""


class TruncationDominates(ConeHarmError):
    """Estimated truncation error of a domain integral exceeds tolerance."""


class LatticeOutsideGrid(ConeHarmError):
    """Lattice window is not covered by the evaluation grid."""


class ParameterBulletViolated(ConeHarmError):
    """A parameter condition required for atomic synthesis fails."""

    def __init__(self, bullet, detail=""):
        self.bullet = bullet
        super().__init__(f"{bullet}: {detail}" if detail else bullet)


class NotContracting(ConeHarmError):
    """Neumann iteration is not contracting at this lattice density."""


class TailTooHeavy(ConeHarmError):
    """Grid tails carry too much mass for a reliable norm/integral."""


class WindowInsufficient(ConeHarmError):
    """Spatial window too small: slice-norm tail estimate above 0.1%."""


class SupportTouchesBoundary(ConeHarmError):
    """Spectral support is not strictly interior to the dual cone."""


class ConfigInvalid(ConeHarmError):
    """Experiment configuration failed schema validation."""
