"""Exception types.

Every error carries a short ``code`` that the command line tool prints as
``code=NAME detail=...``.
"""


class SemiflatError(Exception):
    code = "Error"

    def __init__(self, detail=""):
        super().__init__(detail)
        self.detail = detail


# linalg

class NonSquare(SemiflatError):
    """Matrix is not square."""

    code = "NonSquare"


class NonFinite(SemiflatError):
    """Matrix or vector holds NaN or inf."""

    code = "NonFinite"


class NoConvergence(SemiflatError):
    """Iteration cap reached."""

    code = "NoConvergence"


class ZeroVector(SemiflatError):
    """Vector has zero norm."""

    code = "ZeroVector"


class DegenerateStack(SemiflatError):
    """The ones row lies in the span of the constraint rows."""

    code = "DegenerateStack"


# network

class DimMismatch(SemiflatError):
    """Inconsistent dimensions."""

    code = "DimMismatch"


class LogisticRange(SemiflatError):
    """Logistic loss used with invalid targets."""

    code = "LogisticRange"


class KinkHit(SemiflatError):
    """A ReLU pre-activation sits on the kink."""

    code = "KinkHit"


class KinkNeighborhood(SemiflatError):
    """A ReLU kink lies inside the finite-difference stencil."""

    code = "KinkNeighborhood"


# embedding

class SpecInvariantViolated(SemiflatError):
    """Embedding spec is invalid."""

    code = "SpecInvariantViolated"


class ActivationMismatch(SemiflatError):
    """Embedding kind does not preserve the function for this activation."""

    code = "ActivationMismatch"


class BadIndex(SemiflatError):
    """Unit index out of range."""

    code = "BadIndex"


class ZeroWeight(SemiflatError):
    """A replication coefficient is zero."""

    code = "ZeroWeight"


# landscape

class NotStationary(SemiflatError):
    """Point is not stationary."""

    code = "NotStationary"


class ZeroEigenvalueG(SemiflatError):
    """G is singular at the threshold."""

    code = "ZeroEigenvalueG"


class NotZeroError(SemiflatError):
    """Training error is not zero."""

    code = "NotZeroError"


# trainer

class Diverged(SemiflatError):
    """Loss became non-finite."""

    code = "Diverged"


class NotConverged(SemiflatError):
    """Training did not converge within the restarts."""

    code = "NotConverged"


class TrainingFailed(SemiflatError):
    """Training failed."""

    code = "TrainingFailed"


# pacbayes

class SingularCovariance(SemiflatError):
    """Matrix is not positive definite."""

    code = "SingularCovariance"


class BadRange(SemiflatError):
    """Argument outside its admissible range."""

    code = "BadRange"


# cli

class Usage(SemiflatError):
    """Bad command line or input file."""

    code = "Usage"
