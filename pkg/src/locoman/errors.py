"""Exception types shared across the controller stack."""


class LocomanError(Exception):
    """Base class for all package errors."""


class SingularOrientation(LocomanError):
    """Pitch too close to +/-pi/2 for the Euler-rate map to be invertible."""


class IllConditionedMass(LocomanError):
    """Arm mass matrix condition number above the trust threshold."""


class SingularCoupling(LocomanError):
    """Linear system for the interaction wrench is rank-deficient."""


class DimensionMismatch(LocomanError):
    """Inconsistent horizon data passed to the NLP assembler."""


class QpFailure(LocomanError):
    """QP solver did not return an optimal point."""


class NumericalBlowup(LocomanError):
    """Plant state left sanity bounds; the run is terminated as a failure."""


class SchemaError(LocomanError):
    """Malformed teleop message."""
