"""Exception hierarchy shared by the analysis, condensation and synthesis layers."""


class PHRegError(Exception):
    """Base class for every error raised by :mod:`phreg`."""


class DimensionError(PHRegError, ValueError):
    """Coefficient matrices do not conform."""


class SingularBlock(PHRegError):
    """A block that must be nonsingular is numerically singular.

    The offending factor is stored in ``name``.
    """

    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"block {name!r} is singular at the rank tolerance")


class PreconditionError(PHRegError):
    """A rank hypothesis required by a condensed form does not hold."""


class StructureError(PHRegError):
    """A block that the port-Hamiltonian structure forces nonsingular (or
    semidefinite) is not, which means the input is not genuinely port-Hamiltonian
    or the tolerance broke down."""


class SingularPencilError(PHRegError):
    """The pencil (E, A) is singular, so index and eigenvalue counts are undefined."""


class InfeasibleRequest(PHRegError, ValueError):
    """A generator request (ranks, sizes) cannot be satisfied."""


class ObservabilityFailed(PHRegError):
    """The system is not completely observable."""


class SolvabilityError(PHRegError):
    """A solvability condition fails; ``verdict`` carries the computed data."""

    def __init__(self, message, verdict=None):
        self.verdict = verdict
        super().__init__(message)


class CON1Failed(SolvabilityError):
    pass


class CON2Failed(SolvabilityError):
    pass


class R1Failed(SolvabilityError):
    pass


class ParityViolated(SolvabilityError):
    pass


class RankInfeasible(SolvabilityError):
    pass


class SynthesisExhausted(PHRegError):
    """The randomized search for a derivative feedback ran out of trials."""


class VerificationFailed(PHRegError):
    """A synthesized feedback did not pass independent verification."""

    def __init__(self, message, report=None, forms=None):
        self.report = report
        self.forms = forms
        super().__init__(message)
