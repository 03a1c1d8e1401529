"""Exception hierarchy for trilost.

Two families matter for callers (and for CLI exit codes):

* ``DataError`` — the inputs are structurally wrong (bad arity, malformed
  files, violated envelopes).  CLI exit code 2.
* ``NumericalError`` — the inputs are structurally fine but the geometry or
  conditioning makes the requested computation meaningless.  CLI exit code 3.
"""


class TrilostError(Exception):
    """Base class for all trilost errors."""


class DataError(TrilostError):
    """Input data is malformed or violates a documented precondition."""


class NumericalError(TrilostError):
    """Computation failed for numerical/geometric reasons."""


# --- numerical / geometric failures -------------------------------------

class RankDeficient(NumericalError):
    """Stacked system is rank deficient (e.g. parallel or near-parallel rays)."""


class AmbiguousNullSpace(NumericalError):
    """Two smallest singular values coincide; null direction is not unique."""


class CoincidentCameras(NumericalError):
    """Two-view solver called with an effectively zero baseline."""


class NoRealRoot(NumericalError):
    """Polynomial minimization produced no usable real root."""


class DegenerateBaseline(NumericalError):
    """Shared-attitude two-point solver called with a zero baseline."""


class ParallelRays(NumericalError):
    """Law-of-Sines range factor undefined: the two rays are parallel."""


class Unobservable(NumericalError):
    """Dynamic system admits a family of solutions (e.g. homothetic scaling)."""


# --- data / validation failures ------------------------------------------

class NotUnit(DataError):
    """A vector that must have unit norm does not."""


class TooFewObservations(DataError):
    """Solver needs more observations than were supplied."""


class WrongArity(DataError):
    """Operation defined only for a specific observation count."""


class NonIsotropicNoise(DataError):
    """Operation requires isotropic pixel noise / square pixels."""


class OutOfEnvelope(DataError):
    """Scenario parameter outside its validated envelope."""


class MissingMethod(DataError):
    """Requested method is absent from a report or configuration."""


class MalformedHeader(DataError):
    """Reconstruction file header (or numeric content) is malformed."""


class TruncatedFile(DataError):
    """Reconstruction file ended before all declared records were read."""


class IndexOutOfRange(DataError):
    """Reconstruction file references a camera or point that does not exist."""
