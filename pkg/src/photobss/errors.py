"""Exception hierarchy shared by all pipeline stages."""


class PhotoBSSError(Exception):
    """Base class for every error raised by the package."""


class InvalidSpecError(PhotoBSSError, ValueError):
    """A signal, pulse, detector or scenario description is not admissible."""


class ConfigError(InvalidSpecError):
    """A scenario config file cannot be parsed or validated."""


class ShapeError(PhotoBSSError, ValueError):
    """Two inputs that must share a grid do not."""


class EmptyInputError(PhotoBSSError, ValueError):
    pass


class OversamplingError(InvalidSpecError):
    """Pulse period shorter than the waveform sample period."""


class NumericalError(PhotoBSSError, ArithmeticError):
    """Base class for fit and de-mixing failures."""


class IllPosedError(NumericalError):
    """Design matrix of a moment-curve fit is rank deficient."""


class DegenerateFitError(NumericalError):
    """Fitted parameters cannot belong to a real covariance / signal."""


class IsotropicMixtureError(NumericalError):
    """Second-moment curve is flat, so the principal direction is undefined."""


class NoFourthHarmonicError(NumericalError):
    """Fourth-moment curve has no 4th harmonic, so the ICA direction is undefined."""


class StageError(PhotoBSSError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class ArtifactIOError(PhotoBSSError, OSError):
    """Writing or reading an artifact failed; the message carries the path."""
