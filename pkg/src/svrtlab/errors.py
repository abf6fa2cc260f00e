"""Exception types shared across the package."""


class SvrtError(Exception):
    """Base class for errors raised by this package."""


class SynthesisExhausted(SvrtError):
    """Contour synthesis failed to produce a simple closed curve within the retry budget."""


class SamplingExhausted(SvrtError):
    """Scene sampling failed to satisfy a task rule within the attempt budget."""


class RuleUndefined(SvrtError):
    """Requested task id has no registered rule."""


class FormatError(SvrtError):
    """Malformed binary payload.

    Carries the byte offset at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ShapeError(SvrtError):
    """Tensor arguments have incompatible shapes."""


class GradMismatch(SvrtError):
    """Analytic and numerical gradients disagree beyond tolerance."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class ConfigError(SvrtError):
    """Model or attention configuration is invalid or inconsistent."""


class DivergedError(SvrtError):
    """A forward pass or training step produced non-finite values."""


class DataError(SvrtError):
    """Analysis input is malformed (NaN, duplicate labels, wrong shape)."""


class DegenerateError(SvrtError):
    """Analysis input is degenerate (zero variance, too few points)."""
