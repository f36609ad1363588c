"""Exception hierarchy shared across the toolkit."""


class StyleBoothError(Exception):
    """Base class for all toolkit errors."""


class TemplateParseError(StyleBoothError):
    """Malformed or unknown identifier in an instruction template."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)


class ArityError(StyleBoothError):
    """Binding counts do not match the template's slot counts."""


class ContextLengthError(StyleBoothError):
    """Encoded instruction exceeds the encoder's context limit."""


class SpanAlignmentError(StyleBoothError):
    """Tokenizer lost track of a substituted style-name span."""


class SpliceError(StyleBoothError):
    """Visual-token group count does not match recorded placeholders."""


class SequenceOverflowError(StyleBoothError):
    """Insertion would truncate non-padding tokens."""


class ShapeError(StyleBoothError):
    """Tensor or grid shape mismatch between components."""


class ConfigError(StyleBoothError):
    """Inconsistent or invalid configuration values."""


class InputError(StyleBoothError):
    """Undecodable or dimensionally invalid input data."""


class NumericsError(StyleBoothError):
    """Non-finite values encountered in a numeric computation."""


class DataValidationError(StyleBoothError):
    """Dataset records or pair sets violate a pipeline precondition."""


class PipelineError(StyleBoothError):
    """A refinery stage cannot run or resume."""


class JobError(StyleBoothError):
    """Invalid job state transition or unknown job."""
