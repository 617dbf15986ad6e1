"""Exception hierarchy shared by every module in the package."""


class SmugError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SmugError, ValueError):
    """A tensor or layer shape does not fit where it is used."""


class UnsupportedModelError(SmugError):
    """The network cannot be handled by the requested operation."""


class ParseError(SmugError, ValueError):
    """A file or text payload is malformed.

    ``location`` names the byte offset, line, or field where parsing failed.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class EncodingError(SmugError):
    """A mask problem cannot be built from the given inputs."""


class UnsupportedProblemError(SmugError):
    """The solver was handed a problem outside its domain."""


class LayerShapeError(ParseError, ShapeError):
    """A model file describes a layer whose shapes do not line up."""
