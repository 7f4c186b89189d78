"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ExfilLabError(Exception):
    exit_code = 1


class ArgumentError(ExfilLabError, ValueError):
    exit_code = 2


class ConfigError(ExfilLabError):
    exit_code = 2


class ShapeError(ExfilLabError, ValueError):
    exit_code = 2


class UnsupportedLayerError(ExfilLabError, TypeError):
    exit_code = 2


class NumericError(ExfilLabError, ArithmeticError):
    exit_code = 4


class ParseError(ExfilLabError):
    """Structural problem in an on-disk file. ``offset`` is the byte position."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataValidationError(ParseError):
    pass


class CapacityError(ExfilLabError):
    exit_code = 5

    def __init__(self, params, n, latent_dim):
        super().__init__(
            f"payload of n={n} latents x D={latent_dim} (+2 header words) "
            f"exceeds capacity of P={params} parameters"
        )
        self.params = params
        self.n = n
        self.latent_dim = latent_dim


class MalformedPayloadError(ExfilLabError):
    exit_code = 5


class UndefinedAUCError(ExfilLabError, ValueError):
    exit_code = 4
