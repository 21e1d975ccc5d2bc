"""Error types mapped to CLI exit codes."""


class AtlasError(Exception):
    exit_code = 1


class ConfigError(AtlasError):
    exit_code = 2


class RangeError(AtlasError):
    """A parameter or action fell outside its allowed box."""

    exit_code = 2


class InfeasibleError(AtlasError):
    exit_code = 3


class NumericalError(AtlasError):
    exit_code = 4
