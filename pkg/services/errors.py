"""
Exception hierarchy shared by every service and by the CLI exit-code mapping
"""


class DeepFilterError(Exception):
    """Root of all errors raised by the engine"""


class ContractViolation(DeepFilterError, ValueError):
    """A caller broke a precondition (wrong sizes, bad ranges, mismatched shapes)"""


class ConfigurationError(DeepFilterError, ValueError):
    """Invalid run configuration or weights incompatible with it"""


class SilentSignalError(ContractViolation):
    """Speech or reference signal carries no energy"""


class AudioIOError(DeepFilterError, OSError):
    """A file could not be read or written"""
