"""Exception hierarchy shared by every subsystem."""


class SemSpeechError(Exception):
    """Base class for all package errors."""


class DimensionError(SemSpeechError, ValueError):
    pass


class ContractError(SemSpeechError, RuntimeError):
    pass


class InputError(SemSpeechError, ValueError):
    pass


class ConfigError(SemSpeechError, ValueError):
    pass


class TrainingError(SemSpeechError, RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class TokenizationError(SemSpeechError, ValueError):
    pass


class LexiconError(SemSpeechError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class AlignmentError(SemSpeechError, ValueError):
    pass


class LossError(SemSpeechError, ValueError):
    pass


class MetricError(SemSpeechError, ValueError):
    pass


class VersionError(SemSpeechError, RuntimeError):
    pass


class ParseError(SemSpeechError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
