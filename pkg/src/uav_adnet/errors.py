"""Exception hierarchy shared by every stage of the pipeline.

Each class carries an ``exit_code`` so the command line can map failures to
its documented exit statuses without a lookup table.
"""


class AdNetError(Exception):
    exit_code = 2

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        for key in ("path", "field", "line", "epoch", "parameter", "source_index"):
            value = getattr(self, key, None)
            if value is not None:
                out[key] = value
        return out


class UsageError(AdNetError):
    exit_code = 1


class ConfigError(AdNetError, ValueError):
    pass


class ShapeError(AdNetError, ValueError):
    pass


class BoundsError(AdNetError, IndexError):
    pass


class ParseError(AdNetError, ValueError):
    def __init__(self, message, line=None, path=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.path = str(path) if path is not None else None


class ValidationError(AdNetError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class OrderingError(AdNetError, ValueError):
    pass


class JoinError(AdNetError, LookupError):
    def __init__(self, message, frame_ids=()):
        super().__init__(message)
        self.frame_ids = list(frame_ids)


class SaturationError(AdNetError, ValueError):
    def __init__(self, message, source_index=None):
        super().__init__(message)
        self.source_index = source_index


class NumericError(AdNetError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, parameter=None, epoch=None):
        super().__init__(message)
        self.parameter = parameter
        self.epoch = epoch


class MissingFileError(AdNetError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"no such file: {path}")
        self.path = str(path)
