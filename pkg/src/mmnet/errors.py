"""Exception types shared across the package.

Each class maps to one CLI exit code (see ``mmnet.cli``).
"""


class MMNetError(Exception):
    exit_code = 1


class ConfigError(MMNetError, ValueError):
    """Inconsistent shapes, strides or configuration values."""

    exit_code = 1


class UsageError(MMNetError, ValueError):
    """Invalid call arguments (empty inputs, degenerate boxes, ...)."""

    exit_code = 1


class ParseError(MMNetError, ValueError):
    """Malformed binary or text input; carries the byte offset of the failure."""

    exit_code = 2

    def __init__(self, message: str, offset: int | None = None, path: str | None = None):
        self.message = message
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DecodeError(MMNetError, ValueError):
    """Bitstream content that cannot be reconstructed (e.g. off-frame motion)."""

    exit_code = 2


class NumericError(MMNetError, ArithmeticError):
    """Non-finite values produced during training or inference."""

    exit_code = 3
