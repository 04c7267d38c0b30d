from __future__ import annotations

from pathlib import Path
from typing import Any


class MVException(Exception):
    """Base exception for all memvr-engine errors."""


class MVShapeError(MVException):
    """Raised when operand dimensions do not line up."""


class MVValueError(MVException):
    """Raised on numerically invalid input (empty vectors, N < 2, ...)."""


class MVConfigError(MVException):
    """Raised when a ModelConfig, DecodePolicy or flag combination is invalid.

    Attributes:
        field: Name of the offending setting, if known.
    """

    def __init__(self, message: str, *, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class MVTokenError(MVException):
    """Raised when a token id falls outside the vocabulary."""

    def __init__(self, message: str, *, token_id: int) -> None:
        super().__init__(message)
        self.token_id = token_id


class MVCacheOverflowError(MVException):
    """Raised when a KV cache (or a planned generation) exceeds max_seq_len."""


class MVFileFormatError(MVException):
    """Raised when a weight or visual-context file cannot be decoded.

    Attributes:
        path:   File that failed to decode.
        reason: Short machine-readable reason ("bad_magic", "version", ...).
    """

    def __init__(self, message: str, *, path: str | Path | None = None, reason: str = "") -> None:
        super().__init__(message)
        self.path = str(path) if path is not None else None
        self.reason = reason

    def __repr__(self) -> str:
        return f"{type(self).__name__}(reason={self.reason!r}, path={self.path!r}, message={str(self)!r})"


class MVBadMagicError(MVFileFormatError):
    """File does not start with the expected magic bytes."""


class MVVersionError(MVFileFormatError):
    """File was written by an unsupported format version."""


class MVTruncatedFileError(MVFileFormatError):
    """Payload length disagrees with the header."""


class MVIOError(MVException):
    """Raised on OS-level read/write failures; always names the path."""

    def __init__(self, message: str, *, path: str | Path) -> None:
        super().__init__(message)
        self.path = str(path)


class MVTraceError(MVException):
    """Raised on trace arity mismatches and unparseable trace files.

    Attributes:
        line: 1-based line number in the trace file, if applicable.
    """

    def __init__(self, message: str, *, line: int | None = None) -> None:
        super().__init__(message)
        self.line = line


# ── Mapping: file-format failure reason → exception class ─────────────────────

_REASON_MAP: dict[str, type[MVFileFormatError]] = {
    "bad_magic": MVBadMagicError,
    "version": MVVersionError,
    "truncated": MVTruncatedFileError,
}


def _file_error_for_reason(reason: str, message: str, path: Any) -> MVFileFormatError:
    """Return the most specific MVFileFormatError subclass for *reason*."""
    cls = _REASON_MAP.get(reason, MVFileFormatError)
    return cls(message, path=path, reason=reason)
