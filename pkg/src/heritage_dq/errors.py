"""Exception hierarchy shared across the package."""

from __future__ import annotations


class HeritageDQError(Exception):
    """Base class for all errors raised by heritage_dq."""


class MalformedInput(HeritageDQError):
    """Input bytes could not be parsed.

    ``offset`` is a byte offset (XML) and ``line`` a 1-based line number
    (JSON/CSV); either may be ``None`` when the parser cannot tell.
    """

    def __init__(self, message: str, *, offset: int | None = None, line: int | None = None):
        self.offset = offset
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class MappingError(HeritageDQError):
    pass


class DuplicateId(HeritageDQError):
    pass


class WrongKind(HeritageDQError):
    pass


class UnresolvablePath(HeritageDQError):
    pass


class ConfigError(HeritageDQError):
    pass


class UnknownDimension(HeritageDQError):
    pass


class UnknownProblemId(HeritageDQError):
    pass


class DuplicateLabel(HeritageDQError):
    pass


class MultiplePrimary(HeritageDQError):
    pass


class MissingPrimary(HeritageDQError):
    pass


class EmptyMatrix(HeritageDQError):
    pass


class SamePair(HeritageDQError):
    pass


class ZeroMargin(HeritageDQError):
    pass


class InvalidUri(HeritageDQError):
    pass


class DanglingFindingPath(HeritageDQError):
    pass


class UnsupportedFormat(HeritageDQError):
    pass


class ConfigMismatch(HeritageDQError):
    pass
