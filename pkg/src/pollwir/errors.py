"""Exception hierarchy shared by all modules.

Everything a caller can fix by supplying different input derives from
:class:`ValidationError`; the CLI maps that to exit status 2.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Input violates a documented contract."""


class DimensionError(ValidationError):
    """Frame dimensions are odd, empty or mismatched."""


class PhysicalityError(ValidationError):
    """Stokes values that cannot come from non-negative intensities.

    ``pixel`` is the ``(row, col)`` of the first offending pixel in
    row-major order, when known.
    """

    def __init__(self, message: str, pixel: tuple[int, int] | None = None):
        if pixel is not None:
            message = f"{message} (first offending pixel row={pixel[0]}, col={pixel[1]})"
        super().__init__(message)
        self.pixel = pixel


class ParseError(ValidationError):
    """A file on disk is malformed.

    Carries enough location information to point at the problem:
    ``path``, a 1-based ``line`` for text formats or a byte ``offset``
    for binary ones, and the ``field`` that failed.
    """

    def __init__(
        self,
        message: str,
        *,
        path: str | None = None,
        line: int | None = None,
        offset: int | None = None,
        field: str | None = None,
    ):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.line = line
        self.offset = offset
        self.field = field
