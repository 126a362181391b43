"""Exception hierarchy shared across the toolkit.

Validation errors are caused by bad user input (manifests, corpora, config,
checkpoints) and map to CLI exit code 1; everything else is treated as an
internal failure and maps to exit code 2.
"""


class SarAlignError(Exception):
    """Base class for all saralign errors."""


class ValidationError(SarAlignError):
    """Input data or configuration violates a documented contract."""


class ParseError(ValidationError):
    """A manifest or corpus file is structurally malformed.

    Carries enough location context (path, line, field) to point at the
    offending spot in the input document.
    """

    def __init__(self, message, *, path=None, line=None, field=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        prefix = f"[{', '.join(loc)}] " if loc else ""
        super().__init__(prefix + message)
        self.path = path
        self.line = line
        self.field = field


class TrainingError(SarAlignError):
    """Numerical failure during optimization (NaN loss, degenerate embedding)."""
