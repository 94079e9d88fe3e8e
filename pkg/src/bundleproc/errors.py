"""Exception types shared across the package.

The CLI maps these onto exit codes: parameter/validation problems exit 2,
numerical failures exit 3.
"""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(RuntimeError):
    """A numerical routine failed to converge or lost required precision."""


class PanelParseError(ValueError):
    """A contract CSV could not be parsed; message carries the line number."""


class PanelValidationError(ValueError):
    """One or more panel rows violate schema invariants.

    ``diagnostics`` holds ``(row_index, message)`` pairs, where row indices
    refer to 1-based data rows (header excluded).
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = [f"row {i}: {msg}" for i, msg in self.diagnostics]
        super().__init__("invalid panel rows:\n" + "\n".join(lines))
