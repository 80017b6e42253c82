"""Exception types shared across the solvers."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Malformed schema, constraint, table, or file content."""


class EnumerationInfeasibleError(RuntimeError):
    """The tuple space exceeds the configured enumeration budget."""

    def __init__(self, space_size: float, budget: float):
        self.space_size = space_size
        self.budget = budget
        super().__init__(
            f"|X| = {space_size:.3g} exceeds the enumeration budget {budget:.3g}; "
            "use the PCD solver instead"
        )


class SchemaMismatchError(InvalidInputError):
    """Two models or files refer to different attribute schemas."""
