"""Error types shared across the engine.

Two failure classes matter to callers: malformed input (bad bundle layout,
inconsistent shapes, invalid configs) and data that is structurally fine but
statistically unusable (constant targets, all-zero weights). They map to CLI
exit codes 2 and 3 respectively.
"""


class BundleValidationError(ValueError):
    """A bundle directory, manifest, or request config violates the format contract."""

    def __init__(self, message, *, layer=None, field=None):
        detail = message
        if layer is not None:
            detail = f"layer '{layer}': {detail}"
        if field is not None:
            detail = f"{detail} [field: {field}]"
        super().__init__(detail)
        self.layer = layer
        self.field = field


class DegenerateDataError(ValueError):
    """Input data admits no meaningful estimate (constant target, zero variance everywhere)."""
