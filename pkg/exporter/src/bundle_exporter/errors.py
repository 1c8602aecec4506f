class ExportError(ValueError):
    """Anything that prevents a well-formed bundle from being written."""


class UnsupportedLayerError(ExportError):
    """A layer the exporter cannot capture, named together with its kind."""
