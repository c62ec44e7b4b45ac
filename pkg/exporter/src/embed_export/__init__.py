from .core import ExportError, ExportSpec, export_contextual, export_static

__all__ = ["ExportError", "ExportSpec", "export_contextual", "export_static"]
