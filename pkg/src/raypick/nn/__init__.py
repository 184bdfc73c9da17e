from . import checkpoint, core, heads

__all__ = ["core", "heads", "checkpoint"]
