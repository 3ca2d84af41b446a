from .helpers import normalize

__all__ = ["normalize"]
