"""Figures for scaled-SGLD sweep summaries, consuming only summary.json."""

from .figures import (EmptyDataError, FigureSpec, KINDS, SchemaError,
                      build_figure, render)

__version__ = "0.1.0"

__all__ = ["FigureSpec", "SchemaError", "EmptyDataError", "KINDS",
           "build_figure", "render", "__version__"]
