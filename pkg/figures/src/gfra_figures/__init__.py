"""Figure rendering for benchmark sweep CSVs."""

from .render import FigureError, FigureSpec, RenderResult, load_rows, render

__version__ = "0.1.0"
