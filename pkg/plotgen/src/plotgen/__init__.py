"""Figure generation for missingness-sweep metrics CSVs."""

__version__ = "0.1.0"

from .render import (  # noqa: F401
    FIGURES,
    InputError,
    PlotSpec,
    RenderResult,
    render,
)
