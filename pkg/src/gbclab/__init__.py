"""Grid simulations of wave-function collapse driven by Bohmian-sourced gravity."""
from .grid import Field, Grid, GridError, make_grid
from .states import BohmianPoint, WaveFunction
from .gravity import GravityParams, GravitySample

__version__ = "0.1.0"

__all__ = ["Field", "Grid", "GridError", "make_grid", "BohmianPoint", "WaveFunction",
           "GravityParams", "GravitySample", "__version__"]
