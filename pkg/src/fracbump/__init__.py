"""Two-weight entropy-bump laboratory for fractional maximal and integral
operators on truncated dyadic grids."""
from ._accel import BACKEND
from .dyadic import DyadicCube, DyadicTree, build_tree, cubes_containing, shifted_grid_family
from .weights import GridFunction, Weight, average, generate_weight, lp_norm, mass, weighted_average

__all__ = [
    "BACKEND", "DyadicCube", "DyadicTree", "build_tree", "cubes_containing", "shifted_grid_family",
    "GridFunction", "Weight", "average", "generate_weight", "lp_norm", "mass", "weighted_average",
]
__version__ = "0.1.0"
