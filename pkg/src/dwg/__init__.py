"""Surface reconstruction and normal orientation by diffusing winding-number gradients."""

from . import parallel  # noqa: F401  (sets the numba thread pool size before numba loads)
from .core import (
    DegenerateBoundsError,
    DwgError,
    EmptyInputError,
    EmptyLevelSetError,
    IndexMismatchError,
    ParseError,
    PointCloud,
    RngSeed,
    Transform,
    TriangleMesh,
    normalize_cloud,
)

__version__ = "0.1.0"
