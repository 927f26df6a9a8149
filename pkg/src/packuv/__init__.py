"""Multi-layer UV atlases for Gaussian volumetric video."""

from .atlas import AtlasFrame, AtlasLayout, efficiency, layout, pack, unpack
from .core import (
    CameraModel,
    GaussianPrimitive,
    GaussianSet,
    SphericalCoord,
    UVCoord,
    covariance3d,
    position_from_ray,
    project_covariance,
    ray_direction,
    to_spherical,
    uv_project,
)
from .pipeline import decode_sequence, encode_sequence
from .uvmap import LayeredUVMap, PyramidSchedule, build_layered_map, extract_gaussians, pyramid_schedule

__version__ = "0.1.0"

__all__ = [
    "AtlasFrame", "AtlasLayout", "CameraModel", "GaussianPrimitive", "GaussianSet",
    "LayeredUVMap", "PyramidSchedule", "SphericalCoord", "UVCoord", "build_layered_map",
    "covariance3d", "decode_sequence", "efficiency", "encode_sequence", "extract_gaussians",
    "layout", "pack", "position_from_ray", "project_covariance", "pyramid_schedule",
    "ray_direction", "to_spherical", "unpack", "uv_project",
]
