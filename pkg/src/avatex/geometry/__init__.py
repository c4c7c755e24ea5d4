from .camera import Camera, look_at_camera
from .head import Mesh, ParametricHead
from .raster import (
    CoverageMap,
    RenderOutput,
    TexelSampler,
    compute_coverage,
    project_to_uv,
    rasterize,
    uv_coverage,
)
from .edges import canny_edges, soft_edges
from .shading import DirectionalLight, LightRig, relight
from .fitting import FitResult, fit_landmarks

__all__ = [
    "Camera",
    "look_at_camera",
    "Mesh",
    "ParametricHead",
    "CoverageMap",
    "RenderOutput",
    "TexelSampler",
    "compute_coverage",
    "project_to_uv",
    "rasterize",
    "uv_coverage",
    "canny_edges",
    "soft_edges",
    "DirectionalLight",
    "LightRig",
    "relight",
    "FitResult",
    "fit_landmarks",
]
