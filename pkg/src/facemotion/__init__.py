"""Landmark-driven face animation with global and local motion fields."""

from .errors import (ConfigError, DataError, DegenerateError, DimensionError, FaceMotionError,
                     LayoutError, NumericalAbort, ParameterError, RegionError)
from .generator import Animator, GeneratorConfig, animate_frame, animate_sequence, composite, refine
from .landmarks import LandmarkSet, Layout74, dsnt, registration_loss, regression_loss, render_heatmap
from .motion_net import MotionNet, MotionNetConfig, adain, add_motion, generate_motion, run_branch
from .training import RunConfig, load_checkpoint, save_checkpoint, train
from .warpfield import RegionSpec, combine_fields, identity_field, lift_local_field, warp_bilinear, warp_nearest

__all__ = [
    "Animator", "ConfigError", "DataError", "DegenerateError", "DimensionError", "FaceMotionError",
    "GeneratorConfig", "LandmarkSet", "Layout74", "LayoutError", "MotionNet", "MotionNetConfig",
    "NumericalAbort", "ParameterError", "RegionError", "RegionSpec", "RunConfig", "adain",
    "add_motion", "animate_frame", "animate_sequence", "combine_fields", "composite", "dsnt",
    "generate_motion", "identity_field", "lift_local_field", "load_checkpoint", "refine",
    "registration_loss", "regression_loss", "render_heatmap", "run_branch", "save_checkpoint",
    "train", "warp_bilinear", "warp_nearest",
]
__version__ = "0.1.0"
