"""Lane detection post-processing around a pluggable detector.

Modules: ``lp_field`` (per-anchor output fields), ``detector`` (synthetic
analytic detector), ``zoom`` (confidence-driven crop scheduling),
``clustering`` (DBSCAN with the hierarchical distance), ``fitting`` (cubic
lanes), ``metrics``, ``hdmap`` (ground plane, projection, map merging),
``schemas``/``svg``/``cli`` (files, plots, command line).
"""

__version__ = "0.1.0"

from .clustering import ClusterParams, dbscan, hdis
from .config import PipelineConfig
from .detector import SyntheticDetector
from .fitting import DetectedLane, FitParams, clusters_to_lanes, fit_cubic
from .lp_field import CropSpec, FieldConfig, Lane, LaneType, LPField, decode_points, render_gt_field
from .scene import FovRule, NoiseModel, Scene
from .zoom import PipelineResult, ZoomSchedule, run

__all__ = [
    "ClusterParams", "CropSpec", "DetectedLane", "FieldConfig", "FitParams", "FovRule", "LPField",
    "Lane", "LaneType", "NoiseModel", "PipelineConfig", "PipelineResult", "Scene",
    "SyntheticDetector", "ZoomSchedule", "clusters_to_lanes", "dbscan", "decode_points",
    "fit_cubic", "hdis", "render_gt_field", "run",
]
