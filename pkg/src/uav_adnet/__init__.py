"""Occupancy-grid anomaly detection for aerial surveillance scenes.

The package rasterizes bird-view object annotations into binary grid vectors,
trains a small family of variational autoencoders on normal scenes and flags
objects the trained model declines to reconstruct.
"""
from .detection import AnomalyReport, binarize, detect, detect_many, reconstruct
from .errors import (AdNetError, BoundsError, ConfigError, JoinError, MissingFileError, NumericError,
                     OrderingError, ParseError, SaturationError, ShapeError, UsageError, ValidationError)
from .estimator import GridVAE
from .evaluation import ConfusionCounts, MetricRow, confusion, detection_accuracy, evaluate_scenario, metrics
from .grid import GridCell, GridSpec, GridVector, ObjectCategory, linear_index, rasterize
from .ingest import FlightRecord, FrameAnnotation, Sample, join_by_time, parse_annotations, parse_flight_log
from .nn import VARIANTS, ModelConfig, Network
from .synth import SyntheticWorld, ZoneRule, default_rules, generate_test_set, inject
from .training import LossCurve, TrainOptions, reconstruction_error, train

__version__ = "0.1.0"

__all__ = [
    "AdNetError", "AnomalyReport", "BoundsError", "ConfigError", "ConfusionCounts", "FlightRecord",
    "FrameAnnotation", "GridCell", "GridSpec", "GridVAE", "GridVector", "JoinError", "LossCurve",
    "MetricRow", "MissingFileError", "ModelConfig", "Network", "NumericError", "ObjectCategory",
    "OrderingError", "ParseError", "Sample", "SaturationError", "ShapeError", "SyntheticWorld",
    "TrainOptions", "UsageError", "ValidationError", "VARIANTS", "ZoneRule", "binarize", "confusion",
    "default_rules", "detect", "detect_many", "detection_accuracy", "evaluate_scenario", "generate_test_set",
    "inject", "join_by_time", "linear_index", "metrics", "parse_annotations", "parse_flight_log",
    "rasterize", "reconstruct", "reconstruction_error", "train",
]
