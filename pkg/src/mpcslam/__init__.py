"""Multipath-assisted tracking and distance-only SLAM on synthetic radio channels."""

from .channel import DmcParams, NoiseCovariance, RfConfig, cylindrical_array
from .estimators import ChannelTracker, FeatureLocator, SegmentedMapper
from .slam import MapEstimate, evaluate, experiment_one, experiment_two
from .table import DistanceTable

__version__ = "0.1.0"

__all__ = [
    "ChannelTracker",
    "DistanceTable",
    "DmcParams",
    "FeatureLocator",
    "MapEstimate",
    "NoiseCovariance",
    "RfConfig",
    "SegmentedMapper",
    "cylindrical_array",
    "evaluate",
    "experiment_one",
    "experiment_two",
]
