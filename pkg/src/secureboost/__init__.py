"""Lossless gradient tree boosting over vertically partitioned data."""
from .boosting import BoostingParams, CentralModel, train_centralized
from .paillier import FixedPointCodec, keygen

__version__ = "0.1.0"

__all__ = ["BoostingParams", "CentralModel", "FixedPointCodec", "keygen", "train_centralized"]
