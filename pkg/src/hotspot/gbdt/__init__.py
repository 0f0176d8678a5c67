"""Histogram gradient-boosted trees with one-side sampling and feature bundling."""
from .binning import BinMapper, bin_features
from .boosting import Ensemble, TrainParams, feature_importance, predict, train
from .efb import FeatureBundle, efb_bundle
from .goss import GossSplitContext, goss_sample, split_gain
from .loss import residuals, softmax_proba

__all__ = [
    "BinMapper",
    "Ensemble",
    "FeatureBundle",
    "GossSplitContext",
    "TrainParams",
    "bin_features",
    "efb_bundle",
    "feature_importance",
    "goss_sample",
    "predict",
    "residuals",
    "softmax_proba",
    "split_gain",
    "train",
]
