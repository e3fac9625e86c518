"""Saliency faithfulness evaluation with zeroing, interpolation, and adversarial masking."""

__version__ = "0.1.0"

from .attribution import AttributionConfig, SaliencyMap, attribute, \
    attribute_random, parse_method
from .domains import Domain, FeatureSubset, Order, Spectrum, select_subset, \
    spectral_attribute, spectral_saliency
from .masking import (AdversarialConfig, AimOperator, BinaryMask,
                      IdentityOperator, MaskingOperator, MdRoadOperator,
                      NeighborGraph, ZeroingOperator, aim_mask,
                      calibrate_epsilon, laplacian_impute, pgd,
                      spectral_impute, subset_to_mask, temporal_impute)
from .metrics import (AreaMetrics, DegradationCurve, DegenerateCurveError,
                      ProtocolCache, area_metrics, random_bias,
                      ranking_consistency, run_curve, spearman, stability)
from .runtime import Dataset, Model, TrainConfig, accuracy, train
from .stochastic import BridgeAnchors, fbm_path, fgn_davies_harte, mfbb
from .tasks import TaskSpec, build_task_model, generate, make_task, \
    oracle_attribution

__all__ = [name for name in dir() if not name.startswith("_")]
