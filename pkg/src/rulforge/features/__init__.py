"""Feature constructions: health indicators, SOM/MQE and failure-rate curve fits."""

from rulforge.features.curvefit import (
    CurveFit,
    IfrfParams,
    WfrfParams,
    curvefit_features,
    curvefit_featurize,
    eval_ifrf,
    eval_wfrf,
    fit_curve,
)
from rulforge.features.health import HealthIndicatorConfig, health_indicators, window_statistics
from rulforge.features.som import SomModel, init_som, mqe, som_featurize, som_train

CURVE_FIT, SOM, HI = "CurveFit", "SOM", "HI"


def select_feature_strategy(failure_pattern_known: bool, normal_data_available: bool) -> str:
    """Pick a feature family: curve fitting when the failure pattern is known,
    else SOM when healthy data exist to train it, else health indicators."""
    if failure_pattern_known:
        return CURVE_FIT
    if normal_data_available:
        return SOM
    return HI


__all__ = [
    "CURVE_FIT", "HI", "SOM", "CurveFit", "HealthIndicatorConfig", "IfrfParams", "SomModel",
    "WfrfParams", "curvefit_features", "curvefit_featurize", "eval_ifrf", "eval_wfrf", "fit_curve",
    "health_indicators", "init_som", "mqe", "select_feature_strategy", "som_featurize", "som_train",
    "window_statistics",
]
