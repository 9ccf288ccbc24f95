"""Quantile-regularized calibration for probabilistic regression."""

from ._core import (
    CalibrationMap,
    ConfigError,
    DivergenceError,
    DomainError,
    Error,
    Mlp,
    ShapeError,
    calibration_error,
    ckl_uniform,
    cre_empirical,
    default_config,
    evaluate,
    fit_calibration_map,
    gap_weights,
    pav,
    pit,
    quantile_reg_loss,
    reliability_curve,
    report,
    run_sweep,
    run_train,
    soft_sort,
    synth_hetero,
    train_mlp,
)

__version__ = "0.1.0"
