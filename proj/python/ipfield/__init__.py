"""Information potential field uncertainty scores (C++ core)."""

from ._ipfield import (
    CheckpointError,
    FeatureIoError,
    IpfField,
    NumericalError,
    SnMlp,
    accuracy,
    auroc,
    build_grid,
    calibrate_threshold,
    decide,
    ece,
    linear_grid,
    log_grid,
    make_dataset,
    make_off_manifold_points,
    read_features,
    render_grid,
    silverman_bandwidth,
    softmax,
    softmax_entropy,
    sweep_bandwidth,
    train,
    write_features,
)

__all__ = [
    "CheckpointError",
    "FeatureIoError",
    "IpfField",
    "NumericalError",
    "SnMlp",
    "accuracy",
    "auroc",
    "build_grid",
    "calibrate_threshold",
    "decide",
    "ece",
    "linear_grid",
    "log_grid",
    "make_dataset",
    "make_off_manifold_points",
    "read_features",
    "render_grid",
    "silverman_bandwidth",
    "softmax",
    "softmax_entropy",
    "sweep_bandwidth",
    "train",
    "write_features",
]
