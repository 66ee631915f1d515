"""Python access to the multimodal fusion toolkit: FTEN tensors, metrics,
synthetic cohorts, checkpoints and the experiment pipeline."""

from ._mmfusion import (
    ConfigError,
    Error,
    Experiment,
    FormatError,
    Model,
    RunFailure,
    UndefinedMetric,
    auc,
    load_tensor,
    operating_point,
    roc_curve,
    save_tensor,
    sens_spec,
    synth_cohort,
)

__all__ = [
    "ConfigError",
    "Error",
    "Experiment",
    "FormatError",
    "Model",
    "RunFailure",
    "UndefinedMetric",
    "auc",
    "load_tensor",
    "operating_point",
    "roc_curve",
    "save_tensor",
    "sens_spec",
    "synth_cohort",
]
