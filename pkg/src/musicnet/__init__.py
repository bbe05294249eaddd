"""Multi-scale, correlation-aware learning on irregularly sampled multivariate
time series, in plain numpy."""

from .data import (
    AlignedInstance,
    ChannelSeries,
    ClassSpec,
    ConfigError,
    DatasetSplit,
    IsmtsInstance,
    ParseError,
    SynthSpec,
    align,
    load_csv,
    split,
    synth_generate,
    write_csv,
)
from .multiscale import build_hierarchy, choose_num_scales, dataset_num_scales
from .pipeline import (
    DataError,
    DivergenceError,
    MuSiCNet,
    RunConfig,
    RunReport,
    corr_dump,
    evaluate_classification,
    evaluate_forecast,
    evaluate_interpolation,
    train,
)
from .spectral import CorrelationMatrix, correlation_matrix, dtw, idtw_matrix, lomb_scargle

__version__ = "0.1.0"
