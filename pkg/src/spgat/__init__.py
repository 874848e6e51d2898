"""Spectral graph attention networks in plain numpy/scipy."""

from .graph import (
    Dataset,
    DatasetError,
    Graph,
    LabeledSplit,
    NormalizedOperators,
    barbell_graph,
    from_edge_list,
    load_dataset,
    normalize,
    save_dataset,
    sbm_dataset,
    sbm_graph,
)
from .model import ConfigError, ModelConfig, SpGAT, SpGATLayer, count_parameters
from .spectral import (
    BranchOperators,
    EigenSystem,
    WaveletBasis,
    band_reconstruct,
    bessel_i,
    bessel_table,
    chebyshev_branch_operators,
    chebyshev_wavelets,
    eigendecompose,
    heat_wavelets,
    split_frequencies,
)
from .train import (
    ExperimentReport,
    bench_wavelets,
    evaluate,
    frequency_knockout,
    report_attention,
    run_seeds,
    sweep_d,
    train,
)

__version__ = "0.1.0"
