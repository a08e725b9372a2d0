"""Joint user-activity and signal detection for grant-free C-RAN.

Bernoulli-Gaussian message passing on a distance-sparsified channel graph,
with genie-aided / sparse MMSE baselines and a Monte-Carlo harness.
"""
from .baselines import exact_posterior_oracle, ga_mmse, ga_smmse, smmse
from .channel import (ChannelSet, NetworkGeometry, build_channel, d0_for_sparsity,
                      interference_variances, place_nodes, sparsify)
from .core import (BGMPConfig, DetectionResult, MessageState, Priors, finalize, initialize,
                   llr_from_prob, prob_from_llr, run_bgmp, sum_node_update, variable_node_update)
from .errors import InvalidArgument, NumericalFailure
from .graph import FactorGraph, build_graph, edge_count
from .harness import ExperimentConfig, ResultsTable, emit, oracle_check, run_experiment
from .metrics import from_db, mse, to_db, use_rate
from .source import SourceRealization, calibrate_noise, sample_source, transmit

__version__ = "0.1.0"
