"""Data-driven discovery of stochastic dynamics with heavy-tailed noise.

Learns closed-form drift fields, diffusion matrices and jump measures
from snapshot pairs (z, x) of a stochastic process, combining nonlocal
conditional-moment statistics with genetic programming over expression
trees and elastic-net sparse regression.
"""

from .datasets import (
    DatasetFormatError,
    SnapshotDataset,
    read_dataset,
    read_dataset_csv,
    write_dataset,
    write_dataset_csv,
)
from .evolution import (
    EvolutionResult,
    GpConfig,
    evolve,
    pointwise_problem,
    ring_problem,
)
from .pipeline import (
    ConfigError,
    DiscoveryConfig,
    build_model,
    infer_stable_params,
    load_config,
    render_report,
    run_full,
)
from .preprocess import (
    BinGrid,
    LocalMomentTraining,
    PowerLaw,
    RingTrainingSet,
    build_ring_training,
    local_diffusion_fit,
    local_drift_fit,
    partition_bins,
    tail_correction,
)
from .regression import (
    DesignMatrix,
    SparseFit,
    design_pointwise,
    design_ring,
    elastic_net_fit,
    hard_threshold_prune,
    least_squares_fit,
)
from .simulate import (
    SdeModel,
    StableSpec,
    generate_dataset,
    intensity_constant,
    sample_stable_increment,
    surface_area,
)
from .trees import (
    Individual,
    count_nodes,
    eval_tree,
    format_tree,
    infix,
    parse_tree,
    random_tree,
)

__version__ = "0.1.0"
