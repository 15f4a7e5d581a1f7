"""Divergence-over-kernel representation learning at desk scale.

f-divergences (KL, TV, JSD, squared Hellinger) with analytic gradients,
softmax similarity kernels over neighborhood distributions, three small
training engines (SNE embedding, neighbor-graph clustering, supervised
contrastive learning), evaluation metrics, and gradient-stability
diagnostics, all exposed through one CLI.
"""

from .divergences import (
    DIVERGENCES,
    KINDS,
    divergence,
    divergence_grad_q,
    divergence_grad_rows,
    divergence_rows,
    validate_probability_vector,
)
from .errors import (
    ConfigError,
    DegenerateRowError,
    DimensionError,
    DomainError,
    NumericalError,
    ParseError,
)
from .kernels import (
    KERNEL_FAMILIES,
    KernelSpec,
    cluster_transition,
    cluster_transition_grad,
    kernel_rows,
    kernel_rows_grad,
    learned_rows,
    normalize_rows,
    similarity_matrix,
    squared_distances,
    supervisory_knn,
    supervisory_labels,
    supervisory_sne,
    validate_distribution,
)
from .model import (
    Adam,
    ClusterHead,
    Encoder,
    FreeEmbedding,
    backward,
    forward,
    head_backward,
    head_forward,
    load_checkpoint,
    save_checkpoint,
)
from .evaluation import (
    hungarian_accuracy,
    kmeans_labels,
    knn_accuracy,
    linear_probe,
    max_assignment,
    holdout_split,
    silhouette,
)
from .data import DatasetSpec, LabeledMatrix, emit_report_csv, emit_scatter_svg, generate, load_matrix
from .trainers import (
    CONFIG_KEYS,
    LossConfig,
    SpikeStats,
    TASKS,
    TrainReport,
    grad_norm_series,
    loss_and_grad,
    resolve_config,
    run_cluster,
    run_sne,
    run_supcon,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ClusterHead",
    "ConfigError",
    "CONFIG_KEYS",
    "DatasetSpec",
    "DegenerateRowError",
    "DimensionError",
    "DIVERGENCES",
    "DomainError",
    "Encoder",
    "FreeEmbedding",
    "KERNEL_FAMILIES",
    "KINDS",
    "KernelSpec",
    "LabeledMatrix",
    "LossConfig",
    "NumericalError",
    "ParseError",
    "SpikeStats",
    "TASKS",
    "TrainReport",
    "backward",
    "cluster_transition",
    "cluster_transition_grad",
    "divergence",
    "divergence_grad_q",
    "divergence_grad_rows",
    "divergence_rows",
    "emit_report_csv",
    "emit_scatter_svg",
    "forward",
    "generate",
    "grad_norm_series",
    "head_backward",
    "head_forward",
    "holdout_split",
    "hungarian_accuracy",
    "kernel_rows",
    "kernel_rows_grad",
    "kmeans_labels",
    "knn_accuracy",
    "learned_rows",
    "linear_probe",
    "load_checkpoint",
    "load_matrix",
    "loss_and_grad",
    "max_assignment",
    "normalize_rows",
    "resolve_config",
    "run_cluster",
    "run_sne",
    "run_supcon",
    "save_checkpoint",
    "silhouette",
    "similarity_matrix",
    "squared_distances",
    "supervisory_knn",
    "supervisory_labels",
    "supervisory_sne",
    "validate_distribution",
    "validate_probability_vector",
    "__version__",
]
