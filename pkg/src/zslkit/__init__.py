"""zslkit: synthesize visual classifiers for unseen categories.

Word embeddings are propagated over a merged class graph (expert taxonomy +
embedding k-NN) by a residual graph convolutional network trained to regress
the classifier weights of seen categories; the predicted rows classify
features of unseen categories by inner product.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    InputError,
    InvariantError,
    NumericError,
    ShapeError,
    UnresolvableClassError,
    ZslkitError,
)
from .graph import (
    ClassIndex,
    EmbeddingTable,
    GraphBundle,
    build_bundle,
    build_embedding_table,
    embed_class_name,
    insert_category,
    knn_graph,
    load_taxonomy,
    merge_graphs,
    normalize_adjacency,
)
from .harness import (
    EvalReport,
    TrainConfig,
    ZslDataset,
    evaluate,
    grad_check,
    predict_classifiers,
    predict_scores,
    synth_dataset,
    train,
)
from .net import ArchSpec, BlockSpec, Hyper, ModelState, build_model, forward_model
from .tensor import Rng, SparseAdjacency

__all__ = [
    "ArchSpec",
    "BlockSpec",
    "ClassIndex",
    "ConfigError",
    "EmbeddingTable",
    "EvalReport",
    "GraphBundle",
    "Hyper",
    "InputError",
    "InvariantError",
    "ModelState",
    "NumericError",
    "Rng",
    "ShapeError",
    "SparseAdjacency",
    "TrainConfig",
    "UnresolvableClassError",
    "ZslDataset",
    "ZslkitError",
    "build_bundle",
    "build_embedding_table",
    "build_model",
    "embed_class_name",
    "evaluate",
    "forward_model",
    "grad_check",
    "insert_category",
    "knn_graph",
    "load_taxonomy",
    "merge_graphs",
    "normalize_adjacency",
    "predict_classifiers",
    "predict_scores",
    "synth_dataset",
    "train",
]
