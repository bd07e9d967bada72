"""Semantic-driven biphasic photo/sketch synthesis, desk scale.

Pure-numpy research code: a small reverse-mode autodiff engine, layout-
modulated encoder/decoder generators, semantic graph losses, iterative
cycle training, and full-reference image metrics.
"""
from .cycletrain import TrainConfig, run_iterative, select_optimal, train_direction
from .datagen import generate_corpus
from .graphs import compute_nodes, inter_graph, intra_graph
from .layout import PairedSample, SaliencyMap, SemanticLayout, load_corpus
from .losses import LossWeights
from .metrics import frechet_distance, fsim, ssim
from .network import Generator, PatchDiscriminator
from .numerics import Parameter, Tensor

__version__ = "0.1.0"

__all__ = [
    "Generator",
    "LossWeights",
    "PairedSample",
    "Parameter",
    "PatchDiscriminator",
    "SaliencyMap",
    "SemanticLayout",
    "Tensor",
    "TrainConfig",
    "__version__",
    "compute_nodes",
    "frechet_distance",
    "fsim",
    "generate_corpus",
    "inter_graph",
    "intra_graph",
    "load_corpus",
    "run_iterative",
    "select_optimal",
    "ssim",
    "train_direction",
]
