"""Bilinear autoencoders: product-space reconstruction via the kernel trick."""

from .analysis import (build_composite, candidate_clusters, cluster_scores, export_manifold, greedy_reorder,
                       latent_densities, prefix_curve)
from .data import ActivationBatch, SyntheticSpec, generate, load_dump, normalize, write_dump
from .estimator import BilinearAutoencoder, TopKAutoencoder
from .kernels import cross_kernel, mixed_kernel, plain_kernel
from .losses import hoyer_density, sse, total_loss
from .model import BilinearModel, ModelDims, encode, init_model, load_checkpoint, save_checkpoint
from .optim import OptimConfig, orthogonalize
from .similarity import frobenius_similarity, permutation_similarity, self_similarity_diagonal
from .topk import TopKModel, quadratic_error
from .trainer import TrainConfig, evaluate, pareto_sweep, train

__version__ = "0.1.0"
