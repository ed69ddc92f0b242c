"""Globally-aware multiple instance classifier (GMIC).

A two-stage high-resolution image classifier: a narrow global network
produces weakly supervised saliency maps, a greedy procedure extracts
ROI patches from them, a wider local network embeds the patches, gated
attention aggregates the embeddings, and a fusion head combines global
and local evidence. Ships with a self-contained reverse-mode autodiff
core and a synthetic planted-lesion benchmark.
"""

from .augment import augment, rotate_patch, standardize
from .data import Dataset, Exam, Split, View, load_dataset, write_dataset
from .metrics import auc, breast_level, dsc, hybrid, prauc, sensitivity_matched_specificity, simplex_ensemble
from .model import GMIC, ModelOutputs
from .networks import DESK, PAPER_SCALE, NetworkConfig
from .roi import RoiWindow, crop_patches, minmax_normalize, retrieve_roi
from .saliency import l1_regularizer, topk_mean_pool
from .synth import SynthConfig, generate
from .tensor import Tensor, finite_difference_check, no_grad
from .training import Adam, TrainConfig, balanced_epoch_sampler, bce, total_loss, train

__version__ = "0.1.0"
