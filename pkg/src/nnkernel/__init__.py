"""Nearest-neighbour Gaussian kernel metric learning on numpy."""

from .ann import GraphIndex, NeighbourIndex, SearchParams, brute_force_knn, build_graph, search
from .bank import CentreStore, NeighbourTable, UpdateSchedule, diagnostics, refresh
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, ValidationError
from .data import Dataset, load_dataset
from .kernel import CentreBank, KernelConfig, LossGradients, classify, kernel_value, log_kernel_sums, nnk_loss, nnk_loss_backward
from .metrics import kmeans, nmi, recall_at_k, split_transfer
from .mlp import MlpModel, TrainConfig, backward, forward, init_mlp, sgd_step, softmax_head_loss
from .training import enroll, evaluate, train, tune_sigma

__version__ = "0.1.0"
