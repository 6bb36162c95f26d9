"""Self-paced adversarial training on a from-scratch numpy classifier."""

from .attacks import AttackConfig, fgsm, pgd, project_linf
from .data import Dataset, TripletGeometry, batches, gen_triplet, load_idx, subsample
from .losses import LossConfig, spat_loss
from .net import ForwardTrace, ModelParams, NetConfig, backward, forward, init_params
from .train import EpochMetrics, TrainConfig, evaluate, sgd_step, train

__version__ = "0.1.0"
