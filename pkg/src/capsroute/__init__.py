"""Capsule networks with dynamic routing on a small numpy autodiff engine."""

from .activations import CISquash, OriginalSquash, PoweredActivation, ci_squash, make_activation, powered_activation, squash
from .autodiff import Tensor, backward, grad, no_grad
from .config import RunConfig, load_config
from .data import Dataset, load_cifar10, load_dataset, load_mnist, synthesize_multimnist
from .estimator import CapsNetClassifier
from .layers import CapsNet, dynamic_routing, load_checkpoint, save_checkpoint
from .training import eval_checkpoint_averaged, margin_loss, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad", "no_grad",
    "squash", "ci_squash", "powered_activation", "make_activation",
    "OriginalSquash", "CISquash", "PoweredActivation",
    "RunConfig", "load_config",
    "Dataset", "load_mnist", "load_cifar10", "load_dataset", "synthesize_multimnist",
    "CapsNet", "dynamic_routing", "save_checkpoint", "load_checkpoint",
    "margin_loss", "train", "eval_checkpoint_averaged",
    "CapsNetClassifier",
]
