"""Binary mass segmentation on pixel lattices.

A CRF energy combines a location prior, an intensity GMM and DBN patch
classifiers with Potts and contrast pairwise terms. Weights are learned by a
cutting-plane structured SVM and inference is an exact minimum cut.
"""
from .core import LabelMask, ModelWeights, PotentialStack, RoiImage, energy, joint_features
from .evaluation import brute_force_infer, dice, evaluate_dataset
from .maxflow import infer, infer_loss_augmented
from .model import TrainedModel, load_model, save_model
from .pipeline import segment, train_model
from .ssvm import train_ssvm

__version__ = "0.1.0"

__all__ = [
    "LabelMask",
    "ModelWeights",
    "PotentialStack",
    "RoiImage",
    "TrainedModel",
    "brute_force_infer",
    "dice",
    "energy",
    "evaluate_dataset",
    "infer",
    "infer_loss_augmented",
    "joint_features",
    "load_model",
    "save_model",
    "segment",
    "train_model",
    "train_ssvm",
]
