"""Two-view contrastive training that detects and corrects wrong labels, in numpy.

A small two-headed MLP is trained on synthetic blobs with corrupted labels.
Wrong labels are flagged as out-of-distribution under a Gaussian mixture
whose responsibilities come from the classifier, corrected targets are
bootstrapped from the network's own predictions, and the classification,
contrastive and mixup-alignment losses are optimised in an EM-style loop.
"""

from .data import Dataset, generate_blobs, generate_train_test, inject_noise, read_dataset, write_dataset
from .evaluation import accuracy, detection_auc, imbalance_ratio, knn_eval
from .mixture import GmmState, BinaryGmm, fit_binary_gmm, posterior, update_gmm
from .trainer import TrainConfig, e_step, predict, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "generate_blobs", "generate_train_test", "inject_noise", "read_dataset",
    "write_dataset", "accuracy", "detection_auc", "imbalance_ratio", "knn_eval", "GmmState",
    "BinaryGmm", "fit_binary_gmm", "posterior", "update_gmm", "TrainConfig", "e_step",
    "predict", "train",
]
