"""From-scratch classifiers: kNN, SMO-trained RBF SVM and the CNN."""

from .cnn import (CnnArchitecture, Network, TrainConfig, TrainHistory, cnn_init, cnn_predict_proba, cnn_train,
                  infer_shapes, load_checkpoint, save_checkpoint)
from .knn import KnnConfig, knn_predict, knn_predict_one
from .scaling import Standardization, standardize_apply, standardize_fit
from .svm import SvmConfig, SvmModel, kkt_violation, svm_fit, svm_predict

__all__ = [
    "CnnArchitecture", "Network", "TrainConfig", "TrainHistory", "cnn_init", "cnn_predict_proba", "cnn_train",
    "infer_shapes", "load_checkpoint", "save_checkpoint", "KnnConfig", "knn_predict", "knn_predict_one",
    "Standardization", "standardize_apply", "standardize_fit", "SvmConfig", "SvmModel", "kkt_violation",
    "svm_fit", "svm_predict",
]
