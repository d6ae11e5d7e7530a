from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..core import ConfigError, DataError


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")


def knn_predict(train_x: np.ndarray, train_y: np.ndarray, queries: np.ndarray,
                config: KnnConfig = KnnConfig(), chunk: int = 256) -> np.ndarray:
    """Majority vote of the k nearest (Euclidean) training samples.

    Distance ties go to the lower training index (stable sort); vote ties go
    to class 0.
    """
    train_x = np.asarray(train_x, dtype=np.float64).reshape(len(train_x), -1)
    train_y = np.asarray(train_y)
    queries = np.asarray(queries, dtype=np.float64)
    queries = queries.reshape(-1, train_x.shape[1])
    if train_x.shape[0] < config.k:
        raise DataError(f"kNN needs at least k={config.k} training samples, got {train_x.shape[0]}")
    out = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), chunk):
        d = cdist(queries[start:start + chunk], train_x, "sqeuclidean")
        order = np.argsort(d, axis=1, kind="stable")[:, :config.k]
        votes = (train_y[order] == 1).sum(axis=1)
        out[start:start + chunk] = (votes > config.k - votes).astype(np.int64)
    return out


def knn_predict_one(train_x: np.ndarray, train_y: np.ndarray, query: np.ndarray,
                    config: KnnConfig = KnnConfig()) -> int:
    return int(knn_predict(train_x, train_y, np.asarray(query).reshape(1, -1), config)[0])
