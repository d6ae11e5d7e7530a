from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DataError

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, samples: np.ndarray) -> np.ndarray:
        return standardize_apply(self, samples)


def standardize_fit(train: np.ndarray) -> Standardization:
    """Per-feature mean and population std over axis 0, std floored at 1e-8."""
    train = np.asarray(train, dtype=np.float64)
    if train.shape[0] == 0:
        raise DataError("cannot fit standardization on an empty training set")
    return Standardization(train.mean(axis=0), np.maximum(train.std(axis=0), STD_FLOOR))


def standardize_apply(stats: Standardization, samples: np.ndarray) -> np.ndarray:
    return (np.asarray(samples, dtype=np.float64) - stats.mean) / stats.std
