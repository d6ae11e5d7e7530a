"""Shared domain types: electrode layout, frequency bands, recordings and
the pipeline configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

N_CHANNELS = 34
GRID_SIZE = 15
FS_HZ = 1024.0

BAND_NAMES = ("delta", "theta", "alpha", "beta", "gamma")
MODELS = ("concat", "grid")
INTERP_METHODS = ("idw_nn", "idw_zero", "nearest", "linear_barycentric", "cubic_spline")
CLASSIFIERS = ("cnn", "svm", "knn")


class EegsadError(Exception):
    """Base class for all package errors."""


class LayoutError(EegsadError, ValueError):
    pass


class DataError(EegsadError, ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(EegsadError, ValueError):
    pass


class NumericalError(EegsadError, RuntimeError):
    """A numerical routine produced non-finite or otherwise unusable output."""


@dataclass(frozen=True)
class Electrode:
    name: str
    row: int
    col: int


@dataclass(frozen=True)
class ElectrodeLayout:
    entries: tuple[Electrode, ...]
    grid_height: int = GRID_SIZE
    grid_width: int = GRID_SIZE

    def __post_init__(self):
        if len(self.entries) != N_CHANNELS:
            raise LayoutError(f"layout needs exactly {N_CHANNELS} electrodes, got {len(self.entries)}")
        names = set()
        pixels = {}
        for e in self.entries:
            if not (0 <= e.row < self.grid_height and 0 <= e.col < self.grid_width):
                raise LayoutError(f"electrode {e.name!r} at ({e.row},{e.col}) is outside the "
                                  f"{self.grid_height}x{self.grid_width} grid")
            if e.name in names:
                raise LayoutError(f"duplicate electrode name {e.name!r}")
            if (e.row, e.col) in pixels:
                raise LayoutError(f"electrodes {pixels[(e.row, e.col)]!r} and {e.name!r} share "
                                  f"pixel ({e.row},{e.col})")
            names.add(e.name)
            pixels[(e.row, e.col)] = e.name

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def coords(self) -> np.ndarray:
        """(34, 2) integer array of (row, col)."""
        return np.array([(e.row, e.col) for e in self.entries], dtype=np.int64)

    def index(self, name: str) -> int:
        for i, e in enumerate(self.entries):
            if e.name == name:
                return i
        raise KeyError(name)


def parse_layout(text: str, source: str = "<string>") -> ElectrodeLayout:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or not parts[0]:
            raise LayoutError(f"{source}:{lineno}: expected 'name,row,col', got {raw!r}")
        try:
            row, col = int(parts[1]), int(parts[2])
        except ValueError:
            raise LayoutError(f"{source}:{lineno}: non-integer coordinate in {raw!r}") from None
        entries.append(Electrode(parts[0], row, col))
    return ElectrodeLayout(tuple(entries))


def load_layout(path: str | Path) -> ElectrodeLayout:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise LayoutError(f"cannot read layout {path}: {exc}") from exc
    return parse_layout(text, str(path))


def default_layout() -> ElectrodeLayout:
    """The bundled 34-electrode raster (an approximation of a standard cap)."""
    text = resources.files("eegsad.data").joinpath("layout34.csv").read_text()
    return parse_layout(text, "layout34.csv")


@dataclass(frozen=True)
class Band:
    name: str
    lo_hz: float
    hi_hz: float


@dataclass(frozen=True)
class BandSpec:
    bands: tuple[Band, ...]

    def __post_init__(self):
        if len(self.bands) != len(BAND_NAMES):
            raise ConfigError(f"expected {len(BAND_NAMES)} bands, got {len(self.bands)}")
        prev_hi = -np.inf
        for b in self.bands:
            if not b.lo_hz < b.hi_hz:
                raise ConfigError(f"band {b.name}: lo {b.lo_hz} >= hi {b.hi_hz}")
            if b.lo_hz < prev_hi:
                raise ConfigError(f"band {b.name} overlaps its predecessor")
            prev_hi = b.hi_hz

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.bands]

    def __getitem__(self, name: str) -> Band:
        for b in self.bands:
            if b.name == name:
                return b
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)


def default_band_spec() -> BandSpec:
    edges = (0.0, 4.0, 8.0, 16.0, 32.0, 52.0)
    return BandSpec(tuple(Band(n, lo, hi) for n, lo, hi in zip(BAND_NAMES, edges[:-1], edges[1:])))


@dataclass(frozen=True)
class Recording:
    subject_id: str
    label: int
    fs_hz: float
    channels: np.ndarray = field(repr=False)  # (34, n_samples) float64
    channel_names: tuple[str, ...]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"{self.subject_id}: label must be 0 or 1, got {self.label!r}")
        ch = self.channels
        if ch.ndim != 2 or ch.shape[0] != N_CHANNELS:
            raise DataError(f"{self.subject_id}: expected {N_CHANNELS} channels, got shape {ch.shape}")
        if len(self.channel_names) != N_CHANNELS:
            raise DataError(f"{self.subject_id}: {len(self.channel_names)} channel names for {N_CHANNELS} channels")
        ch.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class PipelineConfig:
    window_size: int = 5120
    window_stride: int = 5120
    wavelet: str = "db16"
    wpt_depth: int = 7
    bandpass_lo_hz: float = 1.0
    bandpass_hi_hz: float = 50.0
    model: str = "grid"
    interp_method: str = "idw_nn"
    d_max: float = 4.0
    classifier: str = "cnn"
    subject_threshold: float = 0.45
    folds: int = 8
    val_fraction: float = 0.1
    seed: int = 0
    knn_k: int = 3
    svm_sigma: float = 0.4
    svm_gamma: float | None = None
    svm_c: tuple[float, ...] = (1.0,)
    svm_tolerance: float = 1e-3
    svm_max_passes: int = 50
    cnn_learning_rate: float = 1e-3
    cnn_batch_size: int = 32
    cnn_max_epochs: int = 100
    cnn_patience: int = 8
    cnn_min_delta: float = 1e-3
    cnn_dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.svm_c, (int, float)):
            object.__setattr__(self, "svm_c", (float(self.svm_c),))
        else:
            object.__setattr__(self, "svm_c", tuple(float(c) for c in self.svm_c))
        if self.window_stride <= 0:
            raise ConfigError("window_stride must be positive")
        if self.wpt_depth < 1:
            raise ConfigError("wpt_depth must be >= 1")
        if self.window_size <= 0 or self.window_size % (2 ** self.wpt_depth):
            raise ConfigError(f"window_size {self.window_size} is not a multiple of 2^{self.wpt_depth}")
        if not 0.0 < self.subject_threshold < 1.0:
            raise ConfigError("subject_threshold must lie in (0, 1)")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.interp_method not in INTERP_METHODS:
            raise ConfigError(f"unknown interpolation method {self.interp_method!r}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if self.d_max <= 0:
            raise ConfigError("d_max must be positive")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.svm_sigma <= 0 or (self.svm_gamma is not None and self.svm_gamma <= 0):
            raise ConfigError("SVM kernel width must be positive")
        if not self.svm_c or min(self.svm_c) <= 0:
            raise ConfigError("svm_c values must be positive")
        if self.cnn_batch_size < 1:
            raise ConfigError("cnn_batch_size must be >= 1")
        if not 0 <= self.cnn_patience < self.cnn_max_epochs:
            raise ConfigError("cnn_patience must be in [0, cnn_max_epochs)")
        if self.cnn_dtype not in ("float32", "float64"):
            raise ConfigError("cnn_dtype must be float32 or float64")
        if not 0 <= self.bandpass_lo_hz < self.bandpass_hi_hz:
            raise ConfigError("bandpass edges must satisfy 0 <= lo < hi")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["svm_c"] = list(self.svm_c)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "svm_c" in d and isinstance(d["svm_c"], list):
            d["svm_c"] = tuple(d["svm_c"])
        return cls(**d)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    def feature_key(self) -> dict:
        """The subset of fields that determines band-energy features."""
        return {k: getattr(self, k) for k in
                ("window_size", "window_stride", "wavelet", "wpt_depth", "bandpass_lo_hz", "bandpass_hi_hz")}


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def check_names(names: Sequence[str], layout: ElectrodeLayout, source: str = "") -> None:
    expected = layout.names
    missing = [n for n in expected if n not in names]
    unknown = [n for n in names if n not in expected]
    if unknown:
        raise DataError(f"{source}unknown channel(s) {unknown}")
    if missing:
        raise DataError(f"{source}missing channel(s) {missing}")
    if list(names) != expected:
        raise DataError(f"{source}channel order differs from layout order")
