"""Model 1 (flattened channel x band) and Model 2 (interpolated scalp grid)
feature tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.spatial import Delaunay

from .core import INTERP_METHODS, ConfigError, DataError, ElectrodeLayout
from .dsp import BandEnergyMatrix

BORDER_FILLS = ("nearest", "zero")


@dataclass(frozen=True)
class SparseScalpField:
    """Known pixel values: `coords` (n, 2) of (row, col) and `values` (n, n_bands)."""

    coords: np.ndarray
    values: np.ndarray
    height: int = 15
    width: int = 15

    def band(self, b: int) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for (r, c), v in zip(self.coords, self.values[:, b])]


@dataclass(frozen=True)
class GridSample:
    tensor: np.ndarray = field(repr=False)  # (15, 15, 5)
    subject_id: str = ""
    label: int = 0
    window: int = 0
    clamped: int = 0


@dataclass(frozen=True)
class IdwParams:
    d_max: float = 4.0
    border_fill: str = "nearest"

    def __post_init__(self):
        if not self.d_max > 0:
            raise ConfigError("d_max must be positive")
        if self.border_fill not in BORDER_FILLS:
            raise ConfigError(f"border_fill must be one of {BORDER_FILLS}")


def concat_sample(matrix: BandEnergyMatrix | np.ndarray) -> np.ndarray:
    values = matrix.values if isinstance(matrix, BandEnergyMatrix) else np.asarray(matrix)
    return values.reshape(-1).copy()


def rasterize(matrix: BandEnergyMatrix | np.ndarray, layout: ElectrodeLayout) -> SparseScalpField:
    values = matrix.values if isinstance(matrix, BandEnergyMatrix) else np.asarray(matrix)
    if values.ndim != 2 or values.shape[0] != len(layout.entries):
        raise DataError(f"matrix rows {values.shape} do not match {len(layout.entries)} layout electrodes")
    return SparseScalpField(layout.coords, np.asarray(values, dtype=np.float64),
                            layout.grid_height, layout.grid_width)


class _Geometry:
    """Per-layout pixel/electrode distance tables, shared by every window."""

    def __init__(self, coords: np.ndarray, height: int, width: int):
        self.coords = coords
        self.height, self.width = height, width
        rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        self.pixels = np.stack([rr.ravel(), cc.ravel()], axis=1)
        diff = self.pixels[:, None, :] - coords[None, :, :]
        self.dist = np.sqrt((diff.astype(np.float64) ** 2).sum(-1))  # (n_pixels, n_electrodes)
        # argmin returns the first minimum, i.e. the lowest layout index on ties
        self.nearest = np.argmin(self.dist, axis=1)
        self.knot_pixel = coords[:, 0] * width + coords[:, 1]
        self.is_knot = np.zeros(height * width, dtype=bool)
        self.is_knot[self.knot_pixel] = True

    def with_knots(self, flat: np.ndarray, values: np.ndarray) -> np.ndarray:
        flat[self.knot_pixel] = values
        return flat.reshape(self.height, self.width, -1)


_GEOMETRY_CACHE: dict[tuple, _Geometry] = {}


def _geometry(field_: SparseScalpField) -> _Geometry:
    key = (field_.coords.tobytes(), field_.height, field_.width)
    geo = _GEOMETRY_CACHE.get(key)
    if geo is None:
        geo = _GEOMETRY_CACHE[key] = _Geometry(np.asarray(field_.coords), field_.height, field_.width)
    return geo


def idw_weights(geo: _Geometry, d_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalised 1/d weights restricted to d < d_max, and the border mask."""
    with np.errstate(divide="ignore"):
        w = np.where((geo.dist < d_max) & (geo.dist > 0), 1.0 / geo.dist, 0.0)
    total = w.sum(axis=1)
    border = (total == 0) & ~geo.is_knot
    return w, border


def interpolate_idw(field_: SparseScalpField, params: IdwParams = IdwParams()) -> GridSample:
    """u(x) = sum_i u_i / d(x, x_i) / sum_i 1 / d(x, x_i) over electrodes with
    d < d_max; electrode pixels copy their own value, pixels with no electrode
    in range take the nearest electrode's value or zero."""
    geo = _geometry(field_)
    w, border = idw_weights(geo, params.d_max)
    total = w.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        flat = (w @ field_.values) / total
    if params.border_fill == "nearest":
        flat[border] = field_.values[geo.nearest[border]]
    else:
        flat[border] = 0.0
    return GridSample(geo.with_knots(flat, field_.values))


def interpolate_nearest(field_: SparseScalpField) -> GridSample:
    geo = _geometry(field_)
    flat = field_.values[geo.nearest].copy()
    return GridSample(geo.with_knots(flat, field_.values))


def interpolate_barycentric(field_: SparseScalpField) -> GridSample:
    """Piecewise-linear over a Delaunay triangulation of the electrode pixels;
    nearest-electrode fill outside the convex hull."""
    geo = _geometry(field_)
    tri = _triangulation(geo)
    simplex = tri.find_simplex(geo.pixels.astype(np.float64))
    inside = simplex >= 0
    flat = field_.values[geo.nearest].copy()
    s = simplex[inside]
    transform = tri.transform[s]
    delta = geo.pixels[inside] - transform[:, 2]
    bary = np.einsum("nij,nj->ni", transform[:, :2], delta)
    bary = np.concatenate([bary, 1.0 - bary.sum(axis=1, keepdims=True)], axis=1)
    vertices = tri.simplices[s]
    flat[inside] = np.einsum("nk,nkb->nb", bary, field_.values[vertices])
    return GridSample(geo.with_knots(flat, field_.values))


_TRI_CACHE: dict[int, Delaunay] = {}


def _triangulation(geo: _Geometry) -> Delaunay:
    tri = _TRI_CACHE.get(id(geo))
    if tri is None:
        tri = _TRI_CACHE[id(geo)] = Delaunay(geo.coords.astype(np.float64))
    return tri


def interpolate_thin_plate(field_: SparseScalpField) -> GridSample:
    """Thin-plate spline through all electrode values, clamped at zero."""
    geo = _geometry(field_)
    rbf = RBFInterpolator(geo.coords.astype(np.float64), field_.values,
                          kernel="thin_plate_spline", degree=1, smoothing=0.0)
    flat = rbf(geo.pixels.astype(np.float64))
    negative = (flat < 0) & ~geo.is_knot[:, None]
    flat[negative] = 0.0
    return GridSample(geo.with_knots(flat, field_.values), clamped=int(negative.sum()))


def interpolate(field_: SparseScalpField, method: str, params: IdwParams | None = None) -> GridSample:
    if method == "idw_nn":
        return interpolate_idw(field_, IdwParams(params.d_max if params else 4.0, "nearest"))
    if method == "idw_zero":
        return interpolate_idw(field_, IdwParams(params.d_max if params else 4.0, "zero"))
    if method == "nearest":
        return interpolate_nearest(field_)
    if method == "linear_barycentric":
        return interpolate_barycentric(field_)
    if method == "cubic_spline":
        return interpolate_thin_plate(field_)
    raise ConfigError(f"unknown interpolation method {method!r}; choose from {INTERP_METHODS}")


def grid_sample(matrix: BandEnergyMatrix, layout: ElectrodeLayout, method: str = "idw_nn",
                d_max: float = 4.0) -> GridSample:
    g = interpolate(rasterize(matrix, layout), method, IdwParams(d_max))
    return GridSample(g.tensor, matrix.subject_id, matrix.label, matrix.window, g.clamped)


def grid_batch(values: np.ndarray, layout: ElectrodeLayout, method: str = "idw_nn",
               d_max: float = 4.0) -> tuple[np.ndarray, int]:
    """Interpolate a stack of (n, 34, 5) matrices to (n, 15, 15, 5) at once.

    Linear methods are applied as one matrix product over all windows; the
    thin-plate spline is fitted per window. Returns the grids and the total
    count of clamped spline pixels.
    """
    values = np.asarray(values, dtype=np.float64)
    n, n_el, n_b = values.shape
    if method == "cubic_spline":
        grids, clamped = [], 0
        for m in values:
            g = interpolate(rasterize(m, layout), method)
            grids.append(g.tensor)
            clamped += g.clamped
        return np.stack(grids), clamped
    # every other method is linear in the electrode values: find its
    # (n_pixels, n_electrodes) operator by interpolating the identity
    op = _linear_operator(layout, method, d_max)
    flat = np.einsum("pe,neb->npb", op, values)
    geo = _geometry(rasterize(np.zeros((n_el, 1)), layout))
    flat[:, geo.knot_pixel] = values
    return flat.reshape(n, layout.grid_height, layout.grid_width, n_b), 0


_OP_CACHE: dict[tuple, np.ndarray] = {}


def _linear_operator(layout: ElectrodeLayout, method: str, d_max: float) -> np.ndarray:
    key = (layout.coords.tobytes(), layout.grid_height, layout.grid_width, method, d_max)
    op = _OP_CACHE.get(key)
    if op is None:
        eye = np.eye(len(layout.entries))
        g = interpolate(rasterize(eye, layout), method, IdwParams(d_max))
        op = _OP_CACHE[key] = g.tensor.reshape(-1, len(layout.entries))
    return op


def write_grid_dump(path, grids: np.ndarray, keys: list[tuple[str, int, int]], method: str, d_max: float) -> None:
    """One line per window: subject_id, label, window, 1125 values in (row, col, band) order."""
    with open(path, "w") as fh:
        fh.write(f"# method={method} d_max={d_max!r}\n")
        for (sid, label, win), g in zip(keys, grids):
            fh.write(f"{sid},{label},{win}," + ",".join(repr(float(v)) for v in g.ravel()) + "\n")
