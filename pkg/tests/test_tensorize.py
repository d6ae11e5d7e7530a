import numpy as np
import pytest

from eegsad.core import INTERP_METHODS, ConfigError, DataError
from eegsad.dsp import BandEnergyMatrix
from eegsad.tensorize import (IdwParams, SparseScalpField, concat_sample, grid_batch, grid_sample, interpolate,
                              interpolate_idw, rasterize)


def small_field(coords, values, size=7):
    return SparseScalpField(np.array(coords), np.array(values, dtype=float).reshape(len(coords), -1), size, size)


def idw_oracle(coords, values, d_max, fill, height, width):
    """Pixel-by-pixel evaluation of the weighting rule with plain loops."""
    out = np.zeros((height, width))
    for r in range(height):
        for c in range(width):
            d = [np.hypot(r - er, c - ec) for er, ec in coords]
            if min(d) == 0:
                out[r, c] = values[int(np.argmin(d))]
                continue
            num = den = 0.0
            for di, v in zip(d, values):
                if di < d_max:
                    num += v / di
                    den += 1 / di
            if den > 0:
                out[r, c] = num / den
            else:
                out[r, c] = values[int(np.argmin(d))] if fill == "nearest" else 0.0
    return out


class TestIdwExamples:
    def test_equidistant_mean(self):
        g = interpolate_idw(small_field([(0, 0), (2, 2)], [3, 6]), IdwParams(4.0)).tensor
        assert g[1, 1, 0] == pytest.approx(4.5)

    def test_inverse_distance(self):
        g = interpolate_idw(small_field([(0, 0), (0, 3)], [3, 6]), IdwParams(4.0)).tensor
        assert g[0, 1, 0] == pytest.approx(4.0)

    @pytest.mark.parametrize("fill,expected", [("nearest", 5.0), ("zero", 0.0)])
    def test_border_fill(self, fill, expected):
        f = small_field([(0, 0), (0, 1)], [5, 9], size=10)
        g = interpolate_idw(f, IdwParams(2.0, fill)).tensor
        assert g[9, 0, 0] == expected

    def test_border_tie_lowest_index(self):
        f = small_field([(0, 0), (0, 6)], [1, 2], size=7)
        g = interpolate_idw(f, IdwParams(1.5)).tensor
        assert g[6, 3, 0] == 1.0

    def test_matches_loop_oracle(self, layout, rng):
        v = rng.uniform(0, 10, size=34)
        for fill in ("nearest", "zero"):
            got = interpolate_idw(rasterize(v[:, None], layout), IdwParams(4.0, fill)).tensor[..., 0]
            want = idw_oracle(layout.coords.tolist(), v, 4.0, fill, 15, 15)
            np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            IdwParams(0.0)
        with pytest.raises(ConfigError):
            IdwParams(4.0, "mean")


class TestIdwProperties:
    def test_constant_field(self, layout):
        g = interpolate(rasterize(np.full((34, 5), 2.5), layout), "idw_nn").tensor
        np.testing.assert_allclose(g, 2.5, rtol=1e-12)

    def test_homogeneous(self, layout, rng):
        v = rng.uniform(0, 10, size=(34, 5))
        a = interpolate(rasterize(v, layout), "idw_nn").tensor
        b = interpolate(rasterize(3.0 * v, layout), "idw_nn").tensor
        np.testing.assert_allclose(b, 3.0 * a, rtol=1e-12)

    def test_bounded_by_in_range_electrodes(self, layout, rng):
        v = rng.uniform(0, 10, size=34)
        g = interpolate(rasterize(v[:, None], layout), "idw_zero").tensor[..., 0]
        for r in range(15):
            for c in range(15):
                d = np.hypot(layout.coords[:, 0] - r, layout.coords[:, 1] - c)
                near = v[d < 4.0]
                if near.size:
                    assert near.min() - 1e-12 <= g[r, c] <= near.max() + 1e-12

    @pytest.mark.parametrize("d_max", [1.5, 2.0, 4.0])
    def test_fill_modes_differ_only_on_border(self, layout, rng, d_max):
        v = rng.uniform(1, 10, size=(34, 5))
        f = rasterize(v, layout)
        a = interpolate(f, "idw_nn", IdwParams(d_max)).tensor
        b = interpolate(f, "idw_zero", IdwParams(d_max)).tensor
        rr, cc = np.meshgrid(np.arange(15), np.arange(15), indexing="ij")
        dmin = np.min(np.hypot(rr[..., None] - layout.coords[:, 0], cc[..., None] - layout.coords[:, 1]), axis=-1)
        differs = np.any(a != b, axis=-1)
        assert np.all(dmin[differs] >= d_max)
        assert differs.any() == bool((dmin >= d_max).any())


class TestMethods:
    @pytest.mark.parametrize("method", INTERP_METHODS)
    def test_knot_exactness(self, layout, rng, method):
        for _ in range(5):
            v = rng.uniform(0, 100, size=(34, 5))
            g = interpolate(rasterize(v, layout), method).tensor
            assert g.shape == (15, 15, 5)
            np.testing.assert_array_equal(g[layout.coords[:, 0], layout.coords[:, 1]], v)

    def test_nearest(self, layout):
        v = np.arange(34, dtype=float)[:, None]
        g = interpolate(rasterize(v, layout), "nearest").tensor[..., 0]
        assert g[0, 0] == layout.index("F7")
        for r in range(15):
            for c in range(15):
                d2 = (layout.coords[:, 0] - r) ** 2 + (layout.coords[:, 1] - c) ** 2
                assert g[r, c] == np.flatnonzero(d2 == d2.min())[0]

    def test_barycentric_reproduces_affine(self, layout):
        # affine fields are reproduced exactly inside the hull
        v = (2.0 * layout.coords[:, 0] + 0.5 * layout.coords[:, 1] + 1.0)[:, None]
        g = interpolate(rasterize(v, layout), "linear_barycentric").tensor[..., 0]
        assert g[7, 6] == pytest.approx(2.0 * 7 + 0.5 * 6 + 1.0)
        assert g[10, 8] == pytest.approx(2.0 * 10 + 0.5 * 8 + 1.0)

    def test_spline_clamped_nonnegative(self, layout, rng):
        v = rng.uniform(0, 1, size=(34, 5))
        v[::3] = 0.0
        g = interpolate(rasterize(v, layout), "cubic_spline")
        assert (g.tensor >= 0).all()

    def test_unknown_method(self, layout):
        with pytest.raises(ConfigError):
            interpolate(rasterize(np.zeros((34, 5)), layout), "kriging")


class TestBatch:
    @pytest.mark.parametrize("method", INTERP_METHODS)
    def test_batch_matches_single(self, layout, rng, method):
        vals = rng.uniform(0, 10, size=(3, 34, 5))
        batch, _ = grid_batch(vals, layout, method, 3.0)
        for i in range(3):
            single = interpolate(rasterize(vals[i], layout), method, IdwParams(3.0)).tensor
            np.testing.assert_allclose(batch[i], single, rtol=1e-10, atol=1e-12)
            np.testing.assert_array_equal(batch[i][layout.coords[:, 0], layout.coords[:, 1]], vals[i])

    def test_grid_sample_metadata(self, layout, rng):
        m = BandEnergyMatrix(rng.uniform(size=(34, 5)), "sub-001", 1, 4)
        g = grid_sample(m, layout)
        assert (g.subject_id, g.label, g.window) == ("sub-001", 1, 4)

    def test_concat(self, rng):
        v = rng.uniform(size=(34, 5))
        c = concat_sample(v)
        assert c.shape == (170,) and c[5] == v[1, 0]

    def test_rasterize_shape_error(self, layout):
        with pytest.raises(DataError):
            rasterize(np.zeros((33, 5)), layout)
