import numpy as np
import pytest

from goalstack.errors import ContractViolation
from goalstack.map_head import MapHeadParams, decode_map, mask_iou
from goalstack.scene import BevGrid

EXTENT = (-8.192, 8.192, -8.192, 8.192)


def small_params(layers=2, n_things=5, dim=16):
    return MapHeadParams.seeded(dim=dim, heads=2, layers=layers, n_things=n_things, seed=3)


class TestDecodeMap:
    def test_constant_bev_constant_masks(self):
        params = small_params()
        bev = BevGrid(np.tile(np.linspace(-1, 1, 16), (16, 16, 1)), EXTENT)
        _, probs, _ = decode_map(bev, params)
        for q in range(probs.shape[0]):
            assert np.ptp(probs[q]) == pytest.approx(0.0, abs=1e-12)

    def test_planted_signature_top_k(self):
        rng = np.random.default_rng(5)
        dim = 16
        sig = rng.standard_normal(dim)
        sig /= np.linalg.norm(sig)
        data = rng.standard_normal((16, 16, dim)) * 0.05
        planted = [(2, 3), (7, 7), (12, 4), (9, 13)]
        for i, j in planted:
            data[i, j] += 3.0 * sig
        bev = BevGrid(data, EXTENT)
        # zero refinement layers expose the raw query-feature matmul
        params = small_params(layers=0, n_things=2, dim=dim)
        params = MapHeadParams(
            dim=dim,
            n_things=2,
            thing_embed=np.stack([sig, rng.standard_normal(dim)]),
            stuff_embed=params.stuff_embed,
            blocks=(),
            pe_proj=params.pe_proj,
            class_head=params.class_head,
        )
        _, probs, _ = decode_map(bev, params)
        top = np.argsort(probs[0].ravel())[::-1][: len(planted)]
        got = {(int(t) // 16, int(t) % 16) for t in top}
        assert got == set(planted)

    def test_panoptic_partition(self):
        params = small_params()
        rng = np.random.default_rng(6)
        bev = BevGrid(rng.standard_normal((16, 16, 16)), EXTENT)
        _, probs, panoptic = decode_map(bev, params)
        assert panoptic.data.shape == (16, 16)
        labels = np.unique(panoptic.data)
        assert all(0 <= v <= params.n_things + 1 for v in labels)
        # every cell has exactly one label by construction (int grid)
        assert panoptic.data.size == 16 * 16

    def test_deterministic(self):
        params = small_params()
        rng = np.random.default_rng(7)
        bev = BevGrid(rng.standard_normal((16, 16, 16)), EXTENT)
        a = decode_map(bev, params)
        b = decode_map(bev, params)
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[2].data, b[2].data)

    def test_dim_mismatch(self):
        params = small_params()
        bev = BevGrid(np.zeros((8, 8, 4)), EXTENT)
        with pytest.raises(ContractViolation):
            decode_map(bev, params)


class TestMaskIou:
    def test_identical(self):
        m = np.zeros((8, 8), dtype=bool)
        m[2:5, 3:6] = True
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8), dtype=bool)
        b = np.zeros((8, 8), dtype=bool)
        a[0:2, 0:2] = True
        b[5:7, 5:7] = True
        assert mask_iou(a, b) == 0.0

    def test_third(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = a[0, 1] = True
        b[0, 1] = b[0, 2] = True
        assert mask_iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_both_empty(self):
        assert mask_iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 4), dtype=bool)) == 1.0

    def test_symmetric_and_monotone(self):
        rng = np.random.default_rng(8)
        a = rng.random((8, 8)) > 0.6
        b = rng.random((8, 8)) > 0.6
        assert mask_iou(a, b) == mask_iou(b, a)
        grown = a | b  # adding shared cells to a cannot reduce IoU
        assert mask_iou(grown, b) >= mask_iou(a, b)
