import math

import numpy as np
import pytest

from goalstack.errors import ConfigError
from goalstack.scene import (
    AGENT_DIMS,
    BevGrid,
    Box2d,
    GeneratorConfig,
    NoiseSpec,
    Scenario,
    SynthFeatureConfig,
    class_signature,
    corrupt_detections,
    generate_scenario,
    rasterize_boxes,
    synth_bev_features,
)

SMALL_EXTENT = (-12.8, 12.8, -12.8, 12.8)


class TestGridTransforms:
    def test_center_convention(self):
        g = BevGrid.zeros(200, 200)
        np.testing.assert_allclose(g.world_to_cell(np.array([0.0, 0.0])), [99.5, 99.5])
        np.testing.assert_allclose(g.world_to_cell(np.array([-51.2, -51.2])), [-0.5, -0.5])

    def test_roundtrip(self):
        g = BevGrid.zeros(50, 50, extent=SMALL_EXTENT)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-12, 12, size=(100, 2))
        np.testing.assert_allclose(g.cell_to_world(g.world_to_cell(pts)), pts, atol=1e-9)

    def test_cell_size_exact(self):
        g = BevGrid.zeros(200, 200)
        assert g.cell_size == (0.512, 0.512)


class TestRasterize:
    def test_empty(self):
        out = rasterize_boxes(BevGrid.zeros(50, 50, extent=SMALL_EXTENT), [], [])
        assert out.data.sum() == 0

    def test_two_by_two_box(self):
        g = BevGrid.zeros(50, 50, extent=SMALL_EXTENT)
        center = g.cell_to_world(np.array([20.0, 30.0]))
        box = Box2d(center[0], center[1], 1.024, 1.024, 0.0)
        out = rasterize_boxes(g, [box], [7]).data
        assert out.sum() == 7 * 4
        assert out[20, 30] == 7 and out[19, 30] == 7 and out[20, 29] == 7 and out[19, 29] == 7

    def test_rotated_box_against_mc_oracle(self):
        g = BevGrid.zeros(50, 50, extent=SMALL_EXTENT)
        box = Box2d(1.3, -2.1, 2.0, 4.5, 0.7)
        got = rasterize_boxes(g, [box], [1]).data
        rng = np.random.default_rng(2)
        # sample uniform points inside the box, collect hit cells
        hl, hw = box.l / 2, box.w / 2
        local = rng.uniform([-hl, -hw], [hl, hw], size=(100_000, 2))
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        world = np.stack(
            [box.x + local[:, 0] * c - local[:, 1] * s, box.y + local[:, 0] * s + local[:, 1] * c], axis=1
        )
        hits = np.rint(g.world_to_cell(world)).astype(int)
        mc = np.zeros_like(got)
        mc[hits[:, 0], hits[:, 1]] = 1
        # boundary band: cells whose centre lies within half a cell diagonal of the box edge
        centers = g.cell_centers().reshape(-1, 2)
        d = centers - box.center
        dx = d[:, 0] * c + d[:, 1] * s
        dy = -d[:, 0] * s + d[:, 1] * c
        margin = math.hypot(*g.cell_size) / 2
        near_edge = (np.abs(np.abs(dx) - hl) < margin) | (np.abs(np.abs(dy) - hw) < margin)
        near_edge &= (np.abs(dx) < hl + margin) & (np.abs(dy) < hw + margin)
        keep = ~near_edge.reshape(got.shape)
        agree = ((got > 0) == (mc > 0))[keep]
        assert agree.mean() >= 0.99

    def test_overlap_later_id_wins(self):
        g = BevGrid.zeros(50, 50, extent=SMALL_EXTENT)
        a = Box2d(0.0, 0.0, 3.0, 3.0, 0.0)
        b = Box2d(0.5, 0.5, 3.0, 3.0, 0.0)
        out = rasterize_boxes(g, [a, b], [1, 2]).data
        overlap_cell = np.rint(g.world_to_cell(np.array([0.5, 0.5]))).astype(int)
        assert out[overlap_cell[0], overlap_cell[1]] == 2

    def test_translation_equivariance_one_cell(self):
        g = BevGrid.zeros(50, 50, extent=SMALL_EXTENT)
        cell = g.cell_size[0]
        box = Box2d(-1.0, 2.0, 1.8, 4.2, 0.45)
        a = rasterize_boxes(g, [box], [1]).data
        b = rasterize_boxes(g, [Box2d(box.x + cell, box.y, box.w, box.l, box.yaw)], [1]).data
        np.testing.assert_array_equal(np.roll(a, 1, axis=0)[1:], b[1:])


class TestGenerator:
    def test_deterministic(self):
        a = generate_scenario(GeneratorConfig(), 42)
        b = generate_scenario(GeneratorConfig(), 42)
        assert a.to_json() == b.to_json()

    def test_zero_agents(self):
        sc = generate_scenario(GeneratorConfig(n_agents=0), 1)
        assert sc.agents == []
        assert len(sc.ego) == sc.horizon

    def test_straight_agent_displacement(self):
        spec = GeneratorConfig(n_agents=2, speed_range=(3.0, 3.0), turn_rate_range=(0.0, 0.0), horizon=10)
        sc = generate_scenario(spec, 5)
        agent = sc.agents[0]
        boxes = [b for b in agent.boxes if b is not None]
        for p, q in zip(boxes[:-1], boxes[1:]):
            assert math.hypot(q.x - p.x, q.y - p.y) == pytest.approx(3.0 / spec.frame_rate, abs=1e-9)

    def test_zero_horizon_rejected(self):
        with pytest.raises(ConfigError):
            generate_scenario(GeneratorConfig(horizon=0), 1)

    def test_invariants_over_many_seeds(self):
        spec = GeneratorConfig(horizon=8, n_agents=3)
        for seed in range(1000):
            sc = generate_scenario(spec, seed)  # Scenario.__post_init__ enforces invariants
            assert len({a.agent_id for a in sc.agents}) == len(sc.agents)

    def test_json_roundtrip(self):
        sc = generate_scenario(GeneratorConfig(), 9)
        assert Scenario.from_json(sc.to_json()).to_json() == sc.to_json()

    def test_ego_clearance(self):
        sc = generate_scenario(GeneratorConfig(), 13)
        for t in range(sc.horizon):
            boxes, _, _ = sc.agent_boxes_at(t)
            e = sc.ego[t]
            for b in boxes:
                assert math.hypot(b.x - e.x, b.y - e.y) > (math.hypot(b.w, b.l) + math.hypot(e.w, e.l)) / 2


class TestSynthFeatures:
    def test_deterministic(self):
        sc = generate_scenario(GeneratorConfig(), 3)
        a = synth_bev_features(sc, 2, (32, 32, SMALL_EXTENT), seed=7, channels=16)
        b = synth_bev_features(sc, 2, (32, 32, SMALL_EXTENT), seed=7, channels=16)
        np.testing.assert_array_equal(a.data, b.data)

    def test_empty_scene_pure_noise(self):
        sc = generate_scenario(GeneratorConfig(n_agents=0), 3)
        sc.map.lanes, sc.map.dividers, sc.map.crossings, sc.map.drivable = [], [], [], []
        # move the ego raster out of the small grid so nothing is painted
        far = (100.0, 125.6, 100.0, 125.6)
        cfg = SynthFeatureConfig(noise_std=0.5)
        grid = synth_bev_features(sc, 0, (32, 32, far), seed=11, channels=16, cfg=cfg)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=11, spawn_key=(0xB0E, 0)))
        np.testing.assert_array_equal(grid.data, rng.standard_normal((32, 32, 16)) * 0.5)

    def test_signature_separation(self):
        spec = GeneratorConfig(n_agents=3, horizon=6, speed_range=(1.0, 2.0))
        sc = generate_scenario(spec, 21)
        cfg = SynthFeatureConfig(amplitude=3.0, noise_std=0.1)
        grid = synth_bev_features(sc, 0, (64, 64, (-51.2, 51.2, -51.2, 51.2)), seed=5, channels=16, cfg=cfg)
        boxes, ids, classes = sc.agent_boxes_at(0)
        inst = rasterize_boxes(grid, boxes, ids).data
        for bid, cls in zip(ids, classes):
            mask = inst == bid
            if not mask.any():
                continue
            sig = class_signature(5, cls, 16)
            occupied = grid.data[mask] @ sig
            free = grid.data[inst == 0] @ sig
            assert occupied.mean() > cfg.amplitude - 3 * cfg.noise_std
            assert abs(free.mean()) < 0.5


class TestDetections:
    def test_zero_noise_equals_gt(self):
        sc = generate_scenario(GeneratorConfig(), 4)
        df = corrupt_detections(sc, 1, NoiseSpec(), seed=2)
        boxes, ids, classes = sc.agent_boxes_at(1)
        assert len(df.detections) == len(boxes)
        for det, box in zip(df.detections, boxes):
            assert det.box == box
            assert det.score == 1.0
        assert df.ego_box == sc.ego[1]

    def test_drop_all(self):
        sc = generate_scenario(GeneratorConfig(), 4)
        df = corrupt_detections(sc, 0, NoiseSpec(drop_prob=1.0), seed=2)
        assert df.detections == ()

    def test_jitter_std_converges(self):
        spec = GeneratorConfig(n_agents=4, horizon=25, speed_range=(1.0, 2.0), spawn_radius=20.0)
        sc = generate_scenario(spec, 6)
        sigma = 0.5
        errors = []
        seed = 0
        while len(errors) < 10_000:
            for t in range(sc.horizon):
                df = corrupt_detections(sc, t, NoiseSpec(pos_std=sigma), seed=seed)
                boxes, _, _ = sc.agent_boxes_at(t)
                for det, box in zip(df.detections, boxes):
                    errors.append(det.box.x - box.x)
                    errors.append(det.box.y - box.y)
            seed += 1
        emp = float(np.std(errors[:10_000]))
        assert abs(emp - sigma) / sigma < 0.05

    def test_invalid_noise_rejected(self):
        sc = generate_scenario(GeneratorConfig(), 4)
        with pytest.raises(ConfigError):
            corrupt_detections(sc, 0, NoiseSpec(pos_std=-1.0), seed=0)
