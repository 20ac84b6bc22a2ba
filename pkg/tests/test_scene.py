import math

import numpy as np
import pytest

from rcfuse.geometry import pose_matrix, relative_pose, transform_points_2d
from rcfuse.scene import (
    Box3D,
    ConfigurationError,
    EgoPose,
    RadarSimConfig,
    SceneGenConfig,
    SceneSequence,
    accumulate_radar,
    default_camera,
    generate_sequence,
    render_image,
    simulate_radar,
)


def small_cfg(**kw):
    defaults = dict(n_frames=5, objects_min=3, objects_max=3, ego_speed=1.0)
    defaults.update(kw)
    return SceneGenConfig(**defaults)


class TestGenerateSequence:
    def test_empty_scene(self):
        cfg = small_cfg(objects_min=0, objects_max=0)
        seq = generate_sequence(0, cfg)
        for frame in seq.frames:
            assert frame.gt_boxes == []
            # clutter-only sweep: all v_comp near zero (noise only)
            if len(frame.radar):
                assert np.abs(frame.radar.points[:, 3]).max() < 1.0

    def test_determinism(self):
        cfg = small_cfg()
        a = generate_sequence(7, cfg)
        b = generate_sequence(7, cfg)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.radar.points, fb.radar.points)
            np.testing.assert_array_equal(fa.cameras[0].image, fb.cameras[0].image)
            for ba, bb in zip(fa.gt_boxes, fb.gt_boxes):
                np.testing.assert_array_equal(ba.center, bb.center)

    def test_motion_model_replay(self):
        # oracle: reconstruct world positions from ego poses and ego-frame
        # centers, then check displacement against stored velocity * dt
        cfg = small_cfg(
            n_frames=10, objects_min=5, objects_max=5, speed_max=3.0,
            process_noise=0.01, bev_extent=(-60.0, 60.0, -60.0, 60.0),
            ego_speed=0.5,
        )
        seq = generate_sequence(7, cfg)
        for k in range(len(seq.frames) - 1):
            fa, fb = seq.frames[k], seq.frames[k + 1]
            ma, mb = fa.ego_pose.matrix_2d(), fb.ego_pose.matrix_2d()
            for ba, bb in zip(fa.gt_boxes, fb.gt_boxes):
                wa = transform_points_2d(ma, ba.center[None, :2])[0]
                wb = transform_points_2d(mb, bb.center[None, :2])[0]
                vel_world = mb[:2, :2] @ bb.velocity
                # bb.velocity is the post-noise velocity used for this step
                err = np.linalg.norm((wb - wa) - vel_world * cfg.dt)
                assert err < 5 * cfg.process_noise * cfg.dt + 1e-3

    def test_boxes_inside_extent(self):
        cfg = small_cfg(n_frames=20, objects_min=5, objects_max=5)
        seq = generate_sequence(3, cfg)
        x0, x1, y0, y1 = cfg.bev_extent
        for frame in seq.frames:
            for b in frame.gt_boxes:
                assert x0 <= b.center[0] <= x1
                assert y0 <= b.center[1] <= y1

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            generate_sequence(0, small_cfg(n_frames=0))
        with pytest.raises(ConfigurationError):
            generate_sequence(0, small_cfg(bev_extent=(1.0, -1.0, -1.0, 1.0)))
        with pytest.raises(ConfigurationError):
            generate_sequence(0, small_cfg(num_classes=0, class_names=()))


class TestSimulateRadar:
    def _cfg(self, **kw):
        radar = RadarSimConfig(points_per_object=20.0, clutter_rate=0.0,
                               pos_noise=0.0, vel_noise=0.0, **kw)
        return small_cfg(ego_speed=0.0, radar=radar)

    def test_static_box_zero_vcomp(self):
        cfg = self._cfg()
        box = Box3D(center=[10.0, 0.0, 1.0], size=[4, 2, 2], yaw=0.0,
                    velocity=[0.0, 0.0], class_id=0)
        ego = EgoPose(translation=[0, 0, 0], yaw=0.0, timestamp=0.0)
        sweep = simulate_radar([box], ego, cfg, 0)
        assert len(sweep) > 0
        np.testing.assert_allclose(sweep.points[:, 3], 0.0, atol=1e-9)

    def test_receding_box_radial_velocity(self):
        # oracle: analytic radial projection; box on +x axis receding at 5 m/s
        cfg = self._cfg()
        box = Box3D(center=[15.0, 0.0, 1.0], size=[4, 2, 2], yaw=0.0,
                    velocity=[5.0, 0.0], class_id=0)
        ego = EgoPose(translation=[0, 0, 0], yaw=0.0, timestamp=0.0)
        sweep = simulate_radar([box], ego, cfg, 1)
        pts = sweep.points
        # expected: 5 * x / hypot(x, y) per point
        expected = 5.0 * pts[:, 0] / np.hypot(pts[:, 0], pts[:, 1])
        np.testing.assert_allclose(pts[:, 3], expected, atol=1e-9)
        assert np.all(pts[:, 3] > 4.5)  # narrow box near the axis

    def test_clutter_only(self):
        cfg = small_cfg(radar=RadarSimConfig(clutter_rate=20.0))
        ego = EgoPose(translation=[0, 0, 0], yaw=0.0, timestamp=0.0)
        sizes = [
            len(simulate_radar([], ego, cfg, seed)) for seed in range(20)
        ]
        assert 10 < np.mean(sizes) < 30  # Poisson(20) sample mean
        sweep = simulate_radar([], ego, cfg, 0)
        x0, x1, y0, y1 = cfg.bev_extent
        assert np.all((sweep.points[:, 0] >= x0) & (sweep.points[:, 0] <= x1))
        assert np.all((sweep.points[:, 1] >= y0) & (sweep.points[:, 1] <= y1))


class TestRenderImage:
    def test_background_only(self):
        cfg = small_cfg()
        cam = default_camera(cfg.camera)
        img = render_image([], cam, cfg)
        assert img.shape == (cfg.camera.image_height, cfg.camera.image_width, 3)
        assert 0.0 <= img.min() and img.max() <= 1.0

    def test_center_projection(self):
        # oracle: direct pinhole projection of the box center
        cfg = small_cfg()
        cam = default_camera(cfg.camera)
        box = Box3D(center=[12.0, 1.0, 1.0], size=[2, 2, 2], yaw=0.3,
                    velocity=[0, 0], class_id=0)
        img = render_image([box], cam, cfg)
        bg = render_image([], cam, cfg)
        changed = np.argwhere(np.any(img != bg, axis=2))
        assert changed.size > 0
        centroid_vu = changed.mean(axis=0)  # (v, u)
        p_cam = cam.extrinsics[:3, :3] @ box.center + cam.extrinsics[:3, 3]
        uv = cam.intrinsics @ p_cam
        uv = uv[:2] / uv[2]
        assert abs(centroid_vu[1] - uv[0]) < 2.0
        assert abs(centroid_vu[0] - uv[1]) < 2.0

    def test_painters_order(self):
        cfg = small_cfg()
        cam = default_camera(cfg.camera)
        near = Box3D(center=[8.0, 0.0, 1.0], size=[2, 2, 2], yaw=0.0,
                     velocity=[0, 0], class_id=0)  # class 0 renders red-ish
        far = Box3D(center=[16.0, 0.0, 1.0], size=[2, 2, 2], yaw=0.0,
                    velocity=[0, 0], class_id=1)
        img = render_image([far, near], cam, cfg)
        # sample the image at the projection of the near box center
        p_cam = cam.extrinsics[:3, :3] @ near.center + cam.extrinsics[:3, 3]
        uv = cam.intrinsics @ p_cam
        u, v = int(uv[0] / uv[2]), int(uv[1] / uv[2])
        pixel = img[v, u]
        assert pixel[0] > pixel[2]  # red channel wins: near box on top

    def test_behind_camera_skipped(self):
        cfg = small_cfg()
        cam = default_camera(cfg.camera)
        behind = Box3D(center=[-10.0, 0.0, 1.0], size=[2, 2, 2], yaw=0.0,
                       velocity=[0, 0], class_id=0)
        np.testing.assert_array_equal(render_image([behind], cam, cfg),
                                      render_image([], cam, cfg))


class TestAccumulateRadar:
    def _two_frame_seq(self, pts0, pts1, pose0, pose1, dt=0.5):
        from rcfuse.scene import CameraFrame, RadarSweep, SceneFrame

        frames = []
        for k, (pts, pose) in enumerate([(pts0, pose0), (pts1, pose1)]):
            ego = EgoPose(translation=[pose[0], pose[1], 0.0], yaw=pose[2],
                          timestamp=k * dt)
            frames.append(
                SceneFrame(frame_id=k, ego_pose=ego, cameras=[],
                           radar=RadarSweep(np.array(pts, dtype=np.float64)),
                           gt_boxes=[])
            )
        return SceneSequence(frames=frames, config_hash="x")

    def test_k_zero_identity(self):
        seq = self._two_frame_seq([[1, 2, 0, 0, 0]], [[3, 4, 0, 0, 0]],
                                  (0, 0, 0), (1, 0, 0))
        out = accumulate_radar(seq, 1, 0)
        np.testing.assert_array_equal(out.points, seq.frames[1].radar.points)

    def test_static_ego_stacking(self):
        cfg = small_cfg(ego_speed=0.0, n_frames=8, objects_min=0,
                        objects_max=0)
        seq = generate_sequence(1, cfg)
        out = accumulate_radar(seq, 7, 6)
        total = sum(len(seq.frames[j].radar) for j in range(1, 8))
        assert len(out) == total
        offsets = np.unique(np.round(out.points[:, 4], 6))
        expected = np.round(-cfg.dt * np.arange(7)[::-1], 6)
        np.testing.assert_allclose(sorted(offsets), sorted(expected))

    def test_ego_translation_oracle(self):
        # oracle: explicit SE(2) compose-and-apply
        seq = self._two_frame_seq([[10, 0, 0.5, 0, 0]], [[0, 0, 0, 0, 0]],
                                  (0, 0, 0), (2, 0, 0))
        out = accumulate_radar(seq, 1, 1)
        prev = out.points[1]  # current sweep first, then history
        assert prev[0] == pytest.approx(8.0)
        assert prev[1] == pytest.approx(0.0)
        assert prev[2] == pytest.approx(0.5)  # z untouched
        assert prev[4] == pytest.approx(-0.5)  # t_offset

    def test_start_of_sequence(self):
        seq = self._two_frame_seq([[1, 1, 0, 0, 0]], [[2, 2, 0, 0, 0]],
                                  (0, 0, 0), (0, 0, 0))
        out = accumulate_radar(seq, 0, 6)
        assert len(out) == 1  # only the current frame exists


class TestPoseComposition:
    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            xa, xb, xc = (pose_matrix(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
                          for _ in range(3))
            pts = rng.uniform(-10, 10, (5, 2))
            ab = relative_pose(xa, xb)
            bc = relative_pose(xb, xc)
            ac = relative_pose(xa, xc)
            direct = transform_points_2d(ac, pts)
            chained = transform_points_2d(bc, transform_points_2d(ab, pts))
            np.testing.assert_allclose(direct, chained, atol=1e-9)
