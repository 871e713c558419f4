import numpy as np
import pytest

from scenemem.frames import Frame
from scenemem.geometry import Pose
from scenemem.projection import Trajectory
from scenemem.retrieval import RetrievalConfig
from scenemem.scenes import (generate_scene, initial_pose, make_clip_trajectory,
                             out_and_back, render_frame, render_gt)
from scenemem.session import (CorruptBundleError, OracleClipGenerator, SessionConfig,
                              StepRequest, StepError, create_session, export_session,
                              import_session)
from scenemem.voxel_memory import BoxRegion, EditOp

CFG = SessionConfig(clip_len=5, preceding_len=2, memory_d=0.03, resolution=48,
                    seed=0, retrieval=RetrievalConfig(k=3, epsilon=0.01,
                                                      iou_cube_side=0.03))


def make_session(seed=0, cfg=CFG):
    scene = generate_scene(seed)
    return create_session(scene, cfg), scene


def clip_request(scene, kind="pan_left", seed=0, cfg=CFG, start=None):
    traj = make_clip_trajectory(scene, kind, cfg.clip_len, cfg.intrinsics,
                                np.random.default_rng(seed), start=start)
    return StepRequest(trajectory=traj, instruction_id=2)


class TestCreateSession:
    def test_scene_init_populates_memory(self):
        session, _ = make_session()
        assert session.memory.cell_count > 0
        assert len(session.archive) == 1
        assert session.clip_index == 0

    def test_image_init_requires_depth(self):
        rgb = np.full((48, 48, 3), 0.5, np.float32)
        frame = Frame(rgb=rgb, pose=Pose.identity(), intrinsics=CFG.intrinsics)
        with pytest.raises(ValueError):
            create_session(frame, CFG, generator=OracleClipGenerator(generate_scene(0)))

    def test_image_init_with_depth(self):
        scene = generate_scene(5)
        frame = render_frame(scene, initial_pose(scene), CFG.intrinsics)
        session = create_session(frame, CFG, generator=OracleClipGenerator(scene))
        assert session.memory.cell_count > 0

    def test_fully_masked_init_empty_memory(self, caplog):
        scene = generate_scene(6)
        rgb, depth, _ = render_gt(scene, initial_pose(scene), CFG.intrinsics)
        frame = Frame(rgb=rgb, pose=initial_pose(scene), intrinsics=CFG.intrinsics,
                      depth=depth, dynamic_mask=np.ones(depth.shape, bool))
        with caplog.at_level("WARNING"):
            session = create_session(frame, CFG, generator=OracleClipGenerator(scene))
        assert session.memory.cell_count == 0
        assert any("no static content" in r.message for r in caplog.records)

    def test_deterministic_checksum(self):
        a, _ = make_session(seed=7)
        b, _ = make_session(seed=7)
        assert a.state_checksum() == b.state_checksum()

    def test_bad_init_type(self):
        with pytest.raises(TypeError):
            create_session(42, CFG)


class TestStep:
    def test_oracle_step_matches_gt(self):
        session, scene = make_session(seed=1)
        req = clip_request(scene, seed=1)
        frames = session.step(req)
        assert len(frames) == CFG.clip_len
        assert session.clip_index == 1
        assert len(session.archive) == 1 + CFG.clip_len
        for f, (pose, intr) in zip(frames, req.trajectory):
            gt, _, _ = render_gt(scene, pose, intr, 0.0)
            np.testing.assert_array_equal(f.rgb, gt)

    def test_memory_monotone_without_edits(self):
        session, scene = make_session(seed=2)
        counts = [session.memory.cell_count]
        start = None
        for k in range(3):
            req = clip_request(scene, kind="orbit_left", seed=2 + k, start=start)
            session.step(req)
            counts.append(session.memory.cell_count)
            start = session.archive[-1].pose
        assert all(b >= a for a, b in zip(counts, counts[1:]))

    def test_wrong_clip_length_rejected_cleanly(self):
        session, scene = make_session(seed=3)
        before = session.state_checksum()
        traj = make_clip_trajectory(scene, "pan_left", CFG.clip_len + 1,
                                    CFG.intrinsics, np.random.default_rng(0))
        with pytest.raises(StepError):
            session.step(StepRequest(trajectory=traj))
        assert session.state_checksum() == before

    def test_pose_gap_rejected(self):
        session, scene = make_session(seed=4)
        far = Pose(np.eye(3), session.archive[0].pose.translation + [5.0, 0, 0])
        traj = Trajectory.from_poses([far] * CFG.clip_len, CFG.intrinsics)
        with pytest.raises(StepError):
            session.step(StepRequest(trajectory=traj))

    def test_failing_generator_leaves_state_unchanged(self):
        class ExplodingGenerator:
            def generate(self, req):
                raise RuntimeError("synthetic failure")

        scene = generate_scene(8)
        session = create_session(scene, CFG, generator=ExplodingGenerator())
        before = session.state_checksum()
        with pytest.raises(StepError):
            session.step(clip_request(scene, seed=8))
        assert session.state_checksum() == before
        assert session.clip_index == 0

    def test_nan_generator_leaves_state_unchanged(self):
        class NaNGenerator:
            def generate(self, req):
                n = len(req.trajectory)
                out = np.full((n, 48, 48, 3), np.nan, np.float32)
                return out

        scene = generate_scene(9)
        session = create_session(scene, CFG, generator=NaNGenerator())
        before = session.state_checksum()
        with pytest.raises(StepError):
            session.step(clip_request(scene, seed=9))
        assert session.state_checksum() == before

    def test_deterministic_sessions(self):
        a, scene = make_session(seed=10)
        b, _ = make_session(seed=10)
        for k in range(2):
            req = clip_request(scene, kind="dolly_in", seed=20 + k,
                               start=a.archive[-1].pose if k else None)
            a.step(req)
            b.step(req)
        assert a.state_checksum() == b.state_checksum()

    def test_delete_edit_empties_projection_region(self):
        from scenemem.projection import projection_to_view_cloud

        cfg = SessionConfig(clip_len=3, preceding_len=2, memory_d=0.02,
                            resolution=64, seed=0,
                            retrieval=RetrievalConfig(k=2, epsilon=0.01,
                                                      iou_cube_side=0.02))
        scene = generate_scene(11)

        class SpyGenerator(OracleClipGenerator):
            def generate(self, req):
                self.last_request = req
                return super().generate(req)

        gen = SpyGenerator(scene)
        session = create_session(scene, cfg, generator=gen)
        lo = scene.statics[0].center - 1.0
        hi = scene.statics[0].center + 1.0
        edit = EditOp(kind="delete-region", region=BoxRegion(lo, hi))
        pose = session.archive[0].pose
        traj = Trajectory.from_poses([pose] * cfg.clip_len, cfg.intrinsics)

        # Render-before: without the edit the region projects valid pixels.
        # A 0.1 m margin absorbs splat-quantization offsets at the boundary
        # (radius-1 splats shift back-projections by ~5 cm at 2 m).
        session.step(StepRequest(trajectory=traj))
        def points_in_region(req):
            total = 0
            for img, (p, intr) in zip(req.projection_video["target"].frames,
                                      req.trajectory):
                cloud = projection_to_view_cloud(img, p, intr)
                total += int(np.all((cloud.positions >= lo + 0.1) &
                                    (cloud.positions <= hi - 0.1), axis=1).sum())
            return total
        assert points_in_region(gen.last_request) > 0

        # Render-after: the edited step's conditioning excludes the region.
        session.step(StepRequest(trajectory=traj, edits=(edit,)))
        assert points_in_region(gen.last_request) == 0

    def test_clip_frames_accessor(self):
        session, scene = make_session(seed=12)
        with pytest.raises(IndexError):
            session.clip_frames(0)
        frames = session.step(clip_request(scene, seed=12))
        got = session.clip_frames(0)
        assert len(got) == CFG.clip_len
        np.testing.assert_array_equal(got[0].rgb, frames[0].rgb)


class TestBundles:
    def test_export_import_export_byte_identical(self):
        session, scene = make_session(seed=13)
        session.step(clip_request(scene, seed=13))
        blob1 = export_session(session)
        restored = import_session(blob1)
        blob2 = export_session(restored)
        assert blob1 == blob2
        assert restored.state_checksum() == session.state_checksum()

    def test_restored_session_continues_identically(self):
        a, scene = make_session(seed=14)
        a.step(clip_request(scene, seed=14))
        b = import_session(export_session(a))
        req = clip_request(scene, kind="pan_right", seed=15,
                           start=a.archive[-1].pose)
        a.step(req)
        b.step(req)
        assert a.state_checksum() == b.state_checksum()

    def test_truncated_bundle_rejected(self):
        session, scene = make_session(seed=16)
        blob = export_session(session)
        with pytest.raises(CorruptBundleError):
            import_session(blob[: len(blob) // 2])
        with pytest.raises(CorruptBundleError):
            import_session(b"XXXX" + blob[4:])

    def test_closed_loop_composition_matches_harness(self):
        # Manually stepping a palindromic pair and scoring by hand must equal
        # the closed-loop harness on an identically-created session.
        from scenemem.evaluation import closed_loop_eval, score_frames
        from scenemem.scenes import out_and_back

        manual, scene = make_session(seed=21)
        out = make_clip_trajectory(scene, "orbit_right", CFG.clip_len,
                                   CFG.intrinsics, np.random.default_rng(21))
        manual.step(StepRequest(trajectory=out, instruction_id=1))
        manual.step(StepRequest(trajectory=out.reversed(), instruction_id=1))
        by_hand = score_frames(manual.archive[0].rgb, manual.archive[-1].rgb, 2)

        fresh, _ = make_session(seed=21)
        record = closed_loop_eval(fresh, out_and_back(out), instruction=1)
        assert record.psnr_c == by_hand.psnr_c
        assert record.ssim_c == by_hand.ssim_c
        assert record.match_acc == by_hand.match_acc

    def test_bundle_size_grows_with_clips(self):
        session, scene = make_session(seed=17)
        sizes = [len(export_session(session))]
        start = None
        for k in range(3):
            session.step(clip_request(scene, kind="strafe_left", seed=30 + k,
                                      start=start))
            start = session.archive[-1].pose
            sizes.append(len(export_session(session)))
        assert all(b > a for a, b in zip(sizes, sizes[1:]))
