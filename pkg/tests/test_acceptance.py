"""Acceptance gate: one test per criterion, one [PASS] line each.

Run with `pytest tests/test_acceptance.py -v -s`. Criteria 6 and 7 share a
toy model trained on synthetic scenes by a session-scoped fixture (15-25
minutes on a 2-core CPU; the training wall-clock is itself asserted against
the one-hour budget).
"""

import time

import numpy as np
import pytest
import torch

import acceptance_profile as profile
from scenemem.evaluation import (closed_loop_eval, density_sweep, long_horizon_eval,
                                 match_accuracy, spearman_rho)
from scenemem.generator import (ModelConfig, SceneVideoModel, TrainSchedule,
                                build_condition, collate, fm_loss, interpolate,
                                stack_targets, train)
from scenemem.geometry import Intrinsics, PointCloud, Pose, back_project
from scenemem.projection import Trajectory, render_projection
from scenemem.retrieval import RetrievalConfig, retrieve_references, voxel_iou
from scenemem.scenes import (generate_scene, initial_pose, make_clip_trajectory,
                             out_and_back, render_frame, render_gt)
from scenemem.session import (SessionConfig, StepRequest, StepError,
                              create_session, export_session, import_session)
from scenemem.voxel_memory import SpatialMemory


def report(n: int, text: str):
    print(f"\n[PASS] criterion {n}: {text}", flush=True)


# -- shared toy training (criteria 6 and 7) ------------------------------------


@pytest.fixture(scope="session")
def trained_toy():
    start = time.perf_counter()
    model, result = profile.train_acceptance_model()
    wall = time.perf_counter() - start
    return model, result, wall


def closed_loop_psnr(model, seed: int, use_scene: bool, use_refs: bool,
                     pairs: int = 2) -> float:
    """PSNR_C over a palindromic loop of `pairs` out-and-back passes.

    Two passes (4 clips) are used for the ablation ordering: at a single
    pass the unconditioned model has barely drifted and the comparison sits
    inside measurement noise; the published long-horizon protocol takes the
    same route.
    """
    scene = profile.make_eval_scene(seed)
    session = profile.variant_session(model, scene, seed, use_scene, use_refs)
    traj, instruction = profile.out_leg(scene, seed, session.config)
    leg = out_and_back(traj)
    loop = Trajectory(leg.poses * pairs, leg.intrinsics * pairs)
    record = closed_loop_eval(session, loop, instruction)
    return record.psnr_c


# -- criteria -------------------------------------------------------------------


class TestCriterion1RetrievalOracle:
    def test_exhaustive_equivalence_100_instances(self):
        def brute_iou(a, b, d):
            ka = {tuple(int(np.floor(v / d + 1e-9)) for v in p) for p in a.positions}
            kb = {tuple(int(np.floor(v / d + 1e-9)) for v in p) for p in b.positions}
            if not ka and not kb:
                return 0.0
            return len(ka & kb) / len(ka | kb)

        def brute_retrieve(targets, candidates, cfg):
            out = []
            for i in range(0, len(targets), cfg.probe_stride):
                best_s, best_id = 0.0, None
                for cid, cloud in candidates:
                    s = brute_iou(targets[i], cloud, cfg.iou_cube_side)
                    if s > best_s or (best_id is not None and s == best_s
                                      and s > 0 and cid < best_id):
                        best_s, best_id = s, cid
                if best_id is not None and best_s > cfg.epsilon and best_id not in out:
                    out.append(best_id)
                    if len(out) >= cfg.k:
                        break
            return out

        def cloud(rng):
            pts = rng.uniform(-0.5, 0.5, (int(rng.integers(1, 40)), 3)) \
                + rng.uniform(-0.4, 0.4, 3)
            return PointCloud(pts, np.full((len(pts), 3), 0.5))

        start = time.perf_counter()
        for seed in range(100):
            rng = np.random.default_rng(seed)
            targets = [cloud(rng) for _ in range(int(rng.integers(1, 20)))]
            n_cands = int(rng.integers(0, 21))
            candidates = [(int(cid), cloud(rng))
                          for cid in rng.permutation(60)[:n_cands]]
            cfg = RetrievalConfig(k=int(rng.integers(1, 9)),
                                  epsilon=float(rng.uniform(0, 0.3)),
                                  iou_cube_side=0.1)
            assert retrieve_references(targets, candidates, cfg) == \
                brute_retrieve(targets, candidates, cfg), f"instance {seed}"
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"retrieval acceptance took {elapsed:.1f}s"
        report(1, f"retrieval matches the exhaustive oracle on 100 instances "
                  f"({elapsed:.1f}s)")


class TestCriterion2VoxelIoU:
    def test_iou_against_set_brute_force(self):
        def brute(a, b, d):
            ka = {tuple(int(np.floor(v / d + 1e-9)) for v in p) for p in a.positions}
            kb = {tuple(int(np.floor(v / d + 1e-9)) for v in p) for p in b.positions}
            if not ka and not kb:
                return 0.0
            return len(ka & kb) / len(ka | kb)

        rng = np.random.default_rng(0)
        for _ in range(100):
            na, nb = int(rng.integers(0, 120)), int(rng.integers(0, 120))
            a = PointCloud(rng.uniform(-1, 1, (na, 3)), rng.uniform(size=(na, 3)))
            b = PointCloud(rng.uniform(-1, 1, (nb, 3)) + rng.uniform(-0.5, 0.5, 3),
                           rng.uniform(size=(nb, 3)))
            assert voxel_iou(a, b, 0.08) == brute(a, b, 0.08)
            assert abs(voxel_iou(a, b, 0.08) - voxel_iou(b, a, 0.08)) < 1e-9
        x = PointCloud(rng.uniform(-1, 1, (50, 3)), rng.uniform(size=(50, 3)))
        y = PointCloud(rng.uniform(-1, 1, (50, 3)) + 100.0, rng.uniform(size=(50, 3)))
        assert voxel_iou(x, x, 0.05) == 1.0
        assert voxel_iou(x, y, 0.05) == 0.0
        report(2, "voxel IoU equals set-based brute force on 100 pairs; "
                  "self=1, disjoint=0, symmetric")


class TestCriterion3RendererRoundTrip:
    def test_depth_round_trip_and_zero_fill(self):
        intr = Intrinsics.simple(128, 128)
        scene = generate_scene(3)
        pose = initial_pose(scene)
        _, depth, _ = render_gt(scene, pose, intr)
        h, w = depth.shape
        us, vs = np.meshgrid(np.arange(w), np.arange(h))
        pix = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
        world = back_project(pix, depth.ravel().astype(np.float64), pose, intr)
        cloud = PointCloud(world, np.full((len(world), 3), 0.5))

        img = render_projection(cloud, pose, intr, splat_radius=0)
        # 1-pixel erosion around oracle depth discontinuities.
        jump = np.zeros_like(depth, dtype=bool)
        rel_step = np.abs(np.diff(depth, axis=1)) / depth[:, 1:]
        jump[:, 1:] |= rel_step > 0.02
        jump2 = np.zeros_like(depth, dtype=bool)
        rel_step = np.abs(np.diff(depth, axis=0)) / depth[1:, :]
        jump2[1:, :] |= rel_step > 0.02
        band = jump | jump2
        for shift in (-1, 1):
            band |= np.roll(jump | jump2, shift, axis=0)
            band |= np.roll(jump | jump2, shift, axis=1)

        keep = img.validity & ~band
        rel = np.abs(img.depth[keep] - depth[keep]) / depth[keep]
        frac_ok = float((rel <= 1e-4).mean())
        assert frac_ok >= 0.99, f"only {frac_ok:.4f} within 1e-4"
        # Zero-fill: render from a pulled-back pose so invalid pixels exist.
        far_pose = Pose(pose.rotation, pose.translation - pose.rotation[:, 2] * 3.0)
        img2 = render_projection(cloud, far_pose, intr, splat_radius=0)
        assert not img2.validity.all()
        assert np.abs(img2.rgb[~img2.validity]).sum() == 0.0
        assert np.abs(img2.depth[~img2.validity]).sum() == 0.0
        report(3, f"depth round trip within 1e-4 on {100 * frac_ok:.2f}% of "
                  f"non-boundary pixels; invalid pixels exactly zero")


class TestCriterion4FlowMatchingGradients:
    def test_gradient_check_and_interpolation_identities(self):
        gen = torch.Generator().manual_seed(0)
        target = torch.randn((2, 10, 8), generator=gen, dtype=torch.float64)
        x0 = torch.randn((2, 10, 8), generator=gen, dtype=torch.float64)
        s0 = interpolate(target, torch.zeros(2, dtype=torch.float64), x0)
        s1 = interpolate(target, torch.ones(2, dtype=torch.float64), x0)
        assert torch.equal(s0.xt, x0)
        assert torch.equal(s1.xt, target)
        assert torch.equal(s0.ut, target - x0)
        assert torch.equal(s1.ut, s0.ut)

        cfg = ModelConfig(dim=8, heads=2, block_count=2, controlnet_group_size=2,
                          patch_size=8, frame_height=16, frame_width=16,
                          clip_len=2, preceding_len=1, max_refs=1, text_vocab=4,
                          text_len=2, lora_rank=2, seed=0)
        model = SceneVideoModel(cfg).double()
        rng = np.random.default_rng(0)
        tok = cfg.build_tokenizer()
        mk = lambda n: rng.uniform(size=(n, 16, 16, 3)).astype(np.float32)
        cond = build_condition(cfg, tok, dtype=torch.float64,
                               preceding=mk(1), proj_preceding=mk(1),
                               proj_target=mk(2), instruction=1,
                               ref_frames=mk(1), target_frames=mk(2))
        batch = collate([cond], cfg, dtype=torch.float64)
        tgt = stack_targets([cond])
        t = torch.tensor([0.37], dtype=torch.float64)
        x0 = torch.randn(tgt.shape, generator=gen, dtype=torch.float64)

        def loss_fn():
            return fm_loss(model, batch, tgt, t=t, x0=x0)

        loss_fn().backward()
        rng2 = np.random.default_rng(1)
        checked = worst = 0
        for name, p in model.named_parameters():
            if p.grad is None:
                continue
            flat = p.detach().reshape(-1)
            gflat = p.grad.reshape(-1)
            for j in rng2.choice(flat.numel(),
                                 size=min(3, flat.numel()), replace=False):
                h = 1e-6 * max(1.0, abs(flat[j].item()))
                with torch.no_grad():
                    orig = flat[j].item()
                    flat[j] = orig + h
                    lp = loss_fn().item()
                    flat[j] = orig - h
                    lm = loss_fn().item()
                    flat[j] = orig
                fd = (lp - lm) / (2 * h)
                an = gflat[j].item()
                err = abs(fd - an)
                tol = 1e-7 + 1e-4 * max(abs(fd), abs(an))
                assert err <= tol, f"{name}[{j}]: fd={fd:.3e} analytic={an:.3e}"
                if max(abs(fd), abs(an)) > 1e-3:  # resolvable above FD noise
                    worst = max(worst, err / max(abs(fd), abs(an)))
                checked += 1
        assert checked > 100
        report(4, f"analytic gradients match central differences on {checked} "
                  f"probes (worst resolvable rel {worst:.2e}); "
                  f"interpolation identities exact")


class TestCriterion5ZeroInitAndPartition:
    def test_zero_init_noop_and_freeze_contracts(self):
        cfg = ModelConfig(dim=32, heads=4, block_count=4, controlnet_group_size=2,
                          patch_size=16, frame_height=32, frame_width=32,
                          clip_len=2, preceding_len=2, max_refs=2, text_vocab=16,
                          text_len=2, lora_rank=4, seed=1)
        model = SceneVideoModel(cfg).double()
        rng = np.random.default_rng(2)
        tok = cfg.build_tokenizer()
        mk = lambda n: rng.uniform(size=(n, 32, 32, 3)).astype(np.float32)
        common = dict(preceding=mk(2), instruction=3, ref_frames=mk(1),
                      target_frames=mk(2))
        with_scene = build_condition(cfg, tok, proj_preceding=mk(2),
                                     proj_target=mk(2), dtype=torch.float64,
                                     **common)
        without = build_condition(cfg, tok, proj_preceding=None, proj_target=None,
                                  use_scene=False, dtype=torch.float64, **common)
        gen = torch.Generator().manual_seed(3)
        x_t = torch.randn((1, with_scene.target_pos[0].shape[0], cfg.dim),
                          generator=gen, dtype=torch.float64)
        va = model(collate([with_scene], cfg, dtype=torch.float64), x_t,
                   torch.tensor([0.4], dtype=torch.float64))
        vb = model(collate([without], cfg, dtype=torch.float64), x_t,
                   torch.tensor([0.4], dtype=torch.float64))
        assert torch.equal(va, vb), "zero-init ControlNet is not a no-op"

        # Freeze contracts over the two training stages.
        model32 = SceneVideoModel(cfg)
        groups = model32.parameter_groups()
        names = {g: {n for n, _ in ps} for g, ps in groups.items()}
        assert not names["controlnet"] & names["lora"]
        assert not names["main"] & (names["controlnet"] | names["lora"])
        all_names = {n for n, _ in model32.named_parameters()}
        assert names["main"] | names["controlnet"] | names["lora"] == all_names

        samples = profile.generate_training_set(
            3, profile.DATASET_PARAMS.__class__(
                resolution=32, n_target=2, n_preceding=2, n_candidates=3,
                memory_d=0.03,
                retrieval=RetrievalConfig(k=2, epsilon=0.01, iou_cube_side=0.06)),
            seed=5)
        before = {g: model32.group_checksum(g) for g in names}
        train(model32, samples, TrainSchedule(stage0_steps=0, stage1_steps=2,
                                              stage2_steps=0, batch_size=2))
        assert model32.group_checksum("main") == before["main"]
        assert model32.group_checksum("lora") == before["lora"]
        assert model32.group_checksum("controlnet") != before["controlnet"]
        cn_mid = model32.group_checksum("controlnet")
        train(model32, samples, TrainSchedule(stage0_steps=0, stage1_steps=0,
                                              stage2_steps=2, batch_size=2))
        assert model32.group_checksum("controlnet") == cn_mid
        assert model32.group_checksum("main") == before["main"]
        assert model32.group_checksum("lora") != before["lora"]
        report(5, "zero-init projector forward is bit-exactly unconditioned; "
                  "stage freezes and parameter partition hold")


@pytest.mark.acceptance_trained
class TestCriterion6AblationOrdering:
    def test_both_gt_scene_gt_none(self, trained_toy):
        model, result, wall = trained_toy
        assert wall < 3600.0, f"toy training took {wall / 60:.1f} min (> 1 h)"
        n_seeds = 20
        rows = []
        for seed in range(n_seeds):
            rows.append({
                "both": closed_loop_psnr(model, seed, True, True),
                "scene": closed_loop_psnr(model, seed, True, False),
                "none": closed_loop_psnr(model, seed, False, False),
            })
        ordered = sum(r["both"] > r["scene"] > r["none"] for r in rows)
        gap = float(np.mean([r["both"] - r["none"] for r in rows]))
        means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
        print(f"\n  ablation means: both={means['both']:.2f} dB "
              f"scene={means['scene']:.2f} dB none={means['none']:.2f} dB; "
              f"ordered on {ordered}/{n_seeds} seeds; gap {gap:.2f} dB", flush=True)
        assert ordered >= 0.8 * n_seeds, f"ordering held on only {ordered}/{n_seeds}"
        assert gap >= 2.0, f"both-vs-none gap {gap:.2f} dB < 2 dB"
        report(6, f"both > scene-only > none on {ordered}/{n_seeds} seeds; "
                  f"mean gap {gap:.2f} dB (training {wall / 60:.1f} min)")


@pytest.mark.acceptance_trained
class TestCriterion7LongHorizonTrend:
    def test_memory_degrades_less(self, trained_toy):
        model, _, _ = trained_toy
        n_seeds = 20
        wins = 0
        degs = {"memory": [], "none": []}
        for seed in range(n_seeds):
            scene = profile.make_eval_scene(seed)
            per_variant = {}
            for name, (us, ur) in {"memory": (True, True),
                                   "none": (False, False)}.items():
                session = profile.variant_session(model, scene, seed, us, ur)
                traj, instruction = profile.out_leg(scene, seed, session.config)
                records = long_horizon_eval(session, traj, n_clips=6,
                                            instruction=instruction)
                per_variant[name] = records[0].psnr_c - records[-1].psnr_c
            degs["memory"].append(per_variant["memory"])
            degs["none"].append(per_variant["none"])
            wins += per_variant["memory"] < per_variant["none"]
        print(f"\n  degradation 2->6 clips: memory {np.mean(degs['memory']):.2f} dB, "
              f"no-memory {np.mean(degs['none']):.2f} dB; memory smaller on "
              f"{wins}/{n_seeds} seeds", flush=True)
        assert wins >= 0.8 * n_seeds, f"memory degraded less on only {wins}/{n_seeds}"
        report(7, f"memory-conditioned degradation smaller on {wins}/{n_seeds} seeds")


class TestCriterion8DensityTrend:
    def test_psnr_non_increasing_in_cube_side(self):
        base = 0.01
        d_values = [base, 3 * base, 5 * base, 7 * base]
        intr = Intrinsics.simple(128, 128)
        curves = []
        for seed in range(20):
            scene = generate_scene(200 + seed)
            mem = SpatialMemory(cube_side=0.005)
            views = []
            traj = make_clip_trajectory(scene, "pan_left", 3, intr,
                                        np.random.default_rng(seed))
            for pose, _ in traj:
                frame = render_frame(scene, pose, intr)
                mem.fuse_frame(frame)
                views.append((pose, intr, frame.rgb))
            rows = density_sweep(mem.snapshot(), d_values, views)
            curve = [r["psnr_mean"] for r in rows]
            curves.append(curve)
            assert spearman_rho(d_values, curve) < 0, f"scene {seed}: {curve}"
        mean_curve = np.mean(curves, axis=0)
        assert all(a >= b for a, b in zip(mean_curve, mean_curve[1:])), mean_curve
        report(8, f"mean PSNR over 20 scenes non-increasing across "
                  f"{{1,3,5,7}}x base: {np.round(mean_curve, 2).tolist()}")


class TestCriterion9MatchAccuracy:
    def test_self_shift_and_radius_properties(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(size=(128, 128, 3))
        assert match_accuracy(img, img) == 1.0
        scores = [match_accuracy(img, np.roll(img, k, axis=1), search_radius=24)
                  for k in (0, 4, 8, 16, 24, 25, 32)]
        assert scores[0] == 1.0
        assert all(a >= b for a, b in zip(scores, scores[1:])), scores
        assert scores[-1] == 0.0 and scores[-2] == 0.0
        report(9, f"self-match 1.0; non-increasing under shift {scores[:5]}; "
                  f"0.0 beyond the search radius")


class TestCriterion10SessionSafety:
    def test_failed_step_export_import_and_oracle_cap(self):
        cfg = SessionConfig(clip_len=5, preceding_len=2, memory_d=0.03,
                            resolution=48, seed=0,
                            retrieval=RetrievalConfig(k=3, epsilon=0.01,
                                                      iou_cube_side=0.06))
        scene = generate_scene(42)
        session = create_session(scene, cfg)

        before = session.state_checksum()
        bad = make_clip_trajectory(scene, "pan_left", cfg.clip_len + 2,
                                   cfg.intrinsics, np.random.default_rng(0))
        with pytest.raises(StepError):
            session.step(StepRequest(trajectory=bad))
        assert session.state_checksum() == before

        class Exploder:
            def generate(self, req):
                raise RuntimeError("boom")

        broken = create_session(scene, cfg, generator=Exploder())
        before2 = broken.state_checksum()
        good = make_clip_trajectory(scene, "pan_left", cfg.clip_len,
                                    cfg.intrinsics, np.random.default_rng(0))
        with pytest.raises(StepError):
            broken.step(StepRequest(trajectory=good))
        assert broken.state_checksum() == before2

        blob1 = export_session(session)
        blob2 = export_session(import_session(blob1))
        assert blob1 == blob2

        record = closed_loop_eval(session, out_and_back(good), instruction=1)
        assert record.psnr_c == 99.0
        report(10, "failed steps leave the checksum unchanged; bundles re-export "
                   "byte-identically; oracle closed loop hits the PSNR cap")
