"""Metrics and closed-loop harnesses for the memory benchmark.

PSNR and SSIM are standard; Match Accuracy is a dense-correspondence stand-in
built on normalized cross-correlation patch matching (the score counts
high-confidence matches of the first frame into the last, normalized by the
first frame's self-matches). Harnesses drive a session along out-and-back
trajectories and score the final frame against the initial image.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PointCloud
from .projection import Trajectory, render_projection
from .voxel_memory import downsample

PSNR_CAP_DB = 99.0


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, cap: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images, capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return cap
    return float(min(cap, -10.0 * np.log10(mse)))


def _windows(img: np.ndarray, w: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, (w, w))
    return view.reshape(*view.shape[:2], w * w)


def ssim(a, b, window: int = 8, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Mean local SSIM over stride-1 valid windows; color channels averaged."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError("image smaller than the SSIM window")
    scores = []
    for c in range(a.shape[2]):
        wa = _windows(a[..., c], window)
        wb = _windows(b[..., c], window)
        mu_a = wa.mean(axis=-1)
        mu_b = wb.mean(axis=-1)
        var_a = wa.var(axis=-1)
        var_b = wb.var(axis=-1)
        cov = (wa * wb).mean(axis=-1) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2) /
             ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
        scores.append(s.mean())
    return float(np.mean(scores))


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def match_accuracy(first, last, patch_size: int = 16, search_radius: int = 24,
                   tau: float = 0.8) -> float:
    """NCC patch-matching consistency between the first and last frames.

    A grid of non-overlapping patches from `first` is searched in `last`
    within +-search_radius pixels; matches with peak NCC >= tau count. The
    result is normalized by the self-match count (first vs first). Images
    with no confident self-matches (e.g. featureless) return 1.0 vacuously.
    """
    g_first, g_last = _check_pair(_to_gray(first), _to_gray(last))

    def count_matches(src: np.ndarray, dst: np.ndarray) -> int:
        h, w = src.shape
        p = patch_size
        win = np.lib.stride_tricks.sliding_window_view(dst, (p, p))
        matched = 0
        for r0 in range(0, h - p + 1, p):
            for c0 in range(0, w - p + 1, p):
                patch = src[r0:r0 + p, c0:c0 + p]
                pc = patch - patch.mean()
                p_norm = np.sqrt((pc * pc).sum())
                if p_norm < 1e-9:
                    continue  # flat patch: no confident correlation possible
                r_lo = max(0, r0 - search_radius)
                r_hi = min(h - p, r0 + search_radius)
                c_lo = max(0, c0 - search_radius)
                c_hi = min(w - p, c0 + search_radius)
                cand = win[r_lo:r_hi + 1, c_lo:c_hi + 1]
                cc = cand - cand.mean(axis=(-2, -1), keepdims=True)
                num = np.einsum("yxij,ij->yx", cc, pc)
                den = np.sqrt((cc * cc).sum(axis=(-2, -1))) * p_norm
                ncc = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
                if ncc.max(initial=-1.0) >= tau:
                    matched += 1
        return matched

    self_matches = count_matches(g_first, g_first)
    if self_matches == 0:
        return 1.0
    return count_matches(g_first, g_last) / self_matches


@dataclass
class MetricsRecord:
    psnr_c: float
    ssim_c: float
    match_acc: float
    clip_count: int
    config: dict = field(default_factory=dict)
    perceptual: float | None = None  # reserved for a pluggable deep metric

    def __post_init__(self):
        if not (-1.0 <= self.ssim_c <= 1.0):
            raise ValueError("ssim out of [-1, 1]")
        if not (0.0 <= self.match_acc <= 1.0 + 1e-12):
            raise ValueError("match accuracy out of [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _is_palindromic(traj: Trajectory, tol: float = 1e-9) -> bool:
    n = len(traj)
    return all(traj.poses[i].almost_equal(traj.poses[n - 1 - i], tol)
               for i in range(n // 2 + 1))


def score_frames(initial: np.ndarray, final: np.ndarray, clip_count: int,
                 config: dict | None = None,
                 perceptual_metric=None) -> MetricsRecord:
    """Score a closed loop; `perceptual_metric(a, b) -> float` is an optional
    plug-in slot (deep perceptual metrics are intentionally not bundled)."""
    return MetricsRecord(psnr_c=psnr(initial, final),
                         ssim_c=ssim(initial, final),
                         match_acc=match_accuracy(initial, final),
                         clip_count=clip_count,
                         config=config or {},
                         perceptual=None if perceptual_metric is None
                         else float(perceptual_metric(initial, final)))


def closed_loop_eval(session, trajectory: Trajectory,
                     instruction: int = 0) -> MetricsRecord:
    """Run the generate-update loop along a palindromic trajectory and score
    the final generated frame against the session's initial image."""
    from .session import StepRequest  # local import to avoid a cycle

    if not _is_palindromic(trajectory):
        raise ValueError("closed-loop evaluation needs a palindromic trajectory")
    clip_len = session.config.clip_len
    if len(trajectory) % clip_len:
        raise ValueError("trajectory length must be a multiple of the clip length")
    n_clips = len(trajectory) // clip_len
    for k in range(n_clips):
        poses = trajectory.poses[k * clip_len:(k + 1) * clip_len]
        intr = trajectory.intrinsics[k * clip_len:(k + 1) * clip_len]
        session.step(StepRequest(trajectory=Trajectory(tuple(poses), tuple(intr)),
                                 instruction_id=instruction))
    initial = session.archive[0].rgb
    final = session.archive[-1].rgb
    return score_frames(initial, final, n_clips, session.config.to_dict())


def long_horizon_eval(session, out_trajectory: Trajectory, n_clips: int,
                      instruction: int = 0) -> list[MetricsRecord]:
    """Repeated out-and-back pairs; one closed-loop record per pair.

    `out_trajectory` is a single clip; its reverse forms the second clip of
    each pair, so the camera returns to the start after every pair.
    """
    from .session import StepRequest

    if n_clips % 2:
        raise ValueError("n_clips must be even (out-and-back pairs)")
    if len(out_trajectory) != session.config.clip_len:
        raise ValueError("out trajectory must be exactly one clip long")
    records = []
    back = out_trajectory.reversed()
    initial = session.archive[0].rgb
    for pair in range(n_clips // 2):
        session.step(StepRequest(trajectory=out_trajectory, instruction_id=instruction))
        session.step(StepRequest(trajectory=back, instruction_id=instruction))
        records.append(score_frames(initial, session.archive[-1].rgb,
                                    2 * (pair + 1), session.config.to_dict()))
    return records


def density_sweep(cloud: PointCloud, d_values, gt_views,
                  splat_radius: int = 1) -> list[dict]:
    """Downsample at each cube side, re-render at the ground-truth views and
    score PSNR against the ground-truth images.

    gt_views: iterable of (pose, intrinsics, rgb) triples.
    """
    d_values = list(d_values)
    if any(d <= 0 for d in d_values) or sorted(d_values) != d_values:
        raise ValueError("cube sides must be positive and ascending")
    rows = []
    for d in d_values:
        coarse = downsample(cloud, d)
        scores = [psnr(render_projection(coarse, pose, intr, splat_radius).rgb, rgb)
                  for pose, intr, rgb in gt_views]
        rows.append({"d": d, "cell_count": len(coarse),
                     "psnr_mean": float(np.mean(scores)),
                     "psnr_per_view": [float(s) for s in scores]})
    return rows


def spearman_rho(xs, ys) -> float:
    """Spearman rank correlation (average ranks on ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        for val in np.unique(v):
            sel = v == val
            if sel.sum() > 1:
                r[sel] = r[sel].mean()
        return r

    rx, ry = ranks(xs), ranks(ys)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    den = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    return float((rx * ry).sum() / den) if den > 0 else 0.0


def write_records_csv(records: list[MetricsRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip_count", "psnr_c", "ssim_c", "match_acc"])
        for r in records:
            writer.writerow([r.clip_count, f"{r.psnr_c:.6f}", f"{r.ssim_c:.6f}",
                             f"{r.match_acc:.6f}"])


def write_records_json(records: list[MetricsRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in records], indent=2))
