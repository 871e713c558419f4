"""Fixed (non-learned) patch tokenizer standing in for a video VAE.

Each p x p x 3 patch is projected onto an orthonormal basis of per-channel
2D DCT modes (zigzag order, lowest frequencies first), scaled by a
power-of-two gain so the round trip through detokenize is exact when the
basis is complete. The DC modes come first, so any token dimension >= 3
reconstructs at least the per-channel patch means.
"""

from __future__ import annotations

import numpy as np
import torch


def _dct_matrix(p: int) -> np.ndarray:
    """Orthonormal DCT-II, rows indexed by frequency."""
    n = np.arange(p)
    k = np.arange(p)[:, None]
    phi = np.cos(np.pi * (2 * n + 1) * k / (2 * p))
    phi[0] *= np.sqrt(1.0 / p)
    phi[1:] *= np.sqrt(2.0 / p)
    return phi


def _zigzag(p: int):
    pairs = [(u, v) for u in range(p) for v in range(p)]
    return sorted(pairs, key=lambda uv: (uv[0] + uv[1], uv[0]))


class PatchTokenizer:
    """Linear frame <-> token map; deterministic, no parameters to train.

    `dim_scale` is an optional fixed per-dimension divisor (use
    `calibrate_dim_scale` to derive one from a corpus). Scales are expected
    to be powers of two so scaling stays exactly invertible.
    """

    def __init__(self, patch_size: int, dim: int, mode: str = "dct",
                 gain: float = 0.125, dim_scale=None):
        if dim < 3:
            raise ValueError("token dim must be >= 3 (one DC mode per channel)")
        self.patch_size = int(patch_size)
        self.dim = int(dim)
        self.mode = mode
        self.gain = float(gain)
        if dim_scale is not None:
            dim_scale = np.asarray(dim_scale, dtype=np.float64).reshape(-1)
            if dim_scale.shape[0] != dim or np.any(dim_scale <= 0):
                raise ValueError("dim_scale needs one positive entry per token dim")
        self.dim_scale = dim_scale
        pp = self.patch_size * self.patch_size
        if mode == "identity":
            if dim != 3 * pp:
                raise ValueError("identity mode needs dim == 3 * patch^2")
            basis = np.eye(dim)
        elif mode == "dct":
            if dim > 3 * pp:
                raise ValueError("token dim exceeds patch degrees of freedom")
            counts = [dim // 3 + (1 if c < dim % 3 else 0) for c in range(3)]
            dct = _dct_matrix(self.patch_size)
            order = _zigzag(self.patch_size)
            basis = np.zeros((dim, 3 * pp))
            row = 0
            for c, n_c in enumerate(counts):
                for u, v in order[:n_c]:
                    mode2d = np.outer(dct[u], dct[v]).ravel()
                    basis[row, c * pp:(c + 1) * pp] = mode2d
                    row += 1
        else:
            raise ValueError(f"unknown tokenizer mode {mode!r}")
        self._basis = torch.from_numpy(basis)  # float64; cast per call

    def tokens_per_frame(self, height: int, width: int) -> int:
        self._check_dims(height, width)
        return (height // self.patch_size) * (width // self.patch_size)

    def _check_dims(self, height: int, width: int):
        if height % self.patch_size or width % self.patch_size:
            raise ValueError(
                f"frame {height}x{width} not divisible by patch {self.patch_size}")

    def patch_grid(self, height: int, width: int) -> tuple[int, int]:
        self._check_dims(height, width)
        return height // self.patch_size, width // self.patch_size

    def tokenize(self, frames, dtype=torch.float32) -> torch.Tensor:
        """(N,H,W,3) array in [0,1] -> (N * grid_h * grid_w, dim) tokens."""
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        n, h, w, _ = arr.shape
        gh, gw = self.patch_grid(h, w)
        p = self.patch_size
        patches = (arr.reshape(n, gh, p, gw, p, 3)
                   .transpose(0, 1, 3, 5, 2, 4)
                   .reshape(n * gh * gw, 3 * p * p))
        tokens = torch.from_numpy(patches) @ self._basis.T * self.gain
        if self.dim_scale is not None:
            tokens = tokens / torch.from_numpy(self.dim_scale)
        return tokens.to(dtype)

    def detokenize(self, tokens: torch.Tensor, n_frames: int, height: int,
                   width: int) -> np.ndarray:
        """Inverse map; complete-basis configs reconstruct exactly."""
        gh, gw = self.patch_grid(height, width)
        p = self.patch_size
        t = tokens.detach().to(torch.float64)
        if self.dim_scale is not None:
            t = t * torch.from_numpy(self.dim_scale)
        t = t / self.gain
        patches = (t @ self._basis).numpy()
        frames = (patches.reshape(n_frames, gh, gw, 3, p, p)
                  .transpose(0, 1, 4, 2, 5, 3)
                  .reshape(n_frames, height, width, 3))
        return frames

    def with_dim_scale(self, dim_scale) -> "PatchTokenizer":
        return PatchTokenizer(self.patch_size, self.dim, self.mode, self.gain,
                              dim_scale)

    def token_positions(self, n_frames: int, height: int, width: int,
                        frame_offset: int = 0):
        """(frame_idx, row, col) arrays aligned with tokenize() output order."""
        gh, gw = self.patch_grid(height, width)
        frame = np.repeat(np.arange(n_frames) + frame_offset, gh * gw)
        row = np.tile(np.repeat(np.arange(gh), gw), n_frames)
        col = np.tile(np.arange(gw), gh * n_frames)
        return frame, row, col


def calibrate_dim_scale(frame_arrays, tokenizer: PatchTokenizer,
                        rel_floor: float = 1.0 / 32.0) -> np.ndarray:
    """Per-dimension token scale from a reference corpus.

    Returns power-of-two divisors approximating each dimension's standard
    deviation, floored relative to the largest so near-constant dimensions
    are not blown up into the noise range. Scaled tokens come out with
    roughly unit variance per dimension, which keeps the flow-matching
    velocity target balanced between content and noise.
    """
    base = tokenizer.with_dim_scale(None)
    tokens = torch.cat([base.tokenize(f, dtype=torch.float64)
                        for f in frame_arrays])
    std = tokens.numpy().std(axis=0)
    std = np.maximum(std, std.max() * rel_floor)
    return np.exp2(np.round(np.log2(std)))
