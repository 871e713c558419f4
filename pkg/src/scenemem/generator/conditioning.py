"""Building segmented token streams from frames, projections and instructions.

Position alignment rules:
  preceding frames occupy frame indices M-m .. M-1 (they end right before the
  target clip), target frames M .. M+N-1, and every reference frame shares the
  sentinel index so reference order carries no information. Scene tokens copy
  the frame/row/col indices of the preceding/target tokens they fuse into.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import (SEG_P, SEG_R, SEG_SP, SEG_ST, SEG_T, ModelConfig, TokenBatch)
from .tokenizer import PatchTokenizer


@dataclass
class Condition:
    """Single-sample conditioning streams (unpadded)."""

    ref_values: torch.Tensor         # (Lr, D); Lr may be 0
    ref_pos: tuple[np.ndarray, np.ndarray, np.ndarray]
    prec_values: torch.Tensor        # (Lp, D)
    prec_pos: tuple[np.ndarray, np.ndarray, np.ndarray]
    scene_p: torch.Tensor | None     # (Lp, D) aligned with preceding tokens
    scene_t: torch.Tensor | None     # (Lt, D) aligned with target tokens
    target_pos: tuple[np.ndarray, np.ndarray, np.ndarray]
    instruction: int
    n_target_frames: int
    target_clean: torch.Tensor | None = None   # (Lt, D) training only

    def without_refs(self) -> "Condition":
        empty = self.ref_values[:0]
        zero = (np.zeros(0, np.int64),) * 3
        return Condition(empty, zero, self.prec_values, self.prec_pos,
                         self.scene_p, self.scene_t, self.target_pos,
                         self.instruction, self.n_target_frames, self.target_clean)

    def without_scene(self) -> "Condition":
        return Condition(self.ref_values, self.ref_pos, self.prec_values,
                         self.prec_pos, None, None, self.target_pos,
                         self.instruction, self.n_target_frames, self.target_clean)


def _frames_to_array(frames) -> np.ndarray:
    """Accepts a list of Frame objects, arrays, or an (N,H,W,3) array."""
    if isinstance(frames, np.ndarray):
        return frames if frames.ndim == 4 else frames[None]
    parts = []
    for f in frames:
        parts.append(f.rgb if hasattr(f, "rgb") else np.asarray(f))
    return np.stack(parts)


def build_condition(cfg: ModelConfig, tokenizer: PatchTokenizer, *,
                    preceding, proj_preceding, proj_target,
                    instruction: int, ref_frames=(),
                    target_frames=None, use_refs: bool = True,
                    use_scene: bool = True,
                    dtype=torch.float32) -> Condition:
    """Tokenize all conditioning inputs for one sample.

    proj_* accept (N,H,W,3) arrays or ProjectionVideo objects; preceding and
    ref_frames accept Frame lists or arrays. target_frames (training only)
    becomes the clean X_T the flow interpolates toward.
    """
    if not (0 <= instruction < cfg.text_vocab):
        raise ValueError(f"instruction id {instruction} out of vocab {cfg.text_vocab}")
    h, w = cfg.frame_height, cfg.frame_width

    prec_arr = _frames_to_array(preceding)
    m = prec_arr.shape[0]
    if m > cfg.preceding_len:
        raise ValueError(f"{m} preceding frames exceed configured {cfg.preceding_len}")
    prec_values = tokenizer.tokenize(prec_arr, dtype)
    prec_pos = tokenizer.token_positions(m, h, w,
                                         frame_offset=cfg.preceding_len - m)

    refs = list(ref_frames)[:cfg.max_refs] if use_refs else []
    if refs:
        ref_arr = _frames_to_array(refs)
        ref_values = tokenizer.tokenize(ref_arr, dtype)
        fr, rr, cc = tokenizer.token_positions(len(refs), h, w)
        fr = np.full_like(fr, cfg.ref_frame_index)  # order-free sentinel
        ref_pos = (fr, rr, cc)
    else:
        ref_values = torch.zeros((0, cfg.dim), dtype=dtype)
        ref_pos = (np.zeros(0, np.int64),) * 3

    tgt_pos = tokenizer.token_positions(cfg.clip_len, h, w,
                                        frame_offset=cfg.preceding_len)

    scene_p = scene_t = None
    if use_scene:
        sp_arr = proj_preceding.rgb_array() if hasattr(proj_preceding, "rgb_array") \
            else _frames_to_array(proj_preceding)
        st_arr = proj_target.rgb_array() if hasattr(proj_target, "rgb_array") \
            else _frames_to_array(proj_target)
        if sp_arr.shape[0] != m:
            raise ValueError("scene-preceding projection count must match preceding")
        if st_arr.shape[0] != cfg.clip_len:
            raise ValueError("scene-target projection count must match clip length")
        scene_p = tokenizer.tokenize(sp_arr, dtype)
        scene_t = tokenizer.tokenize(st_arr, dtype)

    target_clean = None
    if target_frames is not None:
        tgt_arr = _frames_to_array(target_frames)
        if tgt_arr.shape[0] != cfg.clip_len:
            raise ValueError("target clip length mismatch")
        target_clean = tokenizer.tokenize(tgt_arr, dtype)

    return Condition(ref_values, ref_pos, prec_values, prec_pos, scene_p, scene_t,
                     tgt_pos, instruction, cfg.clip_len, target_clean)


def collate(conditions: list[Condition], cfg: ModelConfig,
            dtype=torch.float32) -> TokenBatch:
    """Pad a list of Conditions into one TokenBatch."""
    b = len(conditions)
    d = cfg.dim
    lt = conditions[0].target_pos[0].shape[0]
    lens_main = [c.ref_values.shape[0] + c.prec_values.shape[0] + lt
                 for c in conditions]
    lm = max(lens_main)
    any_scene = any(c.scene_t is not None for c in conditions)
    lens_cn = [(c.prec_values.shape[0] + lt) if c.scene_t is not None else 0
               for c in conditions]
    lc = max(lens_cn) if any_scene else 0

    main_values = torch.zeros(b, lm, d, dtype=dtype)
    main_mask = torch.zeros(b, lm, dtype=torch.bool)
    main_seg = torch.zeros(b, lm, dtype=torch.long)
    main_frame = torch.zeros(b, lm, dtype=torch.long)
    main_row = torch.zeros(b, lm, dtype=torch.long)
    main_col = torch.zeros(b, lm, dtype=torch.long)
    target_index = torch.zeros(b, lt, dtype=torch.long)
    instruction = torch.zeros(b, dtype=torch.long)

    if any_scene:
        cn_values = torch.zeros(b, lc, d, dtype=dtype)
        cn_mask = torch.zeros(b, lc, dtype=torch.bool)
        cn_seg = torch.zeros(b, lc, dtype=torch.long)
        cn_frame = torch.zeros(b, lc, dtype=torch.long)
        cn_row = torch.zeros(b, lc, dtype=torch.long)
        cn_col = torch.zeros(b, lc, dtype=torch.long)
        cn_to_main = torch.zeros(b, lc, dtype=torch.long)

    for i, c in enumerate(conditions):
        lr = c.ref_values.shape[0]
        lp = c.prec_values.shape[0]
        if lr:
            main_values[i, :lr] = c.ref_values
            main_seg[i, :lr] = SEG_R
            main_frame[i, :lr] = torch.from_numpy(c.ref_pos[0])
            main_row[i, :lr] = torch.from_numpy(c.ref_pos[1])
            main_col[i, :lr] = torch.from_numpy(c.ref_pos[2])
        main_values[i, lr:lr + lp] = c.prec_values
        main_seg[i, lr:lr + lp] = SEG_P
        main_frame[i, lr:lr + lp] = torch.from_numpy(c.prec_pos[0])
        main_row[i, lr:lr + lp] = torch.from_numpy(c.prec_pos[1])
        main_col[i, lr:lr + lp] = torch.from_numpy(c.prec_pos[2])
        t0 = lr + lp
        main_seg[i, t0:t0 + lt] = SEG_T
        main_frame[i, t0:t0 + lt] = torch.from_numpy(c.target_pos[0])
        main_row[i, t0:t0 + lt] = torch.from_numpy(c.target_pos[1])
        main_col[i, t0:t0 + lt] = torch.from_numpy(c.target_pos[2])
        main_mask[i, :t0 + lt] = True
        target_index[i] = torch.arange(t0, t0 + lt)
        instruction[i] = c.instruction

        if c.scene_t is not None:
            cn_values[i, :lp] = c.scene_p
            cn_seg[i, :lp] = SEG_SP
            cn_frame[i, :lp] = torch.from_numpy(c.prec_pos[0])
            cn_row[i, :lp] = torch.from_numpy(c.prec_pos[1])
            cn_col[i, :lp] = torch.from_numpy(c.prec_pos[2])
            cn_to_main[i, :lp] = torch.arange(lr, lr + lp)
            cn_values[i, lp:lp + lt] = c.scene_t
            cn_seg[i, lp:lp + lt] = SEG_ST
            cn_frame[i, lp:lp + lt] = torch.from_numpy(c.target_pos[0])
            cn_row[i, lp:lp + lt] = torch.from_numpy(c.target_pos[1])
            cn_col[i, lp:lp + lt] = torch.from_numpy(c.target_pos[2])
            cn_to_main[i, lp:lp + lt] = torch.arange(t0, t0 + lt)
            cn_mask[i, :lp + lt] = True

    kwargs = dict(main_values=main_values, main_mask=main_mask, main_seg=main_seg,
                  main_frame=main_frame, main_row=main_row, main_col=main_col,
                  target_index=target_index, instruction=instruction,
                  n_target_frames=conditions[0].n_target_frames)
    if any_scene:
        kwargs.update(cn_values=cn_values, cn_mask=cn_mask, cn_seg=cn_seg,
                      cn_frame=cn_frame, cn_row=cn_row, cn_col=cn_col,
                      cn_to_main=cn_to_main)
    return TokenBatch(**kwargs)


def stack_targets(conditions: list[Condition]) -> torch.Tensor:
    """(B, Lt, D) clean target tokens; every condition must carry them."""
    if any(c.target_clean is None for c in conditions):
        raise ValueError("conditions lack clean target tokens")
    return torch.stack([c.target_clean for c in conditions])


def forward_tokens(model, x_r, x_p, x_t, x_sp, x_st, instruction: int, t,
                   *, n_ref_frames: int = 0, n_prec_frames: int = 0):
    """Spec-shaped functional forward over raw token tensors (single sample).

    Token tensors must be multiples of tokens_per_frame; positions are derived
    from the counts. Pass x_sp=x_st=None to run the unconditioned network.
    """
    cfg = model.config
    tok = cfg.tokens_per_frame
    h, w = cfg.frame_height, cfg.frame_width
    tokenizer = cfg.build_tokenizer()

    def pos(n_frames, offset):
        return tokenizer.token_positions(n_frames, h, w, frame_offset=offset)

    m = n_prec_frames or (x_p.shape[0] // tok)
    r = n_ref_frames or (x_r.shape[0] // tok if x_r is not None else 0)
    ref_pos = pos(r, 0)
    ref_pos = (np.full_like(ref_pos[0], cfg.ref_frame_index),) + ref_pos[1:]
    cond = Condition(
        ref_values=x_r if x_r is not None else torch.zeros((0, cfg.dim)),
        ref_pos=ref_pos,
        prec_values=x_p,
        prec_pos=pos(m, cfg.preceding_len - m),
        scene_p=x_sp, scene_t=x_st,
        target_pos=pos(cfg.clip_len, cfg.preceding_len),
        instruction=instruction,
        n_target_frames=cfg.clip_len,
    )
    batch = collate([cond], cfg, dtype=x_t.dtype)
    return model(batch, x_t[None], torch.as_tensor([float(t)], dtype=x_t.dtype))[0]
