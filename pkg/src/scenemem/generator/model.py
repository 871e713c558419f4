"""Flow-matching conditional generator.

Topology: a stack of main transformer blocks (self-attention, cross-attention
to text tokens, FFN) processing [reference | preceding | noisy-target] tokens
with full bidirectional attention, plus one ControlNet block per group of
`controlnet_group_size` main blocks running in parallel on the scene-token
stream [scene-preceding | scene-target]. After each group, the ControlNet
output passes through a zero-initialized projector and is added index-wise
onto the preceding / noisy-target segments (scene tokens are position-aligned
1:1 with their counterparts). Reference tokens pass through unfused.

Timestep conditioning is a sinusoidal embedding added to every stream token.
Reference frames carry a shared sentinel frame index, so the forward pass is
equivariant to reference ordering.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .tokenizer import PatchTokenizer

SEG_R, SEG_P, SEG_T, SEG_SP, SEG_ST = 0, 1, 2, 3, 4
NUM_SEGMENTS = 5


class GenerationNaNError(RuntimeError):
    """Forward pass produced NaNs; carries a short diagnostic."""


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    heads: int = 4
    block_count: int = 8                # main blocks
    controlnet_group_size: int = 4      # 1 ControlNet block per this many main blocks
    ffn_mult: int = 4
    patch_size: int = 16
    frame_height: int = 128
    frame_width: int = 128
    clip_len: int = 9                   # N target frames
    preceding_len: int = 3              # M preceding frames
    max_refs: int = 7                   # K
    text_vocab: int = 16
    text_len: int = 4
    lora_rank: int = 8
    tokenizer_mode: str = "dct"
    token_gain: float = 0.125
    token_dim_scale: tuple | None = None   # per-dim divisor, see calibrate_dim_scale
    time_scale: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.token_dim_scale is not None:
            object.__setattr__(self, "token_dim_scale",
                               tuple(float(s) for s in self.token_dim_scale))
            if len(self.token_dim_scale) != self.dim:
                raise ValueError("token_dim_scale length must equal dim")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.block_count % self.controlnet_group_size:
            raise ValueError("block_count must be divisible by the ControlNet group size")
        if self.frame_height % self.patch_size or self.frame_width % self.patch_size:
            raise ValueError("frame size must be divisible by patch size")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")

    @property
    def n_groups(self) -> int:
        return self.block_count // self.controlnet_group_size

    @property
    def grid(self) -> tuple[int, int]:
        return (self.frame_height // self.patch_size,
                self.frame_width // self.patch_size)

    @property
    def tokens_per_frame(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def ref_frame_index(self) -> int:
        # Shared sentinel row in the frame-index table for every reference frame.
        return self.preceding_len + self.clip_len

    def build_tokenizer(self) -> PatchTokenizer:
        return PatchTokenizer(self.patch_size, self.dim, self.tokenizer_mode,
                              self.token_gain, self.token_dim_scale)


@dataclass
class TokenBatch:
    """Padded, segment-tagged token streams for one forward pass.

    `main_values` holds zeros over the noisy-target slice; `target_index`
    says where x_t gets inserted. `cn_to_main` maps each scene token to the
    main position its projected feature is added to.
    """

    main_values: torch.Tensor        # (B, Lm, D)
    main_mask: torch.Tensor          # (B, Lm) bool, True = real token
    main_seg: torch.Tensor           # (B, Lm) long
    main_frame: torch.Tensor
    main_row: torch.Tensor
    main_col: torch.Tensor
    target_index: torch.Tensor       # (B, Lt) long
    instruction: torch.Tensor        # (B,) long
    cn_values: torch.Tensor | None = None
    cn_mask: torch.Tensor | None = None
    cn_seg: torch.Tensor | None = None
    cn_frame: torch.Tensor | None = None
    cn_row: torch.Tensor | None = None
    cn_col: torch.Tensor | None = None
    cn_to_main: torch.Tensor | None = None
    n_target_frames: int = 0

    @property
    def batch_size(self) -> int:
        return self.main_values.shape[0]

    @property
    def target_len(self) -> int:
        return self.target_index.shape[1]

    def to(self, dtype) -> "TokenBatch":
        out = TokenBatch(**{k: v for k, v in self.__dict__.items()})
        for name in ("main_values", "cn_values"):
            t = getattr(out, name)
            if t is not None:
                setattr(out, name, t.to(dtype))
        return out


class LoRALinear(nn.Module):
    """Linear layer with a rank-r adapter: y = Wx + b + (alpha/r) * B A x."""

    def __init__(self, in_features: int, out_features: int, rank: int):
        super().__init__()
        self.base = nn.Linear(in_features, out_features)
        self.rank = rank
        self.lora_a = nn.Parameter(torch.randn(rank, in_features) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        self.scale = 1.0  # alpha = rank

    def forward(self, x):
        return self.base(x) + (x @ self.lora_a.T) @ self.lora_b.T * self.scale


def _attention(q, k, v, heads, key_mask=None):
    b, lq, d = q.shape
    lk = k.shape[1]
    hd = d // heads
    q = q.view(b, lq, heads, hd).transpose(1, 2)
    k = k.view(b, lk, heads, hd).transpose(1, 2)
    v = v.view(b, lk, heads, hd).transpose(1, 2)
    mask = None
    if key_mask is not None:
        mask = key_mask[:, None, None, :]  # True = attend
    out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
    return out.transpose(1, 2).reshape(b, lq, d)


class Block(nn.Module):
    """Pre-norm transformer block: self-attn, text cross-attn, FFN."""

    def __init__(self, cfg: ModelConfig, lora: bool):
        super().__init__()
        d = cfg.dim
        make = (lambda i, o: LoRALinear(i, o, cfg.lora_rank)) if lora else nn.Linear
        self.heads = cfg.heads
        self.norm1 = nn.LayerNorm(d)
        self.qkv = make(d, 3 * d)
        self.attn_out = make(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.cross_q = make(d, d)
        self.cross_kv = make(d, 2 * d)
        self.cross_out = make(d, d)
        self.norm3 = nn.LayerNorm(d)
        self.ffn1 = make(d, cfg.ffn_mult * d)
        self.ffn2 = make(cfg.ffn_mult * d, d)

    def forward(self, x, text, key_mask=None):
        h = self.norm1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        x = x + self.attn_out(_attention(q, k, v, self.heads, key_mask))
        h = self.norm2(x)
        k, v = self.cross_kv(text).chunk(2, dim=-1)
        x = x + self.cross_out(_attention(self.cross_q(h), k, v, self.heads))
        return x + self.ffn2(F.gelu(self.ffn1(self.norm3(x))))


class SceneVideoModel(nn.Module):
    """Velocity predictor over segmented token streams (see module docstring)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        torch.manual_seed(config.seed)
        self.config = config
        d = config.dim
        gh, gw = config.grid

        self.frame_emb = nn.Embedding(config.ref_frame_index + 1, d)
        self.row_emb = nn.Embedding(gh, d)
        self.col_emb = nn.Embedding(gw, d)
        self.seg_emb = nn.Embedding(NUM_SEGMENTS, d)
        self.text_table = nn.Parameter(torch.randn(config.text_vocab,
                                                   config.text_len, d) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(d, 2 * d), nn.GELU(),
                                      nn.Linear(2 * d, d))
        self.main_blocks = nn.ModuleList(
            Block(config, lora=True) for _ in range(config.block_count))
        self.cn_blocks = nn.ModuleList(
            Block(config, lora=False) for _ in range(config.n_groups))
        self.projectors = nn.ModuleList(
            nn.Linear(d, d) for _ in range(config.n_groups))
        self.head_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, d)

        self._init_controlnet_from_main()
        for proj in self.projectors:
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def _init_controlnet_from_main(self):
        """Each ControlNet block copies the first main block of its group."""
        g = self.config.controlnet_group_size
        for i, cn in enumerate(self.cn_blocks):
            src = self.main_blocks[i * g]
            with torch.no_grad():
                for name in ("qkv", "attn_out", "cross_q", "cross_kv",
                             "cross_out", "ffn1", "ffn2"):
                    dst_lin: nn.Linear = getattr(cn, name)
                    src_lin: LoRALinear = getattr(src, name)
                    dst_lin.weight.copy_(src_lin.base.weight)
                    dst_lin.bias.copy_(src_lin.base.bias)
                for name in ("norm1", "norm2", "norm3"):
                    getattr(cn, name).load_state_dict(getattr(src, name).state_dict())

    # -- embeddings ---------------------------------------------------------

    def _sinusoidal(self, t: torch.Tensor) -> torch.Tensor:
        d = self.config.dim
        half = d // 2
        device = t.device
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, device=device,
                                                            dtype=t.dtype) / half)
        ang = t[:, None] * self.config.time_scale * freqs[None, :]
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)

    def _positional(self, frame, row, col, seg):
        return (self.frame_emb(frame) + self.row_emb(row)
                + self.col_emb(col) + self.seg_emb(seg))

    # -- forward --------------------------------------------------------------

    def forward(self, batch: TokenBatch, x_t: torch.Tensor,
                t: torch.Tensor) -> torch.Tensor:
        """Predict the velocity on the noisy-target segment.

        Args:
            batch: condition streams (see TokenBatch).
            x_t: (B, Lt, D) noisy target tokens.
            t: scalar or (B,) flow time in [0, 1].
        """
        cfg = self.config
        b, lt, d = x_t.shape
        if lt != batch.target_len:
            raise ValueError(f"x_t length {lt} != target slice {batch.target_len}")
        if torch.is_tensor(t):
            t = t.reshape(-1).to(x_t.dtype)
            if t.shape[0] == 1:
                t = t.expand(b)
        else:
            t = torch.full((b,), float(t), dtype=x_t.dtype)
        temb = self.time_mlp(self._sinusoidal(t))

        idx = batch.target_index.unsqueeze(-1).expand(-1, -1, d)
        h = batch.main_values.scatter(1, idx, x_t)
        h = h + self._positional(batch.main_frame, batch.main_row,
                                 batch.main_col, batch.main_seg)
        h = h + temb[:, None, :]
        text = self.text_table[batch.instruction]

        use_cn = batch.cn_values is not None
        if use_cn:
            c = batch.cn_values + self._positional(batch.cn_frame, batch.cn_row,
                                                   batch.cn_col, batch.cn_seg)
            c = c + temb[:, None, :]
            cn_idx = batch.cn_to_main.unsqueeze(-1).expand(-1, -1, d)

        group = cfg.controlnet_group_size
        for g in range(cfg.n_groups):
            if use_cn:
                c = self.cn_blocks[g](c, text, batch.cn_mask)
            for j in range(group):
                h = self.main_blocks[g * group + j](h, text, batch.main_mask)
            if use_cn:
                fused = self.projectors[g](c)
                fused = fused.masked_fill(~batch.cn_mask[..., None], 0.0)
                h = h.scatter_add(1, cn_idx, fused)

        out = h.gather(1, idx)
        v = self.head(self.head_norm(out))
        if torch.isnan(v).any():
            raise GenerationNaNError(
                f"NaN in velocity output (t={t.min().item():.4f}..{t.max().item():.4f}, "
                f"batch={b}, Lm={batch.main_values.shape[1]})")
        return v

    # -- parameter partitioning ----------------------------------------------

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Disjoint groups: 'main' (backbone), 'controlnet', 'lora'."""
        groups = {"main": [], "controlnet": [], "lora": []}
        for name, p in self.named_parameters():
            if "lora_a" in name or "lora_b" in name:
                groups["lora"].append((name, p))
            elif name.startswith("cn_blocks") or name.startswith("projectors"):
                groups["controlnet"].append((name, p))
            else:
                groups["main"].append((name, p))
        return groups

    def group_checksum(self, group: str) -> str:
        params = self.parameter_groups()[group]
        digest = hashlib.sha256()
        for name, p in sorted(params, key=lambda kv: kv[0]):
            digest.update(name.encode())
            digest.update(p.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()
