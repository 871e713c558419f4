"""Training loop: backbone bootstrap, ControlNet stage, LoRA stage.

The published recipe assumes a pretrained backbone; here stage 0 bootstraps
the main network from scratch (ControlNet frozen and projectors zero, so it
is structurally absent). Stage 1 then trains only the ControlNet blocks with
the main network frozen; stage 2 freezes those and trains only the LoRA
adapters on main-block linear maps. Each stage logs a loss CSV and emits a
checkpoint in the flat-binary format described in docs/formats.md.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .conditioning import Condition, build_condition, collate, stack_targets
from .flow import NoiseScheduler, augment_preceding, fm_loss
from .model import ModelConfig, SceneVideoModel

CHECKPOINT_MAGIC = b"FTCK"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainSchedule:
    stage0_steps: int = 800
    stage1_steps: int = 600
    stage2_steps: int = 300
    lr_stage0: float = 2e-3
    lr_stage1: float = 2e-3
    lr_stage2: float = 1e-3
    batch_size: int = 4
    seed: int = 0
    log_every: int = 25
    weight_decay: float = 0.01
    aug_interval: tuple[float, float] = (0.0, 50.0)
    p_drop_refs: float = 0.15     # keeps ref-free inference in-distribution
    p_drop_scene: float = 0.15    # likewise for scene-free inference (stages 0/2)
    divergence_limit: float = 1e3


@dataclass
class TrainResult:
    loss_history: dict[str, list[float]] = field(default_factory=dict)
    checkpoint_paths: dict[str, Path] = field(default_factory=dict)


# -- checkpoint format: magic, u32 header length, JSON header, raw tensors ----


def save_checkpoint(model: SceneVideoModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    header: dict = {"version": 1, "config": model.config.__dict__, "tensors": {}}
    blobs = []
    offset = 0
    for name in sorted(state):
        arr = state[name].detach().cpu().to(torch.float32).numpy()
        data = np.ascontiguousarray(arr).tobytes()
        header["tensors"][name] = {"dtype": "f4", "shape": list(arr.shape),
                                   "offset": offset, "nbytes": len(data)}
        blobs.append(data)
        offset += len(data)
    head = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen])
    if header.get("version") != 1:
        raise ValueError("unsupported checkpoint version")
    base = 8 + hlen
    tensors = {}
    for name, meta in header["tensors"].items():
        start = base + meta["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=meta["nbytes"] // 4,
                            offset=start).reshape(meta["shape"])
        tensors[name] = torch.from_numpy(arr.copy())
    return ModelConfig(**header["config"]), tensors


def load_model(path) -> SceneVideoModel:
    config, tensors = load_checkpoint(path)
    model = SceneVideoModel(config)
    model.load_state_dict(tensors)
    return model


# -- data preparation ----------------------------------------------------------


def conditions_from_samples(model_cfg: ModelConfig, samples) -> list[Condition]:
    """Tokenize TrainingSamples once up front (the tokenizer is fixed)."""
    tokenizer = model_cfg.build_tokenizer()
    conds = []
    for s in samples:
        conds.append(build_condition(
            model_cfg, tokenizer,
            preceding=s.preceding_frames,
            proj_preceding=s.proj_preceding,
            proj_target=s.proj_target,
            instruction=s.instruction_id,
            ref_frames=s.ref_frames,
            target_frames=s.target_frames,
        ))
    return conds


def _assemble_batch(conds: list[Condition], cfg: ModelConfig,
                    schedule: TrainSchedule, rng: np.random.Generator,
                    gen: torch.Generator, scheduler: NoiseScheduler,
                    allow_scene_drop: bool):
    picks = [conds[int(i)] for i in rng.integers(0, len(conds), schedule.batch_size)]
    batch_conds = []
    for c in picks:
        if schedule.p_drop_refs > 0 and rng.uniform() < schedule.p_drop_refs:
            c = c.without_refs()
        if allow_scene_drop and schedule.p_drop_scene > 0 \
                and rng.uniform() < schedule.p_drop_scene:
            c = c.without_scene()
        if schedule.aug_interval[1] > 0:
            aug = augment_preceding(c.prec_values, scheduler,
                                    schedule.aug_interval, generator=gen)
            c = Condition(c.ref_values, c.ref_pos, aug, c.prec_pos, c.scene_p,
                          c.scene_t, c.target_pos, c.instruction,
                          c.n_target_frames, c.target_clean)
        batch_conds.append(c)
    return collate(batch_conds, cfg), stack_targets(batch_conds)


def _run_stage(model: SceneVideoModel, conds, schedule: TrainSchedule, *,
               stage: str, steps: int, lr: float, trainable: str,
               drop_scene: bool, out_dir: Path | None,
               result: TrainResult) -> None:
    if steps <= 0:
        return
    groups = model.parameter_groups()
    for name, group in groups.items():
        flag = name == trainable
        for _, p in group:
            p.requires_grad_(flag)
    params = [p for _, p in groups[trainable]]
    opt = torch.optim.AdamW(params, lr=lr, weight_decay=schedule.weight_decay)

    rng = np.random.default_rng(schedule.seed + hash(stage) % 10000)
    gen = torch.Generator().manual_seed(schedule.seed)
    scheduler = NoiseScheduler()
    losses = []
    for step in range(steps):
        batch, target = _assemble_batch(conds, model.config, schedule, rng, gen,
                                        scheduler, drop_scene)
        loss = fm_loss(model, batch, target, generator=gen)
        if not torch.isfinite(loss) or loss.item() > schedule.divergence_limit:
            raise TrainingDivergedError(
                f"{stage} diverged at step {step}: loss={loss.item():.3e}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    result.loss_history[stage] = losses
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"loss_{stage}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss"])
            writer.writerows((i, v) for i, v in enumerate(losses))
        ckpt = out_dir / f"checkpoint_{stage}.fbck"
        save_checkpoint(model, ckpt)
        result.checkpoint_paths[stage] = ckpt


def train(model: SceneVideoModel, samples, schedule: TrainSchedule,
          out_dir=None) -> TrainResult:
    """Run the three stages; freeze contracts are enforced via requires_grad.

    Stage 0 trains the main network (ControlNet structurally inert), stage 1
    only the ControlNet blocks and projectors, stage 2 only LoRA adapters.
    """
    if not samples:
        raise ValueError("training needs a non-empty dataset")
    out = Path(out_dir) if out_dir is not None else None
    conds = conditions_from_samples(model.config, samples)
    result = TrainResult()
    _run_stage(model, conds, schedule, stage="stage0",
               steps=schedule.stage0_steps, lr=schedule.lr_stage0,
               trainable="main", drop_scene=True, out_dir=out, result=result)
    _run_stage(model, conds, schedule, stage="stage1",
               steps=schedule.stage1_steps, lr=schedule.lr_stage1,
               trainable="controlnet", drop_scene=False, out_dir=out, result=result)
    _run_stage(model, conds, schedule, stage="stage2",
               steps=schedule.stage2_steps, lr=schedule.lr_stage2,
               trainable="lora", drop_scene=True, out_dir=out, result=result)
    for _, p in model.named_parameters():
        p.requires_grad_(True)
    return result
