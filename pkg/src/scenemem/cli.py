"""Command-line interface mirroring the service and harness surfaces."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .evaluation import (closed_loop_eval, density_sweep, long_horizon_eval,
                         write_records_csv, write_records_json)
from .pointcloud_io import read_spcl, write_spcl
from .projection import Trajectory
from .retrieval import RetrievalConfig, retrieve_references
from .scenes import (DatasetParams, INSTRUCTIONS, SceneParams, generate_scene,
                     generate_training_set, load_dataset, make_clip_trajectory,
                     out_and_back, save_dataset)
from .session import (SessionConfig, StepRequest, create_session, export_session,
                      import_session)
from .voxel_memory import EditOp


@click.group()
def main():
    """Spatial-memory video generation toolkit."""


# -- retrieval ------------------------------------------------------------------


@main.command()
@click.option("--manifest", type=click.Path(exists=True), required=True,
              help="JSON manifest: {targets: [paths], candidates: [{id, path}], "
                   "config: {k, epsilon, iou_cube_side}}")
@click.option("--out", type=click.Path(), default=None,
              help="Write chosen frame ids as JSON (default: stdout)")
def retrieve(manifest, out):
    """Select reference frames by 3D voxel-IoU overlap."""
    spec = json.loads(Path(manifest).read_text())
    targets = [read_spcl(p) for p in spec["targets"]]
    candidates = [(int(c["id"]), read_spcl(c["path"])) for c in spec["candidates"]]
    cfg = RetrievalConfig(**spec.get("config", {}))
    ids = retrieve_references(targets, candidates, cfg)
    payload = json.dumps({"reference_ids": ids}, indent=2)
    if out:
        Path(out).write_text(payload)
    else:
        click.echo(payload)


# -- dataset / training -----------------------------------------------------------


@main.command("dataset-build")
@click.option("--out", type=click.Path(), required=True)
@click.option("--samples", type=int, default=50)
@click.option("--seed", type=int, default=0)
@click.option("--resolution", type=int, default=128)
@click.option("--clip-len", type=int, default=9)
@click.option("--preceding-len", type=int, default=3)
@click.option("--candidates", type=int, default=12)
@click.option("--dynamic", type=int, default=0, help="max dynamic entities per scene")
@click.option("--cloud-source", type=click.Choice(["single", "all"]),
              default="single")
def dataset_build(out, samples, seed, resolution, clip_len, preceding_len,
                  candidates, dynamic, cloud_source):
    """Synthesize a training dataset directory."""
    params = DatasetParams(resolution=resolution, n_target=clip_len,
                           n_preceding=preceding_len, n_candidates=candidates,
                           scene=SceneParams(num_dynamic=(0, dynamic)),
                           cloud_source=cloud_source)
    data = generate_training_set(samples, params, seed=seed)
    save_dataset(data, out, params)
    click.echo(f"wrote {len(data)} samples to {out}")


def _load_mapping(path) -> dict:
    """Read a TOML or JSON mapping file."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    import sys
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    return tomllib.loads(text)


@main.command()
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML/JSON with optional [model] and [schedule] tables")
@click.option("--steps", default="800,600,300",
              help="stage0,stage1,stage2 step counts")
@click.option("--batch-size", type=int, default=4)
@click.option("--seed", type=int, default=0)
@click.option("--resolution", type=int, default=128)
@click.option("--clip-len", type=int, default=9)
@click.option("--preceding-len", type=int, default=3)
@click.option("--calibrate/--no-calibrate", default=True,
              help="Derive the per-dim token scale from the dataset")
def train(dataset, out, config_path, steps, batch_size, seed, resolution,
          clip_len, preceding_len, calibrate):
    """Two-stage training (plus backbone bootstrap) on a dataset directory."""
    from dataclasses import replace

    from .generator import ModelConfig, SceneVideoModel, TrainSchedule
    from .generator import train as run_train
    from .generator.tokenizer import calibrate_dim_scale

    s0, s1, s2 = (int(x) for x in steps.split(","))
    model_kw = dict(frame_height=resolution, frame_width=resolution,
                    clip_len=clip_len, preceding_len=preceding_len, seed=seed)
    sched_kw = dict(stage0_steps=s0, stage1_steps=s1, stage2_steps=s2,
                    batch_size=batch_size, seed=seed)
    if config_path:
        file_cfg = _load_mapping(config_path)
        model_kw.update(file_cfg.get("model", {}))
        sched_kw.update(file_cfg.get("schedule", {}))
    samples = load_dataset(dataset)
    config = ModelConfig(**model_kw)
    if calibrate and config.token_dim_scale is None:
        frames = [np.stack([f.rgb for f in s.target_frames]) for s in samples[:10]]
        scale = calibrate_dim_scale(frames, config.build_tokenizer())
        config = replace(config, token_dim_scale=tuple(scale))
    model = SceneVideoModel(config)
    schedule = TrainSchedule(**sched_kw)
    result = run_train(model, samples, schedule, out_dir=out)
    for stage, losses in result.loss_history.items():
        click.echo(f"{stage}: {len(losses)} steps, "
                   f"final loss {np.mean(losses[-20:]):.4f}")
    click.echo(f"checkpoints in {out}")


# -- evaluation -------------------------------------------------------------------


def _eval_session(scene_seed, resolution, clip_len, checkpoint, use_scene, use_refs,
                  seed):
    generator = None
    if checkpoint:
        from .generator.training import load_model
        from .session import ModelClipGenerator
        model = load_model(checkpoint)
        # The session geometry must match the model; flags are overridden.
        resolution = model.config.frame_height
        clip_len = model.config.clip_len
        preceding_len = model.config.preceding_len
        generator = ModelClipGenerator(model)
    scene = generate_scene(scene_seed)
    cfg = SessionConfig(clip_len=clip_len, resolution=resolution,
                        preceding_len=preceding_len if checkpoint else 3,
                        use_scene=use_scene, use_refs=use_refs, seed=seed,
                        memory_d=0.01,
                        retrieval=RetrievalConfig(k=7, epsilon=0.05,
                                                  iou_cube_side=0.06))
    session = create_session(scene, cfg, generator=generator)
    return session, scene, cfg


@main.group()
def eval():
    """Closed-loop, long-horizon and density evaluations."""


@eval.command("closed-loop")
@click.option("--scene-seed", type=int, default=0)
@click.option("--resolution", type=int, default=128)
@click.option("--clip-len", type=int, default=9)
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Model checkpoint; omitted = oracle renderer")
@click.option("--use-scene/--no-scene", default=True)
@click.option("--use-refs/--no-refs", default=True)
@click.option("--instruction", type=int, default=2)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
def eval_closed_loop(scene_seed, resolution, clip_len, checkpoint, use_scene,
                     use_refs, instruction, seed, out):
    """Out-and-back loop; scores the final frame against the initial image."""
    session, scene, cfg = _eval_session(scene_seed, resolution, clip_len,
                                        checkpoint, use_scene, use_refs, seed)
    traj = make_clip_trajectory(scene, INSTRUCTIONS[instruction], clip_len,
                                cfg.intrinsics, np.random.default_rng(seed))
    record = closed_loop_eval(session, out_and_back(traj), instruction)
    click.echo(json.dumps(record.to_dict(), indent=2))
    if out:
        write_records_csv([record], Path(out) / "closed_loop.csv")
        write_records_json([record], Path(out) / "closed_loop.json")


@eval.command("long-horizon")
@click.option("--scene-seed", type=int, default=0)
@click.option("--resolution", type=int, default=128)
@click.option("--clip-len", type=int, default=9)
@click.option("--clips", type=int, default=6)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--use-scene/--no-scene", default=True)
@click.option("--use-refs/--no-refs", default=True)
@click.option("--instruction", type=int, default=2)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
def eval_long_horizon(scene_seed, resolution, clip_len, clips, checkpoint,
                      use_scene, use_refs, instruction, seed, out):
    """Repeated out-and-back pairs; one record per pair."""
    session, scene, cfg = _eval_session(scene_seed, resolution, clip_len,
                                        checkpoint, use_scene, use_refs, seed)
    traj = make_clip_trajectory(scene, INSTRUCTIONS[instruction], clip_len,
                                cfg.intrinsics, np.random.default_rng(seed))
    records = long_horizon_eval(session, traj, clips, instruction)
    click.echo(json.dumps([r.to_dict() for r in records], indent=2))
    if out:
        write_records_csv(records, Path(out) / "long_horizon.csv")
        write_records_json(records, Path(out) / "long_horizon.json")


@eval.command("density")
@click.option("--scene-seed", type=int, default=0)
@click.option("--resolution", type=int, default=128)
@click.option("--views", type=int, default=3)
@click.option("--d-values", default="0.01,0.03,0.05,0.07")
@click.option("--out", type=click.Path(), default=None)
def eval_density(scene_seed, resolution, views, d_values, out):
    """Voxel-density sweep: downsample, re-render, PSNR against ground truth."""
    from .geometry import Intrinsics
    from .scenes import render_frame
    from .voxel_memory import SpatialMemory

    scene = generate_scene(scene_seed)
    intr = Intrinsics.simple(resolution, resolution)
    mem = SpatialMemory(cube_side=0.005)
    gt_views = []
    traj = make_clip_trajectory(scene, "pan_left", views, intr,
                                np.random.default_rng(scene_seed))
    for pose, _ in traj:
        frame = render_frame(scene, pose, intr)
        mem.fuse_frame(frame)
        gt_views.append((pose, intr, frame.rgb))
    rows = density_sweep(mem.snapshot(), [float(x) for x in d_values.split(",")],
                         gt_views)
    click.echo(json.dumps(rows, indent=2))
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "density.json").write_text(json.dumps(rows, indent=2))


# -- sessions ---------------------------------------------------------------------


@main.group()
def session():
    """Create, step, edit and serialize sessions (bundle-file backed)."""


@session.command("create")
@click.option("--scene-seed", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--resolution", type=int, default=128)
@click.option("--clip-len", type=int, default=9)
@click.option("--seed", type=int, default=0)
def session_create(scene_seed, out, resolution, clip_len, seed):
    scene = generate_scene(scene_seed)
    cfg = SessionConfig(clip_len=clip_len, resolution=resolution, seed=seed)
    s = create_session(scene, cfg)
    Path(out).write_bytes(export_session(s))
    click.echo(f"session with {s.memory.cell_count} memory cells -> {out}")


@session.command("step")
@click.option("--bundle", type=click.Path(exists=True), required=True)
@click.option("--trajectory", "trajectory_path", type=click.Path(exists=True),
              required=True, help="Trajectory JSON")
@click.option("--instruction", type=int, default=0)
@click.option("--edits", "edits_path", type=click.Path(exists=True), default=None,
              help="JSON list of edit ops applied before generation")
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
def session_step(bundle, trajectory_path, instruction, edits_path, checkpoint):
    generator = None
    if checkpoint:
        from .generator.training import load_model
        from .session import ModelClipGenerator
        generator = ModelClipGenerator(load_model(checkpoint))
    s = import_session(Path(bundle).read_bytes(), generator=generator)
    traj = Trajectory.from_dict(json.loads(Path(trajectory_path).read_text()))
    edits = ()
    if edits_path:
        edits = tuple(EditOp.from_dict(e)
                      for e in json.loads(Path(edits_path).read_text()))
    s.step(StepRequest(trajectory=traj, instruction_id=instruction, edits=edits))
    Path(bundle).write_bytes(export_session(s))
    click.echo(f"clip {s.clip_index - 1} generated; archive={len(s.archive)} "
               f"cells={s.memory.cell_count}")


@session.command("edit")
@click.option("--bundle", type=click.Path(exists=True), required=True)
@click.option("--op", "op_path", type=click.Path(exists=True), required=True)
def session_edit(bundle, op_path):
    s = import_session(Path(bundle).read_bytes())
    s.apply_edit(EditOp.from_dict(json.loads(Path(op_path).read_text())))
    Path(bundle).write_bytes(export_session(s))
    click.echo(f"edit applied; cells={s.memory.cell_count}")


@session.command("export")
@click.option("--bundle", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--memory-spcl", type=click.Path(), default=None,
              help="Also write the memory snapshot as SPCL")
def session_export(bundle, out, memory_spcl):
    s = import_session(Path(bundle).read_bytes())
    Path(out).write_bytes(export_session(s))
    if memory_spcl:
        write_spcl(s.memory_cloud(), memory_spcl)
    click.echo(f"exported -> {out}")


@session.command("import")
@click.option("--bundle", type=click.Path(exists=True), required=True)
def session_import(bundle):
    s = import_session(Path(bundle).read_bytes())
    click.echo(json.dumps({"clip_index": s.clip_index,
                           "archive_len": len(s.archive),
                           "memory_cells": s.memory.cell_count}, indent=2))


# -- server -----------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, host, port):
    """Run the HTTP API (see docs/api.md)."""
    from .service import load_service_config, run_server

    cfg = load_service_config(config_path)
    if host:
        cfg.host = host
    if port:
        cfg.port = port
    click.echo(f"serving on http://{cfg.host}:{cfg.port}")
    run_server(cfg)


if __name__ == "__main__":
    main()
