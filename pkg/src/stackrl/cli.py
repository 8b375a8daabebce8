"""Command-line interface and file formats.

Subcommands cover the full pipeline: dataset generation, classifier training
and evaluation, experiment tables, target-pool enumeration, agent training
and evaluation, placement scoring, and state rendering.  All randomness is
controlled by --seed (falling back to the STACKRL_SEED environment variable),
and every command is deterministic given its flags.

File formats:
  datasets   JSON Lines, one record per line with keys id/blocks/label/params/seed
  models     JSON document (see the nn module)
  tables     CSV with a companion PNG figure rendered next to it
  renders    binary PGM (P5), ASCII art, or PNG
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import figures, nn
from .agent import AgentConfig, evaluate_agent, encode_state_parts, \
    assemble_inputs, gridworld_agent_config, select_action, stacking_agent_config, \
    train_agent
from .envs import GridworldConfig, GridworldEnv, StackEnv, StackEnvConfig, \
    enumerate_target_pool, render_ascii, state_hash
from .geometry import Block2D, GridMap, Scene, rasterize_scene
from .shaping import ShapingMode
from .stability import STABLE, UNSTABLE
from .stabnet import ClassifierConfig, ExperimentPlan, MODE_CROSS, MODE_GENERAL, \
    MODE_INTRA, enumerate_candidates, eval_classifier, run_experiment, \
    score_placements, train_classifier
from .towergen import DatasetRecord, SceneParams, TowerGenConfig, \
    generate_dataset, split_dataset

ALL_2D_GROUPS = ("4B-2D-Uni", "6B-2D-Uni", "10B-2D-Uni", "14B-2D-Uni",
                 "4B-2D-NonUni", "6B-2D-NonUni", "10B-2D-NonUni",
                 "14B-2D-NonUni")
SIMPLE_GROUPS = ("4B-2D-Uni", "6B-2D-Uni")
COMPLEX_GROUPS = ("10B-2D-Uni", "14B-2D-Uni")


class ConfigError(ValueError):
    """Run configuration document is malformed."""


# ---------------------------------------------------------------------------
# file formats

def record_to_json(record: DatasetRecord) -> str:
    obj = {
        "id": record.id,
        "blocks": [{"x": b.x_center, "y": b.y_bottom, "w": b.width,
                    "h": b.height} for b in record.scene.blocks],
        "label": record.label,
        "params": {"n": record.params.n_blocks, "size": record.params.size_mode},
        "seed": record.seed,
    }
    return json.dumps(obj)


def record_from_json(line: str) -> DatasetRecord:
    obj = json.loads(line)
    params = SceneParams(n_blocks=obj["params"]["n"],
                         size_mode=obj["params"]["size"])
    blocks = tuple(Block2D(b["x"], b["y"], b["w"], b["h"])
                   for b in obj["blocks"])
    label = obj["label"]
    if label not in (STABLE, UNSTABLE):
        raise ValueError(f"bad label {label!r}")
    return DatasetRecord(id=obj["id"], scene=Scene(blocks, params),
                         label=label, params=params, seed=obj["seed"])


def write_dataset(records: list[DatasetRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_json(record))
            fh.write("\n")


def read_dataset(path: str | Path) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_json(line))
    return records


def export_pgm(grid: GridMap, path: str | Path) -> None:
    """Binary PGM, maxval 255; the top grid row is written first."""
    payload = np.flipud(grid.cells).astype(np.uint8) * 255
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii"))
        fh.write(payload.tobytes())


def read_pgm(path: str | Path) -> GridMap:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM file")
    width, height = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3][:width * height], dtype=np.uint8)
    if maxval != 255 or pixels.size != width * height:
        raise ValueError(f"{path}: unsupported or truncated PGM")
    return GridMap(np.flipud(pixels.reshape(height, width) > 0))


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# run configuration

_SECTION_TYPES = {
    "towergen": TowerGenConfig,
    "classifier": ClassifierConfig,
    "agent": AgentConfig,
}
_ENV_KEYS = {"width", "height", "max_episode_steps", "size"}


def load_run_config(path: str | None) -> dict:
    """Parse the optional JSON run configuration, rejecting unknown keys."""
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    known_sections = {*_SECTION_TYPES, "env", "shaping", "seed"}
    for key in doc:
        if key not in known_sections:
            raise ConfigError(f"unknown config section {key!r}")
    for section, cls in _SECTION_TYPES.items():
        if section in doc:
            allowed = {f.name for f in dataclass_fields(cls)}
            for key in doc[section]:
                if key not in allowed:
                    raise ConfigError(f"unknown key {key!r} in section {section!r}")
    if "env" in doc:
        for key in doc["env"]:
            if key not in _ENV_KEYS:
                raise ConfigError(f"unknown key {key!r} in section 'env'")
    if "shaping" in doc:
        for key in doc["shaping"]:
            if key != "mode":
                raise ConfigError(f"unknown key {key!r} in section 'shaping'")
    return doc


def _section(config: dict, name: str) -> dict:
    return dict(config.get(name, {}))


def resolve_seed(args, config: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in config:
        return int(config["seed"])
    return int(os.environ.get("STACKRL_SEED", "0"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_towers(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    params = SceneParams.parse(args.params)
    section = _section(config, "towergen")
    section.setdefault("seed", seed)
    gen_cfg = TowerGenConfig(**section)
    records, report = generate_dataset(params, args.count, gen_cfg, seed=seed,
                                       stable_fraction=args.stable_fraction)
    write_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out} "
          f"({report[STABLE]} stable / {report[UNSTABLE]} unstable)")
    return 0


def _classifier_config(config: dict, seed: int, **overrides) -> ClassifierConfig:
    section = _section(config, "classifier")
    section.setdefault("seed", seed)
    section.update(overrides)
    return ClassifierConfig(**section)


def cmd_train_stab(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    records = read_dataset(args.data)
    cfg = _classifier_config(config, seed)
    net, report = train_classifier(records, cfg)
    Path(args.model_out).write_text(nn.save_model(net), encoding="utf-8")
    print(f"trained on {len(records)} records; "
          f"final train accuracy {report['final_train_accuracy']:.3f}")
    if args.report_out:
        rows = [[i, loss] for i, loss in enumerate(report["epoch_losses"])]
        write_csv(args.report_out, ["epoch", "train_loss"], rows)
        figures.save_loss_curve(report["epoch_losses"],
                                str(Path(args.report_out).with_suffix(".png")))
    return 0


def cmd_eval_stab(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    records = read_dataset(args.data)
    cfg = _classifier_config(config, seed)
    net = nn.load_model(Path(args.model).read_text(encoding="utf-8"))
    accuracy = eval_classifier(net, records, cfg)
    print(f"accuracy {accuracy:.4f} on {len(records)} records")
    return 0


def _load_group_datasets(data_dir: str, groups: tuple[str, ...], seed: int
                         ) -> dict:
    datasets = {}
    rng = np.random.default_rng([seed, 0xD5])
    for key in groups:
        path = Path(data_dir) / f"{key}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing dataset for group {key}: {path}")
        records = read_dataset(path)
        datasets[key] = split_dataset(records, 0.5, rng)
    return datasets


def cmd_run_experiment(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    cfg = _classifier_config(config, seed)
    plans = []
    if args.plan == MODE_INTRA:
        for key in args.groups or ("4B-2D-Uni", "6B-2D-Uni", "10B-2D-Uni",
                                   "14B-2D-Uni"):
            group = (SceneParams.parse(key),)
            plans.append(ExperimentPlan(group, group, MODE_INTRA))
    elif args.plan == MODE_CROSS:
        simple = tuple(SceneParams.parse(k) for k in SIMPLE_GROUPS)
        complex_ = tuple(SceneParams.parse(k) for k in COMPLEX_GROUPS)
        plans.append(ExperimentPlan(simple, complex_, MODE_CROSS))
        plans.append(ExperimentPlan(complex_, simple, MODE_CROSS))
    else:
        keys = args.groups or ("4B-2D-Uni", "6B-2D-Uni", "10B-2D-Uni",
                               "14B-2D-Uni")
        groups = tuple(SceneParams.parse(k) for k in keys)
        plans.append(ExperimentPlan(groups, groups, MODE_GENERAL))
    needed = tuple(sorted({g.key() for p in plans
                           for g in (*p.train_groups, *p.test_groups)}))
    datasets = _load_group_datasets(args.data_dir, needed, seed)
    rows = []
    for plan in plans:
        result = run_experiment(plan, datasets, cfg)
        train_label = "+".join(result["train_groups"])
        for group_key, acc in result["per_group"].items():
            rows.append([result["mode"], train_label, group_key, f"{acc:.4f}"])
        rows.append([result["mode"], train_label, "pooled",
                     f"{result['pooled']:.4f}"])
    write_csv(args.out, ["mode", "train_groups", "test_group", "accuracy"], rows)
    labels = [f"{r[1]}->{r[2]}" for r in rows]
    figures.save_accuracy_bars(labels, [float(r[3]) for r in rows],
                               str(Path(args.out).with_suffix(".png")),
                               title=f"{args.plan} experiment")
    for row in rows:
        print(",".join(str(v) for v in row))
    return 0


def cmd_enumerate_targets(args) -> int:
    pool = enumerate_target_pool(args.blocks, width=args.width,
                                 height=args.height)
    doc = [{"width": goal.width, "height": goal.height,
            "cells": goal.set_cells(),
            "orientations": [o.value for o in seq]} for goal, seq in pool]
    Path(args.out).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    print(f"wrote {len(pool)} targets to {args.out}")
    if args.render_dir:
        render_dir = Path(args.render_dir)
        render_dir.mkdir(parents=True, exist_ok=True)
        for i, (goal, _) in enumerate(pool):
            export_pgm(goal, render_dir / f"target_{args.blocks}b_{i:02d}.pgm")
    return 0


def _build_env(args, config: dict, seed: int):
    env_section = _section(config, "env")
    if args.env == "stack":
        width = env_section.get("width", 12)
        height = env_section.get("height", 8)
        pool = enumerate_target_pool(args.blocks, width=width, height=height)
        cfg = StackEnvConfig(
            width=width, height=height, target_pool=tuple(pool), seed=seed,
            max_episode_steps=env_section.get("max_episode_steps", 400))
        return StackEnv(cfg)
    size = env_section.get("size", args.grid_size)
    return GridworldEnv(GridworldConfig(size=size, seed=seed))


def _agent_config(args, config: dict, seed: int) -> AgentConfig:
    section = _section(config, "agent")
    section["goal_conditioned"] = args.mode == "gdqn"
    section["seed"] = seed
    if args.env == "grid":
        size = _section(config, "env").get("size", args.grid_size)
        cfg = gridworld_agent_config(size, **section)
    else:
        cfg = stacking_agent_config(**section)
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    if getattr(args, "epoch_steps", None) is not None:
        cfg.epoch_steps = args.epoch_steps
    if getattr(args, "test_steps", None) is not None:
        cfg.test_steps = args.test_steps
    return cfg


def _shaping_mode(args, config: dict) -> ShapingMode:
    mode = getattr(args, "shaping", None)
    if mode is None:
        mode = _section(config, "shaping").get("mode", "none")
    return ShapingMode(mode)


def cmd_train_agent(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    env = _build_env(args, config, seed)
    cfg = _agent_config(args, config, seed)
    shaping = _shaping_mode(args, config)
    net, metrics = train_agent(env, cfg, shaping)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "model.json").write_text(nn.save_model(net), encoding="utf-8")
    header = list(metrics[0].keys())
    write_csv(out_dir / "metrics.csv", header,
              [[row[k] for k in header] for row in metrics])
    figures.save_training_curves(metrics, str(out_dir / "metrics.png"))
    best = max((row.get("success_ratio") or row.get("test_sr") or 0.0)
               for row in metrics)
    print(f"trained {args.mode} on {args.env} for {cfg.epochs} epochs; "
          f"best test metric {best:.3f}; artifacts in {out_dir}")
    return 0


def _write_trace(env, net, cfg: AgentConfig, episodes: int, path: str) -> None:
    rng = np.random.default_rng([env.seed, 2])
    cap = env.cfg.max_episode_steps if isinstance(env, StackEnv) \
        else 4 * env.cfg.size ** 2
    with open(path, "w", encoding="utf-8") as fh:
        for _ in range(episodes):
            state = env.reset()
            steps = 0
            while steps < cap:
                s, g = encode_state_parts(state, cfg)
                x = assemble_inputs(s, g, cfg)[0]
                action = select_action(net, x, 0.0, rng, env.n_actions)
                outcome = env.step(action)
                fh.write(json.dumps({"state": state_hash(state),
                                     "action": action,
                                     "reward": outcome.reward,
                                     "event": outcome.event.value}) + "\n")
                state = outcome.next
                steps += 1
                if outcome.terminal:
                    break


def cmd_eval_agent(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    env = _build_env(args, config, seed)
    cfg = _agent_config(args, config, seed)
    net = nn.load_model(Path(args.model).read_text(encoding="utf-8"))
    report = evaluate_agent(env, net, cfg)
    if args.env == "grid":
        print(f"episodes {report.episodes} success_ratio "
              f"{report.success_ratio:.4f}")
        rows = [["episodes", report.episodes],
                ["success_ratio", f"{report.success_ratio:.4f}"]]
    else:
        print(f"episodes {report.episodes} OR {report.overlap_ratio_mean:.4f} "
              f"SR {report.success_rate:.4f}")
        rows = [["episodes", report.episodes],
                ["or", f"{report.overlap_ratio_mean:.4f}"],
                ["sr", f"{report.success_rate:.4f}"]]
    if args.out:
        write_csv(args.out, ["metric", "value"], rows)
    if args.trace:
        _write_trace(env.with_seed(seed + 1), net, cfg, args.trace_episodes,
                     args.trace)
    return 0


def cmd_render(args) -> int:
    records = read_dataset(args.input)
    if not (0 <= args.index < len(records)):
        raise IndexError(f"record index {args.index} out of range")
    scene = records[args.index].scene
    if args.cell_size is not None:
        cell = args.cell_size
    else:
        x_lo, _, x_hi, y_hi = scene.bounding_box()
        cell = max((x_hi - x_lo) / (args.width - 1),
                   y_hi / (args.height - 1), 1e-9)
    grid = rasterize_scene(scene, args.width, args.height, cell)
    if args.format == "pgm":
        export_pgm(grid, args.out)
    elif args.format == "ascii":
        Path(args.out).write_text(render_ascii(grid) + "\n", encoding="utf-8")
    else:
        figures.save_grid_image(grid, args.out)
    print(f"rendered record {args.index} to {args.out}")
    return 0


def cmd_score_placements(args) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args, config)
    records = read_dataset(args.scene)
    if not (0 <= args.index < len(records)):
        raise IndexError(f"record index {args.index} out of range")
    scene = records[args.index].scene
    cfg = _classifier_config(config, seed)
    net = nn.load_model(Path(args.model).read_text(encoding="utf-8"))
    candidates = enumerate_candidates(scene, args.nh, args.nv,
                                      args.block_w, args.block_h)
    scored, accuracy = score_placements(net, scene, candidates, cfg,
                                        args.block_w, args.block_h)
    rows = [[f"{c.x_center:.4f}", c.orientation.value,
             f"{c.predicted_p_stable:.4f}", c.oracle_label] for c in scored]
    if args.out:
        write_csv(args.out, ["x_center", "orientation", "p_stable", "oracle"],
                  rows)
    n_stable = sum(1 for c in scored if c.oracle_label == STABLE)
    attempted_ok = sum(1 for c in scored
                       if c.predicted_p_stable >= 0.5 and c.oracle_label == STABLE)
    print(f"{len(scored)} candidates, prediction accuracy {accuracy:.3f}, "
          f"{attempted_ok}/{n_stable} stable placements recognized")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stackrl",
        description="Block-tower stability datasets, classifiers, and "
                    "goal-conditioned stacking agents.")
    sub = parser.add_subparsers(dest="command")

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default: $STACKRL_SEED or 0)")
        p.add_argument("--config", default=None,
                       help="JSON run configuration file")

    p = sub.add_parser("gen-towers", help="generate a labeled scene dataset")
    p.add_argument("--params", required=True, help="scene group, e.g. 4B-2D-Uni")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stable-fraction", type=float, default=None,
                   help="optional target stable fraction (rejection sampling)")
    add_common(p)
    p.set_defaults(func=cmd_gen_towers)

    p = sub.add_parser("train-stab", help="train the stability classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out", default=None,
                   help="write per-epoch loss CSV (+PNG)")
    add_common(p)
    p.set_defaults(func=cmd_train_stab)

    p = sub.add_parser("eval-stab", help="evaluate a classifier on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    add_common(p)
    p.set_defaults(func=cmd_eval_stab)

    p = sub.add_parser("run-experiment",
                       help="train/evaluate over experiment protocols")
    p.add_argument("--plan", choices=(MODE_INTRA, MODE_CROSS, MODE_GENERAL),
                   required=True)
    p.add_argument("--data-dir", required=True,
                   help="directory with <group>.jsonl datasets")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--groups", nargs="*", default=None,
                   help="override group list for intra/general plans")
    add_common(p)
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("enumerate-targets",
                       help="enumerate the stacking goal pool")
    p.add_argument("--blocks", type=int, choices=(2, 3, 4), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=12)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--render-dir", default=None)
    p.set_defaults(func=cmd_enumerate_targets)

    def add_agent_flags(p):
        p.add_argument("--env", choices=("stack", "grid"), required=True)
        p.add_argument("--mode", choices=("dqn", "gdqn"), required=True)
        p.add_argument("--blocks", type=int, choices=(2, 3, 4), default=2)
        p.add_argument("--grid-size", type=int, choices=(5, 7), default=5)
        p.add_argument("--test-steps", type=int, default=None)
        add_common(p)

    p = sub.add_parser("train-agent", help="train a stacking or gridworld agent")
    add_agent_flags(p)
    p.add_argument("--shaping", choices=("none", "or", "dt"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--epoch-steps", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("eval-agent", help="evaluate a trained agent")
    add_agent_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="optional CSV report")
    p.add_argument("--trace", default=None, help="optional JSONL rollout trace")
    p.add_argument("--trace-episodes", type=int, default=5)
    p.set_defaults(func=cmd_eval_agent)

    p = sub.add_parser("render", help="render a dataset scene")
    p.add_argument("--input", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--format", choices=("pgm", "ascii", "png"), default="pgm")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--cell-size", type=float, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("score-placements",
                       help="score candidate placements on a scene")
    p.add_argument("--scene", required=True, help="dataset JSONL file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--model", required=True)
    p.add_argument("--nh", type=int, default=9)
    p.add_argument("--nv", type=int, default=5)
    p.add_argument("--block-w", type=float, default=3.0)
    p.add_argument("--block-h", type=float, default=1.0)
    p.add_argument("--out", default=None)
    add_common(p)
    p.set_defaults(func=cmd_score_placements)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
