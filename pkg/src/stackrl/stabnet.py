"""Mask-based stability classifier, experiment protocols, and placement
scoring for single-block stacking.

The classifier never sees world coordinates: each scene is rasterized into a
binary mask with the tower centered and scaled to fill the window (the same
normalization a tracking camera would apply), pooled down to a small
real-valued mask, and fed to a dense network with a sigmoid output that
estimates the probability the scene is stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .geometry import Block2D, Orientation, Scene, downscale_mask, rasterize_scene
from .stability import STABLE, StabilityConfig, stability_label
from .towergen import DatasetRecord, EmptyDataset, SceneParams

MODE_INTRA = "intra"
MODE_CROSS = "cross"
MODE_GENERAL = "general"


class EmptyScene(ValueError):
    """Operation needs at least one block in the scene."""


class MissingGroup(KeyError):
    """Experiment plan references a dataset group that was not provided."""


@dataclass(frozen=True)
class ClassifierConfig:
    mask_w: int = 32
    mask_h: int = 32
    raster_w: int = 64
    raster_h: int = 64
    hidden: tuple[int, ...] = (256, 64)
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.03
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mask_w < 1 or self.mask_h < 1 or not self.hidden:
            raise ValueError("mask dims and hidden sizes must be >= 1")
        if self.mask_w > self.raster_w or self.mask_h > self.raster_h:
            raise ValueError("mask must not exceed the raster resolution")


@dataclass(frozen=True)
class ExperimentPlan:
    train_groups: tuple[SceneParams, ...]
    test_groups: tuple[SceneParams, ...]
    mode: str

    def __post_init__(self) -> None:
        if not self.train_groups or not self.test_groups:
            raise ValueError("plan groups must be non-empty")
        if self.mode not in (MODE_INTRA, MODE_CROSS, MODE_GENERAL):
            raise ValueError(f"unknown experiment mode {self.mode!r}")


@dataclass
class Candidate:
    x_center: float
    orientation: Orientation
    predicted_p_stable: float | None = None
    oracle_label: str | None = None


def scene_to_mask(scene: Scene, cfg: ClassifierConfig) -> np.ndarray:
    """Fit the scene into the raster window and pool to the mask size.

    The cell size adapts per scene so that the tower is centered and fills
    the window regardless of its extent; stability is scale invariant, so
    the normalization loses no label-relevant information.
    """
    x_lo, _, x_hi, y_hi = scene.bounding_box()
    cell = max((x_hi - x_lo) / (cfg.raster_w - 1),
               y_hi / (cfg.raster_h - 1), 1e-9)
    grid = rasterize_scene(scene, cfg.raster_w, cfg.raster_h, cell)
    return downscale_mask(grid, cfg.mask_w, cfg.mask_h)


def records_to_arrays(records: list[DatasetRecord],
                      cfg: ClassifierConfig) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, targets); target 1.0 marks a stable scene."""
    xs = np.stack([scene_to_mask(r.scene, cfg).ravel() for r in records])
    ys = np.array([[1.0 if r.label == STABLE else 0.0] for r in records])
    return xs, ys


def build_classifier(cfg: ClassifierConfig) -> nn.Network:
    specs = []
    prev = cfg.mask_w * cfg.mask_h
    for width in cfg.hidden:
        specs.append(nn.LayerSpec(prev, width, nn.ACT_RELU))
        prev = width
    specs.append(nn.LayerSpec(prev, 1, nn.ACT_SIGMOID))
    return nn.net_init(tuple(specs), cfg.seed)


def train_classifier(train_records: list[DatasetRecord],
                     cfg: ClassifierConfig) -> tuple[nn.Network, dict]:
    """Train the sigmoid/BCE classifier; returns the net and a report with
    per-epoch losses and the final train accuracy."""
    if not train_records:
        raise EmptyDataset("no training records")
    xs, ys = records_to_arrays(train_records, cfg)
    net = build_classifier(cfg)
    opt = nn.OptimizerState(cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(xs))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            out, cache = nn.forward(net, xs[idx])
            epoch_losses.append(nn.loss_value(nn.Loss.BCE, out, ys[idx]))
            grads = nn.backward(net, cache, nn.Loss.BCE, ys[idx])
            nn.optimizer_step(net, grads, opt)
        losses.append(float(np.mean(epoch_losses)))
    out, _ = nn.forward(net, xs)
    acc = float(np.mean((out[:, 0] >= 0.5) == (ys[:, 0] == 1.0)))
    return net, {"epoch_losses": losses, "final_train_accuracy": acc}


def eval_classifier(net: nn.Network, records: list[DatasetRecord],
                    cfg: ClassifierConfig) -> float:
    """Fraction of records where (p >= 0.5) matches the stored label."""
    if not records:
        raise EmptyDataset("no evaluation records")
    xs, ys = records_to_arrays(records, cfg)
    out, _ = nn.forward(net, xs)
    return float(np.mean((out[:, 0] >= 0.5) == (ys[:, 0] == 1.0)))


def run_experiment(plan: ExperimentPlan,
                   datasets: dict[str, tuple[list[DatasetRecord],
                                             list[DatasetRecord]]],
                   cfg: ClassifierConfig) -> dict:
    """Train once on the union of the plan's train halves and evaluate on
    every test group; returns per-group and pooled accuracies."""
    for group in (*plan.train_groups, *plan.test_groups):
        if group.key() not in datasets:
            raise MissingGroup(group.key())
    train_records = [r for g in plan.train_groups for r in datasets[g.key()][0]]
    net, report = train_classifier(train_records, cfg)
    per_group = {}
    pooled: list[DatasetRecord] = []
    for group in plan.test_groups:
        test_records = datasets[group.key()][1]
        per_group[group.key()] = eval_classifier(net, test_records, cfg)
        pooled.extend(test_records)
    return {
        "mode": plan.mode,
        "train_groups": [g.key() for g in plan.train_groups],
        "per_group": per_group,
        "pooled": eval_classifier(net, pooled, cfg),
        "train_report": report,
    }


def stacking_surface(scene: Scene,
                     eps: float = 1e-6) -> tuple[float, float, float]:
    """(x_lo, x_hi, y) of the topmost horizontal surface: the extent of the
    top faces at the maximum height."""
    if not scene.blocks:
        raise EmptyScene("no blocks to stack onto")
    top = max(b.y_top for b in scene.blocks)
    at_top = [b for b in scene.blocks if abs(b.y_top - top) <= eps]
    return (min(b.x_lo for b in at_top), max(b.x_hi for b in at_top), top)


def enumerate_candidates(scene: Scene, n_h: int, n_v: int,
                         block_w: float = 3.0,
                         block_h: float = 1.0) -> list[Candidate]:
    """Evenly spaced placement centers over the stacking surface.

    ``n_h`` horizontal-orientation candidates and ``n_v`` vertical ones;
    candidate i of k sits at x_lo + (i + 0.5) * (x_hi - x_lo) / k.
    """
    del block_w, block_h  # orientation only affects the composed block
    x_lo, x_hi, _ = stacking_surface(scene)
    out = []
    for orientation, count in ((Orientation.HORIZONTAL, n_h),
                               (Orientation.VERTICAL, n_v)):
        for i in range(count):
            center = x_lo + (i + 0.5) * (x_hi - x_lo) / count
            out.append(Candidate(x_center=center, orientation=orientation))
    return out


def compose_candidate(scene: Scene, candidate: Candidate, block_w: float = 3.0,
                      block_h: float = 1.0) -> Scene:
    """Scene plus the candidate block resting on the stacking surface."""
    _, _, top = stacking_surface(scene)
    w, h = ((block_w, block_h) if candidate.orientation is Orientation.HORIZONTAL
            else (block_h, block_w))
    return Scene(scene.blocks + (Block2D(candidate.x_center, top, w, h),))


def score_placements(net: nn.Network, scene: Scene,
                     candidates: list[Candidate], cfg: ClassifierConfig,
                     block_w: float = 3.0, block_h: float = 1.0,
                     stab_cfg: StabilityConfig = StabilityConfig()
                     ) -> tuple[list[Candidate], float]:
    """Fill predictions and oracle labels for every candidate placement.

    Returns the scored candidates and the prediction accuracy against the
    equilibrium oracle.
    """
    if not candidates:
        raise EmptyScene("no candidates to score")
    scored = []
    hits = 0
    for cand in candidates:
        composed = compose_candidate(scene, cand, block_w, block_h)
        x = scene_to_mask(composed, cfg).ravel()
        p, _ = nn.forward(net, x)
        label = stability_label(composed, stab_cfg)
        scored.append(Candidate(cand.x_center, cand.orientation,
                                predicted_p_stable=float(p[0]),
                                oracle_label=label))
        if (p[0] >= 0.5) == (label == STABLE):
            hits += 1
    return scored, hits / len(scored)


def manipulation_success_rate(successful: int, all_stable: int) -> float:
    """Successful placements over ground-truth stable placements."""
    if all_stable < 0 or successful < 0 or successful > all_stable:
        raise ValueError("need 0 <= successful <= all_stable")
    if all_stable == 0:
        return 0.0
    return successful / all_stable
