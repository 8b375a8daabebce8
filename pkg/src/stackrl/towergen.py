"""Random tower generation and labeled dataset assembly.

Towers are built bottom-up: a base block sits on the ground and every further
block lands on the top face of a uniformly chosen existing block, with a
horizontal offset drawn uniformly over the positions that keep a positive
contact overlap.  Scenes are labeled with the equilibrium check.

The plain generator produces mostly unstable scenes for tall towers, so an
optional rejection-sampling mode enforces a target stable fraction.  Both
halves of a balanced dataset come from proposals that re-draw placements
leaving the partial tower infeasible: always for the stable half, and for
most blocks of the unstable half, so an unstable tower is a plausible
structure whose instability hinges on a few bad placements rather than an
obvious pile of overhangs.  Rejection on the exact label runs on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Block2D, Scene
from .stability import STABLE, UNSTABLE, PreconditionError, StabilityConfig, \
    check_stability_lp, check_stability_recursive, stability_label

VALID_BLOCK_COUNTS = (4, 6, 10, 14)
SIZE_UNI = "uni"
SIZE_NONUNI = "nonuni"
DEPTH_2D = "2d"


class GenerationFailed(RuntimeError):
    """Placement retries exhausted; the configuration is degenerate."""


# fraction of placements in the unstable half of a balanced dataset that are
# still required to keep the partial tower feasible (see module docstring)
_UNSTABLE_PROPOSAL_BIAS = 0.95


class EmptyDataset(ValueError):
    """Operation requires at least one record."""


@dataclass(frozen=True)
class SceneParams:
    """Scene group descriptor, e.g. 4 blocks / uniform sizes / single layer."""

    n_blocks: int
    size_mode: str = SIZE_UNI
    depth: str = DEPTH_2D

    def __post_init__(self) -> None:
        if self.n_blocks not in VALID_BLOCK_COUNTS:
            raise ValueError(f"n_blocks must be one of {VALID_BLOCK_COUNTS}")
        if self.size_mode not in (SIZE_UNI, SIZE_NONUNI):
            raise ValueError(f"size_mode must be '{SIZE_UNI}' or '{SIZE_NONUNI}'")
        if self.depth != DEPTH_2D:
            raise ValueError("only single-layer (2d) scenes are supported")

    def key(self) -> str:
        size = "Uni" if self.size_mode == SIZE_UNI else "NonUni"
        return f"{self.n_blocks}B-2D-{size}"

    @staticmethod
    def parse(text: str) -> "SceneParams":
        parts = text.strip().split("-")
        if len(parts) != 3:
            raise ValueError(f"bad params {text!r}; expected e.g. '4B-2D-Uni'")
        n_part, depth_part, size_part = parts
        if not n_part.upper().endswith("B"):
            raise ValueError(f"bad block count in {text!r}")
        n = int(n_part[:-1])
        size = {"uni": SIZE_UNI, "nonuni": SIZE_NONUNI}.get(size_part.lower())
        if size is None or depth_part.lower() != "2d":
            raise ValueError(f"bad params {text!r}; expected e.g. '4B-2D-Uni'")
        return SceneParams(n_blocks=n, size_mode=size)


@dataclass(frozen=True)
class TowerGenConfig:
    sigma: float = 0.1        # stddev of the truncated normal size factor
    delta: float = 0.2        # truncation half-width of the size factor
    base_width: float = 3.0
    base_height: float = 1.0
    max_retries: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma <= 0 or not (0 < self.delta < 1):
            raise ValueError("need sigma > 0 and 0 < delta < 1")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass(frozen=True)
class DatasetRecord:
    id: int
    scene: Scene
    label: str
    params: SceneParams
    seed: int


def _truncated_factor(rng: np.random.Generator, sigma: float, delta: float) -> float:
    while True:
        v = rng.normal(1.0, sigma)
        if 1.0 - delta <= v <= 1.0 + delta:
            return float(v)


def _block_dims(params: SceneParams, cfg: TowerGenConfig,
                rng: np.random.Generator) -> tuple[float, float]:
    if params.size_mode == SIZE_NONUNI:
        return (cfg.base_width * _truncated_factor(rng, cfg.sigma, cfg.delta),
                cfg.base_height * _truncated_factor(rng, cfg.sigma, cfg.delta))
    return cfg.base_width, cfg.base_height


def _interior_overlap(cand: Block2D, blocks: list[Block2D], eps: float) -> bool:
    for b in blocks:
        dx = min(cand.x_hi, b.x_hi) - max(cand.x_lo, b.x_lo)
        dy = min(cand.y_top, b.y_top) - max(cand.y_bottom, b.y_bottom)
        if dx > eps and dy > eps:
            return True
    return False


def _is_stable(scene: Scene, stab_cfg: StabilityConfig) -> bool:
    """Internal rejection-loop check: the recursive oracle where it applies
    (tree support, the common case for towers mid-build), the LP otherwise.
    Final dataset labels always come from stability_label."""
    try:
        return check_stability_recursive(scene, stab_cfg).stable
    except PreconditionError:
        return check_stability_lp(scene, stab_cfg).stable


def generate_tower(params: SceneParams, cfg: TowerGenConfig,
                   rng: np.random.Generator,
                   stable_bias: float = 0.0,
                   stab_cfg: StabilityConfig = StabilityConfig()) -> Scene:
    """Generate one tower bottom-up.

    ``stable_bias`` is the per-block probability that a placement must keep
    the partial tower in equilibrium (re-drawn until it does).  Zero is the
    plain generator; one yields a stable tower by construction.  Once a
    violation is in, a committed instability cannot be repaired, so later
    constrained placements only keep their own center of mass over the
    supporter, which keeps the rest of the tower looking plausible.
    """
    w, h = _block_dims(params, cfg, rng)
    blocks = [Block2D(0.0, 0.0, w, h)]
    prefix_stable = True
    for _ in range(1, params.n_blocks):
        keep_stable = stable_bias > 0.0 and rng.random() < stable_bias
        for attempt in range(cfg.max_retries):
            w, h = _block_dims(params, cfg, rng)
            sup = blocks[int(rng.integers(0, len(blocks)))]
            offset = rng.uniform(-(sup.width + w) / 2.0, (sup.width + w) / 2.0)
            cand = Block2D(sup.x_center + offset, sup.y_top, w, h)
            if _interior_overlap(cand, blocks, stab_cfg.eps_touch):
                continue
            trial_stable = None
            if keep_stable and prefix_stable:
                trial = Scene(tuple(blocks) + (cand,), params)
                trial_stable = _is_stable(trial, stab_cfg)
                if not trial_stable:
                    continue
            elif keep_stable and abs(offset) > sup.width / 2.0:
                continue
            blocks.append(cand)
            if prefix_stable and stable_bias > 0.0 and trial_stable is None:
                prefix_stable = _is_stable(Scene(tuple(blocks), params),
                                           stab_cfg)
            break
        else:
            raise GenerationFailed(
                f"no placement found for block {len(blocks)} after "
                f"{cfg.max_retries} attempts")
    return Scene(tuple(blocks), params)


def _tower_with_label(params: SceneParams, cfg: TowerGenConfig,
                      rng: np.random.Generator, want: str,
                      stab_cfg: StabilityConfig) -> Scene:
    bias = 1.0 if want == STABLE else _UNSTABLE_PROPOSAL_BIAS
    for _ in range(cfg.max_retries):
        try:
            scene = generate_tower(params, cfg, rng, stable_bias=bias,
                                   stab_cfg=stab_cfg)
        except GenerationFailed:
            continue
        if stability_label(scene, stab_cfg) == want:
            return scene
    raise GenerationFailed(f"could not generate a {want} {params.key()} scene")


def generate_dataset(params: SceneParams, count: int, cfg: TowerGenConfig,
                     seed: int | None = None,
                     stable_fraction: float | None = None,
                     stab_cfg: StabilityConfig = StabilityConfig()
                     ) -> tuple[list[DatasetRecord], dict]:
    """Generate ``count`` labeled records plus a label-count report.

    Record ``i`` is a pure function of (params, cfg, seed, i), so datasets can
    be sharded across workers by index range and merged in order.  With
    ``stable_fraction`` set, the first round(count * fraction) records are
    generated stable and the rest unstable (rejection sampling); the split
    step shuffles, so dataset order carries no information downstream.
    """
    if count < 1:
        raise EmptyDataset("count must be >= 1")
    base_seed = cfg.seed if seed is None else seed
    n_stable = None if stable_fraction is None else int(round(count * stable_fraction))
    records: list[DatasetRecord] = []
    for i in range(count):
        rng = np.random.default_rng([base_seed, i])
        if n_stable is None:
            scene = generate_tower(params, cfg, rng, stab_cfg=stab_cfg)
            label = stability_label(scene, stab_cfg)
        else:
            want = STABLE if i < n_stable else UNSTABLE
            scene = _tower_with_label(params, cfg, rng, want, stab_cfg)
            label = want
        records.append(DatasetRecord(id=i, scene=scene, label=label,
                                     params=params, seed=base_seed))
    report = {
        "params": params.key(),
        "count": count,
        STABLE: sum(1 for r in records if r.label == STABLE),
        UNSTABLE: sum(1 for r in records if r.label == UNSTABLE),
    }
    return records, report


def split_dataset(records: list[DatasetRecord], fraction: float,
                  rng: np.random.Generator
                  ) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Disjoint shuffled partition; train gets floor(count * fraction)."""
    if not records:
        raise EmptyDataset("cannot split an empty dataset")
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    order = rng.permutation(len(records))
    n_train = int(len(records) * fraction)
    train = [records[i] for i in order[:n_train]]
    test = [records[i] for i in order[n_train:]]
    return train, test
