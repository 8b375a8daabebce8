"""Interactive episodic environments: grid-based target stacking and a
gridworld navigation toy task.

The stacking environment keeps two binary maps per episode, one for the
placed structure (background) and one for the single moving block
(foreground).  Actions shift the moving block by one cell.  A move that would
leave the scene ends the episode (out of bounds); a move into occupied cells
ends it (collision); a downward move that brings, or finds, the block
vertically adjacent to the structure or the ground places it.  Placement
merges the block into the background and runs the equilibrium check on the
placed blocks; an infeasible structure collapses and ends the episode.
Horizontal contact never places a block.

Both environments are deterministic functions of (config, seed, actions).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import GridBlock, GridMap, Orientation, grid_blocks_to_scene, \
    grid_equal, grid_union
from .stability import StabilityConfig, stability_label, STABLE
from .shaping import DistanceField, ShapingMode, distance_transform, \
    shaped_reward_dt, shaped_reward_overlap


class SteppedTerminalEpisode(RuntimeError):
    """step() was called on a terminal state."""


class UndecomposableGoal(ValueError):
    """Goal map does not decompose uniquely into 5-cell block footprints."""


class StackAction(Enum):
    LEFT = 0
    RIGHT = 1
    DOWN = 2


class GridAction(Enum):
    LEFT = 0
    RIGHT = 1
    UP = 2
    DOWN = 3


class StackEvent(Enum):
    MOVED = "moved"
    PLACED = "placed"
    COLLISION = "collision"
    OUT_OF_BOUNDS = "out_of_bounds"
    COLLAPSE = "collapse"
    EPISODE_SUCCESS = "episode_success"
    EPISODE_FAIL = "episode_fail"


TERMINAL_EVENTS = frozenset({
    StackEvent.COLLISION, StackEvent.OUT_OF_BOUNDS, StackEvent.COLLAPSE,
    StackEvent.EPISODE_SUCCESS, StackEvent.EPISODE_FAIL,
})

DEFAULT_MAX_EPISODE_STEPS = 400


@dataclass(frozen=True)
class StackEnvConfig:
    # 12x8 keeps every reward-relevant structure reachable by the annealed
    # exploration schedule; on substantially larger grids the success signal
    # is too rare for the sparse-reward agents to bootstrap at all
    width: int = 12
    height: int = 8
    target_pool: tuple[tuple[GridMap, tuple[Orientation, ...]], ...] = ()
    seed: int = 0
    max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS
    stability: StabilityConfig = StabilityConfig()

    def __post_init__(self) -> None:
        if self.width < 7 or self.height < 7:
            raise ValueError("grid must be at least 7x7")
        if not self.target_pool:
            raise ValueError("target pool must not be empty")
        for goal, _ in self.target_pool:
            if goal.width != self.width or goal.height != self.height:
                raise ValueError("every goal must match the grid dimensions")


@dataclass(frozen=True)
class StackState:
    background: GridMap
    foreground: GridMap
    goal: GridMap
    blocks_placed: int
    blocks_total: int
    current_orientation: Orientation
    placed_blocks: tuple[GridBlock, ...] = ()
    fg_block: GridBlock | None = None
    orientation_seq: tuple[Orientation, ...] = ()
    steps: int = 0
    terminal: bool = False


@dataclass(frozen=True)
class StepOutcome:
    next: object
    reward: float
    terminal: bool
    event: StackEvent


@dataclass(frozen=True)
class GridworldConfig:
    size: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size not in (5, 7):
            raise ValueError("gridworld size must be 5 or 7")


@dataclass(frozen=True)
class GridworldState:
    size: int
    agent: tuple[int, int]  # (col, row)
    goal: tuple[int, int]
    steps: int = 0
    terminal: bool = False


def _spawn_columns(background: GridMap, orientation: Orientation) -> list[int]:
    """Columns where a fresh block fits fully in bounds at the top without
    overlapping the placed structure."""
    w, h = orientation.cell_dims()
    height, width = background.cells.shape
    row = height - h
    cols = []
    for col in range(width - w + 1):
        if not background.cells[row:row + h, col:col + w].any():
            cols.append(col)
    return cols


def _spawn(background: GridMap, orientation: Orientation,
           rng: np.random.Generator) -> GridBlock | None:
    """Fresh block at the top, or None when the structure blocks every
    spawn column (the episode cannot continue)."""
    cols = _spawn_columns(background, orientation)
    if not cols:
        return None
    col = int(cols[rng.integers(0, len(cols))])
    _, h = orientation.cell_dims()
    return GridBlock(col=col, row=background.height - h, orientation=orientation)


def _block_map(block: GridBlock, width: int, height: int) -> GridMap:
    arr = np.zeros((height, width), dtype=bool)
    w, h = block.cell_dims()
    arr[block.row:block.row + h, block.col:block.col + w] = True
    return GridMap(arr)


def _supported_below(fg: GridMap, bg: GridMap) -> bool:
    """True if any foreground cell sits on the ground or right above a
    background cell."""
    cells = fg.cells
    if cells[0, :].any():
        return True
    return bool((cells[1:, :] & bg.cells[:-1, :]).any())


def stack_reset(cfg: StackEnvConfig, rng: np.random.Generator) -> StackState:
    """Sample a goal from the pool and spawn the first block at the top."""
    goal, seq = cfg.target_pool[int(rng.integers(0, len(cfg.target_pool)))]
    background = GridMap.empty(cfg.width, cfg.height)
    block = _spawn(background, seq[0], rng)
    assert block is not None  # an empty scene always has spawn room
    return StackState(
        background=background,
        foreground=_block_map(block, cfg.width, cfg.height),
        goal=goal,
        blocks_placed=0,
        blocks_total=len(seq),
        current_orientation=seq[0],
        placed_blocks=(),
        fg_block=block,
        orientation_seq=seq,
    )


def _finish(state: StackState, event: StackEvent, reward: float,
            **changes) -> StepOutcome:
    nxt = replace(state, steps=state.steps + 1, terminal=True, **changes)
    return StepOutcome(next=nxt, reward=reward, terminal=True, event=event)


def _place(state: StackState, cfg: StackEnvConfig, block: GridBlock,
           rng: np.random.Generator) -> StepOutcome:
    placed = state.placed_blocks + (block,)
    background = grid_union(state.background,
                            _block_map(block, cfg.width, cfg.height))
    label = stability_label(grid_blocks_to_scene(placed), cfg.stability)
    empty_fg = GridMap.empty(cfg.width, cfg.height)
    if label != STABLE:
        return _finish(state, StackEvent.COLLAPSE, 0.0, background=background,
                       foreground=empty_fg, fg_block=None, placed_blocks=placed,
                       blocks_placed=state.blocks_placed + 1)
    if state.blocks_placed + 1 == state.blocks_total:
        success = grid_equal(background, state.goal)
        event = StackEvent.EPISODE_SUCCESS if success else StackEvent.EPISODE_FAIL
        return _finish(state, event, 1.0 if success else 0.0,
                       background=background, foreground=empty_fg,
                       fg_block=None, placed_blocks=placed,
                       blocks_placed=state.blocks_placed + 1)
    nxt_orient = state.orientation_seq[state.blocks_placed + 1]
    spawned = _spawn(background, nxt_orient, rng)
    if spawned is None:
        # the placed structure walls off the whole top row: episode is stuck
        return _finish(state, StackEvent.EPISODE_FAIL, 0.0,
                       background=background, foreground=empty_fg,
                       fg_block=None, placed_blocks=placed,
                       blocks_placed=state.blocks_placed + 1)
    nxt = replace(state, background=background,
                  foreground=_block_map(spawned, cfg.width, cfg.height),
                  fg_block=spawned, placed_blocks=placed,
                  blocks_placed=state.blocks_placed + 1,
                  current_orientation=nxt_orient, steps=state.steps + 1)
    return StepOutcome(next=nxt, reward=0.0, terminal=False,
                       event=StackEvent.PLACED)


def stack_step(state: StackState, action: StackAction, cfg: StackEnvConfig,
               rng: np.random.Generator) -> StepOutcome:
    """Advance the stacking episode by one action.

    Rewards here are the base scheme: +1 on exact reproduction, 0 otherwise.
    Shaping deltas are layered on top by the caller (see reward_shape).
    """
    if state.terminal:
        raise SteppedTerminalEpisode("episode already ended")
    block = state.fg_block
    assert block is not None
    # a Down while already resting on support places in place instead of
    # colliding; vertical contact always means placement, never overlap
    if action is StackAction.DOWN and \
            _supported_below(state.foreground, state.background):
        return _place(state, cfg, block, rng)
    dc, dr = {StackAction.LEFT: (-1, 0), StackAction.RIGHT: (1, 0),
              StackAction.DOWN: (0, -1)}[action]
    moved = GridBlock(block.col + dc, block.row + dr, block.orientation)
    if not moved.fits(cfg.width, cfg.height):
        return _finish(state, StackEvent.OUT_OF_BOUNDS, 0.0)
    moved_map = _block_map(moved, cfg.width, cfg.height)
    if (moved_map.cells & state.background.cells).any():
        return _finish(state, StackEvent.COLLISION, 0.0)
    if action is StackAction.DOWN and \
            _supported_below(moved_map, state.background):
        return _place(state, cfg, moved, rng)
    if state.steps + 1 >= cfg.max_episode_steps:
        return _finish(state, StackEvent.EPISODE_FAIL, 0.0,
                       foreground=moved_map, fg_block=moved)
    nxt = replace(state, foreground=moved_map, fg_block=moved,
                  steps=state.steps + 1)
    return StepOutcome(next=nxt, reward=0.0, terminal=False,
                       event=StackEvent.MOVED)


def state_cells(state: StackState) -> GridMap:
    """Full scene occupancy: placed structure plus the in-flight block."""
    return grid_union(state.background, state.foreground)


class StackEnv:
    """Stateful wrapper with the episodic reset/step interface."""

    kind = "stack"

    def __init__(self, cfg: StackEnvConfig, seed: int | None = None) -> None:
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.state: StackState | None = None
        self._dt_field: DistanceField | None = None
        self._dt_field_goal: np.ndarray | None = None

    @property
    def n_actions(self) -> int:
        return len(StackAction)

    def action(self, index: int) -> StackAction:
        return StackAction(index)

    def with_seed(self, seed: int) -> "StackEnv":
        return StackEnv(self.cfg, seed)

    def reset(self) -> StackState:
        self.state = stack_reset(self.cfg, self.rng)
        self._dt_field = None
        return self.state

    def step(self, action: StackAction | int) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if isinstance(action, int):
            action = StackAction(action)
        outcome = stack_step(self.state, action, self.cfg, self.rng)
        self.state = outcome.next
        return outcome

    def reward_shape(self, prev_state: StackState, next_state: StackState,
                     mode: ShapingMode) -> float:
        """Shaping delta for one transition, to be added to the base reward."""
        if mode is ShapingMode.NONE:
            return 0.0
        prev_cells = state_cells(prev_state)
        next_cells = state_cells(next_state)
        if mode is ShapingMode.OVERLAP_RATIO:
            return shaped_reward_overlap(prev_cells, next_cells, prev_state.goal)
        if self._dt_field is None or \
                not np.array_equal(self._dt_field_goal, prev_state.goal.cells):
            self._dt_field = distance_transform(prev_state.goal)
            self._dt_field_goal = prev_state.goal.cells
        return shaped_reward_dt(prev_cells, next_cells, self._dt_field)


def grid_reset(cfg: GridworldConfig, rng: np.random.Generator) -> GridworldState:
    """Uniform distinct agent and goal cells."""
    n = cfg.size * cfg.size
    agent = int(rng.integers(0, n))
    goal = int(rng.integers(0, n - 1))
    if goal >= agent:
        goal += 1
    return GridworldState(size=cfg.size,
                          agent=(agent % cfg.size, agent // cfg.size),
                          goal=(goal % cfg.size, goal // cfg.size))


def grid_step(state: GridworldState, action: GridAction) -> StepOutcome:
    """Move one cell; off-grid moves keep the position; +1 only at the goal."""
    if state.terminal:
        raise SteppedTerminalEpisode("episode already ended")
    dc, dr = {GridAction.LEFT: (-1, 0), GridAction.RIGHT: (1, 0),
              GridAction.UP: (0, 1), GridAction.DOWN: (0, -1)}[action]
    col = state.agent[0] + dc
    row = state.agent[1] + dr
    if not (0 <= col < state.size and 0 <= row < state.size):
        col, row = state.agent
    reached = (col, row) == state.goal
    nxt = replace(state, agent=(col, row), steps=state.steps + 1,
                  terminal=reached)
    return StepOutcome(next=nxt, reward=1.0 if reached else 0.0,
                       terminal=reached,
                       event=StackEvent.EPISODE_SUCCESS if reached
                       else StackEvent.MOVED)


class GridworldEnv:
    """Navigation toy task with randomized start and goal per episode."""

    kind = "grid"

    def __init__(self, cfg: GridworldConfig, seed: int | None = None) -> None:
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.state: GridworldState | None = None

    @property
    def n_actions(self) -> int:
        return len(GridAction)

    def action(self, index: int) -> GridAction:
        return GridAction(index)

    def with_seed(self, seed: int) -> "GridworldEnv":
        return GridworldEnv(self.cfg, seed)

    def reset(self) -> GridworldState:
        self.state = grid_reset(self.cfg, self.rng)
        return self.state

    def step(self, action: GridAction | int) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if isinstance(action, int):
            action = GridAction(action)
        outcome = grid_step(self.state, action)
        self.state = outcome.next
        return outcome

    def reward_shape(self, prev_state, next_state, mode: ShapingMode) -> float:
        return 0.0


def _decompose(goal: GridMap) -> list[GridBlock]:
    """Unique exact cover of the goal cells by 5-cell block footprints."""
    if goal.set_count() % 5 != 0:
        raise UndecomposableGoal("goal cell count is not a multiple of 5")
    width, height = goal.width, goal.height
    target = {(int(c), int(r)) for r, c in zip(*np.nonzero(goal.cells))}
    solutions: list[list[GridBlock]] = []

    def first_open(claimed: set) -> tuple[int, int] | None:
        for r in range(height):
            for c in range(width):
                if (c, r) in target and (c, r) not in claimed:
                    return (c, r)
        return None

    def search(claimed: set, acc: list[GridBlock]) -> None:
        if len(solutions) > 1:
            return
        cell = first_open(claimed)
        if cell is None:
            solutions.append(list(acc))
            return
        col, row = cell
        for orient in (Orientation.HORIZONTAL, Orientation.VERTICAL):
            block = GridBlock(col, row, orient)
            cells = set(block.cells())
            if cells <= target and not (cells & claimed):
                acc.append(block)
                search(claimed | cells, acc)
                acc.pop()

    search(set(), [])
    if not solutions:
        raise UndecomposableGoal("no block decomposition exists")
    if len(solutions) > 1:
        raise UndecomposableGoal("block decomposition is not unique")
    return solutions[0]


def orientation_sequence(goal: GridMap) -> tuple[Orientation, ...]:
    """Block orientations in placement order: bottom-up, then left-to-right."""
    blocks = _decompose(goal)
    blocks.sort(key=lambda b: (b.row, b.col))
    return tuple(b.orientation for b in blocks)


def _connected(cells: set) -> bool:
    if not cells:
        return False
    seen = set()
    stack = [next(iter(cells))]
    while stack:
        c, r = stack.pop()
        if (c, r) in seen:
            continue
        seen.add((c, r))
        for nc, nr in ((c - 1, r), (c + 1, r), (c, r - 1), (c, r + 1)):
            if (nc, nr) in cells and (nc, nr) not in seen:
                stack.append((nc, nr))
    return seen == cells


def _components(cells: set) -> list[set]:
    comps = []
    seen: set = set()
    for start in cells:
        if start in seen:
            continue
        comp = set()
        stack = [start]
        while stack:
            c, r = stack.pop()
            if (c, r) in comp:
                continue
            comp.add((c, r))
            seen.add((c, r))
            for n in ((c - 1, r), (c + 1, r), (c, r - 1), (c, r + 1)):
                if n in cells and n not in comp:
                    stack.append(n)
        comps.append(comp)
    return comps


def _enumerate_structures(n_blocks: int, win_w: int,
                          win_h: int) -> dict[tuple, list[GridBlock]]:
    """All connected n-block structures, deduplicated by horizontal
    translation, keyed by the normalized sorted cell set.

    Blocks are placed depth-first in canonical bottom-up, left-to-right order
    of their anchor cells, so each structure is visited exactly once.  A
    branch dies as soon as some connected component can no longer be reached
    by later (never lower) placements.
    """
    structures: dict[tuple, list[GridBlock]] = {}

    def candidates(cells: set, last: tuple[int, int]) -> list[GridBlock]:
        cand = set()
        for col in range(win_w):
            for orient in (Orientation.HORIZONTAL, Orientation.VERTICAL):
                if (0, col) > last:
                    cand.add(GridBlock(col, 0, orient))
        for c, r in cells:
            row = r + 1
            if (row, c) > last:
                cand.add(GridBlock(c, row, Orientation.VERTICAL))
            for dc in range(5):
                if (row, c - dc) > last:
                    cand.add(GridBlock(c - dc, row, Orientation.HORIZONTAL))
        out = []
        for block in sorted(cand, key=lambda b: (b.row, b.col, b.orientation.value)):
            if not block.fits(win_w, win_h):
                continue
            fp = set(block.cells())
            if fp & cells:
                continue
            if block.row > 0 and not any((col, block.row - 1) in cells
                                         for col, row in fp if row == block.row):
                continue
            out.append(block)
        return out

    def place(seq: list[GridBlock], cells: set) -> None:
        if len(seq) == n_blocks:
            if len(_components(cells)) != 1:
                return
            min_col = min(c for c, _ in cells)
            # column-major key: tall compact towers sort first, so the capped
            # pool is dominated by stacking-style targets
            norm = tuple(sorted((c - min_col, r) for c, r in cells))
            if norm not in structures:
                structures[norm] = [GridBlock(b.col - min_col, b.row,
                                              b.orientation) for b in seq]
            return
        last = (seq[-1].row, seq[-1].col) if seq else (-1, win_w)
        for block in candidates(cells, last):
            fp = set(block.cells())
            new_cells = cells | fp
            if len(seq) + 1 < n_blocks:
                comps = _components(new_cells)
                if len(comps) >= 2 and any(
                        max(r for _, r in comp) < block.row - 1
                        for comp in comps):
                    continue  # some component is already unreachable
            seq.append(block)
            place(seq, new_cells)
            seq.pop()

    place([], set())
    return structures


def _supported_at(block: GridBlock, cells: set) -> bool:
    w, _ = block.cell_dims()
    if block.row == 0:
        return True
    return any((block.col + dc, block.row - 1) in cells for dc in range(w))


def _overlaps(block: GridBlock, cells: set) -> bool:
    return bool(set(block.cells()) & cells)


def _scripted_reachable(structure: set, target: GridBlock, width: int,
                        height: int) -> bool:
    """True if align-then-descend reaches the target position from every
    legal spawn column, given the already-built structure cells."""
    w, h = target.cell_dims()
    spawn_row = height - h
    for s in range(width - w + 1):
        block = GridBlock(s, spawn_row, target.orientation)
        if _overlaps(block, structure):
            continue  # that spawn column is never drawn
        step = 1 if target.col > s else -1
        col = s
        ok = True
        while col != target.col:
            col += step
            if _overlaps(GridBlock(col, spawn_row, target.orientation),
                         structure):
                ok = False
                break
        row = spawn_row
        while ok:
            here = GridBlock(target.col, row, target.orientation)
            if _supported_at(here, structure):
                ok = row == target.row
                break
            row -= 1
            if _overlaps(GridBlock(target.col, row, target.orientation),
                         structure):
                ok = False
        if not ok:
            return False
    return True


def _buildable_from_any_spawn(blocks: list[GridBlock], width: int,
                              height: int) -> bool:
    """Whether the planner-free policy (align the column, then descend, in
    bottom-up left-to-right order) reproduces the structure regardless of
    where each block spawns.  Targets failing this are unreachable for some
    episodes, since blocks can never move upward over a built pillar."""
    ordered = sorted(blocks, key=lambda b: (b.row, b.col))
    structure: set = set()
    for block in ordered:
        if not _scripted_reachable(structure, block, width, height):
            return False
        structure |= set(block.cells())
    return True


_POOL_CACHE: dict[tuple[int, int, int, int], list] = {}


def enumerate_target_pool(n_blocks: int, cfg: StackEnvConfig | None = None,
                          width: int = 12, height: int = 8,
                          cap: int = 12) -> list[tuple[GridMap,
                                                       tuple[Orientation, ...]]]:
    """Deterministically enumerate connected stable goal structures.

    Structures are generated depth-first in canonical bottom-up order,
    deduplicated by horizontal translation, sorted lexicographically by their
    normalized cell sets, then filtered by the stability check and unique
    decomposability until the cap is reached.  Goals are centered horizontally
    in the environment grid.  Results are memoized per process.
    """
    if n_blocks not in (2, 3, 4):
        raise ValueError("target pools are defined for 2, 3 or 4 blocks")
    if cfg is not None:
        width, height = cfg.width, cfg.height
    stab_cfg = cfg.stability if cfg is not None else StabilityConfig()
    cache_key = (n_blocks, width, height, cap)
    cacheable = stab_cfg == StabilityConfig()
    if cacheable and cache_key in _POOL_CACHE:
        return list(_POOL_CACHE[cache_key])

    structures = _enumerate_structures(n_blocks, min(width, 5 * n_blocks),
                                       min(height, 5 * n_blocks))
    pool = []
    for norm_key in sorted(structures):
        blocks = structures[norm_key]
        if stability_label(grid_blocks_to_scene(blocks), stab_cfg) != STABLE:
            continue
        struct_w = max(b.col + b.cell_dims()[0] for b in blocks)
        offset = (width - struct_w) // 2
        centered = [GridBlock(b.col + offset, b.row, b.orientation)
                    for b in blocks]
        if not _buildable_from_any_spawn(centered, width, height):
            continue
        goal_arr = np.zeros((height, width), dtype=bool)
        for b in centered:
            w, h = b.cell_dims()
            goal_arr[b.row:b.row + h, b.col:b.col + w] = True
        goal = GridMap(goal_arr)
        try:
            seq = orientation_sequence(goal)
        except UndecomposableGoal:
            continue
        pool.append((goal, seq))
        if len(pool) >= cap:
            break
    if cacheable:
        _POOL_CACHE[cache_key] = list(pool)
    return pool


def scripted_action(state: StackState) -> StackAction:
    """One step of the planner-free optimal policy: align the moving block
    with its goal column, then descend.  Valid for enumerated pool targets."""
    blocks = _decompose(state.goal)
    blocks.sort(key=lambda b: (b.row, b.col))
    target = blocks[state.blocks_placed]
    assert state.fg_block is not None
    if state.fg_block.col < target.col:
        return StackAction.RIGHT
    if state.fg_block.col > target.col:
        return StackAction.LEFT
    return StackAction.DOWN


def state_hash(state: StackState | GridworldState) -> str:
    """Stable short digest of a state, for rollout traces."""
    h = hashlib.sha256()
    if isinstance(state, StackState):
        h.update(state.background.cells.tobytes())
        h.update(state.foreground.cells.tobytes())
        h.update(state.goal.cells.tobytes())
        h.update(bytes([state.blocks_placed, state.blocks_total]))
    else:
        h.update(repr((state.size, state.agent, state.goal)).encode())
    return h.hexdigest()[:16]


def render_ascii(grid: GridMap, overlay: GridMap | None = None) -> str:
    """Rows top-first; '#' for set cells, 'o' for overlay cells, '.' empty."""
    lines = []
    for r in range(grid.height - 1, -1, -1):
        row = []
        for c in range(grid.width):
            if overlay is not None and overlay.cells[r, c]:
                row.append("o")
            elif grid.cells[r, c]:
                row.append("#")
            else:
                row.append(".")
        lines.append("".join(row))
    return "\n".join(lines)
