"""2D block world and binary occupancy grid primitives.

Blocks are axis-aligned rectangles in continuous world coordinates with the
ground plane at y = 0.  One world unit equals the height of a standard
stacking block, so the discrete footprints are 5x1 cells (horizontal) and
1x5 cells (vertical).  Grids store row 0 as the ground-adjacent bottom row.

Everything here is immutable value data; operations return new values and
never mutate their inputs, which makes all of it trivially shareable across
threads and worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import isfinite
from typing import Iterable, Sequence

import numpy as np

EPS_TOUCH = 1e-6


class SceneTooLarge(ValueError):
    """Scene bounding box does not fit the requested raster window."""


class OutOfBounds(ValueError):
    """Grid placement extends past the map boundary."""


class OverlapError(ValueError):
    """Grid placement intersects cells that are already occupied."""


class DimensionMismatch(ValueError):
    """Two grids (or a grid and a vector) disagree on dimensions."""


class BadDimensions(ValueError):
    """Requested output dimensions are invalid for this operation."""


@dataclass(frozen=True)
class Block2D:
    """Axis-aligned rectangle: center x, bottom y, width and height in u."""

    x_center: float
    y_bottom: float
    width: float
    height: float

    def __post_init__(self) -> None:
        vals = (self.x_center, self.y_bottom, self.width, self.height)
        if not all(isfinite(v) for v in vals):
            raise ValueError(f"non-finite block coordinates: {vals}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"block sides must be positive: {vals}")
        if self.y_bottom < -EPS_TOUCH:
            raise ValueError(f"block below ground plane: y_bottom={self.y_bottom}")

    @property
    def x_lo(self) -> float:
        return self.x_center - self.width / 2.0

    @property
    def x_hi(self) -> float:
        return self.x_center + self.width / 2.0

    @property
    def y_top(self) -> float:
        return self.y_bottom + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def translated(self, dx: float, dy: float = 0.0) -> "Block2D":
        return Block2D(self.x_center + dx, self.y_bottom + dy, self.width, self.height)

    def scaled(self, factor: float) -> "Block2D":
        return Block2D(self.x_center * factor, self.y_bottom * factor,
                       self.width * factor, self.height * factor)


@dataclass(frozen=True)
class Scene:
    """Ordered collection of blocks; the unit of labeled stability data."""

    blocks: tuple[Block2D, ...]
    params: object | None = None  # SceneParams for generated datasets

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def __len__(self) -> int:
        return len(self.blocks)

    def validate(self, eps: float = EPS_TOUCH) -> None:
        """Raise OverlapError if any two blocks overlap in interior area."""
        for i, a in enumerate(self.blocks):
            for b in self.blocks[i + 1:]:
                dx = min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo)
                dy = min(a.y_top, b.y_top) - max(a.y_bottom, b.y_bottom)
                if dx > eps and dy > eps:
                    raise OverlapError(
                        f"blocks {self.blocks.index(a)} and {self.blocks.index(b)} "
                        f"overlap by {dx:.3g} x {dy:.3g}")

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(x_lo, y_lo, x_hi, y_hi); the empty scene yields a zero box at origin."""
        if not self.blocks:
            return (0.0, 0.0, 0.0, 0.0)
        return (min(b.x_lo for b in self.blocks), min(b.y_bottom for b in self.blocks),
                max(b.x_hi for b in self.blocks), max(b.y_top for b in self.blocks))

    def translated(self, dx: float) -> "Scene":
        return Scene(tuple(b.translated(dx) for b in self.blocks), self.params)

    def scaled(self, factor: float) -> "Scene":
        return Scene(tuple(b.scaled(factor) for b in self.blocks), self.params)


class Orientation(Enum):
    """Discrete block orientation; footprints follow the 5:1 projected ratio."""

    HORIZONTAL = "h"
    VERTICAL = "v"

    def cell_dims(self) -> tuple[int, int]:
        """(width, height) of the footprint in cells."""
        return (5, 1) if self is Orientation.HORIZONTAL else (1, 5)


@dataclass(frozen=True, eq=False)
class GridMap:
    """Binary occupancy grid, shape (H, W), row 0 at the bottom."""

    cells: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.cells, dtype=bool).copy()
        if arr.ndim != 2:
            raise BadDimensions(f"grid must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    @staticmethod
    def empty(width: int, height: int) -> "GridMap":
        if width < 1 or height < 1:
            raise BadDimensions(f"grid dimensions must be positive: {width}x{height}")
        return GridMap(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def set_count(self) -> int:
        return int(self.cells.sum())

    def set_cells(self) -> list[tuple[int, int]]:
        """Occupied cells as (col, row) pairs in row-major order."""
        rows, cols = np.nonzero(self.cells)
        return [(int(c), int(r)) for r, c in zip(rows, cols)]


def grid_from_cells(width: int, height: int,
                    cells: Iterable[tuple[int, int]]) -> GridMap:
    """Build a map from (col, row) pairs; mainly for tests and goals."""
    arr = np.zeros((height, width), dtype=bool)
    for col, row in cells:
        if not (0 <= col < width and 0 <= row < height):
            raise OutOfBounds(f"cell ({col},{row}) outside {width}x{height}")
        arr[row, col] = True
    return GridMap(arr)


def grid_union(a: GridMap, b: GridMap) -> GridMap:
    _check_dims(a, b)
    return GridMap(a.cells | b.cells)


@dataclass(frozen=True)
class GridBlock:
    """A 5-cell block footprint anchored at its bottom-left cell."""

    col: int
    row: int
    orientation: Orientation

    def cell_dims(self) -> tuple[int, int]:
        return self.orientation.cell_dims()

    def cells(self) -> list[tuple[int, int]]:
        w, h = self.cell_dims()
        return [(self.col + dc, self.row + dr) for dr in range(h) for dc in range(w)]

    def fits(self, width: int, height: int) -> bool:
        w, h = self.cell_dims()
        return 0 <= self.col and 0 <= self.row and \
            self.col + w <= width and self.row + h <= height


def grid_place(grid: GridMap, block: GridBlock) -> GridMap:
    """Return a copy of ``grid`` with the block footprint set.

    The input map is left untouched (value semantics).
    """
    if not block.fits(grid.width, grid.height):
        raise OutOfBounds(f"{block} outside {grid.width}x{grid.height}")
    arr = grid.cells.copy()
    w, h = block.cell_dims()
    window = arr[block.row:block.row + h, block.col:block.col + w]
    if window.any():
        raise OverlapError(f"{block} overlaps occupied cells")
    window[:] = True
    return GridMap(arr)


def _check_dims(a: GridMap, b: GridMap) -> None:
    if a.cells.shape != b.cells.shape:
        raise DimensionMismatch(
            f"grid shapes differ: {a.cells.shape} vs {b.cells.shape}")


def grid_overlap_count(a: GridMap, b: GridMap) -> int:
    """Number of cells set in both maps."""
    _check_dims(a, b)
    return int((a.cells & b.cells).sum())


def grid_equal(a: GridMap, b: GridMap) -> bool:
    _check_dims(a, b)
    return bool(np.array_equal(a.cells, b.cells))


def rasterize_scene(scene: Scene, width: int, height: int,
                    cell_size: float) -> GridMap:
    """Rasterize a scene into a binary mask.

    The window is ``width * cell_size`` wide, centered horizontally on the
    scene's bounding box, and anchored at the ground plane vertically.  A cell
    is set iff its center lies inside some block rectangle; containment is
    half-open ([lo, hi) on both axes) so adjacent blocks never double-claim a
    boundary cell.
    """
    if width < 1 or height < 1 or cell_size <= 0:
        raise BadDimensions(f"bad raster window {width}x{height}@{cell_size}")
    grid = np.zeros((height, width), dtype=bool)
    if not scene.blocks:
        return GridMap(grid)
    x_lo, y_lo, x_hi, y_hi = scene.bounding_box()
    if x_hi - x_lo > width * cell_size + EPS_TOUCH or \
            y_hi > height * cell_size + EPS_TOUCH:
        raise SceneTooLarge(
            f"scene {x_hi - x_lo:.3g} x {y_hi:.3g} u exceeds window "
            f"{width * cell_size:.3g} x {height * cell_size:.3g} u")
    x0 = (x_lo + x_hi) / 2.0 - width * cell_size / 2.0
    cx = x0 + (np.arange(width) + 0.5) * cell_size
    cy = (np.arange(height) + 0.5) * cell_size
    for b in scene.blocks:
        in_x = (cx >= b.x_lo) & (cx < b.x_hi)
        in_y = (cy >= b.y_bottom) & (cy < b.y_top)
        grid |= np.outer(in_y, in_x)
    return GridMap(grid)


def downscale_mask(grid: GridMap, out_w: int, out_h: int) -> np.ndarray:
    """Block-average pooling to (out_h, out_w); values in [0, 1].

    Output bin i along an axis of length n covers input indices
    [floor(i*n/out), floor((i+1)*n/out)).
    """
    if not (1 <= out_w <= grid.width and 1 <= out_h <= grid.height):
        raise BadDimensions(
            f"cannot downscale {grid.width}x{grid.height} to {out_w}x{out_h}")
    arr = grid.cells.astype(np.float64)
    row_starts = (np.arange(out_h) * grid.height) // out_h
    col_starts = (np.arange(out_w) * grid.width) // out_w
    row_counts = np.diff(np.append(row_starts, grid.height))
    col_counts = np.diff(np.append(col_starts, grid.width))
    pooled = np.add.reduceat(np.add.reduceat(arr, row_starts, axis=0),
                             col_starts, axis=1)
    return pooled / np.outer(row_counts, col_counts)


def grid_blocks_to_scene(blocks: Sequence[GridBlock]) -> Scene:
    """Convert placed grid blocks to a world scene with cell-exact coordinates."""
    out = []
    for gb in blocks:
        w, h = gb.cell_dims()
        out.append(Block2D(gb.col + w / 2.0, float(gb.row), float(w), float(h)))
    return Scene(tuple(out))
