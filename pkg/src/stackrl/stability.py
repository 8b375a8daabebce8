"""Quasi-static stability analysis for 2D block scenes.

A scene is stable when there exists an assignment of non-negative contact
forces that balances gravity for every block simultaneously.  Contacts carry
normal forces only (frictionless): gravity induces no horizontal load on
axis-aligned stacks, so vertical faces never transmit force.  Each contact
interval is represented by force variables at its two endpoints, which spans
every admissible pressure distribution along the interval; a point contact
gets a single variable.

Feasibility of the resulting equality system under non-negativity is decided
with an LP solver.  An independent recursive center-of-mass check is provided
for scenes whose support graph is a tree; the two must agree there, which the
test suite verifies exhaustively on small grid scenes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .geometry import Scene

GROUND = -1

STABLE = "stable"
UNSTABLE = "unstable"

METHOD_LP = "lp"
METHOD_RECURSIVE = "recursive"


class FloatingBlock(ValueError):
    """A block above the ground has no supporter; static analysis is undefined."""


class PreconditionError(ValueError):
    """The scene violates a precondition of the chosen method."""


@dataclass(frozen=True)
class StabilityConfig:
    eps_touch: float = 1e-6
    lp_tolerance: float = 1e-9
    mass_per_area: float = 1.0

    def __post_init__(self) -> None:
        if self.eps_touch <= 0 or self.lp_tolerance <= 0 or self.mass_per_area <= 0:
            raise ValueError("stability config values must be positive")


@dataclass(frozen=True)
class Contact:
    """Horizontal support interval between a block and its supporter.

    ``lower`` is a block index or GROUND.  ``x_lo == x_hi`` marks a point
    contact (blocks meeting at a single shared corner).
    """

    upper: int
    lower: int
    x_lo: float
    x_hi: float


@dataclass(frozen=True)
class ContactGraph:
    n_blocks: int
    contacts: tuple[Contact, ...]

    def supporters_of(self, i: int) -> list[Contact]:
        return [c for c in self.contacts if c.upper == i]

    def supported_by(self, i: int) -> list[Contact]:
        return [c for c in self.contacts if c.lower == i]


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    method: str
    witness: int | None = None  # first failing block index (recursive only)


def build_contact_graph(scene: Scene,
                        cfg: StabilityConfig = StabilityConfig()) -> ContactGraph:
    """Find all face contacts; raise FloatingBlock for unsupported blocks."""
    eps = cfg.eps_touch
    blocks = scene.blocks
    contacts: list[Contact] = []
    for i, b in enumerate(blocks):
        if b.y_bottom <= eps:
            contacts.append(Contact(i, GROUND, b.x_lo, b.x_hi))
        for j, s in enumerate(blocks):
            if i == j or abs(b.y_bottom - s.y_top) > eps:
                continue
            lo = max(b.x_lo, s.x_lo)
            hi = min(b.x_hi, s.x_hi)
            if hi - lo >= -eps:
                contacts.append(Contact(i, j, lo, max(lo, hi)))
    supported = {c.upper for c in contacts}
    for i, b in enumerate(blocks):
        if i not in supported:
            raise FloatingBlock(f"block {i} at y_bottom={b.y_bottom:.6g} has no support")
    return ContactGraph(len(blocks), tuple(contacts))


def _force_balance_system(scene: Scene, graph: ContactGraph,
                          cfg: StabilityConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """Equality system A f = b over endpoint forces f >= 0.

    Two rows per block: vertical force balance and torque balance about the
    block's center of mass (unit gravity, mass = area * mass_per_area).
    """
    eps = cfg.eps_touch
    var_slots: list[tuple[int, int]] = []
    n_vars = 0
    for c in graph.contacts:
        if c.x_hi - c.x_lo > eps:
            var_slots.append((n_vars, n_vars + 1))
            n_vars += 2
        else:
            var_slots.append((n_vars, n_vars))
            n_vars += 1
    n = len(scene.blocks)
    A = np.zeros((2 * n, n_vars))
    b = np.zeros(2 * n)
    for i, blk in enumerate(scene.blocks):
        b[2 * i] = blk.area * cfg.mass_per_area
    for c, (va, vb) in zip(graph.contacts, var_slots):
        for sign, idx in ((1.0, c.upper), (-1.0, c.lower)):
            if idx == GROUND:
                continue
            com = scene.blocks[idx].x_center
            A[2 * idx, va] += sign
            A[2 * idx + 1, va] += sign * (c.x_lo - com)
            if vb != va:
                A[2 * idx, vb] += sign
                A[2 * idx + 1, vb] += sign * (c.x_hi - com)
    return A, b, n_vars


def check_stability_lp(scene: Scene,
                       cfg: StabilityConfig = StabilityConfig()) -> StabilityVerdict:
    """Decide equilibrium feasibility of the full scene."""
    if not scene.blocks:
        return StabilityVerdict(stable=True, method=METHOD_LP)
    graph = build_contact_graph(scene, cfg)
    A, b, n_vars = _force_balance_system(scene, graph, cfg)
    res = linprog(np.zeros(n_vars), A_eq=A, b_eq=b, bounds=(0, None),
                  method="highs",
                  options={"primal_feasibility_tolerance": cfg.lp_tolerance,
                           "dual_feasibility_tolerance": cfg.lp_tolerance})
    if res.status == 0:
        return StabilityVerdict(stable=True, method=METHOD_LP)
    if res.status == 2:
        return StabilityVerdict(stable=False, method=METHOD_LP)
    raise RuntimeError(f"LP solver returned status {res.status}: {res.message}")


def check_stability_recursive(scene: Scene,
                              cfg: StabilityConfig = StabilityConfig()
                              ) -> StabilityVerdict:
    """Independent oracle for tree-structured support.

    Every block must rest on exactly one supporter (or the ground).  The scene
    is stable iff, for every block, the combined center of mass of the block
    plus everything it transitively carries lies within its contact interval,
    inclusive within eps_touch.
    """
    if not scene.blocks:
        return StabilityVerdict(stable=True, method=METHOD_RECURSIVE)
    graph = build_contact_graph(scene, cfg)
    support: dict[int, Contact] = {}
    for i in range(graph.n_blocks):
        ups = graph.supporters_of(i)
        if len(ups) != 1:
            raise PreconditionError(
                f"NotTreeSupport: block {i} has {len(ups)} supporters")
        support[i] = ups[0]
    children: dict[int, list[int]] = {}
    for i, c in support.items():
        if c.lower != GROUND:
            children.setdefault(c.lower, []).append(i)

    mass = [b.area * cfg.mass_per_area for b in scene.blocks]
    moment = [m * b.x_center for m, b in zip(mass, scene.blocks)]
    # accumulate subtree mass/moment bottom-up; heights are strictly ordered
    # so sorting by y_bottom descending visits children before parents
    for i in sorted(range(graph.n_blocks),
                    key=lambda k: -scene.blocks[k].y_bottom):
        c = support[i]
        if c.lower != GROUND:
            mass[c.lower] += mass[i]
            moment[c.lower] += moment[i]
    for i in range(graph.n_blocks):
        c = support[i]
        com = moment[i] / mass[i]
        if not (c.x_lo - cfg.eps_touch <= com <= c.x_hi + cfg.eps_touch):
            return StabilityVerdict(stable=False, method=METHOD_RECURSIVE, witness=i)
    return StabilityVerdict(stable=True, method=METHOD_RECURSIVE)


def stability_label(scene: Scene,
                    cfg: StabilityConfig = StabilityConfig()) -> str:
    """Dataset label: STABLE iff the equilibrium LP is feasible."""
    verdict = check_stability_lp(scene, cfg)
    return STABLE if verdict.stable else UNSTABLE
