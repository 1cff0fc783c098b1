"""Grid-world search model in drone-relative coordinates.

The world is an N x N x N grid with a single stationary target on the
ground level. Rather than tracking drone and target positions separately,
a state stores the drone's offset from the target, shifted to stay
positive: x_rel = x_drone - x_target + N, likewise for y. The target sits
at altitude 1, so the relative altitude equals the absolute one. Offsets
live on a (2N-1) x (2N-1) x N lattice and (N, N, 1) is the unique goal
state: the drone directly on top of the target.

Motion is noisy. An attempted move executes as intended with probability
``trans_prob`` and otherwise slips uniformly into one of the five other
motion directions. Any move that would leave the lattice keeps the drone
in place and raises a bump flag, which costs ``reward_oob``. Looking does
not move the drone; it returns a boolean detection of the target within
the (2z-1) x (2z-1) ground footprint below the drone, correct with
probability (1 + obs_base^(z-1)) / 2.

Everything here is immutable, pure and safe to share across workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np


class Action(Enum):
    """The seven drone commands, in canonical order.

    The listed order is used for serialization and for breaking ties in
    every argmax over actions. Orientation convention: north is +y, west
    is +x, ascend is +z.
    """

    EAST = "east"
    WEST = "west"
    NORTH = "north"
    SOUTH = "south"
    ASCEND = "ascend"
    DESCEND = "descend"
    LOOK = "look"

    def __str__(self) -> str:
        return self.value

    @property
    def rank(self) -> int:
        return _ACTION_RANK[self]


ACTIONS: tuple[Action, ...] = tuple(Action)
MOTION_ACTIONS: tuple[Action, ...] = ACTIONS[:6]
_ACTION_RANK = {a: i for i, a in enumerate(ACTIONS)}

ACTION_BY_NAME = {a.value: a for a in ACTIONS}

# (dx, dy, dz) applied to the relative state when a motion executes.
_DELTA = {
    Action.EAST: (-1, 0, 0),
    Action.WEST: (1, 0, 0),
    Action.NORTH: (0, 1, 0),
    Action.SOUTH: (0, -1, 0),
    Action.ASCEND: (0, 0, 1),
    Action.DESCEND: (0, 0, -1),
}


class ObsSymbol(Enum):
    """Sensor outcome: detections come only from look, motions emit none."""

    SEEN = "seen"
    NOT_SEEN = "not_seen"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


OBS_BY_NAME = {o.value: o for o in ObsSymbol}


@dataclass(frozen=True)
class ModelParams:
    """Full problem definition: grid size, noise levels, rewards, discount."""

    n: int
    trans_prob: float
    obs_base: float
    reward_target: float = 10.0
    reward_oob: float = -1.0
    discount: float = 0.95

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"grid side must be >= 1, got {self.n}")
        if not 0.0 <= self.trans_prob <= 1.0:
            raise ValueError(f"trans_prob must lie in [0, 1], got {self.trans_prob}")
        if not 0.5 < self.obs_base <= 1.0:
            raise ValueError(f"obs_base must lie in (0.5, 1], got {self.obs_base}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if not self.reward_target > 0.0 > self.reward_oob:
            raise ValueError(
                "rewards must satisfy reward_target > 0 > reward_oob, got "
                f"{self.reward_target}, {self.reward_oob}"
            )

    @property
    def side(self) -> int:
        """Number of relative x (or y) values, 2N - 1."""
        return 2 * self.n - 1

    @property
    def n_cells(self) -> int:
        """Cells of one altitude slice, (2N - 1)^2."""
        return self.side * self.side

    @property
    def n_states(self) -> int:
        return self.n_cells * self.n

    def digest(self) -> str:
        """Short stable checksum identifying this parameter set."""
        text = (
            f"n={self.n};trans={self.trans_prob!r};obs={self.obs_base!r};"
            f"r0={self.reward_target!r};r1={self.reward_oob!r};"
            f"gamma={self.discount!r}"
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RelState:
    """Drone-minus-target offset, shifted positive, plus known altitude."""

    x_rel: int
    y_rel: int
    z: int


@dataclass(frozen=True)
class EnvState:
    """Environment-side ground truth: hidden state plus episode flags."""

    rel: RelState
    bumped: bool = False
    done: bool = False
    t: int = 0


@dataclass(frozen=True)
class Outcome:
    """One branch of a transition distribution."""

    state: RelState
    prob: float
    bump: bool


TransitionDist = tuple[Outcome, ...]


def is_target(s: RelState, n: int) -> bool:
    return s.x_rel == n and s.y_rel == n and s.z == 1


def in_bounds(s: RelState, n: int) -> bool:
    side = 2 * n - 1
    return 1 <= s.x_rel <= side and 1 <= s.y_rel <= side and 1 <= s.z <= n


def rel_from_absolute(
    drone: tuple[int, int, int], target: tuple[int, int, int], n: int
) -> RelState:
    """Convert absolute drone and target positions to a relative state.

    Both positions must lie inside the absolute [1, n]^3 grid and the
    target must sit on the ground level.
    """
    for name, pos in (("drone", drone), ("target", target)):
        if not all(1 <= c <= n for c in pos):
            raise ValueError(f"{name} position {pos} outside [1, {n}]^3")
    if target[2] != 1:
        raise ValueError(f"target must be at altitude 1, got {target[2]}")
    s = RelState(drone[0] - target[0] + n, drone[1] - target[1] + n, drone[2])
    return s


def state_index(s: RelState, n: int) -> int:
    """Bijection onto [0, (2n-1)^2 * n): z outermost, then y, then x."""
    if not in_bounds(s, n):
        raise ValueError(f"state {s} outside relative bounds for n={n}")
    side = 2 * n - 1
    return (s.z - 1) * side * side + (s.y_rel - 1) * side + (s.x_rel - 1)


def state_unindex(idx: int, n: int) -> RelState:
    side = 2 * n - 1
    if not 0 <= idx < side * side * n:
        raise ValueError(f"state index {idx} out of range for n={n}")
    z, rest = divmod(idx, side * side)
    y, x = divmod(rest, side)
    return RelState(x + 1, y + 1, z + 1)


def cell_index(x_rel: int, y_rel: int, n: int) -> int:
    """Index of an XY offset within one altitude slice."""
    side = 2 * n - 1
    return (y_rel - 1) * side + (x_rel - 1)


def cell_unindex(idx: int, n: int) -> tuple[int, int]:
    side = 2 * n - 1
    y, x = divmod(idx, side)
    return x + 1, y + 1


def obs_accuracy(z: int, obs_base: float) -> float:
    """Detection accuracy at altitude z: (1 + obs_base^(z-1)) / 2."""
    return (1.0 + obs_base ** (z - 1)) / 2.0


def fov_contains(s: RelState, n: int) -> bool:
    """Whether the target lies inside the ground footprint seen from s."""
    r = s.z - 1
    return abs(s.x_rel - n) <= r and abs(s.y_rel - n) <= r


def obs_likelihood(s: RelState, a: Action, o: ObsSymbol, p: ModelParams) -> float:
    """Probability of observing o after taking action a into state s."""
    if a is not Action.LOOK:
        return 1.0 if o is ObsSymbol.NONE else 0.0
    if o is ObsSymbol.NONE:
        return 0.0
    acc = obs_accuracy(s.z, p.obs_base)
    hit = fov_contains(s, p.n)
    if (o is ObsSymbol.SEEN) == hit:
        return acc
    return 1.0 - acc


def transition_dist(s: RelState, a: Action, p: ModelParams) -> TransitionDist:
    """Stochastic outcome distribution of taking action a in state s.

    Look keeps the state with certainty. A motion action executes as
    intended with probability trans_prob; the remaining mass splits
    equally over the five other motion directions. Directions that would
    leave the relative lattice collapse to staying in place with the bump
    flag set, merged into a single outcome.
    """
    if is_target(s, p.n):
        raise ValueError("no transitions from the terminal target state")
    if a is Action.LOOK:
        return (Outcome(s, 1.0, False),)
    err = (1.0 - p.trans_prob) / 5.0
    acc: dict[tuple[RelState, bool], float] = {}
    for d in MOTION_ACTIONS:
        w = p.trans_prob if d is a else err
        if w == 0.0:
            continue
        dx, dy, dz = _DELTA[d]
        nxt = RelState(s.x_rel + dx, s.y_rel + dy, s.z + dz)
        key = (nxt, False) if in_bounds(nxt, p.n) else (s, True)
        acc[key] = acc.get(key, 0.0) + w
    return tuple(Outcome(st, pr, bump) for (st, bump), pr in acc.items())


def reward(s: RelState, a: Action, nxt: RelState, bump: bool, p: ModelParams) -> float:
    """Reward for the transition s -a-> nxt (bump marks a blocked move)."""
    if is_target(nxt, p.n) and not is_target(s, p.n):
        return p.reward_target
    if bump:
        return p.reward_oob
    return 0.0


# ---------------------------------------------------------------------------
# Matrix forms, shared by the filter and the solvers. Kernels follow the
# filter convention for the terminal state: the target cell self-loops, so
# probability mass is conserved. The solver zeroes that row where needed.


@lru_cache(maxsize=4)
def fov_mask(n: int, z: int) -> np.ndarray:
    """Boolean per-cell mask of offsets visible from altitude z."""
    side = 2 * n - 1
    coords = np.arange(1, side + 1)
    inx = np.abs(coords - n) <= z - 1
    mask = (inx[:, None] & inx[None, :]).reshape(-1)  # y rows, x cols
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=16)
def obs_weights(p: ModelParams, z: int, o: ObsSymbol) -> np.ndarray:
    """Per-cell look likelihood vector at altitude z."""
    if o is ObsSymbol.NONE:
        raise ValueError("look never produces the null observation")
    acc = obs_accuracy(z, p.obs_base)
    mask = fov_mask(p.n, z)
    if o is ObsSymbol.SEEN:
        w = np.where(mask, acc, 1.0 - acc)
    else:
        w = np.where(mask, 1.0 - acc, acc)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=2)
def transition_kernels(
    p: ModelParams,
) -> dict[tuple[int, Action], dict[int, np.ndarray]]:
    """Dense per-slice motion kernels K[(z, a)][dz][src_cell, dst_cell].

    Entries sum transition probability over bump and non-bump branches;
    summing a row across dz gives 1. The target cell self-loops at dz=0.
    """
    kernels: dict[tuple[int, Action], dict[int, np.ndarray]] = {}
    cells = p.n_cells
    for z in range(1, p.n + 1):
        for a in MOTION_ACTIONS:
            per_dz: dict[int, np.ndarray] = {}
            for c in range(cells):
                x, y = cell_unindex(c, p.n)
                s = RelState(x, y, z)
                if is_target(s, p.n):
                    block = per_dz.setdefault(0, np.zeros((cells, cells)))
                    block[c, c] = 1.0
                    continue
                for out in transition_dist(s, a, p):
                    dz = out.state.z - z
                    block = per_dz.setdefault(dz, np.zeros((cells, cells)))
                    block[c, cell_index(out.state.x_rel, out.state.y_rel, p.n)] += (
                        out.prob
                    )
            for block in per_dz.values():
                block.setflags(write=False)
            kernels[(z, a)] = per_dz
    return kernels


@lru_cache(maxsize=2)
def expected_reward_vectors(p: ModelParams) -> dict[tuple[int, Action], np.ndarray]:
    """Per-slice expected immediate reward vector for each action."""
    vecs: dict[tuple[int, Action], np.ndarray] = {}
    cells = p.n_cells
    for z in range(1, p.n + 1):
        for a in ACTIONS:
            r = np.zeros(cells)
            for c in range(cells):
                x, y = cell_unindex(c, p.n)
                s = RelState(x, y, z)
                if is_target(s, p.n):
                    continue
                r[c] = sum(
                    out.prob * reward(s, a, out.state, out.bump, p)
                    for out in transition_dist(s, a, p)
                )
            r.setflags(write=False)
            vecs[(z, a)] = r
    return vecs
