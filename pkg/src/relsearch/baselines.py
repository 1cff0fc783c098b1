"""Comparison policies: a hand-built search heuristic and a random walker.

Both are deterministic finite-state controllers over the action and
observation stream; they never see the true state or a belief. Stepping a
controller returns the action to execute together with the successor
controller, so episodes can run in parallel without shared state.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .model import Action, ObsSymbol


class Phase(Enum):
    ASCENDING = "ascending"
    DESCENDING = "descending"
    SCANNING = "scanning"
    SWEEPING = "sweeping"


# Eight unit moves visiting every neighbor of the entry cell exactly once.
RING_ORDER: tuple[Action, ...] = (
    Action.NORTH,
    Action.EAST,
    Action.SOUTH,
    Action.SOUTH,
    Action.WEST,
    Action.WEST,
    Action.NORTH,
    Action.NORTH,
)

_HORIZONTAL = (Action.EAST, Action.WEST, Action.NORTH, Action.SOUTH)


@dataclass(frozen=True)
class HeuristicCtl:
    """State of the human-style search controller.

    The controller climbs while looking every other turn until the first
    detection, then descends the same way. Losing the target triggers a
    ring scan of the eight same-level neighbors; a fully negative ring
    climbs one level back. Reaching the ceiling without any detection
    falls back to a lawnmower sweep. ``n`` is the altitude ceiling.
    """

    n: int
    phase: Phase = Phase.ASCENDING
    ever_seen: bool = False
    parity: int = 0
    ring_step: int = 0
    sweep_cursor: int = 0


def _sweep_move(cursor: int, n: int) -> Action:
    # Boustrophedon cycle: a strip east, one north, a strip west, one north.
    strip = 2 * n - 2
    legs = (
        [Action.EAST] * strip + [Action.NORTH] + [Action.WEST] * strip + [Action.NORTH]
    )
    return legs[cursor % len(legs)]


def heuristic_next(
    ctl: HeuristicCtl, last_obs: ObsSymbol, z: int
) -> tuple[Action, HeuristicCtl]:
    """Advance the heuristic controller one turn.

    Looks are emitted on even turns, moves on odd turns, so two non-look
    actions never appear in a row and the very first action is a look.
    """
    phase = ctl.phase
    ever_seen = ctl.ever_seen
    ring = ctl.ring_step
    cursor = ctl.sweep_cursor

    if last_obs is ObsSymbol.SEEN:
        ever_seen = True
        phase = Phase.DESCENDING
        ring = 0
    elif last_obs is ObsSymbol.NOT_SEEN and phase is Phase.DESCENDING:
        phase = Phase.SCANNING
        ring = 0

    if ctl.parity == 0:
        action = Action.LOOK
    elif phase is Phase.ASCENDING:
        if z < ctl.n:
            action = Action.ASCEND
        else:
            phase = Phase.SWEEPING
            action = _sweep_move(cursor, ctl.n)
            cursor += 1
    elif phase is Phase.DESCENDING:
        if z > 1:
            action = Action.DESCEND
        else:
            # Cannot descend below the floor; fall back to a ring scan.
            phase = Phase.SCANNING
            action = RING_ORDER[0]
            ring = 1
    elif phase is Phase.SCANNING:
        if ring < len(RING_ORDER):
            action = RING_ORDER[ring]
            ring += 1
        elif z < ctl.n:
            action = Action.ASCEND
            phase = Phase.DESCENDING
            ring = 0
        else:
            phase = Phase.SWEEPING
            action = _sweep_move(cursor, ctl.n)
            cursor += 1
            ring = 0
    else:
        action = _sweep_move(cursor, ctl.n)
        cursor += 1

    return action, HeuristicCtl(ctl.n, phase, ever_seen, 1 - ctl.parity, ring, cursor)


@dataclass(frozen=True)
class RandomCtl:
    """Seeded random-walk controller; the RNG state is the whole state."""

    rng_state: tuple

    @classmethod
    def from_seed(cls, seed: int) -> "RandomCtl":
        return cls(random.Random(seed).getstate())


def random_next(ctl: RandomCtl, z: int) -> tuple[Action, RandomCtl]:
    """Descend with probability 0.10 (redrawn horizontally at the floor),
    otherwise move uniformly among the four horizontal directions. Never
    looks."""
    rng = random.Random()
    rng.setstate(ctl.rng_state)
    if rng.random() < 0.10 and z > 1:
        action = Action.DESCEND
    else:
        action = _HORIZONTAL[rng.randrange(4)]
    return action, RandomCtl(rng.getstate())
