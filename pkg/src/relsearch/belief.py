"""Exact discrete Bayes filter over the relative XY offsets.

Altitude is always known exactly (the drone reads its own altimeter), so
the belief is a dense probability vector over the (2N-1)^2 horizontal
offsets paired with the current altitude. Because motion noise can move
the drone vertically, the altitude after a motion cannot be predicted
from the command alone; the caller supplies the realized altitude and the
predict step conditions on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterator

import numpy as np

from .model import (
    Action,
    ModelParams,
    ObsSymbol,
    cell_unindex,
    obs_weights,
    transition_kernels,
)


class FilterDegenerateError(RuntimeError):
    """Raised when an observation leaves zero posterior mass.

    This means the observed action/observation/altitude stream is
    impossible under the model, which usually indicates a protocol or
    model mismatch rather than bad luck.
    """


@dataclass(frozen=True)
class Belief:
    """Probability vector over XY offsets plus the exactly-known altitude."""

    probs: np.ndarray
    z: int

    def __post_init__(self) -> None:
        self.probs.setflags(write=False)

    @property
    def n(self) -> int:
        return (math.isqrt(len(self.probs)) + 1) // 2


def uniform_init(n: int, z0: int) -> Belief:
    """Uniform belief over every XY offset at the known start altitude."""
    if not 1 <= z0 <= n:
        raise ValueError(f"start altitude {z0} outside [1, {n}]")
    cells = (2 * n - 1) ** 2
    return Belief(np.full(cells, 1.0 / cells), z0)


def update(
    b: Belief,
    a: Action,
    o: ObsSymbol,
    p: ModelParams,
    z_next: int | None = None,
) -> Belief:
    """One predict-correct filter step.

    For look, the state is unchanged and the posterior is reweighted by
    the detection likelihood. For motions, the prior is pushed through
    the transition kernel branch matching the realized altitude change
    (``z_next`` is required), then renormalized; the null observation
    carries no extra information.
    """
    if a is Action.LOOK:
        if o is ObsSymbol.NONE:
            raise ValueError("look must produce seen or not_seen")
        if z_next is not None and z_next != b.z:
            raise ValueError("look does not change altitude")
        post = b.probs * obs_weights(p, b.z, o)
        new_z = b.z
    else:
        if o is not ObsSymbol.NONE:
            raise ValueError("motion actions produce only the null observation")
        if z_next is None:
            raise ValueError("motion update requires the realized altitude")
        if not 1 <= z_next <= p.n:
            raise ValueError(f"realized altitude {z_next} outside [1, {p.n}]")
        kernel = transition_kernels(p)[(b.z, a)].get(z_next - b.z)
        if kernel is None:
            raise FilterDegenerateError(
                f"altitude {b.z} -> {z_next} impossible under action {a}"
            )
        post = b.probs @ kernel
        new_z = z_next
    total = float(post.sum())
    if total <= 1e-300:
        raise FilterDegenerateError(
            f"observation {o} after action {a} has zero posterior mass"
        )
    return Belief(post / total, new_z)


def most_likely(b: Belief) -> tuple[tuple[int, int], float]:
    """Argmax cell as (x_rel, y_rel); ties go to the lowest cell index."""
    idx = int(np.argmax(b.probs))
    return cell_unindex(idx, b.n), float(b.probs[idx])


def entropy(b: Belief) -> float:
    """Shannon entropy in nats; 0 for a delta, log(cells) for uniform."""
    pos = b.probs[b.probs > 0.0]
    return float(-(pos * np.log(pos)).sum())


def belief_lines(b: Belief) -> Iterator[str]:
    """Snapshot lines ``x_rel y_rel prob``, one per cell, for export."""
    for idx, prob in enumerate(b.probs):
        x, y = cell_unindex(idx, b.n)
        yield f"{x} {y} {prob!r}"


def dump_belief(b: Belief, fp: IO[str]) -> None:
    for line in belief_lines(b):
        fp.write(line + "\n")
