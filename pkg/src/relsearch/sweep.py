"""Parameter grid search: solve, evaluate, and report per-cell statistics.

A sweep walks the cross product of reward magnitude, transition
probability and observation accuracy, solves the planner once per cell
(optionally cached on disk, keyed by the parameter digest), evaluates the
requested policies, and emits CSV rows plus optional SVG heatmaps.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelParams
from .sim import DEFAULT_STEP_CAP, evaluate
from .solver import Policy, SolverConfig, load_policy, save_policy, solve_pbvi

log = logging.getLogger(__name__)

SWEEP_POLICIES = ("pomdp", "heuristic", "random")
CSV_HEADER = (
    "trans,obs,reward,policy,mean_steps,mean_reward,ci95_steps,"
    "look_proportion,solve_seconds"
)
HEATMAP_METRICS = (
    "mean_steps",
    "mean_reward",
    "ci95_steps",
    "look_proportion",
    "solve_seconds",
)


@dataclass(frozen=True)
class SweepSpec:
    trans_values: tuple[float, ...] = (0.76, 0.82, 0.88, 0.94, 1.0)
    obs_values: tuple[float, ...] = (0.76, 0.82, 0.88, 0.94, 1.0)
    reward_values: tuple[float, ...] = (10.0, 100.0, 1000.0)
    policies: tuple[str, ...] = SWEEP_POLICIES
    episodes: int = 1000
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)
    n: int = 7
    base_seed: int = 0

    def __post_init__(self) -> None:
        if not (self.trans_values and self.obs_values and self.reward_values):
            raise ValueError("sweep value lists must be nonempty")
        for v in self.trans_values + self.obs_values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"probability {v} outside [0, 1]")
        unknown = set(self.policies) - set(SWEEP_POLICIES)
        if unknown:
            raise ValueError(f"unknown policies {sorted(unknown)}")


@dataclass(frozen=True)
class SweepRecord:
    trans: float
    obs: float
    reward_magnitude: float
    policy: str
    mean_steps: float
    mean_reward: float
    ci95_steps: float
    look_proportion: float
    solve_seconds: float


def _solved_policy(
    params: ModelParams, cfg: SolverConfig, cache_dir: str | Path | None
) -> tuple[Policy, float]:
    """Solve the planner for one cell, reusing a disk cache when given.

    The cache stores the policy file next to a small sidecar holding the
    original wall-clock solve time, so cached reruns reproduce identical
    sweep records byte for byte.
    """
    digest = params.digest()
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        pol_path = cache_dir / f"{digest}.policy"
        meta_path = cache_dir / f"{digest}.meta.json"
        if pol_path.exists() and meta_path.exists():
            meta = json.loads(meta_path.read_text())
            return load_policy(pol_path), float(meta["solve_seconds"])
    t0 = time.perf_counter()
    pol = solve_pbvi(params, cfg)
    seconds = time.perf_counter() - t0
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        save_policy(pol, cache_dir / f"{digest}.policy")
        (cache_dir / f"{digest}.meta.json").write_text(
            json.dumps({"solve_seconds": seconds})
        )
    return pol, seconds


def run_sweep(
    spec: SweepSpec,
    cache_dir: str | Path | None = None,
    cap: int = DEFAULT_STEP_CAP,
) -> list[SweepRecord]:
    """Run the full grid; rows ordered reward, trans, obs, then policy.

    A solver failure in one cell yields NaN metrics for that cell's
    planner row and the sweep continues.
    """
    records: list[SweepRecord] = []
    for r0 in spec.reward_values:
        for trans in spec.trans_values:
            for obs in spec.obs_values:
                params = ModelParams(spec.n, trans, obs, reward_target=r0)
                pol: Policy | None = None
                solve_seconds = 0.0
                if "pomdp" in spec.policies:
                    try:
                        pol, solve_seconds = _solved_policy(
                            params, spec.solver_cfg, cache_dir
                        )
                    except Exception:
                        log.exception(
                            "solver failed for cell trans=%s obs=%s reward=%s",
                            trans,
                            obs,
                            r0,
                        )
                for name in spec.policies:
                    if name == "pomdp":
                        if pol is None:
                            records.append(
                                SweepRecord(
                                    trans, obs, r0, name,
                                    math.nan, math.nan, math.nan, math.nan,
                                    solve_seconds,
                                )
                            )
                            continue
                        summary = evaluate(
                            pol, params, spec.episodes, spec.base_seed, cap=cap
                        )
                        seconds = solve_seconds
                    else:
                        summary = evaluate(
                            name, params, spec.episodes, spec.base_seed, cap=cap
                        )
                        seconds = 0.0
                    records.append(
                        SweepRecord(
                            trans=trans,
                            obs=obs,
                            reward_magnitude=r0,
                            policy=name,
                            mean_steps=summary.mean_steps,
                            mean_reward=summary.mean_reward,
                            ci95_steps=summary.ci95_steps,
                            look_proportion=summary.look_proportion,
                            solve_seconds=seconds,
                        )
                    )
    return records


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_csv(records: list[SweepRecord], path) -> None:
    """Stable CSV: fixed header, six significant digits, given row order."""
    lines = [CSV_HEADER]
    for rec in records:
        lines.append(
            ",".join(
                (
                    _fmt(rec.trans),
                    _fmt(rec.obs),
                    _fmt(rec.reward_magnitude),
                    rec.policy,
                    _fmt(rec.mean_steps),
                    _fmt(rec.mean_reward),
                    _fmt(rec.ci95_steps),
                    _fmt(rec.look_proportion),
                    _fmt(rec.solve_seconds),
                )
            )
        )
    with open(path, "w", encoding="ascii") as fp:
        fp.write("\n".join(lines) + "\n")


def _color(t: float) -> str:
    # Light to dark blue, linear in the metric.
    lo = (247, 251, 255)
    hi = (8, 48, 107)
    rgb = tuple(round(a + (b - a) * t) for a, b in zip(lo, hi))
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def write_heatmap_svg(
    records: list[SweepRecord], policy: str, metric: str, path
) -> None:
    """Render one policy's metric over the trans (Y) x obs (X) grid.

    Requires exactly one record per grid cell for the policy; missing
    cells are reported by value pair.
    """
    if metric not in HEATMAP_METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {HEATMAP_METRICS}")
    cells: dict[tuple[float, float], float] = {}
    for rec in records:
        if rec.policy != policy:
            continue
        key = (rec.trans, rec.obs)
        if key in cells:
            raise ValueError(
                f"ambiguous grid: multiple records for trans={rec.trans} "
                f"obs={rec.obs} (multiple reward values?)"
            )
        cells[key] = getattr(rec, metric)
    if not cells:
        raise ValueError(f"no records for policy {policy!r}")
    trans_axis = sorted({t for t, _ in cells})
    obs_axis = sorted({o for _, o in cells})
    missing = [
        (t, o) for t in trans_axis for o in obs_axis if (t, o) not in cells
    ]
    if missing:
        raise ValueError(f"incomplete grid, missing cells: {missing}")

    vmin = min(cells.values())
    vmax = max(cells.values())
    span = vmax - vmin
    cell_px = 60
    left, top, right, bottom = 80, 40, 20, 60
    width = left + cell_px * len(obs_axis) + right
    height = top + cell_px * len(trans_axis) + bottom

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{left}" y="20" font-size="14">{policy} {metric}: '
        f"min={_fmt(vmin)} max={_fmt(vmax)}</text>",
    ]
    for i, t in enumerate(trans_axis):
        # Largest trans at the top row.
        y = top + (len(trans_axis) - 1 - i) * cell_px
        parts.append(
            f'<text x="{left - 8}" y="{y + cell_px / 2 + 4}" font-size="11" '
            f'text-anchor="end">{_fmt(t)}</text>'
        )
        for j, o in enumerate(obs_axis):
            x = left + j * cell_px
            frac = 0.5 if span == 0 else (cells[(t, o)] - vmin) / span
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" '
                f'fill="{_color(frac)}" stroke="white"/>'
            )
    for j, o in enumerate(obs_axis):
        x = left + j * cell_px
        parts.append(
            f'<text x="{x + cell_px / 2}" y="{height - bottom + 16}" '
            f'font-size="11" text-anchor="middle">{_fmt(o)}</text>'
        )
    parts.append(
        f'<text x="{left + cell_px * len(obs_axis) / 2}" y="{height - 14}" '
        f'font-size="12" text-anchor="middle">observation accuracy</text>'
    )
    parts.append(
        f'<text x="18" y="{top + cell_px * len(trans_axis) / 2}" font-size="12" '
        f'text-anchor="middle" transform="rotate(-90 18 '
        f'{top + cell_px * len(trans_axis) / 2})">transition probability</text>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as fp:
        fp.write("\n".join(parts) + "\n")
