"""Ground-truth environment stepping and Monte Carlo policy evaluation.

Episodes are deterministic functions of their seed: the environment RNG
is a per-episode ``random.Random`` and the random baseline draws from a
stream derived from it, so evaluation fans out over workers trivially.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import IO, Union

from .baselines import (
    HeuristicCtl,
    RandomCtl,
    heuristic_next,
    random_next,
)
from .belief import (
    Belief,
    FilterDegenerateError,
    dump_belief,
    uniform_init,
    update,
)
from .model import (
    ACTIONS,
    Action,
    EnvState,
    ModelParams,
    ObsSymbol,
    RelState,
    fov_contains,
    is_target,
    obs_accuracy,
    reward as reward_fn,
    state_index,
    state_unindex,
    transition_dist,
)
from .solver import Policy, policy_action

PolicySpec = Union[Policy, str]
BASELINE_NAMES = ("heuristic", "random")
DEFAULT_STEP_CAP = 500


@dataclass(frozen=True)
class TraceStep:
    """One executed action: the environment state after it, what was
    observed and earned, and the post-update belief (policy runs only)."""

    env: EnvState
    action: Action
    obs: ObsSymbol
    reward: float
    belief: Belief | None


@dataclass(frozen=True)
class EpisodeResult:
    steps: int
    discounted_reward: float
    found: bool
    action_counts: tuple[int, ...]
    start: EnvState
    trace: tuple[TraceStep, ...] | None = None
    filter_failed: bool = False


@dataclass(frozen=True)
class EvalSummary:
    episodes: int
    mean_reward: float
    mean_steps: float
    ci95_steps: float
    look_proportion: float
    found_rate: float


def sample_start(n: int, rng: random.Random) -> EnvState:
    """Uniform draw over the (2n-1)^2 * n - 1 non-target states."""
    if n < 2:
        raise ValueError("no non-target start state exists for n=1")
    side = 2 * n - 1
    n_states = side * side * n
    target_idx = state_index(RelState(n, n, 1), n)
    k = rng.randrange(n_states - 1)
    if k >= target_idx:
        k += 1
    return EnvState(rel=state_unindex(k, n))


def step_env(
    e: EnvState, a: Action, p: ModelParams, rng: random.Random
) -> tuple[EnvState, ObsSymbol, float]:
    """Sample one environment transition, observation, and reward."""
    if e.done:
        raise ValueError("cannot step a finished episode")
    outcomes = transition_dist(e.rel, a, p)
    u = rng.random()
    cum = 0.0
    picked = outcomes[-1]
    for out in outcomes:
        cum += out.prob
        if u < cum:
            picked = out
            break
    nxt = picked.state
    if a is Action.LOOK:
        p_seen = (
            obs_accuracy(nxt.z, p.obs_base)
            if fov_contains(nxt, p.n)
            else 1.0 - obs_accuracy(nxt.z, p.obs_base)
        )
        obs = ObsSymbol.SEEN if rng.random() < p_seen else ObsSymbol.NOT_SEEN
    else:
        obs = ObsSymbol.NONE
    r = reward_fn(e.rel, a, nxt, picked.bump, p)
    return (
        EnvState(nxt, bumped=picked.bump, done=is_target(nxt, p.n), t=e.t + 1),
        obs,
        r,
    )


def run_episode(
    policy: PolicySpec,
    p: ModelParams,
    seed: int,
    cap: int = DEFAULT_STEP_CAP,
    record_trace: bool = False,
) -> EpisodeResult:
    """Roll out one episode from a random start until arrival or the cap.

    ``policy`` is either an alpha-vector Policy (executed on a belief
    that starts uniform at the true start altitude) or one of the
    baseline names. Deterministic for a fixed seed.
    """
    if cap < 1:
        raise ValueError("step cap must be at least 1")
    if isinstance(policy, str) and policy not in BASELINE_NAMES:
        raise ValueError(f"unknown baseline {policy!r}")

    rng = random.Random(seed)
    start = sample_start(p.n, rng)
    env = start

    belief: Belief | None = None
    h_ctl: HeuristicCtl | None = None
    r_ctl: RandomCtl | None = None
    last_obs = ObsSymbol.NONE
    if isinstance(policy, Policy):
        belief = uniform_init(p.n, env.rel.z)
    elif policy == "heuristic":
        h_ctl = HeuristicCtl(n=p.n)
    else:
        r_ctl = RandomCtl.from_seed(rng.getrandbits(64))

    steps = 0
    discounted = 0.0
    counts = [0] * len(ACTIONS)
    trace: list[TraceStep] = []
    filter_failed = False

    while steps < cap and not env.done:
        if belief is not None:
            action = policy_action(policy, belief)  # type: ignore[arg-type]
        elif h_ctl is not None:
            action, h_ctl = heuristic_next(h_ctl, last_obs, env.rel.z)
        else:
            action, r_ctl = random_next(r_ctl, env.rel.z)
        env, obs, r = step_env(env, action, p, rng)
        discounted += r * p.discount**steps
        counts[action.rank] += 1
        steps += 1
        last_obs = obs
        if belief is not None:
            try:
                belief = update(belief, action, obs, p, z_next=env.rel.z)
            except FilterDegenerateError:
                filter_failed = True
        if record_trace:
            trace.append(
                TraceStep(env, action, obs, r, belief if not filter_failed else None)
            )
        if filter_failed:
            break

    return EpisodeResult(
        steps=steps,
        discounted_reward=discounted,
        found=env.done,
        action_counts=tuple(counts),
        start=start,
        trace=tuple(trace) if record_trace else None,
        filter_failed=filter_failed,
    )


def evaluate(
    policy: PolicySpec,
    p: ModelParams,
    episodes: int,
    base_seed: int,
    cap: int = DEFAULT_STEP_CAP,
) -> EvalSummary:
    """Aggregate run_episode over seeds base_seed, base_seed+1, ..."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    total_steps = 0
    total_looks = 0
    total_reward = 0.0
    found = 0
    sq_steps = 0.0
    for i in range(episodes):
        res = run_episode(policy, p, base_seed + i, cap=cap)
        total_steps += res.steps
        sq_steps += res.steps * res.steps
        total_looks += res.action_counts[Action.LOOK.rank]
        total_reward += res.discounted_reward
        found += res.found
    mean_steps = total_steps / episodes
    if episodes > 1:
        var = (sq_steps - episodes * mean_steps * mean_steps) / (episodes - 1)
        ci95 = 1.96 * (max(var, 0.0) ** 0.5) / episodes**0.5
    else:
        ci95 = 0.0
    return EvalSummary(
        episodes=episodes,
        mean_reward=total_reward / episodes,
        mean_steps=mean_steps,
        ci95_steps=ci95,
        look_proportion=total_looks / total_steps if total_steps else 0.0,
        found_rate=found / episodes,
    )


def write_trace(result: EpisodeResult, path, include_belief: bool = True) -> None:
    """Export a recorded trace: one ``t z x y action obs reward`` line per
    step, each optionally followed by a ``belief`` ... ``end`` section."""
    if result.trace is None:
        raise ValueError("episode was run without record_trace")
    with open(path, "w", encoding="ascii") as fp:
        _write_trace_fp(result, fp, include_belief)


def _write_trace_fp(result: EpisodeResult, fp: IO[str], include_belief: bool) -> None:
    fp.write(f"start {result.start.rel.z} {result.start.rel.x_rel} "
             f"{result.start.rel.y_rel}\n")
    for st in result.trace or ():
        fp.write(
            f"{st.env.t} {st.env.rel.z} {st.env.rel.x_rel} {st.env.rel.y_rel} "
            f"{st.action} {st.obs} {st.reward!r}\n"
        )
        if include_belief and st.belief is not None:
            fp.write("belief\n")
            dump_belief(st.belief, fp)
            fp.write("end\n")
