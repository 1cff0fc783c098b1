"""Command-line entry point and the text-file flight protocol driver.

Subcommands: solve, eval, sweep, fly, inspect. Exit codes: 0 success,
1 usage error, 2 runtime or protocol error.

The flight link is a single append-only text file of strictly alternating
lines, starting with an observation::

    O seen|not_seen|none Z=<altitude>
    A east|west|north|south|ascend|descend|look|done

The drone side appends O lines (every one carries the measured altitude);
the controller appends A lines. The first O line carries ``none`` and
establishes the start altitude. ``A done`` closes the exchange once the
target is confirmed directly below.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import time
from pathlib import Path

from .belief import Belief, FilterDegenerateError, dump_belief, uniform_init, update
from .model import (
    ACTION_BY_NAME,
    Action,
    ModelParams,
    OBS_BY_NAME,
    ObsSymbol,
    cell_index,
)
from .sim import (
    BASELINE_NAMES,
    DEFAULT_STEP_CAP,
    EpisodeResult,
    EvalSummary,
    evaluate,
    run_episode,
    write_trace,
)
from .solver import (
    Policy,
    PolicyFormatError,
    SolverConfig,
    load_policy,
    policy_action,
    save_policy,
    solve_mdp,
    solve_pbvi,
    solve_qmdp,
)
from .sweep import (
    HEATMAP_METRICS,
    SWEEP_POLICIES,
    SweepSpec,
    run_sweep,
    write_csv,
    write_heatmap_svg,
)

log = logging.getLogger("relsearch")

_O_LINE = re.compile(r"^O (seen|not_seen|none) Z=(\d+)$")
_A_LINE = re.compile(r"^A (east|west|north|south|ascend|descend|look|done)$")


class ProtocolError(RuntimeError):
    """Malformed or out-of-order flight link traffic."""


class _Parser(argparse.ArgumentParser):
    # Spec'd exit codes: usage errors are 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _build_parser() -> _Parser:
    parser = _Parser(prog="relsearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(sp, required: bool):
        sp.add_argument("--n", type=int, required=required, help="grid side length")
        sp.add_argument("--trans", type=float, required=required,
                        help="probability a motion executes as commanded")
        sp.add_argument("--obs", type=float, required=required,
                        help="base observation accuracy")
        sp.add_argument("--r0", type=float, default=10.0, help="arrival reward")
        sp.add_argument("--r1", type=float, default=-1.0, help="bump penalty")
        sp.add_argument("--gamma", type=float, default=0.95, help="discount factor")

    def add_solver_flags(sp):
        sp.add_argument("--budget-sweeps", type=int, default=None,
                        help="fixed number of backup sweeps (reproducible)")
        sp.add_argument("--time-budget", type=float, default=120.0,
                        help="wall-clock solve cap in seconds")
        sp.add_argument("--max-points", type=int, default=2000,
                        help="belief point budget")
        sp.add_argument("--epsilon", type=float, default=1e-3,
                        help="value convergence threshold")
        sp.add_argument("--seed", type=int, default=0, help="sampling seed")

    sp = sub.add_parser("solve", parents=[], help="compute and save a policy")
    add_model_flags(sp, required=True)
    add_solver_flags(sp)
    sp.add_argument("--kind", choices=("pbvi", "qmdp", "mdp"), default="pbvi")
    sp.add_argument("--out", required=True, help="policy file to write")

    sp = sub.add_parser("eval", help="Monte Carlo evaluation of a policy")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--policy", help="policy file to evaluate")
    group.add_argument("--baseline", choices=BASELINE_NAMES)
    add_model_flags(sp, required=False)
    sp.add_argument("--episodes", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cap", type=int, default=DEFAULT_STEP_CAP)
    sp.add_argument("--csv", help="also write the summary as a CSV row")
    sp.add_argument("--trace", help="write a trace of the first episode")

    sp = sub.add_parser("sweep", help="parameter grid search")
    sp.add_argument("--n", type=int, default=7)
    sp.add_argument("--trans-values", type=_float_list,
                    default=(0.76, 0.82, 0.88, 0.94, 1.0))
    sp.add_argument("--obs-values", type=_float_list,
                    default=(0.76, 0.82, 0.88, 0.94, 1.0))
    sp.add_argument("--rewards", type=_float_list, default=(10.0,))
    sp.add_argument("--policies", default="pomdp,heuristic,random",
                    help="comma-separated subset of pomdp,heuristic,random")
    sp.add_argument("--episodes", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    add_solver_flags(sp)
    sp.add_argument("--cache-dir", help="directory for per-cell policy cache")
    sp.add_argument("--out", required=True, help="CSV output path")
    sp.add_argument("--heatmap", action="append", default=[],
                    metavar="POLICY:METRIC:PATH",
                    help="render an SVG heatmap (repeatable)")

    sp = sub.add_parser("fly", help="drive a policy over the text-file link")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--link", required=True, help="append-only link file")
    sp.add_argument("--poll", type=float, default=0.5,
                    help="seconds between link polls")
    sp.add_argument("--script", help="observation script replacing a live drone")
    sp.add_argument("--dump-belief", help="file receiving belief snapshots")
    sp.add_argument("--max-wait", type=float, default=None,
                    help="give up after this many idle seconds")

    sp = sub.add_parser("inspect", help="describe a saved policy file")
    sp.add_argument("--policy", required=True)

    return parser


def _params_from_args(args) -> ModelParams:
    if args.n is None or args.trans is None or args.obs is None:
        raise ValueError("--n, --trans and --obs are required without a policy file")
    return ModelParams(
        n=args.n,
        trans_prob=args.trans,
        obs_base=args.obs,
        reward_target=args.r0,
        reward_oob=args.r1,
        discount=args.gamma,
    )


def _solver_cfg(args) -> SolverConfig:
    return SolverConfig(
        time_budget=args.time_budget,
        max_points=args.max_points,
        epsilon=args.epsilon,
        seed=args.seed,
        max_sweeps=args.budget_sweeps,
    )


def _print_summary(name: str, digest: str, s: EvalSummary) -> None:
    print(f"policy           {name}")
    print(f"params digest    {digest}")
    print(f"episodes         {s.episodes}")
    print(f"mean reward      {s.mean_reward:.4f}")
    print(f"mean steps       {s.mean_steps:.3f} +/- {s.ci95_steps:.3f} (95% CI)")
    print(f"look proportion  {s.look_proportion:.4f}")
    print(f"found rate       {s.found_rate:.4f}")


def _cmd_solve(args) -> int:
    params = _params_from_args(args)
    cfg = _solver_cfg(args)
    print(f"params digest {params.digest()}")
    t0 = time.perf_counter()
    if args.kind == "pbvi":
        pol = solve_pbvi(params, cfg)
    elif args.kind == "qmdp":
        pol = solve_qmdp(params)
    else:
        pol = solve_mdp(params)
    seconds = time.perf_counter() - t0
    save_policy(pol, args.out)
    info = ", ".join(f"{k}={v}" for k, v in pol.meta.items()) or "exact"
    print(f"solved kind={pol.kind} alphas={len(pol.alphas)} in {seconds:.1f}s ({info})")
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    if args.policy:
        pol = load_policy(args.policy)
        params = pol.params
        if args.n is not None or args.trans is not None or args.obs is not None:
            flags = _params_from_args(args)
            if flags.digest() != pol.params_digest:
                raise ValueError(
                    f"policy digest {pol.params_digest} does not match flags "
                    f"digest {flags.digest()}"
                )
        target: object = pol
        name = f"{pol.kind}:{Path(args.policy).name}"
    else:
        params = _params_from_args(args)
        target = args.baseline
        name = args.baseline
    summary = evaluate(target, params, args.episodes, args.seed, cap=args.cap)
    _print_summary(name, params.digest(), summary)
    if args.csv:
        with open(args.csv, "w", encoding="ascii") as fp:
            fp.write(
                "episodes,mean_reward,mean_steps,ci95_steps,"
                "look_proportion,found_rate\n"
            )
            fp.write(
                f"{summary.episodes},{summary.mean_reward:.6g},"
                f"{summary.mean_steps:.6g},{summary.ci95_steps:.6g},"
                f"{summary.look_proportion:.6g},{summary.found_rate:.6g}\n"
            )
    if args.trace:
        res = run_episode(target, params, args.seed, cap=args.cap, record_trace=True)
        write_trace(res, args.trace)
        print(f"wrote trace of episode seed={args.seed} to {args.trace}")
    return 0


def _cmd_sweep(args) -> int:
    policies = tuple(tok for tok in args.policies.split(",") if tok)
    spec = SweepSpec(
        trans_values=tuple(args.trans_values),
        obs_values=tuple(args.obs_values),
        reward_values=tuple(args.rewards),
        policies=policies,
        episodes=args.episodes,
        solver_cfg=_solver_cfg(args),
        n=args.n,
        base_seed=args.seed,
    )
    records = run_sweep(spec, cache_dir=args.cache_dir)
    write_csv(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    for spec_str in args.heatmap:
        try:
            policy, metric, path = spec_str.split(":", 2)
        except ValueError:
            raise ValueError(
                f"bad --heatmap spec {spec_str!r}, expected POLICY:METRIC:PATH"
            ) from None
        if policy not in SWEEP_POLICIES or metric not in HEATMAP_METRICS:
            raise ValueError(f"bad --heatmap spec {spec_str!r}")
        write_heatmap_svg(records, policy, metric, path)
        print(f"wrote heatmap {path}")
    return 0


def _cmd_inspect(args) -> int:
    pol = load_policy(args.policy)
    p = pol.params
    print(f"kind             {pol.kind}")
    print(f"params digest    {pol.params_digest}")
    print(
        f"model            n={p.n} trans={p.trans_prob} obs={p.obs_base} "
        f"r0={p.reward_target} r1={p.reward_oob} gamma={p.discount}"
    )
    print(f"alpha vectors    {len(pol.alphas)}")
    for z in range(1, p.n + 1):
        group = [a for a in pol.alphas if a.z == z]
        uni = uniform_init(p.n, z)
        w, _ = pol.slice_arrays(z)
        val = float((w @ uni.probs).max())
        print(f"  z={z}: {len(group)} alphas, uniform-belief value {val:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Flight protocol.


class FlightDriver:
    """Consumes link-file lines in order and produces controller replies."""

    def __init__(self, policy: Policy, belief_sink=None):
        self.policy = policy
        self.params = policy.params
        self.belief: Belief | None = None
        self.last_action: Action | None = None
        self.expect = "O"
        self.line_no = 0
        self.done = False
        self._sink = belief_sink
        self._target_cell = cell_index(self.params.n, self.params.n, self.params.n)

    def feed(self, line: str) -> str | None:
        """Process one link line; returns the reply for O lines."""
        self.line_no += 1
        no = self.line_no
        line = line.rstrip("\n")
        if self.done:
            raise ProtocolError(f"line {no}: traffic after the done handshake")
        tag = line[:1]
        if tag not in ("O", "A"):
            raise ProtocolError(f"line {no}: expected an O or A line, got {line!r}")
        if tag != self.expect:
            raise ProtocolError(
                f"line {no}: expected {self.expect} line, got {tag} line"
            )
        if tag == "A":
            m = _A_LINE.match(line)
            if not m:
                raise ProtocolError(f"line {no}: malformed action line {line!r}")
            token = m.group(1)
            if token == "done":
                self.done = True
                self.last_action = None
            else:
                self.last_action = ACTION_BY_NAME[token]
            self.expect = "O"
            return None

        m = _O_LINE.match(line)
        if not m:
            raise ProtocolError(f"line {no}: malformed observation line {line!r}")
        obs = OBS_BY_NAME[m.group(1)]
        z = int(m.group(2))
        if not 1 <= z <= self.params.n:
            raise ProtocolError(f"line {no}: altitude {z} outside [1, {self.params.n}]")
        reply = self._observe(obs, z, no)
        self.expect = "A"
        return reply

    def _observe(self, obs: ObsSymbol, z: int, no: int) -> str:
        if self.belief is None:
            if obs is not ObsSymbol.NONE:
                raise ProtocolError(
                    f"line {no}: first observation must be 'none' (no action yet)"
                )
            self.belief = uniform_init(self.params.n, z)
        elif z == 1 and obs is ObsSymbol.SEEN and self.last_action is not Action.LOOK:
            # Arrival report: the drone stands on the target after a motion.
            self.done = True
            return "A done"
        else:
            try:
                self.belief = update(
                    self.belief, self.last_action, obs, self.params, z_next=z
                )
            except (ValueError, FilterDegenerateError) as exc:
                raise ProtocolError(f"line {no}: {exc}") from exc
        if self._sink is not None:
            self._sink.write(f"belief z={self.belief.z}\n")
            dump_belief(self.belief, self._sink)
            self._sink.write("end\n")
        if (
            self.belief.z == 1
            and obs is ObsSymbol.SEEN
            and self.belief.probs[self._target_cell] >= 1.0 - 1e-9
        ):
            self.done = True
            return "A done"
        action = policy_action(self.policy, self.belief)
        self.last_action = action
        return f"A {action.value}"


def observation_script(result: EpisodeResult) -> list[str]:
    """Observation lines a drone would send while replaying an episode.

    The initial line reports the start altitude; each step reports what
    followed the corresponding action. A found episode ends with the
    arrival report ``O seen Z=1`` in place of the post-arrival observation.
    """
    if result.trace is None:
        raise ValueError("episode was run without record_trace")
    lines = [f"O none Z={result.start.rel.z}"]
    for step in result.trace[:-1]:
        lines.append(f"O {step.obs.value} Z={step.env.rel.z}")
    if result.trace:
        last = result.trace[-1]
        if result.found:
            lines.append("O seen Z=1")
        else:
            lines.append(f"O {last.obs.value} Z={last.env.rel.z}")
    return lines


def fly(
    policy_path,
    link_path,
    poll: float = 0.5,
    script_path=None,
    dump_belief_path=None,
    max_wait: float | None = None,
) -> int:
    """Run the controller side of the link protocol.

    With a script file the exchange is simulated: each scripted
    observation is appended to the link followed by the controller's
    reply. Without one, the link file is tail-polled for new O lines.
    Returns 0 after the done handshake.
    """
    policy = load_policy(policy_path)
    link = Path(link_path)
    link.touch()
    sink = open(dump_belief_path, "w", encoding="ascii") if dump_belief_path else None
    try:
        driver = FlightDriver(policy, belief_sink=sink)

        def append(line: str) -> None:
            with open(link, "a", encoding="ascii") as fp:
                fp.write(line + "\n")

        offset = 0

        def consume_new() -> int:
            """Feed complete new lines to the driver; reply to O lines."""
            nonlocal offset
            with open(link, "r", encoding="ascii") as fp:
                fp.seek(offset)
                chunk = fp.read()
            fed = 0
            while True:
                nl = chunk.find("\n")
                if nl < 0:
                    break
                line = chunk[:nl]
                chunk = chunk[nl + 1 :]
                offset += nl + 1
                reply = driver.feed(line)
                fed += 1
                log.info("link <- %s", line)
                if reply is not None:
                    append(reply)
                    offset += len(reply) + 1
                    driver.feed(reply)
                    log.info("link -> %s", reply)
            return fed

        consume_new()  # replay anything already in the link file

        if script_path is not None:
            for raw in Path(script_path).read_text(encoding="ascii").splitlines():
                if driver.done:
                    break
                if not raw.strip():
                    continue
                append(raw)
                consume_new()
            if not driver.done:
                log.warning("script exhausted before the done handshake")
            return 0

        waited = 0.0
        while not driver.done:
            if consume_new() == 0:
                if max_wait is not None and waited >= max_wait:
                    raise ProtocolError(
                        f"no link traffic for {waited:.1f}s, giving up"
                    )
                time.sleep(poll)
                waited += poll
            else:
                waited = 0.0
        return 0
    finally:
        if sink is not None:
            sink.close()


def _cmd_fly(args) -> int:
    return fly(
        args.policy,
        args.link,
        poll=args.poll,
        script_path=args.script,
        dump_belief_path=args.dump_belief,
        max_wait=args.max_wait,
    )


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": _cmd_solve,
        "eval": _cmd_eval,
        "sweep": _cmd_sweep,
        "fly": _cmd_fly,
        "inspect": _cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except (
        ValueError,
        OSError,
        ProtocolError,
        PolicyFormatError,
        FilterDegenerateError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
