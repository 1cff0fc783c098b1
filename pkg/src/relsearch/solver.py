"""Policy computation: exact value iteration, QMDP, and a point-based solver.

All three produce alpha-vector policies. Because altitude is always
observed, value functions are kept per altitude slice: an alpha vector is
a weight vector over the (2N-1)^2 XY offsets tagged with the slice it
applies to and the action it recommends. The value of a belief is the
maximum dot product over the alphas of its slice.

The point-based solver maintains a lower bound on the optimal value
function. It seeds blind-policy alphas (a provable lower bound), samples
reachable beliefs by forward simulation, and sweeps Bellman point backups
over the sampled set, keeping the union of old and new vectors pruned to
those that win at some retained point. The lower bound at every retained
point is therefore non-decreasing across sweeps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, uniform_init, update
from .model import (
    ACTIONS,
    Action,
    ACTION_BY_NAME,
    ModelParams,
    ObsSymbol,
    RelState,
    cell_index,
    cell_unindex,
    expected_reward_vectors,
    fov_contains,
    is_target,
    obs_accuracy,
    obs_weights,
    state_index,
    state_unindex,
    transition_dist,
    transition_kernels,
)

POLICY_MAGIC = "RELSEARCH-POLICY v1"
POLICY_KINDS = ("pbvi", "qmdp", "mdp")


class PolicyFormatError(ValueError):
    """Raised for malformed, mismatched or truncated policy files."""


class SolverBudgetError(RuntimeError):
    """Time budget exhausted before a single backup sweep completed."""

    def __init__(self, message: str, points: int, elapsed: float):
        super().__init__(message)
        self.points = points
        self.elapsed = elapsed


@dataclass(frozen=True)
class AlphaVector:
    """Linear value-function piece for one altitude slice."""

    action: Action
    z: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights.setflags(write=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AlphaVector):
            return NotImplemented
        return (
            self.action is other.action
            and self.z == other.z
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class SolverConfig:
    """Budgets for the point-based solver.

    ``max_sweeps`` expresses the budget in backup sweeps; fixing it makes
    solves bit-reproducible across machines, whereas ``time_budget`` is a
    wall-clock cap only.
    """

    time_budget: float = 120.0
    max_points: int = 2000
    epsilon: float = 1e-3
    seed: int = 0
    max_sweeps: int | None = None

    def __post_init__(self) -> None:
        if self.time_budget <= 0 or self.max_points <= 0 or self.epsilon <= 0:
            raise ValueError("solver budgets must be positive")
        if self.max_sweeps is not None and self.max_sweeps <= 0:
            raise ValueError("max_sweeps must be positive when set")


@dataclass(eq=False)
class Policy:
    """Alpha-vector policy plus the parameters it was solved for."""

    alphas: tuple[AlphaVector, ...]
    params: ModelParams
    kind: str
    params_digest: str = ""
    meta: dict = field(default_factory=dict, repr=False)
    _slices: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not self.params_digest:
            self.params_digest = self.params.digest()
        present = {a.z for a in self.alphas}
        missing = set(range(1, self.params.n + 1)) - present
        if missing:
            raise ValueError(f"no alpha vectors for altitude slices {sorted(missing)}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Policy):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.params == other.params
            and self.params_digest == other.params_digest
            and self.alphas == other.alphas
        )

    def slice_arrays(self, z: int) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (weights, action ranks) for one slice, cached."""
        cached = self._slices.get(z)
        if cached is None:
            group = [a for a in self.alphas if a.z == z]
            if not group:
                raise ValueError(f"policy has no alphas for altitude {z}")
            w = np.stack([a.weights for a in group])
            ranks = np.array([a.action.rank for a in group])
            cached = self._slices[z] = (w, ranks)
        return cached


def _check_compatible(pol: Policy, b: Belief) -> None:
    if len(b.probs) != pol.params.n_cells or not 1 <= b.z <= pol.params.n:
        raise ValueError(
            "belief incompatible with policy model "
            f"(digest {pol.params_digest}): {len(b.probs)} cells at z={b.z}"
        )


def policy_action(pol: Policy, b: Belief) -> Action:
    """Action of the best alpha at b; ties break by canonical action order."""
    _check_compatible(pol, b)
    w, ranks = pol.slice_arrays(b.z)
    vals = w @ b.probs
    best = np.lexsort((ranks, -vals))[0]
    return ACTIONS[int(ranks[best])]


def policy_value(pol: Policy, b: Belief) -> float:
    _check_compatible(pol, b)
    w, _ = pol.slice_arrays(b.z)
    return float(np.max(w @ b.probs))


# ---------------------------------------------------------------------------
# Exact MDP value iteration and the QMDP approximation.


def _tabular_model(p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Dense T[a, s, s'] and expected-reward R[a, s] over the full lattice.

    The target state keeps all-zero rows: absorbing with zero value.
    """
    n_states = p.n_states
    t = np.zeros((len(ACTIONS), n_states, n_states))
    r = np.zeros((len(ACTIONS), n_states))
    from .model import reward as reward_fn

    for s_idx in range(n_states):
        s = state_unindex(s_idx, p.n)
        if is_target(s, p.n):
            continue
        for a in ACTIONS:
            for out in transition_dist(s, a, p):
                d_idx = state_index(out.state, p.n)
                t[a.rank, s_idx, d_idx] += out.prob
                r[a.rank, s_idx] += out.prob * reward_fn(s, a, out.state, out.bump, p)
    return t, r


def mdp_value_iteration(
    p: ModelParams, epsilon: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Converged state values and the greedy policy of the underlying MDP.

    Iterates Bellman updates until the sup-norm change drops below
    epsilon * (1 - gamma) / gamma, which bounds the distance to the fixed
    point by epsilon. Returns (values, greedy action ranks), both indexed
    by state index.
    """
    q = _q_iteration(p, epsilon)
    return q.max(axis=0), q.argmax(axis=0)


def _q_iteration(p: ModelParams, epsilon: float) -> np.ndarray:
    t, r = _tabular_model(p)
    gamma = p.discount
    v = np.zeros(p.n_states)
    threshold = epsilon * (1.0 - gamma) / gamma
    for _ in range(1_000_000):
        q = r + gamma * (t @ v)
        v_new = q.max(axis=0)
        delta = float(np.abs(v_new - v).max())
        v = v_new
        if delta <= threshold:
            break
    return r + gamma * (t @ v)


def _q_slice_alphas(p: ModelParams, q: np.ndarray, kind: str) -> Policy:
    cells = p.n_cells
    alphas = []
    for z in range(1, p.n + 1):
        base = (z - 1) * cells
        for a in ACTIONS:
            alphas.append(AlphaVector(a, z, q[a.rank, base : base + cells].copy()))
    return Policy(tuple(alphas), p, kind)


def solve_qmdp(p: ModelParams, epsilon: float = 1e-6) -> Policy:
    """One alpha per (action, slice) holding the converged MDP Q values.

    QMDP treats the state as fully observable from the next step on, so
    its belief value upper-bounds the true partially-observable value.
    """
    return _q_slice_alphas(p, _q_iteration(p, epsilon), "qmdp")


def solve_mdp(p: ModelParams, epsilon: float = 1e-6) -> Policy:
    """Greedy MDP policy in alpha form, for fully-observable comparisons."""
    return _q_slice_alphas(p, _q_iteration(p, epsilon), "mdp")


# ---------------------------------------------------------------------------
# Point-based solver.


def _blind_alphas(p: ModelParams) -> dict[int, list[AlphaVector]]:
    """Per-slice value of repeating one action forever: a sound lower bound.

    Iterating the fixed-action Bellman operator from the constant
    min-reward bound converges monotonically from below, so any finite
    iterate is still a lower bound on the optimal value.
    """
    t, r = _tabular_model(p)
    gamma = p.discount
    floor = min(0.0, p.reward_oob) / (1.0 - gamma)
    cells = p.n_cells
    out: dict[int, list[AlphaVector]] = {z: [] for z in range(1, p.n + 1)}
    for a in ACTIONS:
        v = np.full(p.n_states, floor)
        for _ in range(2000):
            v_new = r[a.rank] + gamma * (t[a.rank] @ v)
            if float(np.abs(v_new - v).max()) < 1e-12:
                v = v_new
                break
            v = v_new
        for z in range(1, p.n + 1):
            base = (z - 1) * cells
            out[z].append(AlphaVector(a, z, v[base : base + cells].copy()))
    return out


def _qmdp_slice_tables(p: ModelParams, q: np.ndarray) -> dict[int, np.ndarray]:
    cells = p.n_cells
    return {
        z: q[:, (z - 1) * cells : z * cells].copy() for z in range(1, p.n + 1)
    }


class _PointPool:
    """Belief points per slice with rounded-key near-duplicate pruning."""

    def __init__(self, p: ModelParams):
        self.n = p.n
        self.cells = p.n_cells
        self.pool: dict[int, list[np.ndarray]] = {z: [] for z in range(1, p.n + 1)}
        self._seen: set[tuple[int, bytes]] = set()
        self.total = 0

    def add(self, z: int, probs: np.ndarray) -> bool:
        key = (z, np.round(probs, 7).tobytes())
        if key in self._seen:
            return False
        self._seen.add(key)
        self.pool[z].append(np.asarray(probs))
        self.total += 1
        return True

    def stacked(self) -> dict[int, np.ndarray]:
        return {z: np.stack(v) for z, v in self.pool.items()}


def _seed_points(p: ModelParams, cfg: SolverConfig, pool: _PointPool) -> None:
    """Uniform start beliefs, per-cell deltas, and look-posterior chains.

    Deltas anchor the per-state values, which keeps the point-based bound
    at least as sharp as the greedy state policy near concentrated
    beliefs. The look chains (every observation sequence of repeated
    looks, branching to depth 3 and following the not_seen spine to depth
    2N) anchor the information-gathering phase: their values drive the
    look-versus-move tradeoff at spread beliefs.
    """
    n, cells = p.n, p.n_cells
    for z in range(1, n + 1):
        pool.add(z, np.full(cells, 1.0 / cells))
    tgt = cell_index(n, n, n)
    for z in range(1, n + 1):
        for c in range(cells):
            if pool.total >= cfg.max_points:
                return
            if z == 1 and c == tgt:
                continue
            delta = np.zeros(cells)
            delta[c] = 1.0
            pool.add(z, delta)
    for z in range(1, n + 1):
        frontier = [np.full(cells, 1.0 / cells)]
        for depth in range(2 * n):
            nxt: list[np.ndarray] = []
            for b in frontier:
                for o in (ObsSymbol.NOT_SEEN, ObsSymbol.SEEN):
                    if pool.total >= cfg.max_points:
                        return
                    post = b * obs_weights(p, z, o)
                    total = post.sum()
                    if total <= 1e-12:
                        continue
                    post = post / total
                    if pool.add(z, post):
                        # Branch on seen only near the root; always follow
                        # the not_seen spine.
                        if o is ObsSymbol.NOT_SEEN or depth < 3:
                            nxt.append(post)
            frontier = nxt
            if not frontier:
                break


def _simulate_points(
    p: ModelParams,
    pool: _PointPool,
    rng: np.random.Generator,
    act,
    trajectories: int,
    limit: int,
) -> int:
    """Run forward-simulation trajectories, harvesting visited beliefs.

    ``act(belief)`` picks the policy action; a 25% exploration mixture
    draws uniformly over all actions. Trajectories start from the uniform
    initial belief at a random altitude, depth capped at 4N.
    """
    n, cells = p.n, p.n_cells
    tgt = cell_index(n, n, n)
    added = 0
    for _ in range(trajectories):
        if pool.total >= limit:
            break
        z0 = int(rng.integers(1, n + 1))
        while True:
            c0 = int(rng.integers(cells))
            if not (z0 == 1 and c0 == tgt):
                break
        x, y = cell_unindex(c0, n)
        s = RelState(x, y, z0)
        b = uniform_init(n, z0)
        for _ in range(4 * n):
            if rng.random() < 0.25:
                a = ACTIONS[int(rng.integers(len(ACTIONS)))]
            else:
                a = act(b)
            outs = transition_dist(s, a, p)
            u = rng.random()
            cum = 0.0
            picked = outs[-1]
            for out in outs:
                cum += out.prob
                if u < cum:
                    picked = out
                    break
            s = picked.state
            if a is Action.LOOK:
                p_seen = (
                    obs_accuracy(s.z, p.obs_base)
                    if fov_contains(s, p.n)
                    else 1.0 - obs_accuracy(s.z, p.obs_base)
                )
                o = ObsSymbol.SEEN if rng.random() < p_seen else ObsSymbol.NOT_SEEN
            else:
                o = ObsSymbol.NONE
            b = update(b, a, o, p, z_next=s.z)
            added += pool.add(b.z, b.probs)
            if is_target(s, n) or pool.total >= limit:
                break
    return added


def _value_kernels(p: ModelParams) -> dict[tuple[int, Action], dict[int, np.ndarray]]:
    """Transition kernels with the terminal row zeroed (no value outflow)."""
    base = transition_kernels(p)
    tgt = cell_index(p.n, p.n, p.n)
    out: dict[tuple[int, Action], dict[int, np.ndarray]] = {}
    for (z, a), per_dz in base.items():
        if z != 1:
            out[(z, a)] = per_dz
            continue
        fixed = {}
        for dz, k in per_dz.items():
            k = k.copy()
            k[tgt, :] = 0.0
            fixed[dz] = k
        out[(z, a)] = fixed
    return out


def solve_pbvi(p: ModelParams, cfg: SolverConfig) -> Policy:
    """Point-based value iteration over sampled beliefs, per altitude slice.

    Belief points are expanded during solving by simulating the current
    greedy policy (with exploration), so backups track the beliefs the
    improving policy actually reaches. Stops at the sweep budget, the
    wall-clock budget, or once the value at the uniform start beliefs is
    stable within cfg.epsilon and expansion has saturated.
    """
    start_time = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    q = _q_iteration(p, min(cfg.epsilon, 1e-6))
    q_slices = _qmdp_slice_tables(p, q)

    pool = _PointPool(p)
    _seed_points(p, cfg, pool)

    def qmdp_act(b: Belief) -> Action:
        return ACTIONS[int(np.argmax(q_slices[b.z] @ b.probs))]

    # Leave most of the remaining point budget to policy-guided expansion;
    # a purely up-front sample cannot cover the beliefs the final policy
    # visits.
    warm_limit = pool.total + max(0, cfg.max_points - pool.total) // 3
    if p.n > 1:
        _simulate_points(
            p, pool, rng, qmdp_act, trajectories=4 * p.n, limit=warm_limit
        )

    kernels = _value_kernels(p)
    rewards = expected_reward_vectors(p)
    gamma = p.discount
    n = p.n

    gamma_sets: dict[int, list[tuple[int, np.ndarray]]] = {
        z: [(a.action.rank, a.weights) for a in alphas]
        for z, alphas in _blind_alphas(p).items()
    }
    uniforms = {z: np.full(p.n_cells, 1.0 / p.n_cells) for z in range(1, n + 1)}

    def stack_sets() -> dict[int, tuple[np.ndarray, np.ndarray]]:
        return {
            z: (
                np.stack([w for _, w in gamma_sets[z]]),
                np.array([rank for rank, _ in gamma_sets[z]]),
            )
            for z in range(1, n + 1)
        }

    def greedy_act(b: Belief) -> Action:
        group = gamma_sets[b.z]
        vals = np.array([w @ b.probs for _, w in group])
        ranks = np.array([rank for rank, _ in group])
        return ACTIONS[int(ranks[np.lexsort((ranks, -vals))[0]])]

    def uniform_values() -> np.ndarray:
        return np.array(
            [
                max(float(w @ uniforms[z]) for _, w in gamma_sets[z])
                for z in range(1, n + 1)
            ]
        )

    prev_uniform = uniform_values()
    sweeps_done = 0
    converged = False
    expansion_idle = 0
    while True:
        elapsed = time.perf_counter() - start_time
        if elapsed > cfg.time_budget:
            if sweeps_done == 0:
                raise SolverBudgetError(
                    f"time budget {cfg.time_budget}s exhausted after {elapsed:.1f}s "
                    f"with {pool.total} belief points and no completed sweep",
                    points=pool.total,
                    elapsed=elapsed,
                )
            break
        if cfg.max_sweeps is not None and sweeps_done >= cfg.max_sweeps:
            break

        if n > 1 and sweeps_done > 0:
            if pool.total < cfg.max_points:
                # Half current-policy, half QMDP: the former covers the
                # information-gathering beliefs, the latter keeps motion
                # chains toward likely target cells represented even while
                # the interim policy is still poor.
                def mixed_act(b: Belief) -> Action:
                    return greedy_act(b) if rng.random() < 0.5 else qmdp_act(b)

                added = _simulate_points(
                    p,
                    pool,
                    rng,
                    mixed_act,
                    trajectories=2 * n,
                    limit=cfg.max_points,
                )
                expansion_idle = expansion_idle + 1 if added == 0 else 0
            else:
                expansion_idle += 1

        stacked = stack_sets()
        points = pool.stacked()
        new_sets: dict[int, list[tuple[int, np.ndarray]]] = {}
        for z in range(1, n + 1):
            b_mat = points[z]
            m = b_mat.shape[0]
            best_vals = np.full(m, -np.inf)
            best_vecs = np.zeros((m, p.n_cells))
            best_ranks = np.zeros(m, dtype=int)
            for a in ACTIONS:
                contrib = np.zeros((m, p.n_cells))
                if a is Action.LOOK:
                    a_w, _ = stacked[z]
                    for o in (ObsSymbol.SEEN, ObsSymbol.NOT_SEEN):
                        g = a_w * obs_weights(p, z, o)[None, :]
                        scores = b_mat @ g.T
                        contrib += g[np.argmax(scores, axis=1)]
                else:
                    for dz, k in kernels[(z, a)].items():
                        a_w, _ = stacked[z + dz]
                        g = k @ a_w.T
                        scores = b_mat @ g
                        contrib += g[:, np.argmax(scores, axis=1)].T
                cand = rewards[(z, a)][None, :] + gamma * contrib
                vals = np.einsum("mc,mc->m", cand, b_mat)
                better = vals > best_vals
                best_vals = np.where(better, vals, best_vals)
                best_vecs[better] = cand[better]
                best_ranks[better] = a.rank
            # Union with the previous set, then keep only vectors that win
            # at some retained point: value at every point never decreases.
            cand_w = np.concatenate([stacked[z][0], best_vecs])
            cand_r = np.concatenate([stacked[z][1], best_ranks])
            winners = np.unique(np.argmax(b_mat @ cand_w.T, axis=1))
            new_sets[z] = [(int(cand_r[i]), cand_w[i]) for i in winners]
        gamma_sets = new_sets
        sweeps_done += 1

        cur_uniform = uniform_values()
        stable = float(np.abs(cur_uniform - prev_uniform).max()) < cfg.epsilon
        saturated = pool.total >= cfg.max_points or expansion_idle >= 2
        if stable and saturated:
            converged = True
            break
        prev_uniform = cur_uniform

    alphas = []
    for z in range(1, n + 1):
        for rank, w in gamma_sets[z]:
            alphas.append(AlphaVector(ACTIONS[rank], z, w.copy()))
    return Policy(
        tuple(alphas),
        p,
        "pbvi",
        meta={
            "sweeps": sweeps_done,
            "points": pool.total,
            "converged": converged,
            "seconds": time.perf_counter() - start_time,
        },
    )


# ---------------------------------------------------------------------------
# Persistence. Plain-text, line oriented, with round-trip-exact floats.


def save_policy(pol: Policy, path) -> None:
    p = pol.params
    lines = [POLICY_MAGIC]
    lines.append(
        f"n={p.n} trans={p.trans_prob!r} obs={p.obs_base!r} "
        f"r0={p.reward_target!r} r1={p.reward_oob!r} gamma={p.discount!r} "
        f"kind={pol.kind} digest={pol.params_digest}"
    )
    for a in pol.alphas:
        lines.append(f"alpha z={a.z} action={a.action.value}")
        lines.append(" ".join(repr(float(w)) for w in a.weights))
    with open(path, "w", encoding="ascii") as fp:
        fp.write("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise PolicyFormatError(f"bad header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    required = {"n", "trans", "obs", "r0", "r1", "gamma", "kind", "digest"}
    missing = required - fields.keys()
    if missing:
        raise PolicyFormatError(f"header missing fields: {sorted(missing)}")
    return fields


def load_policy(path) -> Policy:
    with open(path, "r", encoding="ascii") as fp:
        lines = fp.read().splitlines()
    if not lines or lines[0] != POLICY_MAGIC:
        raise PolicyFormatError(
            f"bad magic header: expected {POLICY_MAGIC!r}, "
            f"got {lines[0]!r}" if lines else "empty policy file"
        )
    if len(lines) < 2:
        raise PolicyFormatError("missing parameter header")
    fields = _parse_header(lines[1])
    try:
        params = ModelParams(
            n=int(fields["n"]),
            trans_prob=float(fields["trans"]),
            obs_base=float(fields["obs"]),
            reward_target=float(fields["r0"]),
            reward_oob=float(fields["r1"]),
            discount=float(fields["gamma"]),
        )
    except ValueError as exc:
        raise PolicyFormatError(f"bad parameter header: {exc}") from exc
    kind = fields["kind"]
    if kind not in POLICY_KINDS:
        raise PolicyFormatError(f"unknown policy kind {kind!r}")
    if fields["digest"] != params.digest():
        raise PolicyFormatError(
            f"digest {fields['digest']} does not match parameters "
            f"(expected {params.digest()})"
        )
    alphas = []
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 3 or head[0] != "alpha":
            raise PolicyFormatError(f"line {i + 1}: expected alpha header")
        try:
            z = int(head[1].removeprefix("z="))
            action = ACTION_BY_NAME[head[2].removeprefix("action=")]
        except (ValueError, KeyError) as exc:
            raise PolicyFormatError(f"line {i + 1}: bad alpha header") from exc
        if i + 1 >= len(lines):
            raise PolicyFormatError(f"line {i + 1}: alpha header without weights")
        try:
            weights = np.array([float(tok) for tok in lines[i + 1].split()])
        except ValueError as exc:
            raise PolicyFormatError(f"line {i + 2}: bad weight value") from exc
        if len(weights) != params.n_cells:
            raise PolicyFormatError(
                f"line {i + 2}: expected {params.n_cells} weights, got {len(weights)}"
            )
        if not 1 <= z <= params.n:
            raise PolicyFormatError(f"line {i + 1}: altitude {z} out of range")
        alphas.append(AlphaVector(action, z, weights))
        i += 2
    return Policy(tuple(alphas), params, kind, params_digest=fields["digest"])
