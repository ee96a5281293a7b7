"""Multi-agent route-share environment.

One agent per OD pair.  Each step every agent submits a proportion vector
over its (at most six) candidate routes; the environment prunes tiny
proportions, loads the network and rewards each agent by the decrease of
its own relative gap.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import local_gaps, relative_gap_global
from .errors import ConfigError, ContractViolation
from .network import MAX_ROUTES, DemandMatrix, Objective, load_network, uniform_action

PRUNE_TAU = 1e-4
STEPS_PER_EPISODE = 50
CONGESTED_VC = 1.0

# observation layout, all blocks padded to MAX_ROUTES route slots
N_OD_FEATURES = 5            # origin x, y, destination x, y, default demand
N_STATIC_ROUTE = 3           # free-flow time, link count, mean link degree
N_DYNAMIC_ROUTE = 6          # cost, cost change, travel time, mean v/c, congested links, share
STATIC_ROUTE_OFFSET = N_OD_FEATURES + MAX_ROUTES * MAX_ROUTES
DYNAMIC_OFFSET = STATIC_ROUTE_OFFSET + MAX_ROUTES * N_STATIC_ROUTE
MASK_OFFSET = DYNAMIC_OFFSET + MAX_ROUTES * N_DYNAMIC_ROUTE
OBS_DIM = MASK_OFFSET + MAX_ROUTES


@dataclass(frozen=True)
class EnvConfig:
    steps_per_episode: int = STEPS_PER_EPISODE
    prune_threshold: float = PRUNE_TAU
    prune: bool = True
    objective: Objective = Objective.UE
    demand_mode: str = "fixed"
    beta_range: tuple = (0.5, 1.0)
    seed: int = 0
    use_coords: bool = True
    # which link cost feeds the first dynamic feature: "mode" follows the
    # objective, "marginal" always uses marginal times
    cost_feature: str = "mode"

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective.coerce(self.objective))
        object.__setattr__(self, "beta_range", tuple(float(v) for v in self.beta_range))
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be at least 1")
        if not 0.0 < self.prune_threshold < 1.0:
            raise ConfigError("prune_threshold must lie in (0, 1)")
        if self.demand_mode not in ("fixed", "variable"):
            raise ConfigError(f"unknown demand mode {self.demand_mode!r}")
        lo, hi = self.beta_range
        if not (0.0 < lo <= hi and np.isfinite(hi)):
            raise ConfigError(f"invalid beta range {self.beta_range}")
        if self.demand_mode == "variable" and not lo < hi:
            raise ConfigError("variable demand needs beta low < high")
        if self.cost_feature not in ("mode", "marginal"):
            raise ConfigError(f"unknown cost feature {self.cost_feature!r}")


def scale_demand(dm, beta_range, rng):
    """Multiply every OD demand by an independent U(low, high) factor."""
    lo, hi = float(beta_range[0]), float(beta_range[1])
    if not lo > 0:
        raise ValueError("beta low must be positive")
    if lo == hi:
        return dm.scaled(np.full(dm.num_agents, lo))
    return dm.scaled(rng.uniform(lo, hi, size=dm.num_agents))


def prune_action(a, tau=PRUNE_TAU):
    """Zero components below ``tau`` and renormalize; works row-wise.

    If every component of a row is below ``tau`` the largest one (lowest
    index on ties) is kept at 1.
    """
    a = np.asarray(a, dtype=np.float64)
    rows = np.atleast_2d(a)
    keep = rows >= tau
    out = np.where(keep, rows, 0.0)
    sums = out.sum(axis=1, keepdims=True)
    # rows that lose no mass are left bit-identical so pruning is idempotent
    sums[~(keep != (rows > 0)).any(axis=1)] = 1.0
    empty = ~keep.any(axis=1)
    if empty.any():
        idx = np.flatnonzero(empty)
        out[idx] = 0.0
        out[idx, rows[idx].argmax(axis=1)] = 1.0
        sums[idx] = 1.0
    out = out / sums
    return out.reshape(a.shape)


def compute_rewards(prev_gaps, curr_gaps, t):
    """Per-agent reward: ``-gap`` at the first step, else the gap decrease."""
    if t < 1:
        raise ValueError("rewards start at step 1")
    curr = np.asarray(curr_gaps, dtype=np.float64)
    if t == 1:
        return -curr
    return np.asarray(prev_gaps, dtype=np.float64) - curr


@dataclass(frozen=True, eq=False)
class EnvState:
    t: int
    fs: object
    prev_fs: object
    demand: DemandMatrix
    action: np.ndarray
    gaps: np.ndarray
    global_gap: float


class TrafficEnv:
    """Environment over a fixed network, route set and default demand."""

    def __init__(self, cfg, net, rs, dm, coords=None):
        self.cfg = cfg
        self.net = net
        self.rs = rs
        self.dm = dm
        rs.validate(net, dm)
        if cfg.use_coords and coords is None:
            raise ConfigError("coordinate features enabled but no node coordinates given")
        self.coords = coords
        self.num_agents = rs.num_agents
        self.mask = rs.mask()
        self.max_route_len = float(rs.route_lengths().max())
        ff = rs.route_sums(net.t0)
        ff_min = np.minimum.reduceat(ff, rs.agent_ptr[:-1])
        # free-flow time of the best candidate route normalizes all times
        self.time_scale = np.where(ff_min > 0, ff_min, 1.0)
        self._route_scale = self.time_scale[rs.route_agent]
        self.capacity = net.capacity
        self.static_obs = self._static_block(ff)

    # observation pieces -------------------------------------------------
    def _static_block(self, ff):
        net, rs, dm = self.net, self.rs, self.dm
        n = self.num_agents
        od = np.zeros((n, N_OD_FEATURES))
        if self.cfg.use_coords:
            xy = np.zeros((net.num_nodes, 2))
            for node_id, (x, y) in self.coords.items():
                xy[net.index_of(node_id)] = (x, y)
            missing = set(int(i) for i in net.node_ids) - set(int(k) for k in self.coords)
            used = set(dm.origins.tolist()) | set(dm.destinations.tolist())
            if any(net.index_of(m) in used for m in missing):
                raise ConfigError("node coordinates missing for an OD endpoint")
            lo = xy.min(axis=0)
            span = np.where(xy.max(axis=0) > lo, xy.max(axis=0) - lo, 1.0)
            xy = (xy - lo) / span
            od[:, 0:2] = xy[dm.origins]
            od[:, 2:4] = xy[dm.destinations]
        mean_d = dm.demand.mean() if n else 1.0
        od[:, 4] = dm.demand / mean_d
        ident = np.zeros((n, MAX_ROUTES, MAX_ROUTES))
        for i, k in enumerate(rs.counts):
            ident[i, np.arange(k), np.arange(k)] = 1.0
        deg = net.out_degree()[net.head].astype(np.float64)
        deg /= max(deg.max(initial=1.0), 1.0)
        mean_deg = rs.route_sums(deg) / rs.route_lengths()
        per_route = np.stack([
            rs.to_padded(ff / self._route_scale),
            rs.to_padded(rs.route_lengths() / self.max_route_len),
            rs.to_padded(mean_deg),
        ], axis=2)
        return np.concatenate([od, ident.reshape(n, -1), per_route.reshape(n, -1)], axis=1)

    def _route_costs(self, fs):
        if self.cfg.cost_feature == "marginal" and fs.objective is not Objective.SO:
            times = self.net.costs(fs.link_flows, Objective.SO)
            return self.rs.route_sums(times)
        return fs.path_costs

    def _dynamic_block(self, state):
        rs = self.rs
        fs, prev = state.fs, state.prev_fs
        cost = self._route_costs(fs) / self._route_scale
        dcost = (cost - self._route_costs(prev) / self._route_scale
                 if prev is not None else np.zeros_like(cost))
        ttime = rs.route_sums(fs.bpr_times) / self._route_scale
        vc = fs.link_flows / self.capacity
        mean_vc = rs.route_sums(vc) / rs.route_lengths()
        congested = rs.route_sums((vc > CONGESTED_VC).astype(np.float64)) / self.max_route_len
        feats = np.stack([rs.to_padded(v) for v in (cost, dcost, ttime, mean_vc, congested)]
                         + [state.action], axis=2)
        return feats.reshape(self.num_agents, -1)

    def observations(self, state):
        """``(agents, OBS_DIM)`` observation matrix; a pure function of state."""
        return np.concatenate([self.static_obs, self._dynamic_block(state),
                               self.mask.astype(np.float64)], axis=1)

    def build_observation(self, agent, state):
        return self.observations(state)[agent]

    # lifecycle ------------------------------------------------------------
    def _demand(self, rng):
        if self.cfg.demand_mode == "fixed":
            return self.dm
        return scale_demand(self.dm, self.cfg.beta_range, rng)

    def _load(self, dm, act):
        fs = load_network(self.net, self.rs, dm, act, self.cfg.objective)
        return fs, local_gaps(fs, dm, self.rs), relative_gap_global(fs, dm)

    def reset(self, rng=None):
        """Draw episode demand, load uniform shares, return ``(state, obs)``."""
        if rng is None:
            rng = np.random.default_rng(self.cfg.seed)
        dm = self._demand(rng)
        act = uniform_action(self.rs)
        fs, gaps, g = self._load(dm, act)
        state = EnvState(0, fs, None, dm, act, gaps, g)
        return state, self.observations(state)

    def step(self, state, joint):
        joint = np.asarray(joint, dtype=np.float64)
        if state.t >= self.cfg.steps_per_episode:
            raise ContractViolation("episode already finished; call reset")
        if joint.shape != (self.num_agents, MAX_ROUTES):
            raise ContractViolation(f"joint action shape {joint.shape}, expected "
                                    f"{(self.num_agents, MAX_ROUTES)}")
        act = prune_action(joint, self.cfg.prune_threshold) if self.cfg.prune else joint
        fs, gaps, g = self._load(state.demand, act)
        t = state.t + 1
        rewards = compute_rewards(state.gaps, gaps, t)
        new = EnvState(t, fs, state.fs, state.demand, act, gaps, g)
        done = t == self.cfg.steps_per_episode
        info = {"global_gap": g, "local_gaps": gaps}
        return new, self.observations(new), rewards, done, info


@dataclass
class EpisodeLog:
    rows: list = field(default_factory=list)

    def record(self, episode, step, global_gap, mean_reward):
        self.rows.append((int(episode), int(step), float(global_gap), float(mean_reward)))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "step", "global_gap", "mean_reward"])
        for ep, st, g, r in self.rows:
            w.writerow([ep, st, repr(g), repr(r)])
        return buf.getvalue()

