"""Beckmann objective, relative gaps and the MSA / Frank-Wolfe baselines."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, UndefinedGapError
from .network import FlowState, Objective

LINE_SEARCH_ITERS = 64
LINE_SEARCH_TOL = 1e-12
ROUNDING_TOL = 1e-12


def beckmann_objective(net, link_flows):
    """Sum over links of the integral of the BPR function from 0 to the flow."""
    x = np.asarray(link_flows, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("link flow must be nonnegative")
    p1 = net.power + 1.0
    integral = net.t0 * (x + net.b * net.capacity / p1 * np.power(x / net.capacity, p1))
    return float(integral.sum())


def system_cost(net, link_flows):
    """Total travel time ``sum x * t(x)``, the SO objective."""
    x = np.asarray(link_flows, dtype=np.float64)
    return float(np.dot(x, net.costs(x)))


def objective_value(net, link_flows, objective):
    if Objective.coerce(objective) is Objective.SO:
        return system_cost(net, link_flows)
    return beckmann_objective(net, link_flows)


@dataclass(frozen=True)
class GapReport:
    global_gap: float
    local_gaps: np.ndarray
    total_cost: float
    sp_total: float


def _clear_rounding(gap):
    # gaps are nonnegative in exact arithmetic; only rounding-level negatives are zeroed
    gap = np.asarray(gap, dtype=np.float64)
    return np.where((gap < 0) & (gap > -ROUNDING_TOL), 0.0, gap)


def relative_gap_global(fs, dm):
    """``sum_e c_e x_e / sum_rs k_rs d_rs - 1`` under the state's cost mode."""
    sp_total = float(np.dot(fs.sp_costs, dm.demand))
    if not sp_total > 0:
        raise UndefinedGapError("relative gap undefined: shortest-path total is zero")
    return float(_clear_rounding(float(np.dot(fs.link_flows, fs.link_times)) / sp_total - 1.0))


def local_gaps(fs, dm, rs):
    """Per-agent gap from that agent's own path flows and costs."""
    if fs.path_costs is None:
        raise ContractViolation("flow state has no path costs; load it from a route set")
    denom = fs.sp_costs * dm.demand
    if np.any(~(denom > 0)):
        bad = int(np.flatnonzero(~(denom > 0))[0])
        raise UndefinedGapError(f"local gap undefined for agent {bad}")
    num = np.bincount(rs.route_agent, weights=fs.path_costs * fs.path_flows,
                      minlength=rs.num_agents)
    return _clear_rounding(num / denom - 1.0)


def relative_gap_local(fs, dm, rs, agent):
    if fs.path_costs is None:
        raise ContractViolation("flow state has no path costs; load it from a route set")
    lo, hi = rs.agent_ptr[agent], rs.agent_ptr[agent + 1]
    denom = fs.sp_costs[agent] * dm.demand[agent]
    if not denom > 0:
        raise UndefinedGapError(f"local gap undefined for agent {agent}")
    return float(_clear_rounding(
        float(np.dot(fs.path_costs[lo:hi], fs.path_flows[lo:hi])) / denom - 1.0))


def gap_report(fs, dm, rs=None):
    sp_total = float(np.dot(fs.sp_costs, dm.demand))
    total = float(np.dot(fs.link_flows, fs.link_times))
    loc = local_gaps(fs, dm, rs) if rs is not None else np.zeros(0)
    return GapReport(relative_gap_global(fs, dm), loc, total, sp_total)


@dataclass
class SolverTrace:
    """Per-iteration record of a conventional solver run."""

    iters: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)

    def append(self, it, gap, obj, step, secs, fallback=False):
        if self.iters and it <= self.iters[-1]:
            raise ValueError("trace iterations must increase")
        self.iters.append(it)
        self.gaps.append(gap)
        self.objectives.append(obj)
        self.steps.append(step)
        self.seconds.append(secs)
        self.fallbacks.append(fallback)

    def __len__(self):
        return len(self.iters)

    def to_csv(self, record_time=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "gap", "objective", "step", "seconds"])
        for row in zip(self.iters, self.gaps, self.objectives, self.steps, self.seconds):
            it, gap, obj, step, secs = row
            w.writerow([it, repr(gap), repr(obj), repr(step),
                        f"{secs:.6f}" if record_time else "0"])
        return buf.getvalue()


def _line_search(net, x, d, objective):
    """Step in [0, 1] zeroing the directional derivative by bisection.

    Returns ``(step, ok)``; ``ok`` is False when the bracket is invalid.
    """
    def slope(lam):
        return float(np.dot(d, net.costs(np.maximum(x + lam * d, 0.0), objective)))

    g0, g1 = slope(0.0), slope(1.0)
    if not (np.isfinite(g0) and np.isfinite(g1)) or g0 > 0:
        return None, False
    if g1 <= 0:
        return 1.0, True
    if g0 == 0:
        return 0.0, True
    lo, hi = 0.0, 1.0
    for _ in range(LINE_SEARCH_ITERS):
        mid = 0.5 * (lo + hi)
        g = slope(mid)
        if abs(g) < LINE_SEARCH_TOL:
            return mid, True
        if g < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), True


def _solve(net, dm, objective, max_iters, gap_tol, line_search):
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    objective = Objective.coerce(objective)
    trace = SolverTrace()
    t_start = time.perf_counter()
    x, _ = net.all_or_nothing(net.costs(np.zeros(net.num_links), objective), dm)
    c = net.costs(x, objective)
    y, sp = net.all_or_nothing(c, dm)
    for j in range(1, max_iters + 1):
        d = y - x
        fallback = False
        if line_search:
            step, ok = _line_search(net, x, d, objective)
            if not ok:
                step, fallback = 1.0 / (j + 1), True
        else:
            step = 1.0 / (j + 1)
        x = np.maximum(x + step * d, 0.0)
        c = net.costs(x, objective)
        y, sp = net.all_or_nothing(c, dm)
        fs = FlowState(x, c, net.costs(x) if objective is Objective.SO else c, sp, objective)
        gap = relative_gap_global(fs, dm)
        trace.append(j, gap, objective_value(net, x, objective), step,
                     time.perf_counter() - t_start, fallback)
        if gap <= gap_tol:
            break
    return fs, trace


def solve_msa(net, dm, objective=Objective.UE, max_iters=100, gap_tol=0.0):
    """Method of successive averages from a free-flow all-or-nothing start."""
    return _solve(net, dm, objective, max_iters, gap_tol, line_search=False)


def solve_fw(net, dm, objective=Objective.UE, max_iters=100, gap_tol=0.0):
    """Frank-Wolfe with exact bisection line search on the objective."""
    return _solve(net, dm, objective, max_iters, gap_tol, line_search=True)
