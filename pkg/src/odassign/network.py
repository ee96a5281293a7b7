"""Network, demand and route-set types plus BPR network loading."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractViolation, StructuralError

MAX_ROUTES = 6
SIMPLEX_TOL = 1e-6


class Objective(str, enum.Enum):
    UE = "ue"
    SO = "so"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


def _check_flow(flow):
    flow = np.asarray(flow, dtype=np.float64)
    if np.any(flow < 0):
        raise ValueError("link flow must be nonnegative")
    return flow


def bpr_time(flow, t0, capacity, b=0.15, power=4.0):
    """BPR travel time ``t0 * (1 + b * (flow / capacity) ** power)``."""
    flow = _check_flow(flow)
    return t0 * (1.0 + b * np.power(flow / capacity, power))


def marginal_time(flow, t0, capacity, b=0.15, power=4.0):
    """Derivative of ``flow * bpr_time(flow)`` with respect to flow."""
    flow = _check_flow(flow)
    return t0 * (1.0 + b * (power + 1.0) * np.power(flow / capacity, power))


@dataclass(frozen=True, eq=False)
class Network:
    """Directed graph with per-link BPR parameters.

    Nodes are dense 0-based indices; ``node_ids`` keeps the ids used in the
    source file. Nodes before ``first_thru`` (an index) are zones that may
    start or end a path but never be passed through.
    """

    num_nodes: int
    tail: np.ndarray
    head: np.ndarray
    t0: np.ndarray
    capacity: np.ndarray
    b: np.ndarray
    power: np.ndarray
    node_ids: np.ndarray = None
    num_zones: int = 0
    first_thru: int = 0
    length: np.ndarray = None
    speed: np.ndarray = None
    toll: np.ndarray = None
    link_type: np.ndarray = None
    out_ptr: np.ndarray = field(init=False, repr=False)
    out_links: np.ndarray = field(init=False, repr=False)
    in_ptr: np.ndarray = field(init=False, repr=False)
    in_links: np.ndarray = field(init=False, repr=False)
    passable: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        put = object.__setattr__
        n = int(self.num_nodes)
        put(self, "num_nodes", n)
        tail = np.asarray(self.tail, dtype=np.int64)
        head = np.asarray(self.head, dtype=np.int64)
        m = len(tail)
        if len(head) != m:
            raise StructuralError("tail and head arrays differ in length")
        put(self, "tail", tail)
        put(self, "head", head)
        for name in ("t0", "capacity", "b", "power"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim == 0:
                arr = np.full(m, float(arr))
            if arr.shape != (m,):
                raise StructuralError(f"{name} must have one value per link")
            put(self, name, arr)
        for name, default in (("length", 0.0), ("speed", 0.0), ("toll", 0.0)):
            arr = getattr(self, name)
            put(self, name, np.full(m, default) if arr is None
                else np.asarray(arr, dtype=np.float64))
        lt = self.link_type
        put(self, "link_type", np.ones(m, dtype=np.int64) if lt is None
            else np.asarray(lt, dtype=np.int64))
        ids = self.node_ids
        put(self, "node_ids", np.arange(1, n + 1, dtype=np.int64) if ids is None
            else np.asarray(ids, dtype=np.int64))
        if m:
            if tail.min() < 0 or head.min() < 0 or tail.max() >= n or head.max() >= n:
                raise StructuralError("link endpoint outside the node range")
            if np.any(tail == head):
                raise StructuralError("self-loop link")
        if np.any(self.t0 < 0):
            raise StructuralError("negative free-flow time")
        if np.any(self.capacity <= 0):
            raise StructuralError("capacity must be positive")
        pairs = tail * max(n, 1) + head
        if len(np.unique(pairs)) != m:
            dup = pairs[np.unique(pairs, return_counts=True)[1].argmax()]
            raise StructuralError(
                f"duplicate link {self.node_ids[dup // n]}->{self.node_ids[dup % n]}")
        order = np.lexsort((np.arange(m), tail))
        put(self, "out_links", order.astype(np.int64))
        put(self, "out_ptr", np.concatenate(
            ([0], np.cumsum(np.bincount(tail, minlength=n)))).astype(np.int64))
        order = np.lexsort((np.arange(m), head))
        put(self, "in_links", order.astype(np.int64))
        put(self, "in_ptr", np.concatenate(
            ([0], np.cumsum(np.bincount(head, minlength=n)))).astype(np.int64))
        passable = np.ones(n, dtype=np.uint8)
        passable[: max(int(self.first_thru), 0)] = 0
        put(self, "passable", passable)

    @property
    def num_links(self):
        return len(self.tail)

    def out_degree(self):
        return np.diff(self.out_ptr)

    def index_of(self, node_id):
        """Dense index of an original node id."""
        hits = np.flatnonzero(self.node_ids == node_id)
        if not len(hits):
            raise KeyError(node_id)
        return int(hits[0])

    def link_index(self, tail, head):
        for e in self.out_links[self.out_ptr[tail]:self.out_ptr[tail + 1]]:
            if self.head[e] == head:
                return int(e)
        raise KeyError((tail, head))

    def costs(self, flows, objective=Objective.UE):
        """Per-link cost: BPR time (UE) or marginal time (SO)."""
        fn = marginal_time if Objective.coerce(objective) is Objective.SO else bpr_time
        return fn(flows, self.t0, self.capacity, self.b, self.power)

    def checksum(self):
        h = hashlib.sha256()
        for arr in (self.tail, self.head, self.t0, self.capacity, self.b, self.power):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.num_nodes).encode())
        return h.hexdigest()

    def shortest_path_tree(self, costs, origin):
        costs = np.asarray(costs, dtype=np.float64)
        return kernels.shortest_path_tree(self.out_ptr, self.out_links, self.tail,
                                          self.head, costs, origin, self.passable)

    def all_or_nothing(self, costs, dm):
        """AON link flows and shortest-path costs for every pair in ``dm``."""
        costs = np.asarray(costs, dtype=np.float64)
        if np.any(costs < 0):
            raise ValueError("link costs must be nonnegative")
        return kernels.all_or_nothing(self.out_ptr, self.out_links, self.tail, self.head,
                                      costs, self.passable, dm.origins, dm.destinations,
                                      dm.demand, self.num_links)


@dataclass(frozen=True, eq=False)
class DemandMatrix:
    """OD pairs with strictly positive demand. Agent ``i`` routes entry ``i``."""

    origins: np.ndarray
    destinations: np.ndarray
    demand: np.ndarray
    declared_total: float = None

    def __post_init__(self):
        put = object.__setattr__
        put(self, "origins", np.asarray(self.origins, dtype=np.int64).reshape(-1))
        put(self, "destinations", np.asarray(self.destinations, dtype=np.int64).reshape(-1))
        put(self, "demand", np.asarray(self.demand, dtype=np.float64).reshape(-1))
        n = len(self.origins)
        if len(self.destinations) != n or len(self.demand) != n:
            raise StructuralError("demand arrays differ in length")
        if np.any(self.demand <= 0):
            raise StructuralError("stored demand must be strictly positive")
        if n:
            key = self.origins * (int(max(self.origins.max(), self.destinations.max())) + 1) \
                + self.destinations
            if len(np.unique(key)) != n:
                raise StructuralError("duplicate OD pair")

    @property
    def num_agents(self):
        return len(self.origins)

    @property
    def total(self):
        return float(self.demand.sum())

    def scaled(self, factors):
        factors = np.asarray(factors, dtype=np.float64)
        return DemandMatrix(self.origins, self.destinations, self.demand * factors,
                            self.declared_total)

    def pairs(self):
        return list(zip(self.origins.tolist(), self.destinations.tolist()))


@dataclass(frozen=True, eq=False)
class RouteSet:
    """Candidate routes per agent, each a tuple of link indices."""

    routes: tuple
    k: int = MAX_ROUTES
    route_links: np.ndarray = field(init=False, repr=False)
    route_ptr: np.ndarray = field(init=False, repr=False)
    route_agent: np.ndarray = field(init=False, repr=False)
    agent_ptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        put = object.__setattr__
        routes = tuple(tuple(tuple(int(e) for e in r) for r in agent) for agent in self.routes)
        put(self, "routes", routes)
        for i, agent in enumerate(routes):
            if not 1 <= len(agent) <= self.k:
                raise StructuralError(f"agent {i} has {len(agent)} routes, expected 1..{self.k}")
            if any(len(r) == 0 for r in agent):
                raise StructuralError(f"agent {i} has an empty route")
        flat = [r for agent in routes for r in agent]
        lens = np.array([len(r) for r in flat], dtype=np.int64)
        put(self, "route_links", np.array([e for r in flat for e in r], dtype=np.int64))
        put(self, "route_ptr", np.concatenate(([0], np.cumsum(lens))).astype(np.int64))
        counts = np.array([len(a) for a in routes], dtype=np.int64)
        put(self, "route_agent", np.repeat(np.arange(len(routes)), counts).astype(np.int64))
        put(self, "agent_ptr", np.concatenate(([0], np.cumsum(counts))).astype(np.int64))

    @property
    def num_agents(self):
        return len(self.routes)

    @property
    def num_routes(self):
        return len(self.route_agent)

    @property
    def counts(self):
        return np.diff(self.agent_ptr)

    def mask(self, width=MAX_ROUTES):
        """Boolean ``(agents, width)`` array marking real route slots."""
        return np.arange(width)[None, :] < self.counts[:, None]

    def route_sums(self, link_values):
        """Sum a per-link array along every route (flat route order)."""
        vals = np.asarray(link_values, dtype=np.float64)[self.route_links]
        if not len(vals):
            return np.zeros(0)
        return np.add.reduceat(vals, self.route_ptr[:-1])

    def route_lengths(self):
        return np.diff(self.route_ptr)

    def to_padded(self, flat, width=MAX_ROUTES, fill=0.0):
        """Scatter a flat per-route array into ``(agents, width)``."""
        out = np.full((self.num_agents, width), fill, dtype=np.float64)
        slot = np.arange(self.num_routes) - self.agent_ptr[self.route_agent]
        out[self.route_agent, slot] = flat
        return out

    def from_padded(self, padded):
        slot = np.arange(self.num_routes) - self.agent_ptr[self.route_agent]
        return np.asarray(padded, dtype=np.float64)[self.route_agent, slot]

    def validate(self, net, dm):
        """Check every route is a loopless path between its agent's OD pair."""
        if self.num_agents != dm.num_agents:
            raise StructuralError("route set and demand matrix disagree on agent count")
        for i, agent in enumerate(self.routes):
            o, d = int(dm.origins[i]), int(dm.destinations[i])
            for r in agent:
                nodes = [int(net.tail[r[0]])] + [int(net.head[e]) for e in r]
                if nodes[0] != o or nodes[-1] != d:
                    raise StructuralError(f"agent {i} route does not connect its OD pair")
                if any(int(net.tail[e]) != nodes[j] for j, e in enumerate(r)):
                    raise StructuralError(f"agent {i} route is not a contiguous path")
                if len(set(nodes)) != len(nodes):
                    raise StructuralError(f"agent {i} route has a loop")
            if len(set(agent)) != len(agent):
                raise StructuralError(f"agent {i} has duplicate routes")

    def __eq__(self, other):
        return isinstance(other, RouteSet) and self.routes == other.routes and self.k == other.k

    def __hash__(self):
        return hash((self.routes, self.k))


@dataclass(frozen=True, eq=False)
class FlowState:
    """Result of one network loading.

    ``link_times`` holds the objective's cost (BPR time for UE, marginal time
    for SO); ``bpr_times`` always holds plain travel times. Path fields are
    ``None`` when the flows did not come from a route set.
    """

    link_flows: np.ndarray
    link_times: np.ndarray
    bpr_times: np.ndarray
    sp_costs: np.ndarray
    objective: Objective = Objective.UE
    path_flows: np.ndarray = None
    path_costs: np.ndarray = None


def check_joint_action(rs, act):
    """Validate a padded ``(agents, MAX_ROUTES)`` action against ``rs``."""
    act = np.asarray(act, dtype=np.float64)
    if act.ndim != 2 or act.shape[0] != rs.num_agents or act.shape[1] < rs.counts.max(initial=1):
        raise ContractViolation(
            f"joint action shape {act.shape} does not fit {rs.num_agents} agents")
    mask = rs.mask(act.shape[1])
    if not np.all(np.isfinite(act)) or np.any(act < 0):
        raise ContractViolation("action components must be finite and nonnegative")
    if np.any(act[~mask] != 0):
        raise ContractViolation("action mass on a masked-out route slot")
    sums = act.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)
    if len(bad):
        raise ContractViolation(
            f"agent {int(bad[0])} action sums to {sums[bad[0]]!r}, not 1")
    return act


def uniform_action(rs, width=MAX_ROUTES):
    mask = rs.mask(width)
    return mask / rs.counts[:, None]


def load_network(net, rs, dm, act, objective=Objective.UE):
    """Assign each agent's demand over its routes and evaluate costs.

    Path flow is ``a_p * d``; link flows aggregate path flows; path costs sum
    the objective's link costs; shortest-path costs use the full network
    under the same costs.
    """
    objective = Objective.coerce(objective)
    act = check_joint_action(rs, act)
    shares = rs.from_padded(act)
    path_flows = shares * dm.demand[rs.route_agent]
    lens = rs.route_lengths()
    link_flows = np.bincount(rs.route_links, weights=np.repeat(path_flows, lens),
                             minlength=net.num_links).astype(np.float64)
    bpr = net.costs(link_flows, Objective.UE)
    times = bpr if objective is Objective.UE else net.costs(link_flows, objective)
    path_costs = rs.route_sums(times)
    _, sp = net.all_or_nothing(times, dm)
    return FlowState(link_flows=link_flows, link_times=times, bpr_times=bpr,
                     sp_costs=sp, objective=objective, path_flows=path_flows,
                     path_costs=path_costs)
