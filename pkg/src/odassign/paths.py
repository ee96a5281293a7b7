"""Shortest paths, Yen's k loopless shortest paths and route-set building."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DisconnectedPairError
from .network import MAX_ROUTES, RouteSet

_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ShortestPathTree:
    origin: int
    dist: np.ndarray
    pred_link: np.ndarray

    def path_links(self, net, node):
        """Links from the origin to ``node``; ``None`` when unreachable."""
        if not math.isfinite(self.dist[node]):
            return None
        links = []
        while node != self.origin:
            e = int(self.pred_link[node])
            links.append(e)
            node = int(net.tail[e])
        return links[::-1]


def _check_costs(costs):
    costs = np.asarray(costs, dtype=np.float64)
    if np.any(costs < 0) or np.any(np.isnan(costs)):
        raise ValueError("shortest paths need nonnegative link costs")
    return costs


def shortest_path_tree(net, costs, origin):
    costs = _check_costs(costs)
    dist, pred = kernels.shortest_path_tree(net.out_ptr, net.out_links, net.tail, net.head,
                                            costs, int(origin), net.passable)
    return ShortestPathTree(int(origin), dist, pred)


def _dist_to(net, costs, target):
    # Dijkstra on the reversed graph: distance from every node to target.
    dist, _ = kernels.shortest_path_tree(net.in_ptr, net.in_links, net.head, net.tail,
                                         costs, int(target), net.passable)
    return dist


def _lexi_path(net, costs, source, target, dist_to, banned_nodes=()):
    """Walk the lexicographically smallest shortest path source -> target."""
    if not math.isfinite(dist_to[source]):
        return None
    nodes, links = [source], []
    visited = set(banned_nodes)
    visited.add(source)
    u = source
    while u != target:
        best = None
        du = dist_to[u]
        for idx in range(net.out_ptr[u], net.out_ptr[u + 1]):
            e = int(net.out_links[idx])
            c = costs[e]
            v = int(net.head[e])
            if c == math.inf or v in visited or not math.isfinite(dist_to[v]):
                continue
            if v != target and not net.passable[v]:
                continue
            if abs(c + dist_to[v] - du) <= _TIE_RTOL * max(1.0, abs(du)):
                if best is None or v < best[0]:
                    best = (v, e)
        if best is None:
            return None
        u, e = best
        visited.add(u)
        nodes.append(u)
        links.append(e)
    return nodes, links


def _path_cost(costs, links):
    total = 0.0
    for e in links:
        total += costs[e]
    return total


def yen_ksp(net, costs, origin, destination, k):
    """Up to ``k`` loopless paths in (cost, node sequence) order.

    Returns a list of ``(cost, nodes, links)`` tuples; empty when the
    destination is unreachable.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if origin == destination:
        raise ValueError("origin and destination must differ")
    costs = _check_costs(costs)
    first = _lexi_path(net, costs, origin, destination, _dist_to(net, costs, destination))
    if first is None:
        return []
    accepted = [(_path_cost(costs, first[1]), tuple(first[0]), tuple(first[1]))]
    seen = {accepted[0][1]}
    candidates = []
    while len(accepted) < k:
        _, prev_nodes, prev_links = accepted[-1]
        for i in range(len(prev_nodes) - 1):
            spur = prev_nodes[i]
            root_nodes = prev_nodes[:i + 1]
            work = costs.copy()
            for _, nodes, links in accepted:
                if nodes[:i + 1] == root_nodes:
                    work[links[i]] = math.inf
            for node in root_nodes[:-1]:
                work[net.out_links[net.out_ptr[node]:net.out_ptr[node + 1]]] = math.inf
                work[net.in_links[net.in_ptr[node]:net.in_ptr[node + 1]]] = math.inf
            found = _lexi_path(net, work, spur, destination,
                               _dist_to(net, work, destination), root_nodes[:-1])
            if found is None:
                continue
            nodes = root_nodes + tuple(found[0][1:])
            if nodes in seen:
                continue
            links = prev_links[:i] + tuple(found[1])
            seen.add(nodes)
            heapq.heappush(candidates, (_path_cost(costs, links), nodes, links))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates))
    return accepted


def build_route_sets(net, dm, k=MAX_ROUTES, costs=None):
    """Yen routes on free-flow times (or ``costs``) for every agent."""
    costs = net.t0 if costs is None else costs
    routes = []
    for o, d in dm.pairs():
        paths = yen_ksp(net, costs, o, d, k)
        if not paths:
            raise DisconnectedPairError(int(net.node_ids[o]), int(net.node_ids[d]))
        routes.append(tuple(links for _, _, links in paths))
    return RouteSet(tuple(routes), k=k)
