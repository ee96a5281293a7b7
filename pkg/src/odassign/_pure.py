"""Pure-Python shortest-path kernels.

Reference implementation of the hot loops; ``_core.pyx`` mirrors it line for
line and must produce bitwise identical output.
"""

import heapq
import math

import numpy as np


def _as_list(a):
    return a.tolist() if isinstance(a, np.ndarray) else a


def shortest_path_tree(out_ptr, out_links, tail, head, costs, origin, passable):
    """Single-source Dijkstra over a CSR adjacency.

    Nodes are settled in (distance, node index) order. An equal-distance
    alternative predecessor replaces the current one only while the node is
    unsettled and the new tail (then link) index is lower. Links with
    infinite cost are treated as absent. Nodes with ``passable`` false are
    never expanded unless they are the origin.
    """
    dist, pred = _tree(_as_list(out_ptr), _as_list(out_links), _as_list(tail),
                       _as_list(head), _as_list(costs), int(origin), _as_list(passable))
    return np.array(dist, dtype=np.float64), np.array(pred, dtype=np.int64)


def _tree(out_ptr, out_links, tail, head, costs, origin, passable):
    n = len(out_ptr) - 1
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u != origin and not passable[u]:
            continue
        for idx in range(out_ptr[u], out_ptr[u + 1]):
            e = out_links[idx]
            c = costs[e]
            if c == math.inf:
                continue
            v = head[e]
            nd = d + c
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and not done[v]:
                p = pred[v]
                tp = tail[p]
                if u < tp or (u == tp and e < p):
                    pred[v] = e
    return dist, pred


def all_or_nothing(out_ptr, out_links, tail, head, costs, passable,
                   origins, destinations, demand, n_links):
    """Load every OD demand onto its shortest path.

    Returns ``(link_flows, sp_costs)``. One tree is grown per distinct origin,
    origins visited in ascending order. Unreachable pairs get ``inf`` cost and load
    nothing.
    """
    out_ptr = _as_list(out_ptr)
    out_links = _as_list(out_links)
    tail_l = _as_list(tail)
    head_l = _as_list(head)
    passable_l = _as_list(passable)
    costs_l = _as_list(costs)
    flows = [0.0] * n_links
    n_od = len(origins)
    sp = np.empty(n_od, dtype=np.float64)
    order = np.argsort(origins, kind="stable")
    origins_l = _as_list(origins)
    dests_l = _as_list(destinations)
    demand_l = _as_list(demand)
    cur = -1
    dist = pred = None
    for i in order.tolist():
        o = origins_l[i]
        if o != cur:
            dist, pred = _tree(out_ptr, out_links, tail_l, head_l, costs_l, o, passable_l)
            cur = o
        s = dests_l[i]
        sp[i] = dist[s]
        if dist[s] == math.inf:
            continue
        q = demand_l[i]
        v = s
        while v != o:
            e = pred[v]
            flows[e] += q
            v = tail_l[e]
    return np.array(flows, dtype=np.float64), sp
