# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shortest-path kernels. Mirrors ``_pure.py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY
from libcpp.pair cimport pair
from libcpp.queue cimport priority_queue
from libcpp.vector cimport vector

cnp.import_array()

ctypedef pair[double, long] entry


cdef void _tree(const long[::1] out_ptr, const long[::1] out_links,
                const long[::1] tail, const long[::1] head,
                const double[::1] costs, long origin,
                const unsigned char[::1] passable,
                double[::1] dist, long[::1] pred, unsigned char[::1] done) noexcept nogil:
    cdef long n = out_ptr.shape[0] - 1
    cdef long i, u, v, e, idx, p, tp
    cdef double d, c, nd
    # max-heap over negated keys gives (distance, node) ascending
    cdef priority_queue[entry] heap
    for i in range(n):
        dist[i] = INFINITY
        pred[i] = -1
        done[i] = 0
    dist[origin] = 0.0
    heap.push(entry(-0.0, -origin))
    while not heap.empty():
        d = -heap.top().first
        u = -heap.top().second
        heap.pop()
        if done[u]:
            continue
        done[u] = 1
        if u != origin and not passable[u]:
            continue
        for idx in range(out_ptr[u], out_ptr[u + 1]):
            e = out_links[idx]
            c = costs[e]
            if c == INFINITY:
                continue
            v = head[e]
            nd = d + c
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                heap.push(entry(-nd, -v))
            elif nd == dist[v] and not done[v]:
                p = pred[v]
                tp = tail[p]
                if u < tp or (u == tp and e < p):
                    pred[v] = e


def shortest_path_tree(out_ptr, out_links, tail, head, costs, long origin, passable):
    cdef long n = len(out_ptr) - 1
    dist = np.empty(n, dtype=np.float64)
    pred = np.empty(n, dtype=np.int64)
    done = np.empty(n, dtype=np.uint8)
    _tree(np.ascontiguousarray(out_ptr, dtype=np.int64),
          np.ascontiguousarray(out_links, dtype=np.int64),
          np.ascontiguousarray(tail, dtype=np.int64),
          np.ascontiguousarray(head, dtype=np.int64),
          np.ascontiguousarray(costs, dtype=np.float64), origin,
          np.ascontiguousarray(passable, dtype=np.uint8),
          dist, pred, done)
    return dist, pred


def all_or_nothing(out_ptr, out_links, tail, head, costs, passable,
                   origins, destinations, demand, long n_links):
    cdef const long[::1] ptr_v = np.ascontiguousarray(out_ptr, dtype=np.int64)
    cdef const long[::1] adj_v = np.ascontiguousarray(out_links, dtype=np.int64)
    cdef const long[::1] tail_v = np.ascontiguousarray(tail, dtype=np.int64)
    cdef const long[::1] head_v = np.ascontiguousarray(head, dtype=np.int64)
    cdef const double[::1] cost_v = np.ascontiguousarray(costs, dtype=np.float64)
    cdef const unsigned char[::1] pass_v = np.ascontiguousarray(passable, dtype=np.uint8)
    cdef const long[::1] orig_v = np.ascontiguousarray(origins, dtype=np.int64)
    cdef const long[::1] dest_v = np.ascontiguousarray(destinations, dtype=np.int64)
    cdef const double[::1] dem_v = np.ascontiguousarray(demand, dtype=np.float64)
    cdef long n = ptr_v.shape[0] - 1
    cdef long n_od = orig_v.shape[0]
    flows = np.zeros(n_links, dtype=np.float64)
    sp = np.empty(n_od, dtype=np.float64)
    cdef double[::1] flow_v = flows
    cdef double[::1] sp_v = sp
    cdef double[::1] dist = np.empty(n, dtype=np.float64)
    cdef long[::1] pred = np.empty(n, dtype=np.int64)
    cdef unsigned char[::1] done = np.empty(n, dtype=np.uint8)
    cdef const long[::1] order = np.argsort(origins, kind="stable").astype(np.int64)
    cdef long k, i, o, s, v, e, cur = -1
    cdef double q
    with nogil:
        for k in range(n_od):
            i = order[k]
            o = orig_v[i]
            if o != cur:
                _tree(ptr_v, adj_v, tail_v, head_v, cost_v, o, pass_v, dist, pred, done)
                cur = o
            s = dest_v[i]
            sp_v[i] = dist[s]
            if dist[s] == INFINITY:
                continue
            q = dem_v[i]
            v = s
            while v != o:
                e = pred[v]
                flow_v[e] += q
                v = tail_v[e]
    return flows, sp
