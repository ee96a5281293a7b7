"""Time the shortest-path kernels and a short Frank-Wolfe run on both backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--fw-iters 20]
"""

import argparse
import time

import numpy as np

from odassign import datasets, kernels
from odassign.equilibrium import solve_fw


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--network", default="siouxfalls")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fw-iters", type=int, default=20)
    args = ap.parse_args()

    net, dm, _ = datasets.load(args.network, with_coords=False)
    costs = net.costs(np.zeros(net.num_links))
    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.append("cython")
    except ImportError:
        print("compiled extension not built; timing the python backend only")

    print(f"{args.network}: {net.num_nodes} nodes, {net.num_links} links, "
          f"{dm.num_agents} OD pairs")
    print(f"{'backend':8s} {'AON (ms)':>10s} {'FW x' + str(args.fw_iters) + ' (s)':>12s}")
    saved = kernels.shortest_path_tree, kernels.all_or_nothing
    try:
        for name in backends:
            mod = kernels.get_backend(name)
            kernels.shortest_path_tree = mod.shortest_path_tree
            kernels.all_or_nothing = mod.all_or_nothing
            aon = best_of(lambda: net.all_or_nothing(costs, dm), args.repeat)
            fw = best_of(lambda: solve_fw(net, dm, "ue", args.fw_iters), max(args.repeat // 2, 1))
            print(f"{name:8s} {aon * 1e3:10.2f} {fw:12.3f}")
    finally:
        kernels.shortest_path_tree, kernels.all_or_nothing = saved


if __name__ == "__main__":
    main()
