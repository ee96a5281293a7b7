import numpy as np
import pytest

from odassign import kernels
from odassign.equilibrium import solve_fw

from conftest import random_demand, random_network

try:
    CY = kernels.get_backend("cython")
except ImportError:
    CY = None
PY = kernels.get_backend("python")

needs_cython = pytest.mark.skipif(CY is None, reason="compiled extension not built")


def _args(net):
    return net.out_ptr, net.out_links, net.tail, net.head


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
    assert kernels.BACKEND in ("python", "cython")


@needs_cython
@pytest.mark.parametrize("seed", range(30))
def test_backends_agree_bitwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    net = random_network(rng, n, extra=int(rng.integers(0, 3 * n)))
    # integer costs on odd seeds exercise the tie-break
    costs = np.ceil(net.t0) if seed % 2 else net.t0.copy()
    if seed % 3 == 0:
        costs[rng.integers(0, net.num_links)] = np.inf
    for o in range(n):
        d1, p1 = PY.shortest_path_tree(*_args(net), costs, o, net.passable)
        d2, p2 = CY.shortest_path_tree(*_args(net), costs, o, net.passable)
        np.testing.assert_array_equal(d1, d2)
        np.testing.assert_array_equal(p1, p2)
    dm = random_demand(rng, n, int(rng.integers(1, 20)))
    f1, s1 = PY.all_or_nothing(*_args(net), costs, net.passable, dm.origins, dm.destinations,
                               dm.demand, net.num_links)
    f2, s2 = CY.all_or_nothing(*_args(net), costs, net.passable, dm.origins, dm.destinations,
                               dm.demand, net.num_links)
    np.testing.assert_array_equal(f1, f2)
    np.testing.assert_array_equal(s1, s2)


@needs_cython
def test_backends_agree_on_frank_wolfe(sioux, monkeypatch):
    net, dm, _ = sioux
    traces = []
    for mod in (PY, CY):
        monkeypatch.setattr(kernels, "shortest_path_tree", mod.shortest_path_tree)
        monkeypatch.setattr(kernels, "all_or_nothing", mod.all_or_nothing)
        fs, tr = solve_fw(net, dm, "ue", 10)
        traces.append((fs.link_flows, tr.gaps))
    np.testing.assert_array_equal(traces[0][0], traces[1][0])
    assert traces[0][1] == traces[1][1]


def test_environment_forces_python_backend():
    import os
    import subprocess
    import sys
    env = {**os.environ, "ODASSIGN_BACKEND": "python"}
    out = subprocess.run([sys.executable, "-c", "from odassign import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True).stdout
    assert out.strip() == "python"
