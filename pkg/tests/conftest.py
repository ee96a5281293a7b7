import numpy as np
import pytest
from hypothesis import strategies as st

from odassign import datasets
from odassign.network import DemandMatrix, Network


# one (name, passed, detail) entry per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def verdict(capsys):
    def record(name, ok, detail):
        ACCEPTANCE.append((name, bool(ok), detail))
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return record


@pytest.fixture(scope="session")
def sioux():
    return datasets.load("siouxfalls")


@pytest.fixture(scope="session")
def ow():
    return datasets.load("ow")


def make_net(n, edges, t0=None, cap=None, b=0.15, power=4.0, first_thru=0):
    """Network from 0-based ``(tail, head)`` pairs."""
    tail = [u for u, _ in edges]
    head = [v for _, v in edges]
    m = len(edges)
    return Network(n, tail, head, np.ones(m) if t0 is None else t0,
                   np.ones(m) if cap is None else cap, b, power, first_thru=first_thru)


def random_network(rng, n, extra, ring=True, cost_range=(0.5, 5.0)):
    """Random digraph on ``n`` nodes; a directed ring keeps it strongly connected."""
    edges = set()
    if ring:
        edges.update((i, (i + 1) % n) for i in range(n))
    for _ in range(extra):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((int(u), int(v)))
    edges = sorted(edges)
    m = len(edges)
    return make_net(n, edges, rng.uniform(*cost_range, size=m), rng.uniform(0.5, 3.0, size=m))


def random_demand(rng, n, pairs):
    seen = {}
    for _ in range(pairs):
        o, d = rng.integers(0, n, size=2)
        if o != d:
            seen[(int(o), int(d))] = float(rng.uniform(0.5, 5.0))
    keys = sorted(seen)
    return DemandMatrix([o for o, _ in keys], [d for _, d in keys], [seen[k] for k in keys])


@st.composite
def small_instances(draw, max_nodes=10, max_pairs=20):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(3, max_nodes))
    extra = draw(st.integers(0, 3 * n))
    pairs = draw(st.integers(1, max_pairs))
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, extra)
    dm = random_demand(rng, n, pairs)
    if dm.num_agents == 0:
        dm = DemandMatrix([0], [1], [1.0])
    return net, dm, rng
