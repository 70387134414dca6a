import numpy as np
import pytest

from popsynth.bayesnet import CPT, BayesianNetwork, NetworkStructure
from popsynth.ingest import PreparedDataset


def make_net(tables, cards=None, nodes=None):
    """tables: node -> (parents, rows). States are "0".."k-1"."""
    nodes = list(nodes or tables)
    edges = [(p, c) for c, (ps, _) in tables.items() for p in ps]
    cpts = {c: CPT(c, tuple(ps), np.asarray(rows, dtype=float)) for c, (ps, rows) in tables.items()}
    states = {n: tuple(str(i) for i in range(np.asarray(tables[n][1]).shape[1])) for n in nodes}
    return BayesianNetwork(NetworkStructure(nodes, edges), cpts, states)


def micro(records, columns, cards, weights=None, sid="ds"):
    states = {c: tuple(str(i) for i in range(k)) for c, k in zip(columns, cards)}
    return PreparedDataset(sid, "micro", tuple(columns), states, np.asarray(records), weights)


def from_net(net, draws, sid="ds", cols=None, weights=None):
    cols = list(cols or net.nodes)
    idx = [net.nodes.index(c) for c in cols]
    return PreparedDataset(sid, "micro", tuple(cols), {c: net.states[c] for c in cols},
                           draws[:, idx], weights)


def random_net(rng, n_nodes, max_states=4, max_parents=2, conc=1.0):
    names = [f"X{i}" for i in range(n_nodes)]
    cards = [int(rng.integers(2, max_states + 1)) for _ in names]
    tables = {}
    for i, n in enumerate(names):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        ps = sorted(rng.choice(i, size=k, replace=False).tolist()) if k else []
        q = int(np.prod([cards[p] for p in ps])) if ps else 1
        tables[n] = ([names[p] for p in ps], rng.dirichlet(np.full(cards[i], conc), size=q))
    return make_net(tables, nodes=names)


@pytest.fixture
def chain_ab():
    # P(A)=(0.5,0.5), P(B=1|A=0)=0.2, P(B=1|A=1)=0.9
    return make_net({"A": ([], [[0.5, 0.5]]), "B": (["A"], [[0.8, 0.2], [0.1, 0.9]])})


# acceptance verdict lines, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
