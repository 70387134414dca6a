import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import from_net, make_net, random_net
from popsynth.bayesnet import sample
from popsynth.ingest import PreparedDataset
from popsynth.learn import LearnConfig, fit_mle, hill_climb
from popsynth.merge import (MergeError, MergePlan, SourcePlan, craft_structure, macro_to_cpt,
                            merge_sources)
from popsynth.schema import CoreSpec, DataSourceDescriptor


def plan(core, richest, modes, **kw):
    return MergePlan(CoreSpec(tuple(core)), richest,
                     {k: v if isinstance(v, SourcePlan) else SourcePlan(v) for k, v in modes.items()},
                     **kw)


@pytest.fixture(scope="module")
def star():
    truth = make_net({
        "A": ([], [[0.2, 0.5, 0.3]]),
        "B": (["A"], [[0.7, 0.3], [0.4, 0.6], [0.1, 0.9]]),
        "C": (["A"], [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]]),
        "D": (["A"], [[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]),
    })
    sets = {"rich": ["A", "B"], "ds2": ["A", "C"], "ds3": ["A", "D"]}
    data = [from_net(truth, sample(truth, 50_000, i + 1), sid, cols)
            for i, (sid, cols) in enumerate(sets.items())]
    return truth, data


def test_star_recovery(star):
    truth, data = star
    p = plan(["A"], "rich", {"rich": "learnt", "ds2": "learnt", "ds3": "learnt"})
    net = merge_sources(data, p, LearnConfig())
    assert net.structure.edges == {("A", "B"), ("A", "C"), ("A", "D")}
    for n in net.nodes:
        assert np.abs(net.cpts[n].table - truth.cpts[n].table).max() <= 0.02
    prov = net.metadata["provenance"]
    assert prov["B"]["source"] == "rich" and prov["C"]["source"] == "ds2"
    assert prov["D"]["source"] == "ds3" and prov["A"]["source"] == "rich"


def test_core_bit_identical(star):
    _, data = star
    cfg = LearnConfig()
    p = plan(["A"], "rich", {"rich": "learnt", "ds2": "learnt", "ds3": "learnt"})
    net = merge_sources(data, p, cfg)
    alone = fit_mle(hill_climb(data[0], ["A"], config=cfg), data[0], cfg)
    assert net.cpts["A"].identical(alone["A"])


def test_owned_fit_on_owner_only(star):
    _, data = star
    cfg = LearnConfig()
    p = plan(["A"], "rich", {"rich": "learnt", "ds2": "learnt", "ds3": "learnt"})
    net = merge_sources(data, p, cfg)
    s2 = hill_climb(data[1], ["A", "C"], required=[], forbidden=[("C", "A")], config=cfg)
    assert net.cpts["C"].identical(fit_mle(s2, data[1], cfg)["C"])


def test_workers_do_not_change_result(star):
    _, data = star
    p = plan(["A"], "rich", {"rich": "learnt", "ds2": "learnt", "ds3": "crafted"})
    from popsynth.bayesnet import dumps_model
    assert dumps_model(merge_sources(data, p, workers=3)) == dumps_model(merge_sources(data, p))


def test_motivational_to_core_edge_blocked():
    # Age is a deterministic-ish function of M, so an unconstrained search links them
    truth = make_net({
        "Age": ([], [[0.5, 0.5]]),
        "G": (["Age"], [[0.5, 0.5], [0.5, 0.5]]),
        "M": (["Age"], [[0.95, 0.05], [0.05, 0.95]]),
    })
    d = sample(truth, 20_000, 3)
    rich = from_net(truth, d, "rich", ["Age", "G"])
    surv = from_net(truth, d, "surv", ["Age", "G", "M"])
    free = hill_climb(surv, ["M", "Age", "G"])
    assert free.has_edge("M", "Age") or free.has_edge("Age", "M")
    net = merge_sources([rich, surv], plan(["Age", "G"], "rich", {"rich": "learnt", "surv": "learnt"}))
    assert not net.structure.has_edge("M", "Age")
    assert net.structure.has_edge("Age", "M")


def test_merge_errors(star):
    _, data = star
    p = plan(["A", "B"], "rich", {"rich": "learnt", "ds2": "learnt", "ds3": "learnt"})
    with pytest.raises(MergeError, match="absent"):
        merge_sources(data, p)
    dup = PreparedDataset("ds4", "micro", ("A", "B"), data[0].states, data[0].records)
    p = plan(["A"], "rich", {"rich": "learnt", "ds4": "learnt"})
    with pytest.raises(MergeError, match="appears in sources"):
        merge_sources([data[0], dup], p)
    with pytest.raises(MergeError):
        merge_sources(data, plan(["A"], "nope", {}))
    with pytest.raises(MergeError):
        merge_sources(data, plan(["A"], "rich", {"ds2": "guess"}))


def test_macro_learnt_rejected():
    states = {"A": ("0", "1"), "B": ("0", "1")}
    rich = PreparedDataset("rich", "micro", ("A",), states, [[0], [1]])
    mac = PreparedDataset("mac", "macro", ("A", "B"), states, [[0, 0], [1, 1]], [3.0, 4.0])
    with pytest.raises(MergeError, match="crafted"):
        merge_sources([rich, mac], plan(["A"], "rich", {"mac": "learnt"}))
    net = merge_sources([rich, mac], plan(["A"], "rich", {"mac": "crafted"}))
    assert net.metadata["provenance"]["B"]["method"] == "macro"


# -- crafted path --------------------------------------------------------

def _states(**cards):
    return {k: tuple(str(i) for i in range(v)) for k, v in cards.items()}


def test_craft_default_parents():
    src = DataSourceDescriptor("s", "micro", ("D", "G", "A", "Income"))
    p = plan(["D", "G", "A"], "s", {"s": "crafted"}, territorial="D")
    s = craft_structure(src, p, _states(D=10, G=2, A=6, Income=4))
    assert set(s.parents("Income")) == {"D", "G", "A"}
    assert s.edges == {("D", "Income"), ("G", "Income"), ("A", "Income")}


def test_craft_policy_override():
    src = DataSourceDescriptor("s", "micro", ("D", "G", "A", "Income"))
    p = plan(["D", "G", "A"], "s", {"s": SourcePlan("crafted", {"Income": ("D", "A")})})
    s = craft_structure(src, p, _states(D=10, G=2, A=6, Income=4))
    assert set(s.parents("Income")) == {"D", "A"}


def test_craft_territorial_outside_core():
    src = DataSourceDescriptor("s", "micro", ("G", "A", "D", "X"))
    p = plan(["G", "A"], "s", {"s": "crafted"}, territorial="D")
    s = craft_structure(src, p, _states(G=2, A=3, D=4, X=2))
    assert set(s.parents("X")) == {"G", "A", "D"}
    assert set(s.parents("D")) == {"G", "A"}


def test_craft_cell_cap():
    core = [f"C{i}" for i in range(6)]
    src = DataSourceDescriptor("s", "micro", tuple(core) + ("X",))
    p = plan(core, "s", {"s": "crafted"})
    with pytest.raises(MergeError, match="'X'"):
        craft_structure(src, p, _states(**{c: 10 for c in core}, X=10))


def test_crafted_merge_core_edges():
    truth = random_net(np.random.default_rng(1), 4)
    d = sample(truth, 3000, 1)
    rich = from_net(truth, d, "rich", ["X0", "X1", "X2"])
    other = from_net(truth, d, "o", ["X0", "X1", "X3"])
    p = plan(["X0", "X1"], "rich", {"rich": "crafted", "o": "crafted"},
             core_mode="crafted", core_edges=(("X0", "X1"),))
    net = merge_sources([rich, other], p)
    assert net.structure.edges == {("X0", "X1"), ("X0", "X2"), ("X1", "X2"),
                                   ("X0", "X3"), ("X1", "X3")}


# -- macro_to_cpt --------------------------------------------------------

def _macro(rows, counts):
    st_ = {"D": ("D1", "D2"), "Age": ("A1", "A2")}
    return PreparedDataset("m", "macro", ("D", "Age"), st_, rows, counts)


def test_macro_to_cpt_normalization():
    t = macro_to_cpt(_macro([[0, 0], [0, 1]], [120.0, 80.0]), "Age", ["D"], 0.0).table
    assert np.allclose(t[0], [0.6, 0.4], atol=1e-15)
    assert np.allclose(t[1], [0.5, 0.5])


def test_macro_to_cpt_pseudo_counts():
    t = macro_to_cpt(_macro([[0, 0]], [5.0]), "Age", ["D"], 1.0).table
    assert np.allclose(t[1], [0.5, 0.5])
    assert np.allclose(t[0], [6 / 7, 1 / 7])


def test_macro_to_cpt_unknown_attribute():
    with pytest.raises(MergeError):
        macro_to_cpt(_macro([[0, 0]], [5.0]), "Income", ["D"])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0]))
def test_macro_equals_mle_property(seed, alpha):
    net = random_net(np.random.default_rng(seed), 4)
    d = sample(net, 2000, seed)
    ds = from_net(net, d)
    combos, counts = np.unique(d, axis=0, return_counts=True)
    mac = PreparedDataset("m", "macro", ds.columns, ds.states, combos, counts.astype(float))
    mle = fit_mle(net.structure, ds, LearnConfig(smoothing_alpha=alpha))
    for n in net.nodes:
        t = macro_to_cpt(mac, n, net.structure.parents(n), alpha).table
        assert np.abs(t - mle[n].table).max() <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["learnt", "crafted"]))
def test_merge_laws_property(seed, mode):
    rng = np.random.default_rng(seed)
    truth = random_net(rng, 6, max_states=3, conc=0.4)
    d = sample(truth, 2000, seed)
    core = ["X0", "X1"]
    srcs = {"r": core + ["X2", "X3"], "s": core + ["X4"], "t": core + ["X5"]}
    data = [from_net(truth, d, sid, cols) for sid, cols in srcs.items()]
    p = plan(core, "r", {sid: mode for sid in srcs}, core_mode=mode)
    net = merge_sources(data, p)
    owner = {a: sid for sid, cols in srcs.items() for a in cols if a not in core}
    for u, v in net.structure.edges:
        assert not (v in core and u not in core)
        if u not in core and v not in core:
            assert owner[u] == owner[v]
    for n in core:
        assert net.metadata["provenance"][n]["source"] == "r"
    for a, sid in owner.items():
        assert net.metadata["provenance"][a]["source"] == sid
