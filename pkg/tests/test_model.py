import numpy as np
import pytest

from helpers import random_graph, random_perm
from segmn import autodiff as ad
from segmn.model import SEGMN, FeatureCache, GraphSimConfig, GraphSimStub, ModelConfig, make_batch


def tiny(variant="dual", spm=1, seed=0, labels=2, n_max=8, **kw):
    cfg = ModelConfig(variant, d=5, layers=2, dk=4, spm_layers=spm, conv_channels=(4, 3), att_dim=3, label_count=labels, n_max=n_max, seed=seed, **kw)
    return SEGMN(cfg)


def pairs(seed, count, labels=2, hi=8):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        a = random_graph(rng, 2, hi, 0.45, labels, graph_id=f"a{k}")
        b = random_graph(rng, 2, hi, 0.45, labels, graph_id=f"b{k}")
        out.append((a, b))
    return out


def run(model, prs, n_max=8, labels=2):
    cache = FeatureCache([g for p in prs for g in p], labels, n_max)
    return model(make_batch(prs, cache)).values


@pytest.mark.parametrize("variant,spm", [("node", 0), ("edge", 0), ("dual", 0), ("node", 1), ("edge", 2), ("dual", 1)])
def test_all_variants_run_and_stay_in_unit_interval(variant, spm):
    out = run(tiny(variant, spm), pairs(0, 6))
    assert out.shape == (6,)
    assert np.all((out > 0) & (out < 1))


def test_parameter_names():
    names = set(tiny(spm=2).params())
    assert {"match.Wq1", "match.Wk1", "match.Wq2", "match.Wk2", "spm.WA.0", "spm.WA.1", "mlp.w", "mlp.b"} <= names
    assert {"conv.0.row", "conv.0.col", "att.wq", "enc.lg.W_E.0", "enc.ng.W.1"} <= names
    assert not any(n.startswith("spm.") for n in tiny(spm=0).params())


def test_batch_and_single_predictions_agree():
    prs = pairs(1, 5)
    m = tiny()
    batched = run(m, prs)
    single = np.array([run(m, [p])[0] for p in prs])
    np.testing.assert_allclose(batched, single, atol=1e-12)


def test_padding_entries_are_zero_throughout():
    prs = pairs(2, 4)
    m = tiny()
    cache = FeatureCache([g for p in prs for g in p], 2, 8)
    batch = make_batch(prs, cache)
    s1, s2, t1, t2 = m.similarity(batch)
    for s, mask in ((s1, batch.mask12), (t1, batch.mask12), (s2, batch.mask21), (t2, batch.mask21)):
        assert np.all(s.values[~mask] == 0)
    np.testing.assert_allclose(s1.values.sum(-1)[batch.g1["valid"]], 1.0, atol=1e-9)


def test_pad_invariance():
    prs = pairs(3, 5)
    m = tiny()
    np.testing.assert_allclose(run(m, prs, n_max=8), run(m, prs, n_max=13), atol=1e-9, rtol=0)


def test_isomorphic_inputs_give_same_score():
    rng = np.random.default_rng(4)
    prs = pairs(4, 10)
    m = tiny()
    base = run(m, prs)
    moved = [(a.permuted(random_perm(rng, a.num_nodes)), b.permuted(random_perm(rng, b.num_nodes))) for a, b in prs]
    np.testing.assert_allclose(run(m, moved), base, atol=1e-9, rtol=0)


def test_load_state_round_trip_and_errors():
    a, b = tiny(seed=0), tiny(seed=1)
    prs = pairs(5, 3)
    assert not np.allclose(run(a, prs), run(b, prs))
    b.load_state({k: p.values for k, p in a.params().items()})
    np.testing.assert_array_equal(run(a, prs), run(b, prs))
    with pytest.raises(KeyError):
        b.load_state({})
    bad = {k: p.values for k, p in a.params().items()}
    bad["mlp.b"] = np.zeros(3)
    with pytest.raises(ValueError, match="mlp.b"):
        b.load_state(bad)


def test_full_model_gradient_spot_check():
    prs = pairs(6, 2)
    m = tiny()
    cache = FeatureCache([g for p in prs for g in p], 2, 8)
    batch = make_batch(prs, cache)
    y = np.array([0.3, 0.7])
    params = m.params()
    with ad.Tape() as tape:
        loss = ad.mse(m(batch), y)
    tape.backward(loss)
    rng = np.random.default_rng(0)
    for name in ("enc.gate", "enc.lg.W_E.1", "match.Wq1", "spm.WA.0", "att.wk", "conv.1.col"):
        t = params[name]
        idx = tuple(int(rng.integers(0, s)) for s in t.shape)
        old = t.values[idx]
        t.values[idx] = old + 1e-5
        fp = ad.mse(m(batch), y).item()
        t.values[idx] = old - 1e-5
        fm = ad.mse(m(batch), y).item()
        t.values[idx] = old
        num = (fp - fm) / 2e-5
        assert t.grad[idx] == pytest.approx(num, rel=1e-4, abs=1e-9), name


# -- GraphSim-style stub


def stub(positions=(), seed=0):
    return GraphSimStub(GraphSimConfig(d=5, layers=3, spm_positions=positions, conv_channels=(4, 3), label_count=2, n_max=8, seed=seed))


def test_stub_without_spm_never_runs_it():
    m = stub()
    run(m, pairs(7, 4))
    assert m.spm_executions == 0
    assert not any(k.startswith("spm.") for k in m.params())


def test_stub_spm_changes_predictions_and_counts():
    prs = pairs(8, 6)
    base = run(stub(), prs)
    m = stub((1, 3))
    out = run(m, prs)
    assert m.spm_executions == 2
    assert np.max(np.abs(out - base)) > 1e-6
    assert set(k for k in m.params() if k.startswith("spm.")) == {"spm.WA.after1", "spm.WA.after3"}


def test_stub_rejects_bad_positions():
    with pytest.raises(ValueError, match="1..3"):
        stub((4,))


def test_stub_isomorphism_invariant():
    rng = np.random.default_rng(9)
    prs = pairs(9, 5)
    m = stub((2,))
    moved = [(a.permuted(random_perm(rng, a.num_nodes)), b) for a, b in prs]
    np.testing.assert_allclose(run(m, moved), run(m, prs), atol=1e-9, rtol=0)
