import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayeslm.bayes import BayesPosition, GaussianVariational, variational_sources
from bayeslm.core import RngStream, SgdState
from bayeslm.core import autograd as ad
from bayeslm.gp import GpPosition
from bayeslm.nas import (ArchSelection, MixedSite, SuperNet, _best_first, extract_topN,
                         instantiate_selection, rank_selections, report_arch_weights,
                         search_space, selection_score, supernet_forward, supernet_step,
                         write_arch_report, write_selections)
from bayeslm.nnlm import ForwardPass, Gate, PointWeight

from helpers import random_batch, small_lstm, small_transformer, well_vs_random_supernet

EVAL = ForwardPass.evaluation


def lstm_supernet(seed=0, variant="bayes", layers=2):
    base = small_lstm(10, seed=seed, layers=layers)
    return base, SuperNet(base, search_space("lstm", layers, variant), prior_sigma=1.0,
                          init_ratio=0.3)


def brute_force(gates, n):
    rows = []
    for bits in itertools.product((False, True), repeat=len(gates)):
        score = 1.0
        for (gp, gb), b in zip(gates, bits):
            score *= gb if b else gp
        rows.append((-score, bits))
    rows.sort()
    return [(bits, -s) for s, bits in rows[:n]]


# -- gating ------------------------------------------------------------------------------


def scalar_site(logits):
    point = Gate("s", PointWeight(np.array([[0.7, -0.2]])), "sigmoid")
    bayes = Gate("s", GaussianVariational(np.array([[-1.1, 0.4]]), -1e4, 0.0, 1.0), "sigmoid")
    return MixedSite("s", point, bayes, logits)


def test_equal_logits_average_branches():
    x = ad.Tensor(np.array([[0.5], [-2.0]]))
    y = scalar_site((0.3, 0.3))(x, EVAL()).value
    p = 1 / (1 + np.exp(-(0.7 * x.value - 0.2)))
    b = 1 / (1 + np.exp(-(-1.1 * x.value + 0.4)))
    np.testing.assert_allclose(y, 0.5 * (p + b), rtol=0, atol=1e-15)


def test_saturated_bayes_logit_selects_bayes_branch():
    x = ad.Tensor(np.array([[0.5], [-2.0]]))
    site = scalar_site((0.0, 40.0))
    y = site(x, EVAL()).value
    np.testing.assert_allclose(y, site.bayes(x, EVAL()).value, rtol=0, atol=1e-12)


def test_hand_set_scalar_location():
    site = scalar_site((0.2, -0.5))
    x = 1.3
    gp = math.exp(0.2) / (math.exp(0.2) + math.exp(-0.5))
    expected = gp / (1 + math.exp(-(0.7 * x - 0.2))) + (1 - gp) / (1 + math.exp(-(-1.1 * x + 0.4)))
    assert site(ad.Tensor([[x]]), EVAL()).value[0, 0] == pytest.approx(expected, abs=1e-15)


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=8))
def test_gates_normalized(logits):
    _, sn = lstm_supernet()
    for site, lg in zip(sn.mixed_sites(), logits):
        site.arch.value[...] = lg
    assert np.all(sn.gates() >= 0)
    np.testing.assert_allclose(sn.gates().sum(axis=1), 1.0, rtol=0, atol=1e-12)


# dyadic logits and integer shifts keep the shifted logits exactly representable
grid = st.integers(-320, 320).map(lambda k: k / 64)


@given(st.lists(st.tuples(grid, grid), min_size=8, max_size=8), st.integers(-100, 100))
def test_shift_invariance(logits, shift):
    _, sn = lstm_supernet()
    for site, lg in zip(sn.mixed_sites(), logits):
        site.arch.value[...] = lg
    gates, top = sn.gates(), extract_topN(sn, 3)
    for site in sn.mixed_sites():
        site.arch.value += shift
    np.testing.assert_array_equal(sn.gates(), gates)
    assert [s.bayes for s in extract_topN(sn, 3)] == [s.bayes for s in top]


def test_branch_roles_must_match():
    m = small_lstm(10)
    with pytest.raises(ValueError):
        MixedSite("x", m.sites["l1.input-gate"], m.sites["l1.h-gate"])


# -- construction --------------------------------------------------------------------------


def test_search_spaces():
    assert len(search_space("lstm", 2)) == 8
    assert [p.label for p in search_space("lstm", 1, "gp")] == [
        "l1.cell-input", "l1.output-gate", "l1.h-gate"]
    assert search_space("transformer", 3) == [
        BayesPosition("transformer", l, "ffn-first-matrix") for l in (1, 2, 3)]
    with pytest.raises(ValueError):
        search_space("lstm", 2, "latent")


def test_multi_site_and_duplicate_locations_rejected():
    t = small_transformer(10)
    with pytest.raises(ValueError, match="single sites"):
        SuperNet(t, [BayesPosition("transformer", 1, "attention-projections")])
    with pytest.raises(ValueError, match="twice"):
        SuperNet(small_lstm(10), [BayesPosition("lstm", 1, "cell-input")] * 2)


def test_untrained_report():
    _, sn = lstm_supernet()
    rows = report_arch_weights(sn)
    assert len(rows) == len(sn.locations) == 8
    assert all(r["g_point"] == r["g_bayes"] == 0.5 for r in rows)
    assert [r["location"] for r in rows] == sn.labels


def test_report_files(tmp_path):
    _, sn = lstm_supernet()
    sn.mixed_sites()[0].arch.value[...] = [0.0, 1.0]
    write_arch_report(report_arch_weights(sn), tmp_path / "t.tsv", tmp_path / "p.tsv")
    table = (tmp_path / "t.tsv").read_text().splitlines()
    assert table[0].split("\t") == ["location", "a_point", "a_bayes", "g_point", "g_bayes"]
    assert len(table) == 9 and table[1].startswith("l1.input-gate\t0.0\t1.0\t")
    assert len((tmp_path / "p.tsv").read_text().splitlines()) == 9
    write_selections(extract_topN(sn, 2), tmp_path / "s.tsv")
    assert (tmp_path / "s.tsv").read_text().splitlines()[1].startswith("1\t")


# -- ranking -------------------------------------------------------------------------------


def test_two_location_example():
    ranked = rank_selections([(0.9, 0.1), (0.6, 0.4)], 4)
    assert ranked[0] == ((False, False), pytest.approx(0.54))
    assert ranked[1][0] == (False, True) and ranked[1][1] == pytest.approx(0.36)
    assert [r[0] for r in ranked[2:]] == [(True, False), (True, True)]


def test_all_ties_follow_point_first_then_lower_layer():
    ranked = rank_selections([(0.5, 0.5)] * 3, 8)
    assert [r[0] for r in ranked] == list(itertools.product((False, True), repeat=3))
    assert all(r[1] == 0.125 for r in ranked)


def test_exhaustive_three_location_oracle():
    gates = [(0.7, 0.3), (0.2, 0.8), (0.55, 0.45)]
    assert rank_selections(gates, 8) == brute_force(gates, 8)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10), st.integers(1, 1100))
def test_top_n_matches_brute_force(g_bayes, n):
    gates = [(1.0 - g, g) for g in g_bayes]
    assert rank_selections(gates, n) == brute_force(gates, n)


def test_request_beyond_space_is_truncated():
    assert len(rank_selections([(0.5, 0.5)] * 2, 10)) == 4
    assert rank_selections([(0.5, 0.5)], 0) == []


def test_best_first_matches_exhaustive():
    rng = np.random.default_rng(0)
    g = rng.uniform(0.01, 0.99, 12)
    gates = np.stack([1 - g, g], axis=1)
    assert [b for b, _ in _best_first(gates, 50)] == [b for b, _ in rank_selections(gates, 50)]


def test_best_first_used_for_large_spaces():
    g = np.linspace(0.1, 0.9, 24)
    gates = np.stack([1 - g, g], axis=1)
    ranked = rank_selections(gates, 5)
    assert ranked[0][0] == tuple(bool(x > 0.5) for x in g)
    assert all(a[1] >= b[1] for a, b in zip(ranked, ranked[1:]))


def test_selection_score_and_top1_picks_higher_gate():
    _, sn = lstm_supernet()
    rng = np.random.default_rng(1)
    for s in sn.mixed_sites():
        s.arch.value[...] = rng.normal(size=2)
    top = extract_topN(sn, 1)[0]
    assert top.bayes == tuple(bool(gb > gp) for gp, gb in sn.gates())
    assert top.score == selection_score(sn.gates(), top.bayes)
    assert top.labels == tuple(sn.labels)


# -- instantiation -------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["bayes", "gp"])
def test_hard_gates_match_instantiated_model(variant):
    _, sn = lstm_supernet(seed=2, variant=variant)
    rng = np.random.default_rng(3)
    for s in sn.mixed_sites():
        s.arch.value[...] = rng.normal(size=2)
    for gv in variational_sources(sn.model).values():
        gv.mu.value += rng.normal(scale=0.2, size=gv.shape)
    b = random_batch()
    bits = tuple(i % 2 == 0 for i in range(len(sn.locations)))
    inst = instantiate_selection(sn, bits)
    sn.set_hard_gates(bits)
    np.testing.assert_allclose(sn.model.token_logprobs(b), inst.token_logprobs(b), rtol=0,
                               atol=1e-10)
    sampled = inst.token_logprobs(b, ForwardPass(sample=True, rng=RngStream(5)))
    np.testing.assert_allclose(supernet_forward(b, sn, RngStream(5)), sampled, rtol=0,
                               atol=1e-10)


def test_empty_selection_is_the_baseline():
    base, sn = lstm_supernet(seed=4)
    b = random_batch()
    inst = instantiate_selection(sn, [False] * len(sn.locations))
    assert inst.variational_sites() == []
    sn.set_hard_gates([False] * len(sn.locations))
    assert np.array_equal(inst.token_logprobs(b), base.token_logprobs(b))
    assert np.array_equal(sn.model.token_logprobs(b), base.token_logprobs(b))


def test_full_selection_is_fully_bayesian():
    _, sn = lstm_supernet()
    inst = instantiate_selection(sn, ArchSelection((True,) * 8, 1.0, tuple(sn.labels)))
    assert sorted(inst.variational_sites()) == sorted(sn.site_names)


def test_instantiation_resets_prior_to_point_branch():
    _, sn = lstm_supernet()
    site = sn.mixed_sites()[0]
    site.point.source.weight.value += 1.0
    inst = instantiate_selection(sn, [True] + [False] * 7)
    gv = inst.sites[sn.site_names[0]].source
    assert np.array_equal(gv.prior_mu, site.point.source.mean)
    kept = instantiate_selection(sn, [True] + [False] * 7, reset_prior=False)
    assert not np.array_equal(kept.sites[sn.site_names[0]].source.prior_mu, gv.prior_mu)


def test_selection_mismatch_rejected():
    _, sn = lstm_supernet()
    with pytest.raises(ValueError):
        instantiate_selection(sn, [True])
    with pytest.raises(ValueError):
        instantiate_selection(sn, ArchSelection((True,) * 8, 1.0, tuple("abcdefgh")))
    with pytest.raises(ValueError):
        sn.set_hard_gates([True])


def test_gp_supernet_branches():
    _, sn = lstm_supernet(variant="gp", layers=1)
    assert [type(s.bayes).__name__ for s in sn.mixed_sites()] == ["GpActivation"] * 3
    assert isinstance(sn.locations[2], GpPosition)


# -- training ------------------------------------------------------------------------------


def test_gradient_reaches_logits():
    _, sn = lstm_supernet()
    before = sn.logits().copy()
    supernet_step(sn, random_batch(), SgdState(0.1), RngStream(0))
    assert not np.array_equal(sn.logits(), before)


def test_restricted_step_leaves_other_parameters():
    _, sn = lstm_supernet()
    before = {k: v.copy() for k, v in sn.model.arrays().items()}
    supernet_step(sn, random_batch(), SgdState(0.1), RngStream(0), params=sn.arch_parameters())
    after = sn.model.arrays()
    changed = {k for k in before if not np.array_equal(before[k], after[k])}
    assert changed and all(k.endswith(".arch") for k in changed)


def test_well_trained_bayes_branch_wins_over_random_point_branch():
    sn, batches = well_vs_random_supernet()
    state = SgdState(0.05)
    rng = RngStream(0)
    diffs = []
    for step in range(50):
        supernet_step(sn, batches[step % len(batches)], state, rng.fork(step),
                      params=sn.arch_parameters())
        a_point, a_bayes = sn.logits()[0]
        diffs.append(a_bayes - a_point)
    assert all(b > a for a, b in zip(diffs, diffs[1:]))
    assert diffs[0] > 0
