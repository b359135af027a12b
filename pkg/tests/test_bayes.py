import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from bayeslm.bayes import (DEFAULT_PRIOR_SIGMA, BayesPosition, BayesTrainConfig,
                           GaussianVariational, bayes_elbo_loss, bayes_eval_logprobs,
                           init_prior_from_checkpoint, kl_diag_gaussian, kl_gaussian,
                           make_bayesian, sample_params, softplus, softplus_inv,
                           variational_sources)
from bayeslm.checkpoint import save_checkpoint
from bayeslm.core import RngStream, check_gradients
from bayeslm.nnlm import ForwardPass, elbo_loss

from helpers import random_batch, small_lstm, small_transformer

CELL = [BayesPosition("lstm", 1, "cell-input")]


def gv_from_sigma(mu, sigma, prior_mu, prior_sigma):
    return GaussianVariational(mu, softplus_inv(np.asarray(sigma, dtype=float)), prior_mu,
                               prior_sigma)


def mc_kl(mu, sigma, prior_mu, prior_sigma, draws, rng):
    """``E_q[log q - log p]`` from ``draws`` samples per element."""
    total = 0.0
    for m, s, pm, ps in zip(mu, sigma, prior_mu, prior_sigma):
        x = m + s * rng.standard_normal(draws)
        total += np.mean(norm.logpdf(x, m, s) - norm.logpdf(x, pm, ps))
    return total


# -- sampling ----------------------------------------------------------------------------


def test_zero_sigma_sample_equals_mean():
    mu = np.array([[0.3, -1.2], [2.0, 0.0]])
    gv = GaussianVariational(mu, -1e4, 0.0, 1.0)
    assert np.all(gv.sigma == 0.0)
    assert np.array_equal(sample_params(gv, RngStream(0)).value, mu)


def test_sample_moments():
    gv = gv_from_sigma(np.zeros(100_000), 1.0, 0.0, 1.0)
    x = sample_params(gv, RngStream(11)).value
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.03


def test_same_seed_and_counter_gives_same_sample():
    gv = gv_from_sigma(np.ones(5), 0.5, 0.0, 1.0)
    a = sample_params(gv, RngStream(4, counter=2)).value
    b = sample_params(gv, RngStream(4, counter=2)).value
    assert np.array_equal(a, b)


def test_sigma_is_positive_and_shapes_match():
    gv = GaussianVariational(np.zeros((3, 2)), -30.0, 0.0, 1.0)
    assert np.all(gv.sigma > 0)
    assert gv.rho.shape == gv.prior_mu.shape == gv.prior_sigma.shape == (3, 2)
    with pytest.raises(ValueError):
        GaussianVariational(np.zeros(2), 0.0, 0.0, 0.0)


def test_softplus_inverse_roundtrip():
    y = np.array([1e-6, 0.05, 1.0, 30.0])
    np.testing.assert_allclose(softplus(softplus_inv(y)), y, rtol=1e-12)


# -- KL ------------------------------------------------------------------------------------


def test_kl_of_prior_with_itself_is_zero():
    rng = np.random.default_rng(0)
    mu, sigma = rng.normal(size=6), rng.uniform(0.1, 2, size=6)
    assert kl_gaussian(gv_from_sigma(mu, sigma, mu, sigma)) == pytest.approx(0.0, abs=1e-12)


def test_kl_unit_shift_is_half():
    assert kl_gaussian(gv_from_sigma([1.0], [1.0], 0.0, 1.0)) == pytest.approx(0.5, abs=1e-14)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(7)
    mu, sigma = rng.normal(size=10), rng.uniform(0.2, 1.5, size=10)
    pmu, psig = rng.normal(size=10), rng.uniform(0.5, 2.0, size=10)
    closed = kl_gaussian(gv_from_sigma(mu, sigma, pmu, psig))
    mc = mc_kl(mu, sigma, pmu, psig, 1_000_000, rng)
    assert abs(mc - closed) / closed < 0.01


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-5, 5),
                          st.floats(0.01, 5)), min_size=1, max_size=8))
def test_kl_nonnegative_and_zero_only_at_prior(rows):
    mu, sigma, pmu, psig = map(np.array, zip(*rows))
    kl = kl_diag_gaussian(mu, sigma, pmu, psig)
    assert np.all(kl >= -1e-12)
    same = (mu == pmu) & (sigma == psig)
    assert np.all(np.abs(kl[same]) < 1e-12)
    far = (np.abs(mu - pmu) > 1e-3) | (np.abs(np.log(sigma / psig)) > 1e-3)
    assert np.all(kl[far] > 0)


def test_tensor_kl_matches_numpy_form():
    rng = np.random.default_rng(3)
    mu, sigma, pmu, psig = rng.normal(size=4), rng.uniform(0.1, 1, 4), rng.normal(size=4), \
        rng.uniform(0.1, 1, 4)
    assert kl_gaussian(gv_from_sigma(mu, sigma, pmu, psig)) == pytest.approx(
        kl_diag_gaussian(mu, sigma, pmu, psig).sum(), rel=1e-12)


# -- loss --------------------------------------------------------------------------------


def test_no_bayesian_positions_gives_cross_entropy():
    m = small_lstm(10, seed=1)
    b = random_batch()
    loss = bayes_elbo_loss(m, b, BayesTrainConfig(), RngStream(0))
    assert float(loss.value) == float(m.nll(b, ForwardPass.evaluation()).value)


def test_three_samples_average_likelihood_terms():
    m = make_bayesian(small_lstm(10, seed=1), CELL, prior_sigma=0.5, init_ratio=0.5)
    b = random_batch()
    k3 = float(bayes_elbo_loss(m, b, BayesTrainConfig(3, 0.2), RngStream(9)).value)
    # child streams carry counters, so each term starts from a fresh root
    terms = [float(m.nll(b, ForwardPass(sample=True,
                                        rng=RngStream(9).child(f"sample-{k}"))).value)
             for k in range(3)]
    assert len(set(terms)) == 3
    kl = float(m.param_kl().value)
    assert k3 == pytest.approx(np.mean(terms) + 0.2 * kl, rel=1e-12)
    k1 = float(bayes_elbo_loss(m, b, BayesTrainConfig(1, 0.2), RngStream(9)).value)
    assert k1 == pytest.approx(terms[0] + 0.2 * kl, rel=1e-12)


def test_frozen_noise_gradients_match_finite_differences():
    m = make_bayesian(small_lstm(8, seed=2, embed=3, hidden=3), CELL, prior_sigma=0.5,
                      init_ratio=0.4)
    b = random_batch(8, (4, 2))
    gv = variational_sources(m)["l1.cell-input"]
    results = check_gradients(lambda: bayes_elbo_loss(m, b, BayesTrainConfig(1, 0.3), RngStream(5)),
                              {"mu": gv.mu, "rho": gv.rho})
    assert all(r.rel_error < 1e-4 for r in results)


def test_positions_sample_independently():
    m = make_bayesian(small_lstm(10), [BayesPosition("lstm", 1, "input-gate"),
                                       BayesPosition("lstm", 1, "forget-gate")],
                      prior_sigma=1.0, init_ratio=1.0)
    fw = ForwardPass(sample=True, rng=RngStream(0))
    a = m.sites["l1.input-gate"].source.resolve(fw, "l1.input-gate").value
    b = m.sites["l1.forget-gate"].source.resolve(fw, "l1.forget-gate").value
    da = a - m.sites["l1.input-gate"].source.mean
    db = b - m.sites["l1.forget-gate"].source.mean
    assert not np.allclose(da, db)
    # one draw per site per pass
    assert m.sites["l1.input-gate"].source.resolve(fw, "l1.input-gate") is fw.cache["l1.input-gate"]


def test_bayes_train_config_validation():
    with pytest.raises(ValueError):
        BayesTrainConfig(num_samples=0)
    with pytest.raises(ValueError):
        BayesTrainConfig(kl_scale=0.0)


# -- positions ---------------------------------------------------------------------------


def test_position_validation_and_parsing():
    assert BayesPosition.parse("lstm", "l2.forget-gate") == BayesPosition("lstm", 2, "forget-gate")
    assert BayesPosition.parse("lstm", "embedding").site_names() == ["embedding"]
    assert BayesPosition("transformer", 1, "attention-projections").site_names() == [
        "l1.attn-q", "l1.attn-k", "l1.attn-v", "l1.attn-h"]
    assert BayesPosition("transformer", 2, "ffn-first-matrix").site_names() == ["l2.ffn1"]
    for kind, site in [("lstm", "ffn-first-matrix"), ("transformer", "cell-input"),
                       ("gru", "embedding")]:
        with pytest.raises(ValueError):
            BayesPosition(kind, 1, site)
    with pytest.raises(ValueError):
        BayesPosition.parse("lstm", "cell-input")


def test_position_kind_must_match_model():
    with pytest.raises(ValueError):
        make_bayesian(small_transformer(10), CELL)


def test_bayesian_position_doubles_free_parameters():
    base = small_lstm(10)
    site_size = base.sites["l1.cell-input"].source.weight.size
    m = make_bayesian(base, CELL)
    assert m.free_parameters() == base.free_parameters() + site_size
    t = small_transformer(10)
    tb = make_bayesian(t, [BayesPosition("transformer", 1, "ffn-first-matrix")])
    assert tb.free_parameters() == t.free_parameters() + t.sites["l1.ffn1"].source.weight.size


# -- prior initialization and evaluation ---------------------------------------------------


def test_prior_init_sets_constant_prior_sigma(tmp_path):
    base = small_lstm(10, seed=3)
    save_checkpoint(tmp_path / "base.ckpt", base)
    m = init_prior_from_checkpoint(tmp_path / "base.ckpt", CELL, prior_sigma=1.0)
    gv = m.sites["l1.cell-input"].source
    assert np.all(gv.prior_sigma == 1.0)
    np.testing.assert_allclose(gv.sigma, 0.05, rtol=1e-12)
    assert np.array_equal(gv.prior_mu, base.sites["l1.cell-input"].source.mean)
    assert np.array_equal(gv.mean, gv.prior_mu)
    # only the sigma gap contributes
    per = math.log(1 / 0.05) + 0.05 ** 2 / 2 - 0.5
    assert kl_gaussian(gv) == pytest.approx(per * gv.mu.size, rel=1e-10)
    # untouched weights are copied
    assert np.array_equal(m.params["output.weight"].value, base.params["output.weight"].value)


def test_default_prior_sigmas():
    assert DEFAULT_PRIOR_SIGMA == {"lstm": 1.0, "transformer": 1.0e-3}
    t = init_prior_from_checkpoint(small_transformer(10),
                                   [BayesPosition("transformer", 1, "ffn-first-matrix")])
    assert np.all(t.sites["l1.ffn1"].source.prior_sigma == 1.0e-3)


def test_prior_init_rejects_config_mismatch():
    base = small_lstm(10)
    with pytest.raises(ValueError, match="does not match"):
        init_prior_from_checkpoint(base, CELL, config={**base.config_dict(), "hidden_dim": 7})


@pytest.mark.parametrize("make,positions", [
    (small_lstm, CELL + [BayesPosition("lstm", 0, "embedding")]),
    (small_transformer, [BayesPosition("transformer", 2, "attention-projections")]),
])
def test_eval_after_init_recovers_baseline(tmp_path, make, positions):
    base = make(10, seed=4)
    save_checkpoint(tmp_path / "b.ckpt", base)
    m = init_prior_from_checkpoint(tmp_path / "b.ckpt", positions, prior_sigma=1.0)
    b = random_batch()
    np.testing.assert_allclose(bayes_eval_logprobs(m, b), base.token_logprobs(b), rtol=0,
                               atol=1e-10)


def test_zero_sigma_training_forward_recovers_baseline():
    base = small_lstm(10, seed=4)
    m = make_bayesian(base, CELL, prior_sigma=1.0, init_ratio=1e-300)
    b = random_batch()
    sampled = m.token_logprobs(b, ForwardPass(sample=True, rng=RngStream(1)))
    np.testing.assert_allclose(sampled, base.token_logprobs(b), rtol=0, atol=1e-10)


def test_eval_is_repeatable_and_uses_the_mean():
    m = make_bayesian(small_lstm(10, seed=5), CELL, prior_sigma=1.0, init_ratio=0.5)
    b = random_batch()
    assert np.array_equal(bayes_eval_logprobs(m, b), bayes_eval_logprobs(m, b))
    assert not np.array_equal(bayes_eval_logprobs(m, b),
                              m.token_logprobs(b, ForwardPass(sample=True, rng=RngStream(0))))


def test_eval_inside_sampling_envelope():
    m = make_bayesian(small_lstm(10, seed=6), CELL + [BayesPosition("lstm", 2, "forget-gate")],
                      prior_sigma=1.0, init_ratio=0.5)
    b = random_batch()
    root = RngStream(2)
    sampled = [m.token_logprobs(b, ForwardPass(sample=True, rng=root.fork(i))).sum()
               for i in range(200)]
    assert min(sampled) <= bayes_eval_logprobs(m, b).sum() <= max(sampled)


def test_elbo_without_sampling_noise_uses_all_sites():
    m = make_bayesian(small_lstm(10), CELL, prior_sigma=1.0, init_ratio=0.5)
    b = random_batch()
    a = float(elbo_loss(m, b, RngStream(0), kl_scale=0.1).value)
    c = float(elbo_loss(m, b, RngStream(0), kl_scale=0.2).value)
    assert c - a == pytest.approx(0.1 * float(m.param_kl().value), rel=1e-9)
