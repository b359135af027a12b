"""Finite-difference gradient checks for every primitive and every model loss.

Each check builds a tiny deterministic problem whose loss is rebuilt from
scratch on every call (noise is frozen by re-seeding), then compares tape
gradients with central differences.
"""

from dataclasses import dataclass

import numpy as np

from .bayes import BayesPosition, make_bayesian
from .core import autograd as ad
from .core.gradcheck import check_gradients
from .core.rng import RngStream
from .corpus.vocab import make_batch
from .gp import GpPosition, make_gp
from .latent import LatentSite, add_latent_layers
from .nas import SuperNet, search_space
from .nnlm.models import LstmConfig, LstmLM, TransformerConfig, TransformerLM
from .nnlm.train import elbo_loss

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class SuiteEntry:
    check: str
    tensor: str
    rel_error: float
    checked: int

    def passed(self, tol=TOLERANCE):
        return self.rel_error < tol


def _entries(check, results):
    return [SuiteEntry(check, r.name, r.rel_error, r.checked) for r in results]


def _leaf(rng, shape, scale=1.0, shift=0.0):
    return ad.Tensor(rng.normal(size=shape) * scale + shift, requires_grad=True)


def primitive_checks(seed=0):
    """One check per differentiable primitive on random inputs."""
    rng = np.random.default_rng(seed)
    out = []

    def run(name, fn, leaves):
        w = rng.normal(size=fn().shape)
        out.extend(_entries(f"primitive:{name}", check_gradients(
            lambda: ad.sum_(fn() * w), leaves, EPS)))

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    pos = _leaf(rng, (3, 4), 0.3, 2.0)
    run("add", lambda: ad.add(a, b), {"a": a, "b": b})
    run("sub", lambda: ad.sub(a, b), {"a": a, "b": b})
    run("mul", lambda: ad.mul(a, b), {"a": a, "b": b})
    run("div", lambda: ad.div(a, pos), {"a": a, "pos": pos})
    run("exp", lambda: ad.exp(a), {"a": a})
    run("log", lambda: ad.log(pos), {"pos": pos})
    run("square", lambda: ad.square(a), {"a": a})
    run("abs", lambda: ad.abs_(a), {"a": a})
    run("sigmoid", lambda: ad.sigmoid(a), {"a": a})
    run("tanh", lambda: ad.tanh(a), {"a": a})
    run("relu", lambda: ad.relu(a), {"a": a})
    run("gelu", lambda: ad.gelu(a), {"a": a})
    run("softplus", lambda: ad.softplus(a), {"a": a})
    run("softmax", lambda: ad.softmax(a), {"a": a})
    run("log-softmax", lambda: ad.log_softmax(a), {"a": a})
    g, bias = _leaf(rng, (4,)), _leaf(rng, (4,))
    run("layer-norm", lambda: ad.layer_norm(a, g, bias), {"a": a, "gain": g, "bias": bias})
    m = _leaf(rng, (4, 2))
    run("matmul", lambda: ad.matmul(a, m), {"a": a, "m": m})
    batched = _leaf(rng, (2, 3, 4))
    run("matmul-batched", lambda: ad.matmul(batched, m), {"x": batched, "m": m})
    run("transpose", lambda: ad.transpose(a), {"a": a})
    run("reshape", lambda: ad.reshape(a, (2, 6)), {"a": a})
    run("sum-axis", lambda: ad.sum_(a, axis=0), {"a": a})
    run("mean", lambda: ad.mean(a, axis=1), {"a": a})
    run("concat", lambda: ad.concat([a, b], axis=-1), {"a": a, "b": b})
    run("concat-with-bias-one", lambda: ad.append_one(a), {"a": a})
    wt = _leaf(rng, (2, 5))
    run("affine", lambda: ad.affine(a, wt), {"a": a, "w": wt})
    run("stack", lambda: ad.stack([a, b], axis=1), {"a": a, "b": b})
    run("getitem", lambda: ad.getitem(a, (slice(None), 1)), {"a": a})
    table = _leaf(rng, (3, 6))
    ids = np.array([[0, 5, 2], [2, 2, 1]])
    run("embedding-lookup", lambda: ad.embedding(table, ids), {"table": table})
    mask = RngStream(seed).dropout_mask((3, 4), 0.3)
    run("dropout-mask", lambda: ad.dropout(a, mask), {"a": a})
    logits = _leaf(rng, (2, 3, 5))
    targets = np.array([[1, 4, 0], [2, 2, 3]])
    tmask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    out.extend(_entries("primitive:cross-entropy", check_gradients(
        lambda: ad.cross_entropy(logits, targets, tmask), {"logits": logits}, EPS)))
    return out


VOCAB_SIZE = 7


def tiny_batch():
    return make_batch([[0, 3, 4, 5, 1], [0, 6, 2, 1]], pad_id=1)


def tiny_lstm(seed=0, layers=2):
    m = LstmLM(LstmConfig(num_layers=layers, embed_dim=3, hidden_dim=4, dropout=0.2,
                          init_range=0.5), VOCAB_SIZE, seed=seed)
    return m


def tiny_transformer(seed=0):
    return TransformerLM(TransformerConfig(num_layers=2, model_dim=4, ffn_dim=6, dropout=0.2,
                                           init_range=0.5), VOCAB_SIZE, seed=seed)


def _model_check(name, model, seed, dropout=0.0, kl_scale=0.3, latent_kl_scale=1.0,
                 max_elements=None):
    batch = tiny_batch()

    def loss():
        return elbo_loss(model, batch, RngStream(seed), 1, kl_scale, latent_kl_scale, dropout)

    return _entries(name, check_gradients(loss, model.parameters(), EPS, max_elements, seed))


def model_checks(seed=0):
    out = []
    out += _model_check("lstm-baseline", tiny_lstm(seed), seed, dropout=0.2)
    out += _model_check("transformer-baseline", tiny_transformer(seed), seed, dropout=0.2)
    lstm = tiny_lstm(seed)
    bayes = make_bayesian(lstm, [BayesPosition("lstm", 1, "cell-input"),
                                 BayesPosition("lstm", 2, "forget-gate"),
                                 BayesPosition("lstm", 0, "embedding")], prior_sigma=0.5,
                          init_ratio=0.3)
    out += _model_check("bayes-elbo-lstm", bayes, seed)
    tbayes = make_bayesian(tiny_transformer(seed),
                           [BayesPosition("transformer", 1, "ffn-first-matrix"),
                            BayesPosition("transformer", 2, "attention-projections")],
                           prior_sigma=0.5, init_ratio=0.3)
    out += _model_check("bayes-elbo-transformer", tbayes, seed)
    gp = make_gp(lstm, [GpPosition("lstm", 1, "cell-input"), GpPosition("lstm", 2, "h-gate")],
                 prior_sigma=0.5, init_ratio=0.3)
    _perturb_lambda(gp, seed)
    out += _model_check("gp-elbo-lstm", gp, seed)
    tgp = make_gp(tiny_transformer(seed), [GpPosition("transformer", 1, "ffn-first-matrix")],
                  prior_sigma=0.5, init_ratio=0.3)
    _perturb_lambda(tgp, seed)
    out += _model_check("gp-elbo-transformer", tgp, seed)
    lat = add_latent_layers(lstm, [LatentSite("lstm", 1)], spread=0.3)
    _perturb_latent(lat, seed)
    out += _model_check("latent-lstm", lat, seed)
    tlat = add_latent_layers(tiny_transformer(seed), [LatentSite("transformer", 2)], spread=0.3)
    _perturb_latent(tlat, seed)
    out += _model_check("latent-transformer", tlat, seed)
    sn = SuperNet(tiny_lstm(seed, layers=1), search_space("lstm", 1), prior_sigma=0.5,
                  init_ratio=0.3)
    for i, s in enumerate(sn.mixed_sites()):
        s.arch.value[...] = [0.3 * i, -0.2 * i]
    out += _model_check("supernet-lstm", sn.model, seed)
    gsn = SuperNet(tiny_lstm(seed, layers=1), search_space("lstm", 1, "gp"), prior_sigma=0.5,
                   init_ratio=0.3)
    out += _model_check("supernet-gp-lstm", gsn.model, seed)
    return out


def _perturb_lambda(model, seed):
    # move off the one-hot prior so every basis term carries gradient
    rng = np.random.default_rng(seed + 1)
    for site in model.sites.values():
        if site.variant == "gp":
            site.lam.mu.value += rng.normal(scale=0.3, size=site.lam.shape)


def _perturb_latent(model, seed):
    rng = np.random.default_rng(seed + 2)
    for layer in model.latents.values():
        layer.inference.value += rng.normal(scale=0.1, size=layer.inference.shape)
        layer.prior.value += rng.normal(scale=0.1, size=layer.prior.shape)


def run_suite(seed=0):
    """All primitive and model checks as a flat list of :class:`SuiteEntry`."""
    return primitive_checks(seed) + model_checks(seed)
