"""Diagonal-Gaussian weight posteriors, their KL to a Gaussian prior, and Bayesian positions.

A Bayesian position swaps the :class:`~bayeslm.nnlm.sites.PointWeight` of one
or more sites for a :class:`GaussianVariational`.  In a sampling forward pass
each site draws ``W = mu + softplus(rho) * eps`` once per batch from its own
named substream; an evaluation pass uses ``W = mu``.
"""

from dataclasses import dataclass

import numpy as np

from .core import autograd as ad
from .nnlm.models import LSTM_GATES
from .nnlm.sites import Embedding, ForwardPass, Gate
from .nnlm.train import elbo_loss

DEFAULT_PRIOR_SIGMA = {"lstm": 1.0, "transformer": 1.0e-3}
INIT_SIGMA_RATIO = 0.05


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for ``y > 0`` (``-inf`` at 0)."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return y + np.log(-np.expm1(-y))


class GaussianVariational:
    """``q(W) = N(mu, softplus(rho)^2)`` elementwise, with prior ``N(prior_mu, prior_sigma^2)``."""

    kind = "gaussian"

    def __init__(self, mu, rho, prior_mu, prior_sigma):
        mu = np.array(mu, dtype=np.float64)
        self.mu = ad.Tensor(mu, requires_grad=True)
        self.rho = ad.Tensor(np.broadcast_to(rho, mu.shape).copy(), requires_grad=True)
        self.prior_mu = np.broadcast_to(np.asarray(prior_mu, dtype=np.float64), mu.shape).copy()
        self.prior_sigma = np.broadcast_to(np.asarray(prior_sigma, dtype=np.float64),
                                           mu.shape).copy()
        if not np.all(self.prior_sigma > 0):
            raise ValueError("prior sigma must be positive")

    @classmethod
    def from_prior(cls, prior_mu, prior_sigma, init_ratio=INIT_SIGMA_RATIO):
        """Posterior starting at the prior mean with ``sigma = init_ratio * prior_sigma``."""
        prior_mu = np.array(prior_mu, dtype=np.float64)
        sigma = init_ratio * np.broadcast_to(prior_sigma, prior_mu.shape)
        return cls(prior_mu.copy(), softplus_inv(sigma), prior_mu, prior_sigma)

    @property
    def shape(self):
        return self.mu.shape

    @property
    def mean(self):
        return self.mu.value

    @property
    def sigma(self):
        return softplus(self.rho.value)

    def sample(self, eps):
        """Reparameterized draw ``mu + softplus(rho) * eps`` (differentiable)."""
        return self.mu + ad.softplus(self.rho) * eps

    def resolve(self, fw, key):
        if not fw.sample:
            return self.mu
        w = fw.cache.get(key)
        if w is None:
            w = self.sample(fw.noise(key, self.shape))
            fw.cache[key] = w
        return w

    def kl(self):
        """Closed-form ``KL(q || prior)`` as a differentiable scalar."""
        s = ad.softplus(self.rho)
        ps2 = 2.0 * self.prior_sigma ** 2
        terms = (np.log(self.prior_sigma) - ad.log(s)
                 + (ad.square(s) + ad.square(self.mu - self.prior_mu)) / ps2 - 0.5)
        return ad.sum_(terms)

    def parameters(self):
        return {"mu": self.mu, "rho": self.rho}

    def arrays(self):
        return {"mu": self.mu.value, "rho": self.rho.value,
                "prior_mu": self.prior_mu, "prior_sigma": self.prior_sigma}

    def load_arrays(self, arrays):
        self.mu.value[...] = arrays["mu"]
        self.rho.value[...] = arrays["rho"]
        self.prior_mu[...] = arrays["prior_mu"]
        self.prior_sigma[...] = arrays["prior_sigma"]

    def free_parameters(self):
        return self.mu.size + self.rho.size


def sample_params(gv, rng):
    """One reparameterized draw from ``gv`` using the next draw of ``rng``."""
    return gv.sample(rng.normal(gv.shape))


def kl_gaussian(gv):
    """``sum_i log(sr_i/s_i) + (s_i^2 + (m_i - mr_i)^2) / (2 sr_i^2) - 1/2`` as a float."""
    return float(gv.kl().value)


def kl_diag_gaussian(mu, sigma, prior_mu, prior_sigma):
    """Elementwise closed-form KL between diagonal Gaussians (numpy, no graph)."""
    return (np.log(prior_sigma / sigma)
            + (sigma ** 2 + (mu - prior_mu) ** 2) / (2.0 * prior_sigma ** 2) - 0.5)


# -- positions -------------------------------------------------------------------

POSITION_SITES = {
    "lstm": LSTM_GATES + ("embedding",),
    "transformer": ("ffn-first-matrix", "attention-projections", "embedding"),
}


@dataclass(frozen=True)
class BayesPosition:
    model_kind: str
    layer: int
    site: str

    def __post_init__(self):
        valid = POSITION_SITES.get(self.model_kind)
        if valid is None:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.site not in valid:
            raise ValueError(f"site {self.site!r} is not valid for {self.model_kind}; "
                             f"expected one of {valid}")
        if self.site != "embedding" and self.layer < 1:
            raise ValueError(f"layer index must be >= 1, got {self.layer}")

    def site_names(self):
        if self.site == "embedding":
            return ["embedding"]
        if self.site == "ffn-first-matrix":
            return [f"l{self.layer}.ffn1"]
        if self.site == "attention-projections":
            return [f"l{self.layer}.attn-{p}" for p in ("q", "k", "v", "h")]
        return [f"l{self.layer}.{self.site}"]

    @property
    def label(self):
        return "embedding" if self.site == "embedding" else f"l{self.layer}.{self.site}"

    @classmethod
    def parse(cls, model_kind, text):
        """``"embedding"`` or ``"l<layer>.<site>"``, e.g. ``"l1.cell-input"``."""
        if text == "embedding":
            return cls(model_kind, 0, "embedding")
        head, _, site = text.partition(".")
        if not head.startswith("l") or not head[1:].isdigit() or not site:
            raise ValueError(f"cannot parse position {text!r}; expected 'l<layer>.<site>'")
        return cls(model_kind, int(head[1:]), site)


@dataclass
class BayesTrainConfig:
    num_samples: int = 1
    kl_scale: float = 1.0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not self.kl_scale > 0:
            raise ValueError("kl_scale must be positive")


def bayesian_site(site, prior_sigma, init_ratio=INIT_SIGMA_RATIO):
    """Variational copy of a point gate or embedding, centred on its current weights."""
    gv = GaussianVariational.from_prior(site.source.mean.copy(), prior_sigma, init_ratio)
    if isinstance(site, Gate):
        return Gate(site.name, gv, site.activation)
    if isinstance(site, Embedding):
        return Embedding(site.name, gv)
    raise TypeError(f"site {site.name!r} of type {type(site).__name__} has no weight matrix")


def make_bayesian(model, positions, prior_sigma=None, init_ratio=INIT_SIGMA_RATIO):
    """Copy of ``model`` with every site of ``positions`` made variational."""
    prior_sigma = DEFAULT_PRIOR_SIGMA[model.kind] if prior_sigma is None else prior_sigma
    out = model.copy()
    for pos in positions:
        if pos.model_kind != model.kind:
            raise ValueError(f"position {pos} does not match a {model.kind} model")
        for name in pos.site_names():
            out.replace_site(name, bayesian_site(out.sites[name], prior_sigma, init_ratio))
    return out


def init_prior_from_checkpoint(baseline, positions, prior_sigma=None, config=None,
                               init_ratio=INIT_SIGMA_RATIO):
    """Bayesian model whose priors (and initial posteriors) sit at a converged baseline.

    ``baseline`` is a model or a checkpoint path.  Prior means are the baseline
    weights, prior sigmas the constant ``prior_sigma`` (1.0 for LSTM, 1e-3 for
    Transformer by default), posterior means start at the prior means and
    posterior sigmas at ``init_ratio * prior_sigma``.  Every other weight is
    copied unchanged.  If ``config`` (a config dict) is given it must match
    the baseline's.
    """
    if not hasattr(baseline, "sites"):
        from .checkpoint import load_checkpoint
        baseline = load_checkpoint(baseline).model
    if config is not None:
        have = baseline.config_dict()
        diff = {k: (v, have.get(k)) for k, v in config.items() if have.get(k) != v}
        if diff:
            raise ValueError(f"checkpoint config does not match: {diff}")
    return make_bayesian(baseline, positions, prior_sigma, init_ratio)


def bayes_elbo_loss(model, batch, config, rng, dropout=0.0):
    """``-(1/K) sum_k log P(batch | W_k) + kl_scale * sum KL`` for a model with Bayesian sites."""
    return elbo_loss(model, batch, rng, config.num_samples, config.kl_scale, dropout=dropout)


def bayes_eval_logprobs(model, batch):
    """Per-token log-probs with every variational weight replaced by its mean."""
    return model.token_logprobs(batch, ForwardPass.evaluation())


def variational_sources(model):
    """``{label: GaussianVariational}`` over all variational weights of ``model``."""
    out = {}
    for name, site in model.sites.items():
        _collect(name, site, out)
    return out


def _collect(prefix, node, out):
    for key, child in node.sources().items():
        label = f"{prefix}.{key}" if key else prefix
        if isinstance(child, GaussianVariational):
            out[label] = child
        elif hasattr(child, "sources"):
            _collect(label, child, out)
