"""Latent hidden outputs with a history-conditioned Gaussian posterior and prior.

For a site output ``h_t`` an inference net gives ``q(z_t) = N(mu_t, sigma_t^2)``
and a separate prior net gives ``p(z_t) = N(mu_r_t, sigma_r_t^2)``; both are
one affine map ``[h_t, 1] -> 2c`` with a softplus on the spread half.  In a
sampling pass ``z_t = mu_t + sigma_t * eps_t`` replaces the site output; an
evaluation pass uses ``z_t = mu_t``.
"""

from dataclasses import dataclass

import numpy as np

from .bayes import softplus_inv
from .core import autograd as ad
from .nnlm.sites import ForwardPass
from .nnlm.train import elbo_loss

LATENT_SITES = {"lstm": "hidden-output", "transformer": "ffn-output"}
DEFAULT_SPREAD = 1.0


def identity_net(width, spread=DEFAULT_SPREAD, spread_bias=None):
    """Weights ``(2c, c + 1)`` mapping ``h`` to mean ``h`` and a constant spread."""
    w = np.zeros((2 * width, width + 1))
    w[:width, :width] = np.eye(width)
    w[width:, -1] = softplus_inv(spread) if spread_bias is None else spread_bias
    return w


def gaussian_head(h, weight):
    """Split ``W [h, 1]`` into ``(mean, softplus(spread))``."""
    out = ad.affine(h, weight)
    c = weight.shape[0] // 2
    idx_mu = (Ellipsis, slice(0, c))
    idx_s = (Ellipsis, slice(c, 2 * c))
    return ad.getitem(out, idx_mu), ad.softplus(ad.getitem(out, idx_s))


def gaussian_kl(mu, sigma, mu_r, sigma_r):
    """Elementwise ``KL(N(mu, sigma^2) || N(mu_r, sigma_r^2))`` on tensors."""
    return (ad.log(sigma_r) - ad.log(sigma)
            + (ad.square(sigma) + ad.square(mu - mu_r)) / (ad.square(sigma_r) * 2.0) - 0.5)


class LatentOutputLayer:
    """Inference and prior nets for one latent site of width ``c``."""

    def __init__(self, name, width, inference=None, prior=None):
        self.name = name
        self.width = int(width)
        shape = (2 * self.width, self.width + 1)
        inference = identity_net(self.width) if inference is None else np.array(inference, float)
        prior = identity_net(self.width) if prior is None else np.array(prior, float)
        if inference.shape != shape or prior.shape != shape:
            raise ValueError(f"latent nets must have shape {shape}")
        self.inference = ad.Tensor(inference, requires_grad=True)
        self.prior = ad.Tensor(prior, requires_grad=True)

    def posterior(self, h):
        return gaussian_head(h, self.inference)

    def prior_params(self, h):
        return gaussian_head(h, self.prior)

    def __call__(self, h, fw, mask=None):
        """Latent replacement for ``h``; records the masked KL summed over positions."""
        mu, sigma = self.posterior(h)
        mu_r, sigma_r = self.prior_params(h)
        kl = ad.sum_(gaussian_kl(mu, sigma, mu_r, sigma_r), axis=-1)
        if mask is not None:
            kl = kl * np.asarray(mask, dtype=np.float64)
        fw.latent_kl.append(ad.sum_(kl))
        if not fw.sample:
            return mu
        return mu + sigma * fw.noise(self.name, mu.shape)

    def parameters(self):
        return {"inference": self.inference, "prior": self.prior}

    def arrays(self):
        return {"inference": self.inference.value, "prior": self.prior.value}

    def load_arrays(self, arrays):
        self.inference.value[...] = arrays["inference"]
        self.prior.value[...] = arrays["prior"]

    def free_parameters(self):
        return self.inference.size + self.prior.size

    def descriptor(self):
        return {"width": self.width}


def latent_posterior(layer, h):
    """``(mu_t, sigma_t)`` from the inference net, as arrays."""
    mu, s = layer.posterior(ad.constant(h))
    return mu.value, s.value


def latent_prior(layer, h):
    """``(mu_r_t, sigma_r_t)`` from the prior net, as arrays."""
    mu, s = layer.prior_params(ad.constant(h))
    return mu.value, s.value


@dataclass(frozen=True)
class LatentSite:
    model_kind: str
    layer: int

    def __post_init__(self):
        if self.model_kind not in LATENT_SITES:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.layer < 1:
            raise ValueError(f"layer index must be >= 1, got {self.layer}")

    @property
    def name(self):
        return f"l{self.layer}.{LATENT_SITES[self.model_kind]}"

    @classmethod
    def parse(cls, model_kind, text):
        head, _, site = text.partition(".")
        if not head.startswith("l") or not head[1:].isdigit() or site != LATENT_SITES.get(model_kind):
            raise ValueError(f"cannot parse latent site {text!r}; expected "
                             f"'l<layer>.{LATENT_SITES.get(model_kind, '?')}'")
        return cls(model_kind, int(head[1:]))


def _site_width(model):
    cfg = model.config
    return cfg.hidden_dim if model.kind == "lstm" else cfg.model_dim


def add_latent_layers(model, sites, spread=DEFAULT_SPREAD, spread_bias=None):
    """Copy of ``model`` with a latent layer at each site (identity-mean nets, equal q and p)."""
    out = model.copy()
    width = _site_width(model)
    for site in sites:
        if site.model_kind != model.kind:
            raise ValueError(f"latent site {site} does not match a {model.kind} model")
        if site.layer > model.config.num_layers:
            raise ValueError(f"latent site {site.name} exceeds {model.config.num_layers} layers")
        if site.name in out.latents:
            raise ValueError(f"latent site {site.name} given twice")
        net = identity_net(width, spread, spread_bias)
        out.latents[site.name] = LatentOutputLayer(site.name, width, net, net.copy())
    return out


def vlm_loss(model, batch, rng, kl_scale=1.0, dropout=0.0):
    """``-sum_t log P(w_t | z_t) + kl_scale * sum_t KL[q(z_t) || p(z_t)]`` with one draw per step."""
    return elbo_loss(model, batch, rng, 1, 1.0, latent_kl_scale=kl_scale, dropout=dropout)


def vlm_eval_logprobs(model, batch):
    """Per-token log-probs with every ``z_t`` set to its posterior mean."""
    return model.token_logprobs(batch, ForwardPass.evaluation())
