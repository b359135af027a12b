"""Activation functions learned as Bayesian mixtures of fixed basis activations.

At a GP site node ``d`` outputs ``sum_j lambda[j, d] * phi_j(pre_d)`` where the
``phi_j`` run over :data:`BASIS` and ``pre = W [x, 1]`` (or the raw input for
the weightless h-gate).  ``lambda`` always has a Gaussian posterior; ``W``
has one too unless it is left as a point estimate.
"""

from dataclasses import dataclass

import numpy as np

from .bayes import DEFAULT_PRIOR_SIGMA, INIT_SIGMA_RATIO, GaussianVariational
from .core import autograd as ad
from .nnlm.sites import ACTIVATIONS, Activation, ForwardPass, Gate, PointWeight, Site
from .nnlm.train import elbo_loss

BASIS = ("sigmoid", "tanh", "relu", "gelu")

GP_SITES = {
    "lstm": ("input-gate", "forget-gate", "cell-input", "output-gate", "h-gate"),
    "transformer": ("ffn-first-matrix",),
}


class BasisSet:
    """The ordered basis; the order is stored in checkpoints and checked on load."""

    kinds = BASIS

    def __len__(self):
        return len(self.kinds)

    def index(self, kind):
        return self.kinds.index(kind)

    def one_hot(self, kind, width):
        lam = np.zeros((len(self.kinds), width))
        lam[self.index(kind)] = 1.0
        return lam


def gp_mix(pre, lam):
    """``sum_j lam[j] * phi_j(pre)`` over the basis, broadcasting ``lam[j]`` over leading axes."""
    out = None
    for j, kind in enumerate(BASIS):
        term = ad.getitem(lam, j) * ACTIVATIONS[kind](pre)
        out = term if out is None else out + term
    return out


class GpActivation(Site):
    """GP site: optional weight source ``theta`` plus a ``(K, D)`` coefficient posterior."""

    def __init__(self, name, lam, theta=None, base_activation="tanh"):
        super().__init__(name)
        if lam.shape[0] != len(BASIS):
            raise ValueError(f"lambda must have {len(BASIS)} rows, got shape {lam.shape}")
        if theta is not None and theta.shape[0] != lam.shape[1]:
            raise ValueError(f"lambda width {lam.shape[1]} does not match weight rows "
                             f"{theta.shape[0]}")
        self.lam = lam
        self.theta = theta
        self.base_activation = base_activation

    @property
    def role(self):
        return "activation" if self.theta is None else "gate"

    @property
    def variant(self):
        return "gp"

    @property
    def width(self):
        return self.lam.shape[1]

    def sources(self):
        out = {}
        if self.theta is not None:
            out["theta"] = self.theta
        out["lambda"] = self.lam
        return out

    def __call__(self, x, fw):
        pre = x if self.theta is None else ad.affine(x, self.theta.resolve(fw, self.name))
        return gp_mix(pre, self.lam.resolve(fw, self.name + ".lambda"))

    def descriptor(self):
        return {"role": self.role, "variant": "gp", "basis": list(BASIS),
                "base_activation": self.base_activation, "width": self.width,
                "theta": None if self.theta is None else self.theta.kind}


def gp_activation_forward(x, gp, rng=None, mode="eval"):
    """Output of a GP site for input ``x``; ``mode="train"`` draws one sample of lambda and theta."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    fw = ForwardPass(sample=True, rng=rng) if mode == "train" else ForwardPass.evaluation()
    return gp(ad.constant(x), fw)


@dataclass(frozen=True)
class GpPosition:
    model_kind: str
    layer: int
    site: str

    def __post_init__(self):
        valid = GP_SITES.get(self.model_kind)
        if valid is None:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.site not in valid:
            raise ValueError(f"GP site {self.site!r} is not valid for {self.model_kind}; "
                             f"expected one of {valid}")
        if self.layer < 1:
            raise ValueError(f"layer index must be >= 1, got {self.layer}")

    def site_names(self):
        if self.site == "ffn-first-matrix":
            return [f"l{self.layer}.ffn1"]
        return [f"l{self.layer}.{self.site}"]

    @property
    def label(self):
        return f"l{self.layer}.{self.site}"

    @classmethod
    def parse(cls, model_kind, text):
        head, _, site = text.partition(".")
        if not head.startswith("l") or not head[1:].isdigit() or not site:
            raise ValueError(f"cannot parse GP position {text!r}; expected 'l<layer>.<site>'")
        return cls(model_kind, int(head[1:]), site)


def gp_site(site, prior_sigma, lambda_prior_sigma=1.0, init_ratio=INIT_SIGMA_RATIO,
            bayes_theta=True):
    """GP replacement for a point gate or activation site.

    The coefficient prior is one-hot on the site's own activation, so the
    prior mean reproduces the original site exactly.
    """
    if isinstance(site, Gate):
        base, width = site.activation, site.source.shape[0]
        w = site.source.mean.copy()
        theta = (GaussianVariational.from_prior(w, prior_sigma, init_ratio) if bayes_theta
                 else PointWeight(w))
    elif isinstance(site, Activation):
        base, width, theta = site.activation, site.width, None
    else:
        raise TypeError(f"site {site.name!r} cannot become a GP site")
    if base not in BASIS:
        raise ValueError(f"activation {base!r} of {site.name!r} is not in the basis {BASIS}")
    lam = GaussianVariational.from_prior(BasisSet().one_hot(base, width), lambda_prior_sigma,
                                         init_ratio)
    return GpActivation(site.name, lam, theta, base)


def make_gp(model, positions, prior_sigma=None, lambda_prior_sigma=1.0,
            init_ratio=INIT_SIGMA_RATIO, bayes_theta=True):
    """Copy of ``model`` with GP activations at ``positions``."""
    prior_sigma = DEFAULT_PRIOR_SIGMA[model.kind] if prior_sigma is None else prior_sigma
    out = model.copy()
    for pos in positions:
        if pos.model_kind != model.kind:
            raise ValueError(f"position {pos} does not match a {model.kind} model")
        for name in pos.site_names():
            out.replace_site(name, gp_site(out.sites[name], prior_sigma, lambda_prior_sigma,
                                           init_ratio, bayes_theta))
    return out


def gp_elbo_loss(model, batch, config, rng, dropout=0.0):
    """Negative bound with both weight and coefficient KL terms, scaled by ``config.kl_scale``."""
    return elbo_loss(model, batch, rng, config.num_samples, config.kl_scale, dropout=dropout)
