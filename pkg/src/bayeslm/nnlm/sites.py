"""Weight sources, sites and the per-batch forward context.

A *site* is a replaceable piece of a model: a gate (affine map followed by an
activation), a weightless activation, or the embedding table.  Each site
draws its weights from a *source*: :class:`PointWeight` for a point estimate,
or a Gaussian variational posterior (see :mod:`bayeslm.bayes`).  Swapping the
source is how positions become Bayesian without touching model code.
"""

import numpy as np

from ..core import autograd as ad

ACTIVATIONS = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "relu": ad.relu,
    "gelu": ad.gelu,
    "identity": lambda x: x,
}


class ForwardPass:
    """State for one forward pass over one batch.

    ``sample`` selects Monte Carlo draws at variational sites (otherwise the
    posterior means are used).  Resolved weights are cached per site so one
    draw is shared across all time steps of the batch.
    """

    def __init__(self, sample=False, rng=None, dropout=0.0):
        if (sample or dropout > 0.0) and rng is None:
            raise ValueError("sampling or dropout needs an RngStream")
        self.sample = sample
        self.rng = rng
        self.dropout_rate = dropout
        self.cache = {}
        self.latent_kl = []

    @classmethod
    def evaluation(cls):
        return cls(sample=False, rng=None, dropout=0.0)

    def noise(self, key, shape):
        return self.rng.child(key).normal(shape)

    def dropout(self, x):
        if self.dropout_rate <= 0.0:
            return x
        mask = self.rng.child("dropout").dropout_mask(x.shape, self.dropout_rate)
        return ad.dropout(x, mask)


class PointWeight:
    """A point-estimated weight matrix."""

    kind = "point"

    def __init__(self, value):
        self.weight = ad.Tensor(value, requires_grad=True)

    @property
    def shape(self):
        return self.weight.shape

    @property
    def mean(self):
        return self.weight.value

    def resolve(self, fw, key):
        return self.weight

    def parameters(self):
        return {"weight": self.weight}

    def arrays(self):
        return {"weight": self.weight.value}

    def load_arrays(self, arrays):
        self.weight.value[...] = arrays["weight"]

    def kl(self):
        return None

    def free_parameters(self):
        return self.weight.size


class Site:
    """Base class; subclasses set ``role`` and implement ``__call__``."""

    role = None

    def __init__(self, name):
        self.name = name

    def sources(self):
        return {}

    @property
    def variant(self):
        kinds = {s.kind for s in self.sources().values()}
        return "bayes" if "gaussian" in kinds else "point"

    def parameters(self):
        out = {}
        for prefix, src in self.sources().items():
            for k, t in src.parameters().items():
                out[f"{prefix}.{k}" if prefix else k] = t
        return out

    def arrays(self):
        out = {}
        for prefix, src in self.sources().items():
            for k, a in src.arrays().items():
                out[f"{prefix}.{k}" if prefix else k] = a
        return out

    def load_arrays(self, arrays):
        for prefix, src in self.sources().items():
            pre = f"{prefix}." if prefix else ""
            src.load_arrays({k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)})

    def kl(self):
        """Sum of closed-form KL terms of all variational sources (``None`` if none)."""
        terms = [t for t in (s.kl() for s in self.sources().values()) if t is not None]
        if not terms:
            return None
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    def free_parameters(self):
        return sum(s.free_parameters() for s in self.sources().values())

    def descriptor(self):
        return {"role": self.role, "variant": self.variant}


class Gate(Site):
    """``activation(W [x, 1])`` with ``W`` taken from a point or variational source."""

    role = "gate"

    def __init__(self, name, source, activation):
        super().__init__(name)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.source = source
        self.activation = activation

    def sources(self):
        return {"": self.source}

    @property
    def weight_shape(self):
        return self.source.shape

    def __call__(self, x, fw):
        w = self.source.resolve(fw, self.name)
        return ACTIVATIONS[self.activation](ad.affine(x, w))

    def descriptor(self):
        return {**super().descriptor(), "activation": self.activation}


class Activation(Site):
    """A weightless activation site (the LSTM ``tanh(c_t)`` h-gate)."""

    role = "activation"

    def __init__(self, name, activation, width):
        super().__init__(name)
        self.activation = activation
        self.width = width

    def __call__(self, x, fw):
        return ACTIVATIONS[self.activation](x)

    def descriptor(self):
        return {**super().descriptor(), "activation": self.activation, "width": self.width}


class Embedding(Site):
    """Embedding table of shape ``(dim, vocab)``; a lookup picks columns."""

    role = "embedding"

    def __init__(self, name, source):
        super().__init__(name)
        self.source = source

    def sources(self):
        return {"": self.source}

    @property
    def weight_shape(self):
        return self.source.shape

    def __call__(self, ids, fw):
        return ad.embedding(self.source.resolve(fw, self.name), ids)


def uniform_init(rng, shape, scale):
    return rng.uniform(-scale, scale, shape)


def sinusoidal_positions(length, dim):
    pos = np.arange(length)[:, None]
    rate = np.exp(-np.log(10000.0) * np.arange(0, dim, 2) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate)[:, : dim // 2]
    return pe
