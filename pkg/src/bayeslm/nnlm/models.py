"""LSTM and Transformer language models built from replaceable sites."""

import copy
from dataclasses import asdict, dataclass

import numpy as np

from ..core import autograd as ad
from ..core.rng import RngStream
from .sites import (Activation, Embedding, ForwardPass, Gate, PointWeight,
                    sinusoidal_positions)

LSTM_GATES = ("input-gate", "forget-gate", "cell-input", "output-gate")
_GATE_ACT = {"input-gate": "sigmoid", "forget-gate": "sigmoid",
             "cell-input": "tanh", "output-gate": "sigmoid"}


@dataclass
class LstmConfig:
    num_layers: int = 2
    embed_dim: int = 64
    hidden_dim: int = 128
    dropout: float = 0.2
    init_range: float = 0.1

    def __post_init__(self):
        _check_dims(self, ("num_layers", "embed_dim", "hidden_dim"))


@dataclass
class TransformerConfig:
    num_layers: int = 2
    model_dim: int = 64
    ffn_dim: int = 256
    heads: int = 1
    dropout: float = 0.2
    init_range: float = 0.1

    def __post_init__(self):
        _check_dims(self, ("num_layers", "model_dim", "ffn_dim"))
        if self.heads != 1:
            raise ValueError("only single-head attention is supported (heads must be 1)")


def _check_dims(cfg, names):
    for n in names:
        if int(getattr(cfg, n)) < 1:
            raise ValueError(f"{n} must be >= 1, got {getattr(cfg, n)}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {cfg.dropout}")


class LanguageModel:
    """Shared plumbing: parameter bookkeeping, losses and evaluation."""

    kind = None

    def __init__(self, config, vocab_size):
        self.config = config
        self.vocab_size = int(vocab_size)
        self.sites = {}
        self.params = {}
        self.latents = {}

    # -- bookkeeping -----------------------------------------------------------

    def parameters(self):
        """All trainable leaf tensors keyed by a stable dotted name."""
        out = {}
        for name, site in self.sites.items():
            for k, t in site.parameters().items():
                out[f"{name}.{k}"] = t
        out.update(self.params)
        for name, layer in self.latents.items():
            for k, t in layer.parameters().items():
                out[f"{name}.{k}"] = t
        return out

    def arrays(self):
        """Every stored array (trainable or not), as used by checkpoints."""
        out = {}
        for name, site in self.sites.items():
            for k, a in site.arrays().items():
                out[f"{name}.{k}"] = a
        out.update({k: t.value for k, t in self.params.items()})
        for name, layer in self.latents.items():
            for k, a in layer.arrays().items():
                out[f"{name}.{k}"] = a
        return out

    def load_arrays(self, arrays):
        for name, site in self.sites.items():
            pre = name + "."
            site.load_arrays({k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)})
        for k, t in self.params.items():
            t.value[...] = arrays[k]
        for name, layer in self.latents.items():
            pre = name + "."
            layer.load_arrays({k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)})

    def free_parameters(self):
        return (sum(s.free_parameters() for s in self.sites.values())
                + sum(t.size for t in self.params.values())
                + sum(l.free_parameters() for l in self.latents.values()))

    def param_kl(self):
        """Closed-form KL summed over all variational sites, or ``None``."""
        total = None
        for site in self.sites.values():
            kl = site.kl()
            if kl is not None:
                total = kl if total is None else total + kl
        return total

    def variational_sites(self):
        return [n for n, s in self.sites.items() if s.variant != "point"]

    def replace_site(self, name, site):
        if name not in self.sites:
            raise KeyError(f"no site named {name!r}; known: {sorted(self.sites)}")
        self.sites[name] = site

    def copy(self):
        return copy.deepcopy(self)

    def config_dict(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, **asdict(self.config)}

    # -- forward / losses -----------------------------------------------------

    def forward(self, inputs, fw, mask=None):
        raise NotImplementedError

    def nll(self, batch, fw):
        """Summed negative log-likelihood of the batch targets (masked)."""
        logits = self.forward(batch.inputs, fw, batch.mask)
        return ad.cross_entropy(logits, batch.targets, batch.mask)

    def token_logprobs(self, batch, fw=None):
        """Natural-log probability of each target; padding positions hold 0."""
        fw = fw or ForwardPass.evaluation()
        logits = self.forward(batch.inputs, fw, batch.mask).value
        logp = logits - logits.max(axis=-1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, batch.targets[..., None], axis=-1)[..., 0]
        return np.where(batch.mask > 0, picked, 0.0)

    def next_logprobs(self, ids):
        """Log-distribution over the next token after the id prefix ``ids``."""
        inputs = np.asarray(ids, dtype=np.int64)[None, :]
        logits = self.forward(inputs, ForwardPass.evaluation(), np.ones(inputs.shape)).value[0, -1]
        z = logits - logits.max()
        return z - np.log(np.exp(z).sum())

    def _weight(self, rng, shape):
        r = self.config.init_range
        return rng.uniform(-r, r, shape)


class LstmLM(LanguageModel):
    """Stacked LSTM LM; each gate, the h-gate and the embedding are sites."""

    kind = "lstm"

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(config, vocab_size)
        rng = RngStream(seed).child("init")
        m, d, n = config.embed_dim, config.hidden_dim, self.vocab_size
        self.sites["embedding"] = Embedding("embedding", PointWeight(self._weight(rng, (m, n))))
        for layer in range(1, config.num_layers + 1):
            width = (m if layer == 1 else d) + d
            for gate in LSTM_GATES:
                name = f"l{layer}.{gate}"
                self.sites[name] = Gate(name, PointWeight(self._weight(rng, (d, width + 1))),
                                        _GATE_ACT[gate])
            name = f"l{layer}.h-gate"
            self.sites[name] = Activation(name, "tanh", d)
        self.params["output.weight"] = ad.Tensor(self._weight(rng, (n, d)), requires_grad=True)

    def cell_step(self, layer, x, h, c, fw):
        """One LSTM step for ``layer``; returns ``(h_t, c_t)``."""
        xh = ad.concat([x, h], axis=-1)
        s = self.sites
        i = s[f"l{layer}.input-gate"](xh, fw)
        f = s[f"l{layer}.forget-gate"](xh, fw)
        g = s[f"l{layer}.cell-input"](xh, fw)
        o = s[f"l{layer}.output-gate"](xh, fw)
        c = f * c + i * g
        h = o * s[f"l{layer}.h-gate"](c, fw)
        return h, c

    def forward(self, inputs, fw, mask=None):
        inputs = np.asarray(inputs)
        batch, steps = inputs.shape
        if mask is None:
            mask = np.ones(inputs.shape)
        d = self.config.hidden_dim
        x = fw.dropout(self.sites["embedding"](inputs, fw))
        seq = [ad.getitem(x, (slice(None), t)) for t in range(steps)]
        for layer in range(1, self.config.num_layers + 1):
            latent = self.latents.get(f"l{layer}.hidden-output")
            h = c = ad.constant(np.zeros((batch, d)))
            outs = []
            for t in range(steps):
                h, c = self.cell_step(layer, seq[t], h, c, fw)
                # the recurrence keeps the deterministic h; z_t only feeds upward
                out = h if latent is None else latent(h, fw, mask[:, t])
                outs.append(fw.dropout(out))
            seq = outs
        top = ad.stack(seq, axis=1)
        return ad.matmul(top, ad.transpose(self.params["output.weight"]))


class TransformerLM(LanguageModel):
    """Single-head causal Transformer LM with post-norm residual blocks."""

    kind = "transformer"

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(config, vocab_size)
        rng = RngStream(seed).child("init")
        m, d, n = config.model_dim, config.ffn_dim, self.vocab_size
        self.sites["embedding"] = Embedding("embedding", PointWeight(self._weight(rng, (m, n))))
        for layer in range(1, config.num_layers + 1):
            for proj in ("q", "k", "v", "h"):
                name = f"l{layer}.attn-{proj}"
                self.sites[name] = Gate(name, PointWeight(self._weight(rng, (m, m + 1))),
                                        "identity")
            name = f"l{layer}.ffn1"
            self.sites[name] = Gate(name, PointWeight(self._weight(rng, (d, m + 1))), "gelu")
            p = self.params
            p[f"l{layer}.ffn2.weight"] = ad.Tensor(self._weight(rng, (m, d + 1)), requires_grad=True)
            for ln in ("ln1", "ln2"):
                p[f"l{layer}.{ln}.gain"] = ad.Tensor(np.ones(m), requires_grad=True)
                p[f"l{layer}.{ln}.bias"] = ad.Tensor(np.zeros(m), requires_grad=True)
        self.params["output.weight"] = ad.Tensor(self._weight(rng, (n, m)), requires_grad=True)

    def attention(self, layer, x, fw):
        """Causal single-head attention output ``y`` (before the output projection)."""
        s = self.sites
        q = s[f"l{layer}.attn-q"](x, fw)
        k = s[f"l{layer}.attn-k"](x, fw)
        v = s[f"l{layer}.attn-v"](x, fw)
        steps = x.shape[-2]
        causal = np.triu(np.full((steps, steps), -np.inf), k=1)
        scores = ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(self.config.model_dim)) + causal
        return ad.matmul(ad.softmax(scores), v)

    def block(self, layer, x, fw, mask):
        p, s = self.params, self.sites
        y = self.attention(layer, x, fw)
        o = x + fw.dropout(s[f"l{layer}.attn-h"](y, fw))
        z = ad.layer_norm(o, p[f"l{layer}.ln1.gain"], p[f"l{layer}.ln1.bias"])
        f = s[f"l{layer}.ffn1"](z, fw)
        out = z + fw.dropout(ad.affine(f, p[f"l{layer}.ffn2.weight"]))
        latent = self.latents.get(f"l{layer}.ffn-output")
        if latent is not None:
            out = latent(out, fw, mask)
        return ad.layer_norm(out, p[f"l{layer}.ln2.gain"], p[f"l{layer}.ln2.bias"])

    def forward(self, inputs, fw, mask=None):
        inputs = np.asarray(inputs)
        if mask is None:
            mask = np.ones(inputs.shape)
        m = self.config.model_dim
        x = self.sites["embedding"](inputs, fw) + sinusoidal_positions(inputs.shape[1], m)
        x = fw.dropout(x)
        for layer in range(1, self.config.num_layers + 1):
            x = self.block(layer, x, fw, mask)
        return ad.matmul(x, ad.transpose(self.params["output.weight"]))


MODEL_CLASSES = {"lstm": (LstmLM, LstmConfig), "transformer": (TransformerLM, TransformerConfig)}


def build_model(kind, vocab_size, seed=0, **config):
    try:
        cls, cfg_cls = MODEL_CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_CLASSES)}") \
            from None
    return cls(cfg_cls(**config), vocab_size, seed=seed)
