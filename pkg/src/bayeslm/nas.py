"""Super-network search over where to put Bayesian (or GP) sites.

Each candidate location holds a point branch and a variational branch whose
outputs are mixed by ``softmax(a_point, a_bayes)``.  Architecture logits and
all branch weights are trained together on the same objective; selections
are then read off the gates.
"""

import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bayes import (DEFAULT_PRIOR_SIGMA, INIT_SIGMA_RATIO, BayesPosition, GaussianVariational,
                    bayesian_site)
from .core import autograd as ad
from .core.optim import NumericalError, sgd_step
from .gp import GpActivation, GpPosition, gp_site
from .nnlm.models import LSTM_GATES
from .nnlm.sites import ForwardPass, Site
from .nnlm.train import RegularizerSpec, elbo_loss, train

EXHAUSTIVE_LIMIT = 20


def _softmax2(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


class MixedSite(Site):
    """``g_point * point(x) + g_bayes * bayes(x)`` with gates from two logits."""

    def __init__(self, name, point, bayes, logits=(0.0, 0.0)):
        super().__init__(name)
        if point.role != bayes.role:
            raise ValueError(f"branch roles differ at {name!r}: {point.role} vs {bayes.role}")
        self.point = point
        self.bayes = bayes
        self.arch = ad.Tensor(np.array(logits, dtype=np.float64), requires_grad=True)
        self.hard = None  # None, or exact (g_point, g_bayes) to use instead of the softmax

    @property
    def role(self):
        return self.point.role

    @property
    def variant(self):
        return "mixed"

    def sources(self):
        return {"point": self.point, "bayes": self.bayes}

    def gates(self):
        """Current ``(g_point, g_bayes)`` as floats."""
        if self.hard is not None:
            return tuple(float(g) for g in self.hard)
        return tuple(float(g) for g in _softmax2(self.arch.value))

    def __call__(self, x, fw):
        g = ad.constant(np.array(self.hard, dtype=np.float64)) if self.hard is not None \
            else ad.softmax(self.arch)
        return ad.getitem(g, 0) * self.point(x, fw) + ad.getitem(g, 1) * self.bayes(x, fw)

    def parameters(self):
        return {**super().parameters(), "arch": self.arch}

    def arrays(self):
        return {**super().arrays(), "arch": self.arch.value}

    def load_arrays(self, arrays):
        super().load_arrays(arrays)
        self.arch.value[...] = arrays["arch"]

    def free_parameters(self):
        return super().free_parameters() + self.arch.size

    def descriptor(self):
        return {"role": self.role, "variant": "mixed", "point": self.point.descriptor(),
                "bayes": self.bayes.descriptor()}


def search_space(model_kind, num_layers, variant="bayes"):
    """Default candidate locations: LSTM gates (or GP sites) per layer, Transformer FFN per layer."""
    layers = range(1, num_layers + 1)
    if variant == "bayes":
        if model_kind == "lstm":
            return [BayesPosition("lstm", l, s) for l in layers for s in LSTM_GATES]
        return [BayesPosition("transformer", l, "ffn-first-matrix") for l in layers]
    if variant == "gp":
        if model_kind == "lstm":
            return [GpPosition("lstm", l, s) for l in layers
                    for s in ("cell-input", "output-gate", "h-gate")]
        return [GpPosition("transformer", l, "ffn-first-matrix") for l in layers]
    raise ValueError(f"unknown search variant {variant!r}; expected 'bayes' or 'gp'")


class SuperNet:
    """A model whose candidate sites are :class:`MixedSite` pairs."""

    def __init__(self, model, locations, prior_sigma=None, init_ratio=INIT_SIGMA_RATIO):
        prior_sigma = DEFAULT_PRIOR_SIGMA[model.kind] if prior_sigma is None else prior_sigma
        self.model = model.copy()
        self.locations = list(locations)
        self.site_names = []
        for loc in self.locations:
            names = loc.site_names()
            if len(names) != 1:
                raise ValueError(f"location {loc.label} spans {len(names)} sites; "
                                 "search locations must be single sites")
            name = names[0]
            if name in self.site_names:
                raise ValueError(f"location {loc.label} listed twice")
            base = self.model.sites[name]
            if isinstance(loc, GpPosition):
                branch = gp_site(base, prior_sigma, init_ratio=init_ratio)
            else:
                branch = bayesian_site(base, prior_sigma, init_ratio)
            self.model.replace_site(name, MixedSite(name, base, branch))
            self.site_names.append(name)

    @property
    def labels(self):
        return [loc.label for loc in self.locations]

    def mixed_sites(self):
        return [self.model.sites[n] for n in self.site_names]

    def gates(self):
        """``(L, 2)`` array of ``(g_point, g_bayes)`` rows in location order."""
        return np.array([s.gates() for s in self.mixed_sites()])

    def logits(self):
        return np.array([s.arch.value for s in self.mixed_sites()])

    def set_hard_gates(self, bayes):
        """Force exact ``{0, 1}`` gates (``None`` restores the softmax)."""
        if bayes is None:
            for s in self.mixed_sites():
                s.hard = None
            return
        if len(bayes) != len(self.locations):
            raise ValueError(f"expected {len(self.locations)} choices, got {len(bayes)}")
        for s, b in zip(self.mixed_sites(), bayes):
            s.hard = (0.0, 1.0) if b else (1.0, 0.0)

    def arch_parameters(self):
        return {f"{n}.arch": s.arch for n, s in zip(self.site_names, self.mixed_sites())}

    def loss(self, batch, rng, kl_scale=1.0, dropout=0.0):
        return elbo_loss(self.model, batch, rng, 1, kl_scale, dropout=dropout)


def supernet_forward(batch, supernet, rng):
    """Per-token log-probs of one sampled pass (variational branches draw once per batch)."""
    return supernet.model.token_logprobs(batch, ForwardPass(sample=True, rng=rng))


def supernet_step(supernet, batch, state, rng, kl_scale=1.0, params=None, dropout=0.0):
    """One joint SGD step on weights and logits; returns the loss value.

    ``params`` restricts the update (parameters left out stay frozen).
    """
    every = supernet.model.parameters()
    params = every if params is None else params
    with ad.Tape():
        loss = supernet.loss(batch, rng, kl_scale, dropout)
        value = float(loss.value)
        if not math.isfinite(value):
            raise NumericalError(f"super-network loss became {value}")
        ad.backward(loss)
    sgd_step(list(params.values()), state)
    for p in every.values():
        p.zero_grad()
    return value


def train_supernet(supernet, train_batches, state, rng, dev_batches, config):
    """Single-level joint training through the standard epoch loop."""
    return train(supernet.model, train_batches, state, RegularizerSpec(), dev_batches, config, rng)


@dataclass(frozen=True)
class ArchSelection:
    bayes: tuple
    score: float
    labels: tuple = ()

    @property
    def selected(self):
        return [l for l, b in zip(self.labels, self.bayes) if b]

    def key(self):
        return "".join("B" if b else "P" for b in self.bayes)


def selection_score(gates, bayes):
    """Product of the chosen gate values, multiplied in location order."""
    score = 1.0
    for (gp, gb), b in zip(gates, bayes):
        score *= gb if b else gp
    return score


def rank_selections(gates, n):
    """Top ``n`` branch choices by product of gates.

    Ties are ordered by the choice vector compared lexicographically in
    location order with the point branch first.  Exhaustive for up to
    :data:`EXHAUSTIVE_LIMIT` locations, best-first search beyond that.
    """
    gates = np.asarray(gates, dtype=np.float64)
    num = len(gates)
    n = min(int(n), 2 ** num)
    if n <= 0:
        return []
    if num <= EXHAUSTIVE_LIMIT:
        codes = np.arange(2 ** num)
        bits = (codes[:, None] >> np.arange(num - 1, -1, -1)[None, :]) & 1
        scores = np.ones(len(codes))
        for l in range(num):
            scores = scores * np.where(bits[:, l] == 1, gates[l, 1], gates[l, 0])
        keys = [bits[:, l] for l in range(num - 1, -1, -1)] + [-scores]
        order = np.lexsort(keys)[:n]
        return [(tuple(bool(b) for b in bits[i]), float(scores[i])) for i in order]
    return _best_first(gates, n)


def _best_first(gates, n):
    # k smallest subset sums of per-location flip costs, starting from the top-1 choice
    best = gates[:, 1] > gates[:, 0]
    with np.errstate(divide="ignore"):
        cost = np.abs(np.log(gates[:, 1]) - np.log(gates[:, 0]))
    order = np.argsort(cost, kind="stable")
    found = [tuple(bool(b) for b in best)]
    heap = [(cost[order[0]], (0,))]
    # collect a margin of extra candidates so ties at the cut are ordered consistently
    while heap and len(found) < n + 64:
        c, subset = heapq.heappop(heap)
        bits = best.copy()
        for i in subset:
            bits[order[i]] = not bits[order[i]]
        found.append(tuple(bool(b) for b in bits))
        last = subset[-1]
        if last + 1 < len(order):
            heapq.heappush(heap, (c + cost[order[last + 1]], subset + (last + 1,)))
            heapq.heappush(heap, (c - cost[order[last]] + cost[order[last + 1]],
                                  subset[:-1] + (last + 1,)))
    ranked = sorted(((selection_score(gates, b), b) for b in found), key=lambda t: (-t[0], t[1]))
    return [(b, s) for s, b in ranked[:n]]


def extract_topN(supernet, n):
    """Top ``n`` :class:`ArchSelection` values (fewer if ``n`` exceeds ``2**L``)."""
    labels = tuple(supernet.labels)
    return [ArchSelection(bits, score, labels) for bits, score in rank_selections(supernet.gates(), n)]


def instantiate_selection(supernet, selection, reset_prior=True):
    """Standalone model keeping the Bayesian branch where selected and the point branch elsewhere.

    Selected branches keep their trained posteriors.  With ``reset_prior`` the
    prior mean of each branch weight moves to the trained point-branch weight
    at the same location, so fine-tuning starts from a prior centred on the
    deterministic estimate.  Means, and so evaluation outputs, are unchanged.
    """
    bayes = selection.bayes if isinstance(selection, ArchSelection) else tuple(selection)
    if len(bayes) != len(supernet.locations):
        raise ValueError(f"selection has {len(bayes)} entries but the super-network has "
                         f"{len(supernet.locations)} locations")
    if isinstance(selection, ArchSelection) and selection.labels and \
            tuple(selection.labels) != tuple(supernet.labels):
        raise ValueError("selection locations do not match the super-network")
    out = supernet.model.copy()
    for name, b in zip(supernet.site_names, bayes):
        mixed = out.sites[name]
        if b and reset_prior:
            _reset_prior(mixed.point, mixed.bayes)
        out.replace_site(name, mixed.bayes if b else mixed.point)
    return out


def _reset_prior(point, branch):
    weight = getattr(point, "source", None)
    target = branch.theta if isinstance(branch, GpActivation) else getattr(branch, "source", None)
    if weight is not None and isinstance(target, GaussianVariational):
        target.prior_mu[...] = weight.mean


def report_arch_weights(supernet):
    """Rows ``(location, a_point, a_bayes, g_point, g_bayes)`` in location order."""
    rows = []
    for label, site in zip(supernet.labels, supernet.mixed_sites()):
        a_point, a_bayes = (float(a) for a in site.arch.value)
        g_point, g_bayes = (float(g) for g in _softmax2(site.arch.value))
        rows.append({"location": label, "a_point": a_point, "a_bayes": a_bayes,
                     "g_point": g_point, "g_bayes": g_bayes})
    return rows


def write_arch_report(rows, table_path, plot_path=None):
    """Tab-separated table, plus an index/location/gate file for external plotting."""
    cols = ("location", "a_point", "a_bayes", "g_point", "g_bayes")
    lines = ["\t".join(cols)]
    lines += ["\t".join([r["location"]] + [repr(r[c]) for c in cols[1:]]) for r in rows]
    Path(table_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if plot_path is not None:
        plot = ["# index\tlocation\tg_point\tg_bayes"]
        plot += [f"{i}\t{r['location']}\t{r['g_point']!r}\t{r['g_bayes']!r}"
                 for i, r in enumerate(rows)]
        Path(plot_path).write_text("\n".join(plot) + "\n", encoding="utf-8")


def write_selections(selections, path):
    lines = ["rank\tscore\tselection\tbayesian_locations"]
    for rank, sel in enumerate(selections, 1):
        lines.append(f"{rank}\t{sel.score!r}\t{sel.key()}\t{','.join(sel.selected) or '-'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

