"""Losses, regularizers and the epoch loop with learning-rate halving."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import autograd as ad
from ..core.optim import NumericalError, sgd_step
from .sites import ForwardPass

log = logging.getLogger(__name__)

REGULARIZERS = ("none", "l1", "l2", "map")


@dataclass
class RegularizerSpec:
    kind: str = "none"
    strength: float = 0.0
    reference: dict | None = None  # name -> array, MAP only

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in REGULARIZERS:
            raise ValueError(f"regularizer kind must be one of {REGULARIZERS}, got {self.kind!r}")
        if self.strength < 0:
            raise ValueError(f"regularizer strength must be >= 0, got {self.strength}")
        if self.kind == "map" and self.reference is None:
            raise ValueError("MAP regularization needs a reference parameter set")

    def penalty(self, params):
        """Penalty tensor over ``params`` (name -> Tensor), or ``None`` when inactive."""
        if self.kind == "none" or self.strength == 0.0:
            return None
        terms = []
        for name, p in params.items():
            if self.kind == "l1":
                terms.append(ad.sum_(ad.abs_(p)))
            elif self.kind == "l2":
                terms.append(ad.sum_(ad.square(p)))
            elif name in self.reference:
                terms.append(ad.sum_(ad.square(p - self.reference[name])))
        if not terms:
            return None
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total * self.strength


def elbo_loss(model, batch, rng, num_samples=1, kl_scale=1.0, latent_kl_scale=1.0, dropout=0.0):
    """Monte Carlo negative lower bound for any mix of point, variational and latent sites.

    ``(1/K) sum_k [nll_k + latent_kl_scale * latent KL_k] + kl_scale * parameter KL``.
    Sample ``k`` draws from ``rng.child("sample-k")``.  With no variational or
    latent sites this is exactly the summed cross-entropy.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    total = None
    for k in range(num_samples):
        fw = ForwardPass(sample=True, rng=rng.child(f"sample-{k}"), dropout=dropout)
        term = model.nll(batch, fw)
        for kl in fw.latent_kl:
            term = term + kl * latent_kl_scale
        total = term if total is None else total + term
    loss = total if num_samples == 1 else total * (1.0 / num_samples)
    pkl = model.param_kl()
    if pkl is not None:
        loss = loss + pkl * kl_scale
    return loss


def corpus_logprob(model, batches):
    """``(sum of natural-log target probabilities, number of predicted tokens)``."""
    total, count = 0.0, 0
    for b in batches:
        total += float(model.token_logprobs(b).sum())
        count += b.num_tokens
    return total, count


def batch_perplexity(model, batches):
    total, count = corpus_logprob(model, batches)
    if not count or -total / count > 700.0:
        return math.inf
    return math.exp(-total / count)


@dataclass
class TrainConfig:
    epochs: int = 30
    num_samples: int = 1
    kl_scale: float | None = None  # None: 1 / number of training batches
    latent_kl_scale: float = 1.0
    dropout: float = 0.0
    shuffle: bool = True
    keep_best: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.kl_scale is not None and not self.kl_scale > 0:
            raise ValueError("kl_scale must be positive")


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float  # per predicted token, regularizer and KL included
    dev_ppl: float
    halved: bool
    seconds: float


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_dev_ppl: float = math.inf


def train(model, train_batches, state, regularizer, dev_batches, config, rng, on_epoch=None):
    """Mini-batch SGD; halves the learning rate when dev perplexity stops improving.

    Stops after ``config.epochs`` or once the learning rate drops below
    ``state.lr_floor``.  With ``keep_best`` the parameters with the lowest
    dev perplexity are restored at the end.  A non-finite loss raises
    :class:`NumericalError`.
    """
    if not train_batches:
        raise ValueError("no training batches")
    kl_scale = config.kl_scale if config.kl_scale is not None else 1.0 / len(train_batches)
    params = model.parameters()
    plist = list(params.values())
    best = batch_perplexity(model, dev_batches)
    best_arrays = {k: p.value.copy() for k, p in params.items()}
    stall = 0
    result = TrainResult(model, [], best)
    log.info("initial dev ppl %.3f", best)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        erng = rng.fork(epoch)
        order = (erng.child("order").permutation(len(train_batches)) if config.shuffle
                 else np.arange(len(train_batches)))
        loss_sum, tokens = 0.0, 0
        for step, bi in enumerate(order):
            batch = train_batches[bi]
            with ad.Tape():
                loss = elbo_loss(model, batch, erng.fork(step), config.num_samples, kl_scale,
                                 config.latent_kl_scale, config.dropout)
                pen = regularizer.penalty(params)
                if pen is not None:
                    loss = loss + pen
                value = float(loss.value)
                if not math.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss {value} at epoch {epoch}, batch {int(bi)} "
                        f"(lr={state.lr:g}, tokens={batch.num_tokens})")
                ad.backward(loss)
            sgd_step(plist, state)
            loss_sum += value
            tokens += batch.num_tokens
        dev = batch_perplexity(model, dev_batches)
        if not math.isfinite(dev):
            raise NumericalError(f"dev perplexity became {dev} at epoch {epoch}")
        halved = False
        if dev < best:
            best, stall = dev, 0
            best_arrays = {k: p.value.copy() for k, p in params.items()}
        else:
            stall += 1
            if stall >= state.halving_patience:
                state.halve()
                halved, stall = True, 0
        entry = EpochLog(epoch, state.lr if not halved else state.lr * 2, loss_sum / tokens, dev,
                         halved, time.perf_counter() - start)
        result.history.append(entry)
        log.info("epoch %d lr %.4g train %.4f dev ppl %.3f%s", epoch, entry.lr, entry.train_loss,
                 dev, " (halved)" if halved else "")
        if on_epoch is not None:
            on_epoch(entry)
        if state.exhausted:
            break
    if config.keep_best:
        for k, p in params.items():
            p.value[...] = best_arrays[k]
    result.best_dev_ppl = best
    return result
