"""Language-model scorers with a common interface, perplexity, and linear interpolation.

A scorer returns natural-log probabilities.  ``sentence_logprobs(words)``
gives one value per predicted token (``w1 .. wn </s>``); ``next_logprobs``
gives the full distribution over vocabulary ids after a word context.
"""

import logging
import math

import numpy as np

from ..corpus.ngram import ngram_logprob
from ..corpus.vocab import BOS, EOS, make_batch

log = logging.getLogger(__name__)

LN10 = math.log(10.0)


class Scorer:
    vocab = None

    def sentence_logprobs(self, words):
        raise NotImplementedError

    def next_logprobs(self, context):
        raise NotImplementedError

    def logprob(self, context, word):
        return float(self.next_logprobs(context)[self.vocab.id(word)])

    def corpus_logprobs(self, sentences):
        """One array of per-token log-probs per sentence."""
        return [self.sentence_logprobs(s) for s in sentences]


class NgramScorer(Scorer):
    """ARPA back-off model; words outside ``vocab`` are scored as ``<unk>``."""

    def __init__(self, model, vocab):
        self.model = model
        self.vocab = vocab

    def sentence_logprobs(self, words):
        seq = [BOS] + self.vocab.normalize(words) + [EOS]
        return np.array([ngram_logprob(self.model, tuple(seq[:i]), seq[i]) * LN10
                         for i in range(1, len(seq))])

    def logprob(self, context, word):
        ctx = tuple([BOS] + self.vocab.normalize(context))
        return ngram_logprob(self.model, ctx, self.vocab.normalize([word])[0]) * LN10

    def next_logprobs(self, context):
        ctx = tuple([BOS] + self.vocab.normalize(context))
        return np.array([ngram_logprob(self.model, ctx, t) * LN10 for t in self.vocab.tokens])


class NeuralScorer(Scorer):
    """Evaluation-mode neural LM (posterior means for any variational part)."""

    def __init__(self, model, vocab, batch_size=32):
        if model.vocab_size != len(vocab):
            raise ValueError(f"model vocabulary size {model.vocab_size} != {len(vocab)}")
        self.model = model
        self.vocab = vocab
        self.batch_size = batch_size

    def sentence_logprobs(self, words):
        batch = make_batch([self.vocab.encode(words)], self.vocab.eos_id)
        return self.model.token_logprobs(batch)[0, :batch.lengths[0]]

    def corpus_logprobs(self, sentences):
        out = []
        for i in range(0, len(sentences), self.batch_size):
            chunk = sentences[i:i + self.batch_size]
            batch = make_batch([self.vocab.encode(s) for s in chunk], self.vocab.eos_id)
            lp = self.model.token_logprobs(batch)
            out += [lp[j, :n] for j, n in enumerate(batch.lengths)]
        return out

    def next_logprobs(self, context):
        ids = [self.vocab.bos_id] + [self.vocab.id(w) for w in context]
        return self.model.next_logprobs(ids)


class UniformScorer(Scorer):
    def __init__(self, vocab):
        self.vocab = vocab

    def sentence_logprobs(self, words):
        return np.full(len(words) + 1, -math.log(len(self.vocab)))

    def next_logprobs(self, context):
        return np.full(len(self.vocab), -math.log(len(self.vocab)))


def _mix(logps, weights):
    """``log sum_c w_c exp(logps[c])`` along axis 0, skipping zero-weight components."""
    logps = np.asarray(logps, dtype=np.float64)
    keep = weights > 0
    logw = np.log(weights[keep]).reshape((-1,) + (1,) * (logps.ndim - 1))
    lp = logps[keep] + logw
    if lp.shape[0] == 1:
        return lp[0]
    top = lp.max(axis=0)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(lp - safe).sum(axis=0))


class InterpolationMixture(Scorer):
    """Linear mixture ``P(w | h) = sum_c lambda_c P_c(w | h)``; itself a scorer."""

    def __init__(self, components, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if len(components) != len(weights) or not components:
            raise ValueError("need one weight per component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must lie on the simplex, got {weights.tolist()}")
        self.components = list(components)
        self.weights = weights
        self.vocab = components[0].vocab
        self.em_history = []

    def sentence_logprobs(self, words):
        return _mix(np.array([c.sentence_logprobs(words) for c in self.components]), self.weights)

    def corpus_logprobs(self, sentences):
        per = [c.corpus_logprobs(sentences) for c in self.components]
        return [_mix(np.array([p[i] for p in per]), self.weights) for i in range(len(sentences))]

    def next_logprobs(self, context):
        return _mix(np.array([c.next_logprobs(context) for c in self.components]), self.weights)

    def logprob(self, context, word):
        return float(_mix(np.array([c.logprob(context, word) for c in self.components]),
                          self.weights))


def interp_logprob(mixture, context, word):
    """``log sum_c lambda_c P_c(word | context)``."""
    return mixture.logprob(context, word)


def perplexity(scorer, sentences):
    """``exp(-(1/T) sum log P)`` over all predicted tokens (``</s>`` included, ``<s>`` not).

    A zero-probability token makes the result ``inf`` (logged).
    """
    lps = scorer.corpus_logprobs(sentences)
    total = float(sum(lp.sum() for lp in lps))
    count = sum(len(lp) for lp in lps)
    if count == 0:
        raise ValueError("cannot compute perplexity of an empty corpus")
    if not math.isfinite(total):
        log.warning("a token has zero probability; perplexity is infinite")
        return math.inf
    avg = -total / count
    return math.inf if avg > 700.0 else math.exp(avg)


def token_prob_matrix(components, sentences):
    """``(C, T)`` matrix of per-token natural-log probabilities under each component."""
    return np.array([np.concatenate(c.corpus_logprobs(sentences)) for c in components])


def em_weights(probs, max_iters=100, tol=1e-10, init=None):
    """Mixture-weight EM on a ``(C, T)`` probability matrix.

    Returns ``(weights, history)`` where ``history`` lists the total
    log-likelihood before the first update and after each update.
    """
    probs = np.asarray(probs, dtype=np.float64)
    c = probs.shape[0]
    lam = np.full(c, 1.0 / c) if init is None else np.asarray(init, dtype=np.float64)
    for i in np.flatnonzero(np.all(probs == 0.0, axis=1)):
        log.warning("component %d gives zero probability to every dev token; "
                    "its weight will go to 0", i)
    mix = lam @ probs
    if np.any(mix <= 0):
        raise ValueError("some dev token has zero probability under every component")
    history = [float(np.log(mix).sum())]
    for _ in range(max_iters):
        resp = lam[:, None] * probs / mix
        lam = resp.mean(axis=1)
        lam = lam / lam.sum()
        mix = lam @ probs
        history.append(float(np.log(mix).sum()))
        if history[-1] - history[-2] < tol:
            break
    return lam, history


def em_fit_weights(components, dev_sentences, max_iters=100, tol=1e-10):
    """EM-fitted :class:`InterpolationMixture` minimizing dev perplexity."""
    if len(components) < 2:
        raise ValueError("interpolation needs at least two components")
    if not dev_sentences:
        raise ValueError("empty dev corpus")
    lam, history = em_weights(np.exp(token_prob_matrix(components, dev_sentences)),
                              max_iters, tol)
    mixture = InterpolationMixture(components, lam)
    mixture.em_history = history
    return mixture
