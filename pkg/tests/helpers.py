"""Shared tiny fixtures for the test modules."""

import numpy as np

from bayeslm.corpus import build_vocab, encode_batches, make_batch
from bayeslm.nnlm import LstmConfig, LstmLM, TransformerConfig, TransformerLM

TOY_SENTENCES = [
    "the cat sees a dog".split(),
    "a dog sleeps".split(),
    "the dog sees the cat".split(),
    "a cat sleeps near the dog".split(),
    "the cat sleeps".split(),
]


def toy_vocab():
    return build_vocab(TOY_SENTENCES)


def toy_batches(batch_size=2):
    return encode_batches(TOY_SENTENCES, toy_vocab(), batch_size)


def small_lstm(vocab_size=10, seed=0, layers=2, embed=4, hidden=5, dropout=0.0, init=0.3):
    return LstmLM(LstmConfig(layers, embed, hidden, dropout, init), vocab_size, seed=seed)


def small_transformer(vocab_size=10, seed=0, layers=2, dim=4, ffn=6, dropout=0.0, init=0.3):
    return TransformerLM(TransformerConfig(layers, dim, ffn, 1, dropout, init), vocab_size,
                         seed=seed)


def random_batch(vocab_size=10, lengths=(5, 3, 6), seed=0):
    rng = np.random.default_rng(seed)
    seqs = [[0] + list(rng.integers(3, vocab_size, n)) + [1] for n in lengths]
    return make_batch(seqs, pad_id=1)


def well_vs_random_supernet(seed=0, steps=150):
    """Super-network whose Bayes branch holds trained weights and whose point branch is random.

    Returns ``(supernet, batches)``; the single location is ``l1.cell-input``.
    """
    from bayeslm.bayes import BayesPosition
    from bayeslm.core import RngStream, SgdState
    from bayeslm.nas import SuperNet
    from bayeslm.nnlm import RegularizerSpec, TrainConfig, train

    vocab = toy_vocab()
    batches = toy_batches(2)
    model = small_lstm(len(vocab), seed=seed, layers=1, embed=6, hidden=6)
    train(model, batches, SgdState(0.3), RegularizerSpec(), batches,
          TrainConfig(epochs=steps // len(batches), keep_best=False), RngStream(seed))
    sn = SuperNet(model, [BayesPosition("lstm", 1, "cell-input")], prior_sigma=1.0,
                  init_ratio=0.01)
    point = sn.mixed_sites()[0].point.source.weight
    point.value[...] = np.random.default_rng(seed + 100).uniform(-3, 3, point.shape)
    return sn, batches
