"""N-best lists: text I/O, a synthetic generator, and LM rescoring.

N-best file, one hypothesis per line::

    utt-id <TAB> hyp-index <TAB> acoustic-score <TAB> lm-score <TAB> w1 w2 ...

Reference file, one utterance per line::

    utt-id <TAB> w1 w2 ...

Scores are natural-log domain.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .wer import corpus_wer

log = logging.getLogger(__name__)

DEFAULT_LM_SCALE = 12.0
DEFAULT_INSERTION_PENALTY = 0.0


class NBestError(ValueError):
    pass


@dataclass
class Hypothesis:
    words: list
    acoustic: float
    lm: float = 0.0


@dataclass
class NBestList:
    utt_id: str
    reference: list
    hypotheses: list = field(default_factory=list)


def read_references(path):
    refs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        utt, _, words = line.partition("\t")
        if not utt:
            raise NBestError(f"{path}:{lineno}: missing utterance id")
        refs[utt] = words.split()
    return refs


def read_nbest(nbest_path, ref_path):
    """Lists in first-seen utterance order; hypotheses sorted by index."""
    refs = read_references(ref_path)
    rows = {}
    for lineno, line in enumerate(Path(nbest_path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t", 4)
        if len(parts) < 4:
            raise NBestError(f"{nbest_path}:{lineno}: expected at least 4 tab-separated fields")
        utt = parts[0]
        try:
            idx, ac, lm = int(parts[1]), float(parts[2]), float(parts[3])
        except ValueError:
            raise NBestError(f"{nbest_path}:{lineno}: non-numeric index or score") from None
        if not (math.isfinite(ac) and math.isfinite(lm)):
            raise NBestError(f"{nbest_path}:{lineno}: scores must be finite")
        words = parts[4].split() if len(parts) > 4 else []
        rows.setdefault(utt, []).append((idx, Hypothesis(words, ac, lm)))
    out = []
    for utt, hyps in rows.items():
        if utt not in refs:
            raise NBestError(f"{nbest_path}: utterance {utt!r} has no reference in {ref_path}")
        idxs = sorted(i for i, _ in hyps)
        if len(set(idxs)) != len(idxs):
            raise NBestError(f"{nbest_path}: duplicate hypothesis index for {utt!r}")
        out.append(NBestList(utt, refs[utt], [h for _, h in sorted(hyps, key=lambda t: t[0])]))
    return out


def write_nbest(lists, nbest_path, ref_path):
    lines, refs = [], []
    for nb in lists:
        refs.append(f"{nb.utt_id}\t{' '.join(nb.reference)}")
        for i, h in enumerate(nb.hypotheses):
            lines.append(f"{nb.utt_id}\t{i}\t{h.acoustic!r}\t{h.lm!r}\t{' '.join(h.words)}")
    Path(nbest_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    Path(ref_path).write_text("\n".join(refs) + "\n", encoding="utf-8")


def _mutate(words, vocab_words, rng, max_edits=3):
    out = list(words)
    for _ in range(int(rng.integers(1, max_edits + 1))):
        op = rng.integers(3) if out else 1
        if op == 0:
            out[rng.integers(len(out))] = vocab_words[rng.integers(len(vocab_words))]
        elif op == 1:
            out.insert(int(rng.integers(len(out) + 1)), vocab_words[rng.integers(len(vocab_words))])
        else:
            del out[rng.integers(len(out))]
    return out


def synthetic_nbest(references, vocab_words, n=20, seed=0, acoustic_spread=3.0):
    """Reference plus ``n - 1`` distinct mutated decoys per utterance.

    Every hypothesis gets an acoustic score drawn from the same
    ``-Uniform(0, acoustic_spread)`` law, so the acoustic 1-best is usually a
    decoy; hypothesis order is shuffled.  Original LM scores are 0.
    """
    rng = np.random.default_rng(seed)
    vocab_words = list(vocab_words)
    out = []
    for u, ref in enumerate(references):
        hyps, seen = [list(ref)], {tuple(ref)}
        tries = 0
        while len(hyps) < n and tries < 100 * n:
            tries += 1
            cand = _mutate(ref, vocab_words, rng)
            if tuple(cand) not in seen:
                seen.add(tuple(cand))
                hyps.append(cand)
        order = rng.permutation(len(hyps))
        scores = -rng.uniform(0.0, acoustic_spread, len(hyps))
        out.append(NBestList(f"utt{u:05d}", list(ref),
                             [Hypothesis(hyps[i], float(scores[k]), 0.0)
                              for k, i in enumerate(order)]))
    return out


@dataclass
class RescoreResult:
    utt_id: str
    index: int
    words: list
    score: float


def select_best(scores):
    """Index of the highest score; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def hypothesis_scores(nbest, scorer, lm_scale=DEFAULT_LM_SCALE,
                      insertion_penalty=DEFAULT_INSERTION_PENALTY):
    """``acoustic + lm_scale * log P_lm(words) + insertion_penalty * |words|`` per hypothesis."""
    lm = scorer.corpus_logprobs([h.words for h in nbest.hypotheses])
    return np.array([h.acoustic + lm_scale * float(l.sum()) + insertion_penalty * len(h.words)
                     for h, l in zip(nbest.hypotheses, lm)])


def rescore_nbest(lists, scorer, lm_scale=DEFAULT_LM_SCALE,
                  insertion_penalty=DEFAULT_INSERTION_PENALTY):
    """Best hypothesis per utterance under the combined score (empty lists are skipped)."""
    if not lm_scale > 0:
        raise ValueError(f"lm_scale must be positive, got {lm_scale}")
    out = []
    for nb in lists:
        if not nb.hypotheses:
            log.warning("utterance %s has no hypotheses; skipped", nb.utt_id)
            continue
        scores = hypothesis_scores(nb, scorer, lm_scale, insertion_penalty)
        i = select_best(scores)
        out.append(RescoreResult(nb.utt_id, i, nb.hypotheses[i].words, float(scores[i])))
    return out


def acoustic_best(lists):
    """Acoustic-only 1-best per utterance (the no-LM baseline)."""
    out = []
    for nb in lists:
        if not nb.hypotheses:
            continue
        i = select_best([h.acoustic for h in nb.hypotheses])
        out.append(RescoreResult(nb.utt_id, i, nb.hypotheses[i].words, nb.hypotheses[i].acoustic))
    return out


def results_wer(lists, results):
    refs = {nb.utt_id: nb.reference for nb in lists}
    return corpus_wer((refs[r.utt_id], r.words) for r in results)


def tune_rescoring(lists, scorer, lm_scales, insertion_penalties):
    """Grid search for the ``(lm_scale, insertion_penalty)`` pair with the lowest WER.

    LM scores are computed once per hypothesis; ties keep the first grid point.
    Returns ``(lm_scale, insertion_penalty, wer_rate)``.
    """
    lists = [nb for nb in lists if nb.hypotheses]
    if not lists:
        raise ValueError("no non-empty N-best lists to tune on")
    lm = [[float(l.sum()) for l in scorer.corpus_logprobs([h.words for h in nb.hypotheses])]
          for nb in lists]
    best = None
    for scale in lm_scales:
        if not scale > 0:
            raise ValueError(f"lm_scale must be positive, got {scale}")
        for pen in insertion_penalties:
            picks = []
            for nb, l in zip(lists, lm):
                sc = [h.acoustic + scale * x + pen * len(h.words)
                      for h, x in zip(nb.hypotheses, l)]
                i = select_best(sc)
                picks.append(RescoreResult(nb.utt_id, i, nb.hypotheses[i].words, float(sc[i])))
            rate = results_wer(lists, picks).rate
            if best is None or rate < best[2]:
                best = (float(scale), float(pen), rate)
    return best
