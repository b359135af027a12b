"""Word error rate by minimum edit distance."""

import math
from typing import NamedTuple


class WerResult(NamedTuple):
    substitutions: int
    insertions: int
    deletions: int
    rate: float
    ref_length: int

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions


def wer(reference, hypothesis):
    """Unit-cost alignment of ``hypothesis`` against ``reference``.

    Among minimum-cost alignments the one with the fewest insertions plus
    deletions is reported, which makes the S/I/D split unique (``I - D`` is
    fixed by the lengths).  An empty reference gives rate 0 for an empty
    hypothesis and ``inf`` otherwise.
    """
    ref, hyp = list(reference), list(hypothesis)
    n, m = len(ref), len(hyp)
    # cell: (errors, insertions + deletions, S, I, D)
    prev = [(j, j, 0, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, i, 0, 0, i)]
        for j in range(1, m + 1):
            e, ind, s, ins, d = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (e, ind, s, ins, d)
            else:
                best = (e + 1, ind, s + 1, ins, d)
            e, ind, s, ins, d = prev[j]
            best = min(best, (e + 1, ind + 1, s, ins, d + 1), key=lambda c: c[:2])
            e, ind, s, ins, d = cur[j - 1]
            best = min(best, (e + 1, ind + 1, s, ins + 1, d), key=lambda c: c[:2])
            cur.append(best)
        prev = cur
    errors, _, s, ins, d = prev[m]
    if n == 0:
        rate = 0.0 if errors == 0 else math.inf
    else:
        rate = errors / n
    return WerResult(s, ins, d, rate, n)


def corpus_wer(pairs):
    """Pooled rate over ``(reference, hypothesis)`` pairs; returns ``WerResult`` of the totals."""
    s = i = d = n = 0
    for ref, hyp in pairs:
        r = wer(ref, hyp)
        s, i, d, n = s + r.substitutions, i + r.insertions, d + r.deletions, n + r.ref_length
    errors = s + i + d
    rate = (errors / n) if n else (0.0 if errors == 0 else math.inf)
    return WerResult(s, i, d, rate, n)
