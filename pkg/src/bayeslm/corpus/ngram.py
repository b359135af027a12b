"""Back-off n-gram models: ARPA reading/writing, scoring and Witten-Bell training.

All probabilities in this module are base-10 logarithms, as in the ARPA format.
"""

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .vocab import BOS, EOS, UNK, build_vocab

LOG10_ZERO = -99.0

_NGRAM_COUNT = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION = re.compile(r"^\\(\d+)-grams:$")


class ArpaParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class ArpaModel:
    """Per-order maps ``ngram tuple -> (log10 prob, log10 backoff or None)``."""

    order: int
    ngrams: list = field(default_factory=list)

    def __post_init__(self):
        while len(self.ngrams) < self.order:
            self.ngrams.append({})

    @property
    def words(self):
        return [k[0] for k in self.ngrams[0]]

    def counts(self):
        return [len(t) for t in self.ngrams]

    def backoff(self, context):
        entry = self.ngrams[len(context) - 1].get(context)
        if entry is None or entry[1] is None:
            return 0.0
        return entry[1]

    def logprob(self, context, word):
        return ngram_logprob(self, context, word)


def parse_arpa(text):
    """Parse ARPA text; raises :class:`ArpaParseError` with the offending line number."""
    declared = {}
    tables = {}
    state = "start"
    current = None
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        last_line = lineno
        line = raw.strip()
        if not line:
            continue
        if state == "start":
            if line == "\\data\\":
                state = "data"
            continue
        if line == "\\end\\":
            state = "end"
            break
        m = _SECTION.match(line)
        if m:
            n = int(m.group(1))
            if n not in declared:
                raise ArpaParseError(lineno, f"section \\{n}-grams: not declared in \\data\\")
            if n in tables:
                raise ArpaParseError(lineno, f"duplicate \\{n}-grams: section")
            current = n
            tables[n] = {}
            state = "grams"
            continue
        if state == "data":
            m = _NGRAM_COUNT.match(line)
            if not m:
                raise ArpaParseError(lineno, f"malformed \\data\\ line {line!r}")
            declared[int(m.group(1))] = int(m.group(2))
            continue
        fields = line.split()
        if len(fields) not in (current + 1, current + 2):
            raise ArpaParseError(
                lineno, f"expected {current + 1} or {current + 2} fields for a {current}-gram, "
                        f"got {len(fields)}")
        try:
            prob = float(fields[0])
            bow = float(fields[current + 1]) if len(fields) == current + 2 else None
        except ValueError:
            raise ArpaParseError(lineno, f"non-numeric probability or backoff in {line!r}") from None
        tables[current][tuple(fields[1:current + 1])] = (prob, bow)
    if state == "start":
        raise ArpaParseError(last_line, "missing \\data\\ header")
    if state != "end":
        raise ArpaParseError(last_line, "missing \\end\\ marker")
    if not declared:
        raise ArpaParseError(last_line, "no ngram counts declared")
    order = max(declared)
    if sorted(declared) != list(range(1, order + 1)):
        raise ArpaParseError(last_line, f"ngram orders {sorted(declared)} are not contiguous from 1")
    for n, count in sorted(declared.items()):
        found = len(tables.get(n, {}))
        if found != count:
            raise ArpaParseError(last_line, f"\\data\\ declares ngram {n}={count} but {found} "
                                            f"entries were read")
    return ArpaModel(order, [tables[n] for n in range(1, order + 1)])


def _fmt(x):
    return repr(float(x))


def format_arpa(model):
    lines = ["\\data\\"]
    lines += [f"ngram {n}={len(t)}" for n, t in enumerate(model.ngrams, 1)]
    for n, table in enumerate(model.ngrams, 1):
        lines += ["", f"\\{n}-grams:"]
        for key, (prob, bow) in table.items():
            row = f"{_fmt(prob)}\t{' '.join(key)}"
            if bow is not None:
                row += f"\t{_fmt(bow)}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def read_arpa(path):
    with open(path, encoding="utf-8") as f:
        return parse_arpa(f.read())


def write_arpa(path, model):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_arpa(model))


def ngram_logprob(model, context, word):
    """log10 P(word | context) by the standard back-off recursion.

    Words missing from the unigram table are scored as ``<unk>``; if the
    model has no ``<unk>`` either, the result is ``-inf``.
    """
    unigrams = model.ngrams[0]
    if (word,) not in unigrams:
        word = UNK
        if (word,) not in unigrams:
            return -math.inf
    ctx = tuple(w if (w,) in unigrams else UNK for w in context)
    ctx = ctx[max(0, len(ctx) - (model.order - 1)):]
    total = 0.0
    while True:
        entry = model.ngrams[len(ctx)].get(ctx + (word,))
        if entry is not None:
            return total + entry[0]
        total += model.backoff(ctx)
        ctx = ctx[1:]


def _sentence_events(sentences, vocab, order):
    """Counts of (context, word) for every order, contexts never longer than available history."""
    counts = [Counter() for _ in range(order)]
    for words in sentences:
        seq = [BOS] + vocab.normalize(words) + [EOS]
        for i in range(1, len(seq)):
            for n in range(1, order + 1):
                if i - (n - 1) < 0:
                    break
                counts[n - 1][tuple(seq[i - n + 1:i + 1])] += 1
    return counts


def train_ngram(sentences, order, vocab=None):
    """Interpolated Witten-Bell model stored in back-off (ARPA) form.

    For a context ``h`` with ``c(h)`` tokens and ``T(h)`` distinct followers,
    seen words get ``(c(h, w) + T(h) P_lower(w)) / (c(h) + T(h))`` and the
    back-off weight is ``T(h) / (c(h) + T(h))``, which makes every context
    distribution sum to one exactly.  The unigram level interpolates with a
    uniform distribution over the vocabulary (``<s>`` excluded).
    """
    if order < 1:
        raise ValueError(f"n-gram order must be >= 1, got {order}")
    if vocab is None:
        vocab = build_vocab(sentences)
    counts = _sentence_events(sentences, vocab, order)
    model = ArpaModel(order)
    targets = [t for t in vocab.tokens if t != BOS]

    uni = counts[0]
    total, types = sum(uni.values()), len(uni)
    for w in targets:
        p = (uni[(w,)] + types / len(targets)) / (total + types)
        model.ngrams[0][(w,)] = (math.log10(p), None)
    model.ngrams[0][(BOS,)] = (LOG10_ZERO, None)

    for n in range(2, order + 1):
        by_ctx = defaultdict(dict)
        for key, c in counts[n - 1].items():
            by_ctx[key[:-1]][key[-1]] = c
        lower = ArpaModel(n - 1, model.ngrams[:n - 1])
        for ctx, followers in by_ctx.items():
            c_h = sum(followers.values())
            t_h = len(followers)
            denom = c_h + t_h
            for w, c in followers.items():
                p_low = 10.0 ** ngram_logprob(lower, ctx[1:], w)
                model.ngrams[n - 1][ctx + (w,)] = (math.log10((c + t_h * p_low) / denom), None)
            prob, _ = model.ngrams[n - 2][ctx]
            model.ngrams[n - 2][ctx] = (prob, math.log10(t_h / denom))
    return model
