"""Seeded toy grammar used as the bundled desk corpus.

Sentences have subject-verb number agreement, optional adjectives,
prepositional phrases, adverbs and bounded clause embedding, so a recurrent
model has real structure to learn over a vocabulary of under 200 words.
"""

import numpy as np

_NOUNS = ["dog", "cat", "bird", "horse", "farmer", "teacher", "student", "child",
          "doctor", "king", "queen", "robot", "pilot", "singer", "baker", "river",
          "city", "garden", "house", "ship", "tree", "book", "letter", "song",
          "machine", "window", "road", "field", "village", "market"]
_PLURALS = {"child": "children", "city": "cities", "queen": "queens"}
_VERBS = ["see", "like", "follow", "find", "help", "watch", "build", "carry",
          "paint", "visit", "know", "call", "move", "hold", "read", "open",
          "chase", "feed", "clean", "need"]
_INTRANSITIVE = ["sleep", "run", "sing", "wait", "laugh", "swim", "work", "fall",
                 "smile", "arrive"]
_ADJECTIVES = ["big", "small", "old", "young", "red", "green", "happy", "quiet",
               "bright", "dark", "tall", "strange", "gentle", "brave", "lazy",
               "clever", "tired", "busy", "lonely", "famous"]
_DET_SG = ["the", "a", "this", "every", "that"]
_DET_PL = ["the", "these", "some", "many", "those"]
_PREPS = ["near", "behind", "under", "with", "across", "beside", "inside", "above"]
_ADVERBS = ["today", "again", "slowly", "quickly", "often", "never", "now",
            "quietly", "early", "later"]
_NAMES = ["alice", "bob", "carol", "david", "emma", "frank", "grace", "henry"]
_CLAUSE = ["say", "think", "hope", "know"]


def _plural(noun):
    return _PLURALS.get(noun, noun + "s")


def _third(verb):
    if verb.endswith(("ch", "sh", "s", "x")):
        return verb + "es"
    if verb.endswith("y") and verb[-2] not in "aeiou":
        return verb[:-1] + "ies"
    return verb + "s"


def _zipf(n, exponent=1.1):
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


class ToyGrammar:
    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self._weights = {}

    def _pick(self, words):
        key = id(words)
        if key not in self._weights:
            self._weights[key] = _zipf(len(words))
        return words[self.rng.choice(len(words), p=self._weights[key])]

    def _chance(self, p):
        return self.rng.random() < p

    def noun_phrase(self, plural):
        if not plural and self._chance(0.15):
            return [self._pick(_NAMES)], False
        det = self._pick(_DET_PL if plural else _DET_SG)
        noun = self._pick(_NOUNS)
        words = [det]
        if self._chance(0.35):
            words.append(self._pick(_ADJECTIVES))
        words.append(_plural(noun) if plural else noun)
        return words, plural

    def verb_phrase(self, plural, depth):
        r = self.rng.random()
        if depth < 1 and r < 0.12:
            verb = self._pick(_CLAUSE)
            return [verb if plural else _third(verb), "that"] + self.sentence_body(depth + 1)
        if r < 0.35:
            verb = self._pick(_INTRANSITIVE)
            return [verb if plural else _third(verb)]
        verb = self._pick(_VERBS)
        obj, _ = self.noun_phrase(self._chance(0.35))
        return [verb if plural else _third(verb)] + obj

    def sentence_body(self, depth=0):
        subj, plural = self.noun_phrase(self._chance(0.4))
        words = subj + self.verb_phrase(plural, depth)
        if self._chance(0.3):
            pp, _ = self.noun_phrase(self._chance(0.3))
            words += [self._pick(_PREPS)] + pp
        if self._chance(0.25):
            words.append(self._pick(_ADVERBS))
        return words

    def sentence(self):
        return self.sentence_body(0)


def generate_sentences(n, seed=0):
    grammar = ToyGrammar(seed)
    return [grammar.sentence() for _ in range(n)]


def synthetic_splits(train=500, dev=100, test=100, seed=0):
    """Train/dev/test lists from one seeded grammar.

    Dev and test sentences never occur in the training list or in each other.
    """
    grammar = ToyGrammar(seed)
    train_sents = [grammar.sentence() for _ in range(train)]
    seen = {tuple(s) for s in train_sents}
    held = []
    while len(held) < dev + test:
        s = grammar.sentence()
        if tuple(s) not in seen:
            seen.add(tuple(s))
            held.append(s)
    return {"train": train_sents, "dev": held[:dev], "test": held[dev:]}
