"""Text ingestion, vocabularies, batching and back-off n-gram models."""

from .ngram import (ArpaModel, ArpaParseError, format_arpa, ngram_logprob, parse_arpa,
                    read_arpa, train_ngram, write_arpa)
from .synth import generate_sentences, synthetic_splits
from .vocab import (BOS, EOS, UNK, Batch, CorpusError, Vocabulary, build_vocab,
                    encode_batches, make_batch, read_corpus, write_corpus)
