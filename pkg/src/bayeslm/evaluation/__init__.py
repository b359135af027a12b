"""Perplexity, interpolation, N-best rescoring, WER and SNR diagnostics."""

from .nbest import (DEFAULT_INSERTION_PENALTY, DEFAULT_LM_SCALE, Hypothesis, NBestError,
                    NBestList, RescoreResult, acoustic_best, hypothesis_scores, read_nbest,
                    read_references, rescore_nbest, results_wer, select_best, synthetic_nbest,
                    tune_rescoring, write_nbest)
from .scorers import (InterpolationMixture, NeuralScorer, NgramScorer, Scorer, UniformScorer,
                      em_fit_weights, em_weights, interp_logprob, perplexity, token_prob_matrix)
from .snr import SnrReport, snr_report, snr_values, write_snr_table
from .wer import WerResult, corpus_wer, wer

__all__ = [
    "DEFAULT_INSERTION_PENALTY", "DEFAULT_LM_SCALE", "Hypothesis", "NBestError", "NBestList",
    "RescoreResult", "acoustic_best", "hypothesis_scores", "read_nbest", "read_references",
    "rescore_nbest", "results_wer", "select_best", "synthetic_nbest", "tune_rescoring",
    "write_nbest",
    "InterpolationMixture", "NeuralScorer", "NgramScorer", "Scorer", "UniformScorer",
    "em_fit_weights", "em_weights", "interp_logprob", "perplexity", "token_prob_matrix",
    "SnrReport", "snr_report", "snr_values", "write_snr_table", "WerResult", "corpus_wer", "wer",
]
