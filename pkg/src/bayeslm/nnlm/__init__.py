"""Point-estimate LSTM and Transformer language models and their training loop."""

from .models import (LSTM_GATES, LanguageModel, LstmConfig, LstmLM, TransformerConfig,
                     TransformerLM, build_model)
from .sites import (ACTIVATIONS, Activation, Embedding, ForwardPass, Gate, PointWeight, Site,
                    sinusoidal_positions)
from .train import (EpochLog, RegularizerSpec, TrainConfig, TrainResult, batch_perplexity,
                    corpus_logprob, elbo_loss, train)

__all__ = [
    "LSTM_GATES", "LanguageModel", "LstmConfig", "LstmLM", "TransformerConfig", "TransformerLM",
    "build_model", "ACTIVATIONS", "Activation", "Embedding", "ForwardPass", "Gate",
    "PointWeight", "Site", "sinusoidal_positions", "EpochLog", "RegularizerSpec", "TrainConfig",
    "TrainResult", "batch_perplexity", "corpus_logprob", "elbo_loss", "train",
]
