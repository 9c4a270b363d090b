"""Decoding strategies, generation metrics and evaluation tooling for
locally-normalized sequence models."""

__version__ = "0.1.0"

from .seqmodel import (  # noqa: E402
    NGramModel,
    SequenceModel,
    TableModel,
    TokenDistribution,
    Vocabulary,
    enumerate_sequences,
    load_model,
    next_distribution,
    normalized_log_prob,
    perplexity,
    save_model,
    sequence_log_prob,
    train_ngram,
)
from .decoders import (  # noqa: E402
    DecoderConfig,
    GenerationRecord,
    ancestral_sample,
    beam_decode,
    decode,
    diverse_beam_decode,
    greedy_decode,
    mbr_decode,
    truncate_top_k,
    truncate_top_p,
    truncated_sample,
)
from .rng import derive_rng  # noqa: E402

__all__ = [
    "DecoderConfig",
    "GenerationRecord",
    "NGramModel",
    "SequenceModel",
    "TableModel",
    "TokenDistribution",
    "Vocabulary",
    "ancestral_sample",
    "beam_decode",
    "decode",
    "derive_rng",
    "diverse_beam_decode",
    "enumerate_sequences",
    "greedy_decode",
    "load_model",
    "mbr_decode",
    "next_distribution",
    "normalized_log_prob",
    "perplexity",
    "save_model",
    "sequence_log_prob",
    "train_ngram",
    "truncate_top_k",
    "truncate_top_p",
    "truncated_sample",
]
