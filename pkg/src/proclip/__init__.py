"""Prompt-aware two-stage text-video retrieval over embedding corpora."""

from .corpus import (CorpusBundle, CorpusFormatError, QueryRecord, SynthSpec,
                     ValidationReport, VideoRecord, read_corpus, synth_corpus,
                     validate_corpus, write_corpus)
from .engine import (LatencyReport, MetricsReport, RankedList, RetrievalConfig,
                     RetrievalIndex, bench, evaluate, index_corpus, retrieve)
from .model import (ModelParams, init_model_params, load_checkpoint,
                    model_hash, save_checkpoint)
from .trainer import (TrainConfig, TrainResult, contrastive_loss, grad_check,
                      train_distill_stage, train_retrieval_stage)

__version__ = "0.1.0"

__all__ = [
    "CorpusBundle", "CorpusFormatError", "QueryRecord", "SynthSpec",
    "ValidationReport", "VideoRecord", "read_corpus", "synth_corpus",
    "validate_corpus", "write_corpus",
    "LatencyReport", "MetricsReport", "RankedList", "RetrievalConfig",
    "RetrievalIndex", "bench", "evaluate", "index_corpus", "retrieve",
    "ModelParams", "init_model_params", "load_checkpoint", "model_hash",
    "save_checkpoint",
    "TrainConfig", "TrainResult", "contrastive_loss", "grad_check",
    "train_distill_stage", "train_retrieval_stage",
    "__version__",
]
