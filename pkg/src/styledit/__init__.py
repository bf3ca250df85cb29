"""Edit-based unsupervised text style transfer.

A high-level pointer picks the position to edit; low-level operators insert,
replace, or delete words there. Training is reinforcement-driven from a style
classifier and per-style language models plus a self-supervised reconstruction
signal; inference revises a sentence step by step under a masking discipline
with a noise-robust stopping classifier.
"""

from .bundle import ModelBundle, load_bundle
from .corpus import (STYLES, Sentence, SentenceOracle, StyleCorpus, SyntheticSpec,
                     Vocab, build_vocab, decode, default_synthetic_spec, encode,
                     encode_corpus, generate_synthetic, load_corpus, load_oracle,
                     oracle_style, other_style, save_corpus, save_oracle)
from .edit_engine import (EditAction, OperatorKind, ReconstructionTarget, TraceStep,
                          apply, reachable, reconstruction_targets, valid_operators)
from .errors import (ConfigError, ContractError, CorpusLoadError, DivergenceError,
                     PreconditionError, StyleditError, TrajectoryExhausted)
from .evaluator import (EvalReport, TextCNN, content_preservation_rate, corpus_bleu,
                        evaluate, pointer_precision, style_flip_rate,
                        synthetic_references, tradeoff_sweep,
                        train_eval_classifier)
from .inference_engine import (InferenceConfig, MaskState, TerminationClassifier,
                               masked_sentence_for_termination, select_action,
                               train_termination_classifier, transfer,
                               transfer_corpus)
from .language_model import LMConfig, StyleLM, load_lms, save_lms, train_lm
from .operator_agent import (DIRECTIONS, GeneratorBank, WordGenerator,
                             direction_for_source, reverse_direction,
                             sample_uniform_operator)
from .pointer_agent import PointerNetwork, PositionDistribution
from .trainer import EpisodeRecord, TrainConfig, Trainer, train

__all__ = [
    "DIRECTIONS", "STYLES",
    "ConfigError", "ContractError", "CorpusLoadError", "DivergenceError",
    "EditAction", "EpisodeRecord", "EvalReport", "GeneratorBank",
    "InferenceConfig", "LMConfig", "MaskState", "ModelBundle", "OperatorKind",
    "PointerNetwork", "PositionDistribution", "PreconditionError",
    "ReconstructionTarget", "Sentence", "SentenceOracle", "StyleCorpus",
    "StyleLM", "StyleditError", "SyntheticSpec", "TerminationClassifier",
    "TextCNN", "TraceStep", "TrainConfig", "Trainer", "TrajectoryExhausted",
    "Vocab", "WordGenerator", "apply", "build_vocab",
    "content_preservation_rate", "corpus_bleu", "decode",
    "default_synthetic_spec", "direction_for_source", "encode", "encode_corpus",
    "evaluate", "generate_synthetic", "load_bundle", "load_corpus", "load_lms",
    "load_oracle", "masked_sentence_for_termination", "oracle_style",
    "other_style", "pointer_precision", "reachable", "reconstruction_targets",
    "reverse_direction", "sample_uniform_operator", "save_corpus", "save_lms",
    "save_oracle", "select_action", "style_flip_rate", "synthetic_references",
    "tradeoff_sweep", "train", "train_eval_classifier", "train_lm",
    "train_termination_classifier", "transfer", "transfer_corpus",
    "valid_operators",
]
