"""Checkpoint container for a full model set.

A bundle groups everything inference needs — pointer network, the six word
generators, both style LMs, and (optionally) the termination classifier —
plus the vocabulary they were built against. Saved checkpoints are a single
torch file with named state dicts and enough config to rebuild the modules;
loading verifies the vocab hash so models are never silently paired with a
mismatched token table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .corpus import STYLES, Vocab
from .errors import ConfigError
from .language_model import DirectionalLM, StyleLM
from .operator_agent import GeneratorBank
from .pointer_agent import PointerNetwork

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class ModelBundle:
    vocab: Vocab
    pointer: PointerNetwork
    generators: GeneratorBank
    lms: dict[str, StyleLM]
    term_classifier: torch.nn.Module | None = None
    config: dict = field(default_factory=dict)
    extra_state: dict = field(default_factory=dict)

    def eval_mode(self) -> None:
        self.pointer.eval()
        for _, net in self.generators.items():
            net.eval()
        for lm in self.lms.values():
            lm.forward.eval()
            lm.backward.eval()
        if self.term_classifier is not None:
            self.term_classifier.eval()

    def save(self, path: str | Path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "vocab_tokens": list(self.vocab.id_to_token),
            "vocab_min_freq": self.vocab.min_freq,
            "vocab_hash": self.vocab.content_hash(),
            "config": dict(self.config),
            "pointer": self.pointer.state_dict(),
            "pointer_dims": {
                "embed_dim": self.pointer.embed_dim,
                "hidden_dim": self.pointer.hidden_dim,
                "attn_dim": self.pointer.attn_dim,
            },
            "generators": self.generators.state_dicts(),
            "generator_dims": {
                "embed_dim": self.generators.embed_dim,
                "hidden_dim": self.generators.hidden_dim,
            },
            "lms": {style: self.lms[style].state_dicts() for style in self.lms},
            "lm_dims": {
                style: {
                    "embed_dim": self.lms[style].forward.embedding.embedding_dim,
                    "hidden_dim": self.lms[style].forward.lstm.hidden_size,
                }
                for style in self.lms
            },
            "lm_dev_perplexity": {s: dict(self.lms[s].dev_perplexity) for s in self.lms},
            "extra_state": self.extra_state,
        }
        if self.term_classifier is not None:
            payload["term_classifier"] = self.term_classifier.state_dict()
            payload["term_dims"] = {
                "embed_dim": self.term_classifier.embed_dim,
                "hidden_dim": self.term_classifier.hidden_dim,
                "attn_dim": self.term_classifier.attn_dim,
                "unk_noise_rate": self.term_classifier.unk_noise_rate,
            }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        log.info("saved checkpoint to %s", path)


def load_bundle(path: str | Path, expect_vocab: Vocab | None = None) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r} in {path}")
    vocab = Vocab.from_tokens(payload["vocab_tokens"], min_freq=payload["vocab_min_freq"])
    if vocab.content_hash() != payload["vocab_hash"]:
        raise ConfigError(f"vocabulary in {path} fails its integrity hash")
    if expect_vocab is not None and expect_vocab.content_hash() != vocab.content_hash():
        raise ConfigError(
            f"checkpoint {path} was built against a different vocabulary "
            f"({vocab.content_hash()[:12]} != {expect_vocab.content_hash()[:12]})"
        )
    pd = payload["pointer_dims"]
    pointer = PointerNetwork(len(vocab), pd["embed_dim"], pd["hidden_dim"], pd["attn_dim"])
    pointer.load_state_dict(payload["pointer"])
    gd = payload["generator_dims"]
    generators = GeneratorBank(vocab, embed_dim=gd["embed_dim"], hidden_dim=gd["hidden_dim"])
    generators.load_state_dicts(payload["generators"])
    lms: dict[str, StyleLM] = {}
    for style in STYLES:
        if style not in payload["lms"]:
            continue
        dims = payload["lm_dims"][style]
        lm = StyleLM(
            style=style,
            forward=DirectionalLM(len(vocab), dims["embed_dim"], dims["hidden_dim"], vocab.pad_id),
            backward=DirectionalLM(len(vocab), dims["embed_dim"], dims["hidden_dim"], vocab.pad_id),
            vocab=vocab,
        )
        lm.load_state_dicts(payload["lms"][style])
        lm.dev_perplexity = dict(payload.get("lm_dev_perplexity", {}).get(style, {}))
        lms[style] = lm
    term = None
    if "term_classifier" in payload:
        from .inference_engine import TerminationClassifier

        td = payload["term_dims"]
        term = TerminationClassifier(len(vocab), td["embed_dim"], td["hidden_dim"],
                                     td["attn_dim"], td["unk_noise_rate"])
        term.load_state_dict(payload["term_classifier"])
    bundle = ModelBundle(
        vocab=vocab,
        pointer=pointer,
        generators=generators,
        lms=lms,
        term_classifier=term,
        config=dict(payload.get("config", {})),
        extra_state=payload.get("extra_state", {}),
    )
    bundle.eval_mode()
    return bundle
