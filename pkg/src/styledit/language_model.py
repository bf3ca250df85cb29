"""Per-style language models.

Each style owns a forward and a backward LSTM next-token predictor over the
shared vocabulary. The probability of a word in context is the arithmetic mean
of the two directions; whole-sentence scores are per-token geometric means, so
candidates of different lengths compare fairly (a raw product would always
prefer the shortest candidate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Sentence, StyleCorpus, Vocab, encode_corpus
from .errors import ConfigError


@dataclass
class LMConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 3
    grad_clip: float = 5.0
    seed: int = 0


class DirectionalLM(nn.Module):
    """Single-direction next-token LSTM predictor."""

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int, pad_id: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.pad_id = pad_id
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.lstm = nn.LSTM(embed_dim, hidden_dim)
        self.proj = nn.Linear(hidden_dim, vocab_size)

    def logits(self, ids: torch.Tensor) -> torch.Tensor:
        """ids (T, B) -> logits (T, B, V), step t predicting the token after ids[t]."""
        out, _ = self.lstm(self.embedding(ids))
        return self.proj(out)

    def step_log_probs(self, ids: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        """(T, B) log P(targets[t] | ids[:t+1]) under teacher forcing."""
        logp = F.log_softmax(self.logits(ids), dim=-1)
        return logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)


@dataclass
class StyleLM:
    """Forward + backward predictors for one style, over one vocabulary."""

    style: str
    forward: DirectionalLM
    backward: DirectionalLM
    vocab: Vocab
    vocab_hash: str = ""
    dev_perplexity: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.vocab_hash:
            self.vocab_hash = self.vocab.content_hash()

    def _batch(self, sentences: list[Sentence], reverse: bool) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Padded (inputs, targets, lengths); inputs start from bos (or eos reversed)."""
        v = self.vocab
        lengths = torch.tensor([len(s) for s in sentences])
        t_max = int(lengths.max()) + 1
        inputs = torch.full((t_max, len(sentences)), v.pad_id, dtype=torch.long)
        targets = torch.full((t_max, len(sentences)), v.pad_id, dtype=torch.long)
        for b, s in enumerate(sentences):
            toks = list(s.tokens)
            if reverse:
                seq = [v.eos_id] + toks[::-1]
                tgt = toks[::-1] + [v.bos_id]
            else:
                seq = [v.bos_id] + toks
                tgt = toks + [v.eos_id]
            inputs[: len(seq), b] = torch.tensor(seq)
            targets[: len(tgt), b] = torch.tensor(tgt)
        return inputs, targets, lengths + 1

    def log_word_probs_batch(self, sentences: list[Sentence]) -> list[torch.Tensor]:
        """Per-sentence (T,) tensors of log((P_fwd + P_bwd)/2) at each position."""
        fwd_in, fwd_tgt, _ = self._batch(sentences, reverse=False)
        bwd_in, bwd_tgt, _ = self._batch(sentences, reverse=True)
        lp_f = self.forward.step_log_probs(fwd_in, fwd_tgt)
        lp_b = self.backward.step_log_probs(bwd_in, bwd_tgt)
        out = []
        for b, s in enumerate(sentences):
            t = len(s)
            f = lp_f[:t, b]                      # position i of the sentence
            rev = lp_b[:t, b].flip(0)            # back to left-to-right order
            out.append(torch.logaddexp(f, rev) - math.log(2.0))
        return out

    def log_word_probs(self, sentence: Sentence) -> torch.Tensor:
        return self.log_word_probs_batch([sentence])[0]

    def word_prob(self, word: int, sentence: Sentence, position: int) -> float:
        """Mean of forward and backward probability of the word at this position."""
        if sentence.tokens[position] != word:
            raise ValueError("word does not match the sentence at that position")
        with torch.no_grad():
            return float(self.log_word_probs(sentence)[position].exp())

    def sentence_score(self, sentence: Sentence) -> float:
        """Geometric mean over positions of the in-context word probability."""
        with torch.no_grad():
            return float(self.log_word_probs(sentence).mean().exp())

    def sentence_log_scores(self, sentences: list[Sentence]) -> torch.Tensor:
        lps = self.log_word_probs_batch(sentences)
        return torch.stack([lp.mean() for lp in lps])

    def perplexity(self, sentences: list[Sentence]) -> float:
        """Token-level perplexity averaged over both directions (eos/bos included)."""
        with torch.no_grad():
            total, count = 0.0, 0
            for reverse, model in ((False, self.forward), (True, self.backward)):
                inputs, targets, lengths = self._batch(sentences, reverse)
                lp = model.step_log_probs(inputs, targets)
                mask = torch.arange(inputs.shape[0]).unsqueeze(1) < lengths.unsqueeze(0)
                total += float((lp * mask).sum())
                count += int(mask.sum())
        return math.exp(-total / count)

    def state_dicts(self) -> dict[str, dict]:
        return {"forward": self.forward.state_dict(), "backward": self.backward.state_dict()}

    def load_state_dicts(self, dicts: dict[str, dict]) -> None:
        self.forward.load_state_dict(dicts["forward"])
        self.backward.load_state_dict(dicts["backward"])


def save_lms(lms: dict[str, StyleLM], path: str | Path) -> None:
    """Standalone checkpoint for a style->StyleLM map (one file, both styles)."""
    if not lms:
        raise ConfigError("no language models to save")
    any_lm = next(iter(lms.values()))
    payload = {
        "version": 1,
        "vocab_hash": any_lm.vocab.content_hash(),
        "dims": {s: {"embed_dim": lm.forward.embedding.embedding_dim,
                     "hidden_dim": lm.forward.lstm.hidden_size}
                 for s, lm in lms.items()},
        "states": {s: lm.state_dicts() for s, lm in lms.items()},
        "dev_perplexity": {s: dict(lm.dev_perplexity) for s, lm in lms.items()},
    }
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, p)


def load_lms(path: str | Path, vocab: Vocab) -> dict[str, StyleLM]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"language-model checkpoint not found: {p}")
    payload = torch.load(p, map_location="cpu", weights_only=False)
    if payload.get("vocab_hash") != vocab.content_hash():
        raise ConfigError(f"{p} was trained against a different vocabulary")
    out: dict[str, StyleLM] = {}
    for style, dims in payload["dims"].items():
        lm = StyleLM(
            style=style,
            forward=DirectionalLM(len(vocab), dims["embed_dim"], dims["hidden_dim"],
                                  vocab.pad_id),
            backward=DirectionalLM(len(vocab), dims["embed_dim"], dims["hidden_dim"],
                                   vocab.pad_id),
            vocab=vocab,
        )
        lm.load_state_dicts(payload["states"][style])
        lm.dev_perplexity = dict(payload["dev_perplexity"].get(style, {}))
        lm.forward.eval()
        lm.backward.eval()
        out[style] = lm
    return out


def _epoch_batches(n: int, batch_size: int, generator: torch.Generator):
    perm = torch.randperm(n, generator=generator).tolist()
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train_lm(corpus: StyleCorpus, vocab: Vocab, config: LMConfig | None = None) -> StyleLM:
    """Train forward and backward predictors, early-stopping on dev perplexity."""
    config = config or LMConfig()
    if not corpus.train:
        raise ConfigError(f"corpus for style {corpus.style} has an empty train split")
    torch.manual_seed(config.seed)
    encoded = encode_corpus(corpus, vocab)
    lm = StyleLM(
        style=corpus.style,
        forward=DirectionalLM(len(vocab), config.embed_dim, config.hidden_dim, vocab.pad_id),
        backward=DirectionalLM(len(vocab), config.embed_dim, config.hidden_dim, vocab.pad_id),
        vocab=vocab,
    )
    gen = torch.Generator().manual_seed(config.seed)
    for reverse, model in ((False, lm.forward), (True, lm.backward)):
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        best, since_best = float("inf"), 0
        best_state = {k: v.clone() for k, v in model.state_dict().items()}
        for _ in range(config.max_epochs):
            model.train()
            for idx in _epoch_batches(len(encoded["train"]), config.batch_size, gen):
                batch = [encoded["train"][i] for i in idx]
                inputs, targets, lengths = lm._batch(batch, reverse)
                lp = model.step_log_probs(inputs, targets)
                mask = torch.arange(inputs.shape[0]).unsqueeze(1) < lengths.unsqueeze(0)
                loss = -(lp * mask).sum() / mask.sum()
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                opt.step()
            model.eval()
            dev = encoded["dev"] or encoded["train"]
            with torch.no_grad():
                inputs, targets, lengths = lm._batch(dev, reverse)
                lp = model.step_log_probs(inputs, targets)
                mask = torch.arange(inputs.shape[0]).unsqueeze(1) < lengths.unsqueeze(0)
                ppl = math.exp(float(-(lp * mask).sum() / mask.sum()))
            if ppl < best - 1e-9:
                best, since_best = ppl, 0
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
        model.load_state_dict(best_state)
        model.eval()
        lm.dev_perplexity["backward" if reverse else "forward"] = best
    return lm
