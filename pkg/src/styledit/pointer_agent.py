"""High-level agent: where to edit.

A bidirectional LSTM encoder feeds an additive-attention position policy. The
same attention weights pool the encoder states for a two-way style classifier,
so the positions the classifier leans on are the positions the policy proposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Sentence

STYLE_INDEX = {"s1": 0, "s2": 1}


@dataclass
class PositionDistribution:
    """Per-position probabilities with an optional blocking mask.

    Masking zeroes entries without renormalizing: argmax semantics only.
    mask[i] True means position i may not be chosen.
    """

    probs: torch.Tensor
    mask: torch.Tensor | None = None

    def masked_probs(self) -> torch.Tensor:
        if self.mask is None:
            return self.probs
        return self.probs.masked_fill(self.mask, 0.0)

    def argmax(self) -> int:
        p = self.probs.detach().clone()
        if self.mask is not None:
            p[self.mask] = -1.0  # below any probability, so never promoted
        return int(torch.argmax(p).item())

    def sample(self, generator: torch.Generator) -> int:
        return int(torch.multinomial(self.probs.detach(), 1, generator=generator).item())


class PointerNetwork(nn.Module):
    """Bi-LSTM encoder + additive attention position policy + pooled classifier."""

    def __init__(self, vocab_size: int, embed_dim: int = 128, hidden_dim: int = 256,
                 attn_dim: int = 128):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.attn_dim = attn_dim
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.encoder = nn.LSTM(embed_dim, hidden_dim, bidirectional=True)
        self.attn_query = nn.Linear(2 * hidden_dim, attn_dim, bias=False)
        self.attn_key = nn.Linear(2 * hidden_dim, attn_dim, bias=True)
        self.attn_v = nn.Linear(attn_dim, 1, bias=False)
        self.classifier = nn.Linear(2 * hidden_dim, 2, bias=False)
        # Zero logits at init: an untrained classifier answers (0.5, 0.5).
        nn.init.zeros_(self.classifier.weight)

    def encode(self, sentence: Sentence) -> tuple[torch.Tensor, torch.Tensor]:
        """Return per-position states (T, 2H) and the sentence state (2H,)."""
        ids = torch.tensor(sentence.tokens, dtype=torch.long)
        emb = self.embedding(ids).unsqueeze(1)      # (T, 1, E)
        states, (h_n, _) = self.encoder(emb)        # states (T, 1, 2H)
        states = states.squeeze(1)
        sent_state = torch.cat([h_n[0, 0], h_n[1, 0]])  # final forward + final backward
        return states, sent_state

    def _scores(self, states: torch.Tensor, sent_state: torch.Tensor) -> torch.Tensor:
        q = self.attn_query(sent_state)
        k = self.attn_key(states)
        return self.attn_v(torch.tanh(q + k)).squeeze(-1)  # (T,)

    def policy(self, sentence: Sentence, mask: torch.Tensor | None = None) -> PositionDistribution:
        states, sent_state = self.encode(sentence)
        probs = F.softmax(self._scores(states, sent_state), dim=0)
        return PositionDistribution(probs, mask)

    def policy_and_classify(self, sentence: Sentence) -> tuple[PositionDistribution, torch.Tensor]:
        """One encoder pass serving both heads (they share the attention weights)."""
        states, sent_state = self.encode(sentence)
        probs = F.softmax(self._scores(states, sent_state), dim=0)
        pooled = probs @ states
        style_probs = F.softmax(self.classifier(pooled), dim=0)
        return PositionDistribution(probs), style_probs

    def classify(self, sentence: Sentence) -> torch.Tensor:
        """Probabilities (p(s1|x), p(s2|x)) from the attention-pooled encoding."""
        return self.policy_and_classify(sentence)[1]

    def classify_batch(self, batch: list[Sentence]) -> torch.Tensor:
        """(B, 2) style probabilities; padding positions carry zero attention."""
        lengths = torch.tensor([len(s) for s in batch])
        t_max = int(lengths.max())
        ids = torch.zeros(t_max, len(batch), dtype=torch.long)
        for b, s in enumerate(batch):
            ids[: len(s), b] = torch.tensor(s.tokens)
        emb = self.embedding(ids)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths, enforce_sorted=False)
        states_packed, (h_n, _) = self.encoder(packed)
        states, _ = nn.utils.rnn.pad_packed_sequence(states_packed)  # (T, B, 2H)
        sent_state = torch.cat([h_n[0], h_n[1]], dim=1)              # (B, 2H)
        scores = self.attn_v(torch.tanh(
            self.attn_query(sent_state).unsqueeze(0) + self.attn_key(states)
        )).squeeze(-1)                                               # (T, B)
        pad = torch.arange(t_max).unsqueeze(1) >= lengths.unsqueeze(0)
        scores = scores.masked_fill(pad, float("-inf"))
        probs = F.softmax(scores, dim=0)
        pooled = torch.einsum("tb,tbh->bh", probs, states)
        return F.softmax(self.classifier(pooled), dim=1)


def classification_loss(model: PointerNetwork, batch: list[Sentence]) -> torch.Tensor:
    """Mean negative log-likelihood of each sentence's own style."""
    probs = model.classify_batch(batch)
    labels = torch.tensor([STYLE_INDEX[s.style] for s in batch])
    return F.nll_loss(torch.log(probs.clamp_min(1e-12)), labels)


def pointer_policy_loss(model: PointerNetwork, sentence: Sentence, position: int,
                        reward: float) -> torch.Tensor:
    """REINFORCE surrogate -R * log mu(i|x); the reward enters as a constant."""
    dist = model.policy(sentence)
    return -reward * torch.log(dist.probs[position].clamp_min(1e-12))
