"""Low-level agent: how to edit at a pointed position.

Each transfer direction owns three word generators, one per parameterized
operator (insert-front, insert-behind, replace). A generator reads the
bidirectional encoder state at the pointed position and emits a distribution
over the vocabulary with reserved pseudo-tokens masked out. Operator selection
during training is uniform over the valid set.
"""

from __future__ import annotations

import random

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Sentence, Vocab
from .edit_engine import OperatorKind, ReconstructionTarget, TABLE_ORDER
from .errors import ContractError

DIRECTIONS = ("s1_to_s2", "s2_to_s1")
PARAMETERIZED = (OperatorKind.IF, OperatorKind.IB, OperatorKind.REP)


def reverse_direction(direction: str) -> str:
    if direction == "s1_to_s2":
        return "s2_to_s1"
    if direction == "s2_to_s1":
        return "s1_to_s2"
    raise ValueError(f"unknown direction {direction!r}")


def direction_for_source(style: str) -> str:
    return "s1_to_s2" if style == "s1" else "s2_to_s1"


class WordGenerator(nn.Module):
    """Encoder + projection producing P(word | sentence, position)."""

    def __init__(self, vocab_size: int, reserved_ids: tuple[int, ...],
                 embed_dim: int = 128, hidden_dim: int = 256):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.encoder = nn.LSTM(embed_dim, hidden_dim, bidirectional=True)
        self.proj = nn.Linear(2 * hidden_dim, vocab_size)
        blocked = torch.zeros(vocab_size, dtype=torch.bool)
        # Pad/bos/eos must never appear inside a sentence; unk stays emittable.
        for rid in reserved_ids[1:]:
            blocked[rid] = True
        self.register_buffer("blocked", blocked)

    def word_logits(self, sentence: Sentence, position: int) -> torch.Tensor:
        ids = torch.tensor(sentence.tokens, dtype=torch.long)
        emb = self.embedding(ids).unsqueeze(1)
        states, _ = self.encoder(emb)
        logits = self.proj(states.squeeze(1)[position])
        return logits.masked_fill(self.blocked, float("-inf"))

    def word_distribution(self, sentence: Sentence, position: int) -> torch.Tensor:
        return F.softmax(self.word_logits(sentence, position), dim=0)


class GeneratorBank:
    """The six generators, keyed by (direction, operator)."""

    def __init__(self, vocab: Vocab, embed_dim: int = 128, hidden_dim: int = 256):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self._nets: dict[tuple[str, OperatorKind], WordGenerator] = {}
        for d in DIRECTIONS:
            for op in PARAMETERIZED:
                self._nets[(d, op)] = WordGenerator(
                    len(vocab), vocab.reserved_ids, embed_dim, hidden_dim)

    def generator(self, direction: str, op: OperatorKind) -> WordGenerator:
        if not op.parameterized:
            raise ContractError(f"{op.value} has no word generator")
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        return self._nets[(direction, op)]

    def items(self):
        return self._nets.items()

    def word_distribution(self, sentence: Sentence, position: int,
                          op: OperatorKind, direction: str) -> torch.Tensor:
        if not 0 <= position < len(sentence):
            raise IndexError(f"position {position} out of range")
        return self.generator(direction, op).word_distribution(sentence, position)

    def state_dicts(self) -> dict[str, dict]:
        return {f"{d}/{op.value}": net.state_dict() for (d, op), net in self._nets.items()}

    def load_state_dicts(self, dicts: dict[str, dict]) -> None:
        for (d, op), net in self._nets.items():
            net.load_state_dict(dicts[f"{d}/{op.value}"])


def sample_uniform_operator(valid: frozenset[OperatorKind] | set[OperatorKind],
                            rng: random.Random) -> OperatorKind:
    """Uniform draw over the valid operator set."""
    if not valid:
        raise ContractError("empty operator set")
    ordered = [op for op in TABLE_ORDER if op in valid]
    return rng.choice(ordered)


def reconstruction_mle_loss(bank: GeneratorBank, edited: Sentence,
                            target: ReconstructionTarget, direction_prime: str) -> torch.Tensor:
    """-log M'(gold | edited, i'), differentiable through the primed generator."""
    dist = bank.word_distribution(edited, target.position_prime, target.op_prime,
                                  direction_prime)
    return -torch.log(dist[target.gold_word].clamp_min(1e-12))


def operator_policy_loss(bank: GeneratorBank, original: Sentence, position: int,
                         op: OperatorKind, word: int, reward: float,
                         direction: str) -> torch.Tensor:
    """REINFORCE surrogate -R * log M(w|x, i) on the acting direction's generator."""
    dist = bank.word_distribution(original, position, op, direction)
    return -reward * torch.log(dist[word].clamp_min(1e-12))
