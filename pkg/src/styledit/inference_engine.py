"""Iterative masked transfer.

At each step the pointer's argmax picks an unmasked position, every valid
operator there proposes a candidate edit (insert/replace words come from the
generator argmax), and the candidate maximizing

    c(x) = sentence_score_target(x) * p(target_style | x) ** eta

wins, ties broken by the fixed operator order. After an insert, replace, or
skip, the window of one word around the affected position is masked so later
steps cannot churn the same context; deletions mask nothing. The loop stops
when a noise-robust classifier, reading the sentence with masked positions
replaced by the unknown token, drops its source-style confidence to p_stop,
or after j_max steps, or when no unmasked position remains.

Everything here is argmax-deterministic: identical inputs and models give
identical traces, and because step decisions never read p_stop, raising it
can only truncate a trajectory, never alter it.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

import torch

from .corpus import Sentence, StyleCorpus, Vocab, encode_corpus
from .edit_engine import (EditAction, OperatorKind, TABLE_ORDER, TraceStep,
                          apply as apply_edit, deleted_index, inserted_index,
                          valid_operators)
from .errors import ConfigError, TrajectoryExhausted
from .operator_agent import DIRECTIONS
from .pointer_agent import STYLE_INDEX, PointerNetwork, classification_loss

log = logging.getLogger(__name__)


class TerminationClassifier(PointerNetwork):
    """Style classifier sharing the pointer's architecture, trained on
    unk-noised sentences so masked inputs still read as their style."""

    def __init__(self, vocab_size: int, embed_dim: int = 128, hidden_dim: int = 256,
                 attn_dim: int = 128, unk_noise_rate: float = 0.2):
        super().__init__(vocab_size, embed_dim, hidden_dim, attn_dim)
        if not 0.0 <= unk_noise_rate < 1.0:
            raise ConfigError("unk_noise_rate must be in [0, 1)")
        self.unk_noise_rate = unk_noise_rate


def _noised(sentence: Sentence, rate: float, unk_id: int, rng: random.Random) -> Sentence:
    tokens = tuple(unk_id if rng.random() < rate else t for t in sentence.tokens)
    return Sentence(tokens, sentence.style)


def train_termination_classifier(corpora: dict[str, StyleCorpus], vocab: Vocab,
                                 unk_noise_rate: float = 0.2, *,
                                 embed_dim: int = 128, hidden_dim: int = 256,
                                 attn_dim: int = 128, epochs: int = 20,
                                 target_dev_accuracy: float = 0.95,
                                 lr: float = 1e-3, batch_size: int = 64,
                                 seed: int = 0) -> TerminationClassifier:
    """Train the stop classifier on sentences with random unk replacements.

    Fresh noise is drawn every epoch, so the model sees many corruption
    patterns of each sentence; dev accuracy is measured under the same noise.
    """
    torch.manual_seed(seed)
    rng = random.Random(seed)
    model = TerminationClassifier(len(vocab), embed_dim, hidden_dim, attn_dim,
                                  unk_noise_rate)
    encoded = {s: encode_corpus(corpora[s], vocab) for s in sorted(corpora)}
    train = [s for st in sorted(encoded) for s in encoded[st]["train"]]
    dev = [s for st in sorted(encoded) for s in encoded[st]["dev"]] or train
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for epoch in range(epochs):
        model.train()
        order = list(range(len(train)))
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = [_noised(train[i], unk_noise_rate, vocab.unk_id, rng)
                     for i in order[start:start + batch_size]]
            loss = classification_loss(model, batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            noised_dev = [_noised(s, unk_noise_rate, vocab.unk_id, rng) for s in dev]
            pred = model.classify_batch(noised_dev).argmax(dim=1)
            gold = torch.tensor([STYLE_INDEX[s.style] for s in dev])
            acc = float((pred == gold).float().mean())
        log.info("termination classifier epoch %d noised dev accuracy %.4f", epoch, acc)
        if acc >= target_dev_accuracy:
            break
    model.eval()
    return model


@dataclass
class MaskState:
    """Set of positions the pointer may not select, tracked across edits."""

    masked: set[int] = field(default_factory=set)

    def is_masked(self, position: int) -> bool:
        return position in self.masked

    def all_masked(self, length: int) -> bool:
        return all(i in self.masked for i in range(length))

    def as_tensor(self, length: int) -> torch.Tensor:
        out = torch.zeros(length, dtype=torch.bool)
        for m in self.masked:
            if 0 <= m < length:
                out[m] = True
        return out

    def update(self, action: EditAction, new_length: int) -> None:
        """Re-index across the edit, then mask the window for non-deletes.

        Inserts shift masks at/after the new word right by one; deletes drop
        the deleted position and shift later masks left. Insert, replace and
        skip then mask the affected word and its two neighbors (window 1);
        deletes add nothing.
        """
        if action.op.deletes:
            d = deleted_index(action)
            self.masked = {m - 1 if m > d else m for m in self.masked if m != d}
            return
        if action.op in (OperatorKind.IF, OperatorKind.IB):
            p = inserted_index(action)
            self.masked = {m + 1 if m >= p else m for m in self.masked}
        else:  # Rep / Skip: positions unchanged
            p = action.position
        self.masked.update(w for w in (p - 1, p, p + 1) if 0 <= w < new_length)


def masked_sentence_for_termination(sentence: Sentence, mask: MaskState,
                                    unk_id: int = 0) -> Sentence:
    """Copy of the sentence with masked positions replaced by the unk token."""
    if not mask.masked:
        return sentence
    tokens = tuple(unk_id if mask.is_masked(i) else t
                   for i, t in enumerate(sentence.tokens))
    return Sentence(tokens, sentence.style)


@dataclass
class InferenceConfig:
    direction: str = "s1_to_s2"
    p_stop: float = 0.5
    j_max: int = 6
    eta: float = 1.0
    operators_allowed: tuple[OperatorKind, ...] = TABLE_ORDER

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"unknown direction {self.direction!r}")
        if not 0.0 <= self.p_stop <= 1.0:
            raise ConfigError("p_stop must lie in [0, 1]")
        if self.j_max < 1:
            raise ConfigError("j_max must be >= 1")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        ops = tuple(OperatorKind(o) if not isinstance(o, OperatorKind) else o
                    for o in self.operators_allowed)
        if not ops:
            raise ConfigError("operators_allowed must be nonempty")
        self.operators_allowed = ops

    @property
    def source_style(self) -> str:
        return "s1" if self.direction == "s1_to_s2" else "s2"

    @property
    def target_style(self) -> str:
        return "s2" if self.direction == "s1_to_s2" else "s1"


def _effective_mask(sentence: Sentence, mask: MaskState,
                    allowed: tuple[OperatorKind, ...]) -> torch.Tensor:
    """Positions that are masked or admit no allowed operator."""
    out = mask.as_tensor(len(sentence))
    allowed_set = set(allowed)
    for i in range(len(sentence)):
        if not out[i] and not (valid_operators(sentence, i) & allowed_set):
            out[i] = True
    return out


def select_action(sentence: Sentence, mask: MaskState, bundle, eta: float,
                  direction: str,
                  operators_allowed: tuple[OperatorKind, ...] = TABLE_ORDER
                  ) -> tuple[EditAction, float]:
    """Point at the best unmasked position, then pick the operator whose
    candidate edit maximizes the target-style fluency/confidence criterion."""
    target = "s2" if direction == "s1_to_s2" else "s1"
    blocked = _effective_mask(sentence, mask, operators_allowed)
    if bool(blocked.all()):
        raise TrajectoryExhausted("all positions masked")
    with torch.no_grad():
        dist = bundle.pointer.policy(sentence, mask=blocked)
    i = dist.argmax()
    allowed = set(operators_allowed)
    actions: list[EditAction] = []
    candidates: list[Sentence] = []
    for op in TABLE_ORDER:
        if op not in valid_operators(sentence, i) or op not in allowed:
            continue
        if op.parameterized:
            with torch.no_grad():
                wdist = bundle.generators.word_distribution(sentence, i, op, direction)
            action = EditAction(op, i, int(wdist.argmax()))
        else:
            action = EditAction(op, i)
        actions.append(action)
        candidates.append(apply_edit(sentence, action))
    with torch.no_grad():
        lm_logs = bundle.lms[target].sentence_log_scores(candidates)
        confs = bundle.pointer.classify_batch(candidates)[:, STYLE_INDEX[target]]
    best_idx, best_score = 0, float("-inf")
    for k in range(len(actions)):
        score = float(lm_logs[k].exp()) * float(confs[k]) ** eta
        if score > best_score:
            best_idx, best_score = k, score
    return actions[best_idx], best_score


def transfer(x: Sentence, config: InferenceConfig, bundle
             ) -> tuple[Sentence, list[TraceStep]]:
    """Run the revision loop on one sentence; returns output and full trace."""
    if bundle.term_classifier is None:
        raise ConfigError("bundle has no termination classifier")
    unk_id = bundle.vocab.unk_id
    src_idx = STYLE_INDEX[config.source_style]
    current = x
    mask = MaskState()
    trace: list[TraceStep] = []
    for j in range(1, config.j_max + 1):
        probe = masked_sentence_for_termination(current, mask, unk_id)
        with torch.no_grad():
            p_src = float(bundle.term_classifier.classify(probe)[src_idx])
        if p_src <= config.p_stop:
            break
        try:
            action, score = select_action(current, mask, bundle, config.eta,
                                          config.direction, config.operators_allowed)
        except TrajectoryExhausted:
            break
        edited = apply_edit(current, action)
        mask.update(action, len(edited))
        trace.append(TraceStep(
            step=j,
            before=current,
            action=action,
            after=edited,
            scores={"criterion": score, "source_confidence": p_src},
            masked_before=probe.tokens,
        ))
        current = edited
    return current, trace


def transfer_corpus(sentences: list[Sentence], config: InferenceConfig, bundle
                    ) -> tuple[list[Sentence], list[list[TraceStep]]]:
    outputs, traces = [], []
    for s in sentences:
        out, tr = transfer(s, config, bundle)
        outputs.append(out)
        traces.append(tr)
    return outputs, traces
