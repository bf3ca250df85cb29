"""Deterministic semantics of the seven sentence operators.

Positions are 0-based. An action addresses a position in the sentence it is
applied to; inserts grow the sentence by one, deletes shrink it by one, and
deletes are never allowed to empty the sentence. The reconstruction mapping
returns, for every delete/replace action, the inverse insert/replace actions
(expressed in the edited sentence's coordinates) that restore the original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Collection, Iterable

from .corpus import Sentence, Vocab, decode, encode
from .errors import ContractError


class OperatorKind(Enum):
    IF = "IF"        # insert a word in front of the position
    IB = "IB"        # insert a word behind the position
    REP = "Rep"      # replace the word at the position
    DC = "DC"        # delete the current word
    DF = "DF"        # delete the word in front of the position
    DB = "DB"        # delete the word behind the position
    SKIP = "Skip"    # do not change anything

    @property
    def parameterized(self) -> bool:
        return self in _PARAMETERIZED

    @property
    def deletes(self) -> bool:
        return self in _DELETES


_PARAMETERIZED = frozenset({OperatorKind.IF, OperatorKind.IB, OperatorKind.REP})
_DELETES = frozenset({OperatorKind.DC, OperatorKind.DF, OperatorKind.DB})


# Fixed enumeration order, used for deterministic tie-breaking.
TABLE_ORDER = (
    OperatorKind.IF, OperatorKind.IB, OperatorKind.REP,
    OperatorKind.DC, OperatorKind.DF, OperatorKind.DB, OperatorKind.SKIP,
)


@dataclass(frozen=True)
class EditAction:
    op: OperatorKind
    position: int
    word: int | None = None

    def __post_init__(self):
        if self.op.parameterized and self.word is None:
            raise ValueError(f"{self.op.value} requires a word")
        if not self.op.parameterized and self.word is not None:
            raise ValueError(f"{self.op.value} does not take a word")


@dataclass(frozen=True)
class ReconstructionTarget:
    """Inverse action (in edited-sentence coordinates) restoring the original word."""

    op_prime: OperatorKind
    position_prime: int
    gold_word: int

    def as_action(self) -> EditAction:
        return EditAction(self.op_prime, self.position_prime, self.gold_word)


@lru_cache(maxsize=None)
def _valid_operators(t: int, position: int) -> frozenset[OperatorKind]:
    ops = {OperatorKind.IF, OperatorKind.IB, OperatorKind.REP, OperatorKind.SKIP}
    if t >= 2:
        ops.add(OperatorKind.DC)
    if position >= 1:
        ops.add(OperatorKind.DF)
    if position <= t - 2:
        ops.add(OperatorKind.DB)
    return frozenset(ops)


def valid_operators(sentence: Sentence, position: int) -> frozenset[OperatorKind]:
    """Operators legal at this position; deletes that would empty the sentence are not."""
    t = len(sentence)
    if not 0 <= position < t:
        raise IndexError(f"position {position} out of range for length {t}")
    return _valid_operators(t, position)


def apply(sentence: Sentence, action: EditAction) -> Sentence:
    """Apply one operator, returning a new sentence; the input is never mutated.

    Validity is checked inline (equivalent to membership in valid_operators)
    because this sits on the hot path of exhaustive edit-graph sweeps.
    """
    toks = sentence.tokens
    t = len(toks)
    i = action.position
    op = action.op
    if not 0 <= i < t:
        raise IndexError(f"position {i} out of range for length {t}")
    if op is OperatorKind.IF:
        new = toks[:i] + (action.word,) + toks[i:]
    elif op is OperatorKind.IB:
        new = toks[:i + 1] + (action.word,) + toks[i + 1:]
    elif op is OperatorKind.REP:
        new = toks[:i] + (action.word,) + toks[i + 1:]
    elif op is OperatorKind.DC:
        if t < 2:
            raise ContractError(
                f"DC invalid at position {i} of a length-{t} sentence")
        new = toks[:i] + toks[i + 1:]
    elif op is OperatorKind.DF:
        if i < 1:
            raise ContractError(
                f"DF invalid at position {i} of a length-{t} sentence")
        new = toks[:i - 1] + toks[i:]
    elif op is OperatorKind.DB:
        if i > t - 2:
            raise ContractError(
                f"DB invalid at position {i} of a length-{t} sentence")
        new = toks[:i + 1] + toks[i + 2:]
    else:
        return sentence
    return Sentence(new, sentence.style)


def deleted_index(action: EditAction) -> int:
    """Original-sentence index removed by a delete action."""
    if action.op is OperatorKind.DC:
        return action.position
    if action.op is OperatorKind.DF:
        return action.position - 1
    if action.op is OperatorKind.DB:
        return action.position + 1
    raise ContractError(f"{action.op.value} deletes nothing")


def inserted_index(action: EditAction) -> int:
    """Edited-sentence index of the word written by an insert/replace action."""
    if action.op in (OperatorKind.IF, OperatorKind.REP):
        return action.position
    if action.op is OperatorKind.IB:
        return action.position + 1
    raise ContractError(f"{action.op.value} writes no word")


def reconstruction_targets(action: EditAction, original: Sentence) -> list[ReconstructionTarget]:
    """Inverse (operator, position, word) triples for a delete/replace action.

    Positions refer to the edited sentence. Candidates whose position falls
    outside the edited sentence (possible after boundary deletes) are dropped
    rather than clamped.
    """
    i = action.position
    if action.op is OperatorKind.REP:
        return [ReconstructionTarget(OperatorKind.REP, i, original.tokens[i])]
    if not action.op.deletes:
        raise ContractError(f"no reconstruction targets for {action.op.value}")
    gold = original.tokens[deleted_index(action)]
    if action.op is OperatorKind.DC:
        pairs = [(OperatorKind.IF, i), (OperatorKind.IB, i - 1)]
    elif action.op is OperatorKind.DF:
        pairs = [(OperatorKind.IF, i - 1), (OperatorKind.IB, i - 2)]
    else:  # DB
        pairs = [(OperatorKind.IF, i + 1), (OperatorKind.IB, i)]
    t_edited = len(original) - 1
    return [
        ReconstructionTarget(op, pos, gold)
        for op, pos in pairs
        if 0 <= pos < t_edited
    ]


def neighbors(tokens: tuple[int, ...], word_ids: Collection[int],
              max_len: int) -> Iterable[tuple[int, ...]]:
    """All sentences one edit away, with intermediate length capped at max_len."""
    t = len(tokens)
    for i in range(t):
        if t < max_len:
            for w in word_ids:
                yield tokens[:i] + (w,) + tokens[i:]        # IF
                yield tokens[:i + 1] + (w,) + tokens[i + 1:]  # IB
        for w in word_ids:
            if w != tokens[i]:
                yield tokens[:i] + (w,) + tokens[i + 1:]      # Rep
        if t >= 2:
            yield tokens[:i] + tokens[i + 1:]                 # DC (covers DF/DB)


def reachable(source: Sentence, target: Sentence, max_steps: int,
              word_ids: Collection[int], max_len: int | None = None) -> bool:
    """Breadth-first search over the edit closure.

    Insert words are drawn from word_ids. Intermediate sentences are capped at
    max_len (default: the longer of the two endpoints), which is sufficient
    because no shortest edit path needs to overshoot the target length.
    """
    if max_len is None:
        max_len = max(len(source), len(target))
    if source.tokens == target.tokens:
        return True
    frontier = {source.tokens}
    seen = {source.tokens}
    for _ in range(max_steps):
        nxt: set[tuple[int, ...]] = set()
        for state in frontier:
            for n in neighbors(state, word_ids, max_len):
                if n == target.tokens:
                    return True
                if n not in seen:
                    seen.add(n)
                    nxt.add(n)
        if not nxt:
            return False
        frontier = nxt
    return False


@dataclass
class TraceStep:
    """One revision in a transfer trajectory."""

    step: int
    before: Sentence
    action: EditAction
    after: Sentence
    scores: dict[str, float]
    masked_before: tuple[int, ...] = ()


def trace_to_jsonl(steps: list[TraceStep], vocab: Vocab) -> str:
    """Serialize a trace, one JSON object per line, with readable tokens."""
    lines = []
    for s in steps:
        lines.append(json.dumps({
            "step": s.step,
            "before": decode(s.before, vocab),
            "action": {
                "op": s.action.op.value,
                "position": s.action.position,
                "word": vocab.token_of(s.action.word) if s.action.word is not None else None,
            },
            "after": decode(s.after, vocab),
            "scores": s.scores,
        }))
    return "\n".join(lines)


def trace_from_jsonl(text: str, vocab: Vocab, style: str) -> list[TraceStep]:
    steps = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        word = doc["action"]["word"]
        steps.append(TraceStep(
            step=doc["step"],
            before=encode(doc["before"], vocab, style),
            action=EditAction(
                OperatorKind(doc["action"]["op"]),
                doc["action"]["position"],
                vocab.id_of(word) if word is not None else None,
            ),
            after=encode(doc["after"], vocab, style),
            scores=doc["scores"],
        ))
    return steps
