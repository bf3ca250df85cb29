"""Tokenization, vocabulary, corpus loading, and the synthetic styled corpus.

Sentences are whitespace-tokenized, lowercased word sequences. A corpus is a
pair of directories, one per style, each holding train/dev/test files with one
sentence per line. The synthetic generator produces a desk-scale two-style
corpus from templates plus polarity lexicons, together with an oracle that
records exactly which token positions carry the style signal.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, CorpusLoadError

log = logging.getLogger(__name__)

UNK = "⟨unk⟩"
PAD = "⟨pad⟩"
BOS = "⟨bos⟩"
EOS = "⟨eos⟩"
RESERVED_TOKENS = (UNK, PAD, BOS, EOS)

STYLES = ("s1", "s2")

STYLE_SLOT = "<style>"
NEUTRAL_SLOT = "<neutral>"


def other_style(style: str) -> str:
    if style == "s1":
        return "s2"
    if style == "s2":
        return "s1"
    raise ValueError(f"unknown style {style!r}")


@dataclass(frozen=True)
class Vocab:
    """Token/id mapping with fixed reserved ids.

    Reserved ids occupy 0..3 in the order unk, pad, bos, eos. All other ids
    follow in frequency-descending, then lexicographic order, which makes
    construction deterministic and permutation-invariant over the corpus.
    """

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    min_freq: int = 1
    unk_id: int = 0
    pad_id: int = 1
    bos_id: int = 2
    eos_id: int = 3

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def reserved_ids(self) -> tuple[int, ...]:
        return (self.unk_id, self.pad_id, self.bos_id, self.eos_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def content_hash(self) -> str:
        payload = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: Path | str) -> None:
        # One token per line; line number equals id, reserved tokens first.
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], min_freq: int = 1) -> "Vocab":
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError("token list must start with the reserved tokens")
        return cls(
            token_to_id={t: i for i, t in enumerate(tokens)},
            id_to_token=tuple(tokens),
            min_freq=min_freq,
        )

    @classmethod
    def load(cls, path: Path | str) -> "Vocab":
        p = Path(path)
        if not p.exists():
            raise CorpusLoadError(f"vocab file not found: {p}")
        tokens = p.read_text(encoding="utf-8").splitlines()
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise CorpusLoadError(f"vocab file {p} does not start with reserved tokens")
        return cls(
            token_to_id={t: i for i, t in enumerate(tokens)},
            id_to_token=tuple(tokens),
        )


@dataclass(frozen=True)
class Sentence:
    """Immutable token-id sequence tagged with the style it was drawn from."""

    tokens: tuple[int, ...]
    style: str

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("empty sentences are rejected")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class StyleCorpus:
    """Train/dev/test splits of raw (pre-encoding) token sequences for one style."""

    style: str
    train: list[list[str]] = field(default_factory=list)
    dev: list[list[str]] = field(default_factory=list)
    test: list[list[str]] = field(default_factory=list)

    @property
    def splits(self) -> dict[str, list[list[str]]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


@dataclass(frozen=True)
class SentenceOracle:
    """Gold annotation of where the style signal sits in a generated sentence."""

    style_positions: tuple[int, ...]
    negator_positions: tuple[int, ...] = ()

    @property
    def marked_positions(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.style_positions) | set(self.negator_positions)))


@dataclass
class SyntheticSpec:
    """Recipe for the generated two-style corpus.

    Templates are token lists in which ``<style>`` marks the polarity slot and
    ``<neutral>`` marks a filler slot. Style s1 renders its slots with a
    positive reading, s2 with a negative reading; with probability
    ``negation_rate`` a slot is rendered as negator + opposite-polarity word,
    which reads as the slot's own polarity.
    """

    templates: list[list[str]]
    pos_lexicon: list[str]
    neg_lexicon: list[str]
    neutral_lexicon: list[str]
    negation_rate: float = 0.2
    negator: str = "not"
    seed: int = 0

    def __post_init__(self):
        if set(self.pos_lexicon) & set(self.neg_lexicon):
            raise ConfigError("pos_lexicon and neg_lexicon must be disjoint")
        if not 0.0 <= self.negation_rate <= 1.0:
            raise ConfigError("negation_rate must lie in [0, 1]")
        for t in self.templates:
            if STYLE_SLOT not in t:
                raise ConfigError(f"template without style slot: {t}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "templates": self.templates,
                "pos_lexicon": self.pos_lexicon,
                "neg_lexicon": self.neg_lexicon,
                "neutral_lexicon": self.neutral_lexicon,
                "negation_rate": self.negation_rate,
                "negator": self.negator,
                "seed": self.seed,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls(**json.loads(text))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "SyntheticSpec":
        p = Path(path)
        if not p.exists():
            raise CorpusLoadError(f"synthetic spec not found: {p}")
        return cls.from_json(p.read_text(encoding="utf-8"))


def default_synthetic_spec(seed: int = 0) -> SyntheticSpec:
    """Ten templates, 12 words per polarity, fillers sized to avoid duplicate sentences."""
    nouns = NEUTRAL_SLOT
    return SyntheticSpec(
        templates=[
            ["the", nouns, "was", STYLE_SLOT, "overall"],
            ["i", "think", "the", nouns, "is", STYLE_SLOT, "here"],
            ["the", nouns, "and", "the", nouns, "were", STYLE_SLOT, "today"],
            ["we", "found", "the", nouns, "really", STYLE_SLOT, "this", "time"],
            ["this", "place", "serves", STYLE_SLOT, nouns, "every", "single", "day"],
            ["the", nouns, "here", "is", STYLE_SLOT, "and", "the", nouns, "is", "nearby"],
            ["honestly", "the", nouns, "seemed", STYLE_SLOT, "to", "us", "yesterday"],
            ["my", "friend", "says", "the", nouns, "is", STYLE_SLOT, "most", "days"],
            ["the", nouns, "was", STYLE_SLOT, "when", "we", "visited", "last", "week"],
            ["that", nouns, "looked", STYLE_SLOT, "at", "first", "glance", "to", "me"],
        ],
        pos_lexicon=[
            "good", "great", "tasty", "friendly", "clean", "fresh",
            "lovely", "helpful", "cozy", "fast", "delicious", "polite",
        ],
        neg_lexicon=[
            "bad", "awful", "bland", "rude", "dirty", "stale",
            "gloomy", "useless", "cramped", "slow", "disgusting", "hostile",
        ],
        neutral_lexicon=[
            "food", "service", "staff", "place", "room",
            "coffee", "pizza", "burger", "bread", "patio",
        ],
        seed=seed,
    )


def build_vocab(corpora: list[StyleCorpus], min_freq: int = 1) -> Vocab:
    """Construct the vocabulary over all splits of the given corpora."""
    if not corpora:
        raise ConfigError("build_vocab requires at least one corpus")
    counts: Counter[str] = Counter()
    for corpus in corpora:
        for split in corpus.splits.values():
            for tokens in split:
                counts.update(tokens)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = RESERVED_TOKENS + tuple(kept)
    return Vocab(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
        min_freq=min_freq,
    )


def encode(tokens: Sequence[str], vocab: Vocab, style: str) -> Sentence:
    """Map token strings to ids; out-of-vocabulary tokens become unk."""
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    return Sentence(tuple(vocab.id_of(t) for t in tokens), style)


def decode(sentence: Sentence, vocab: Vocab) -> list[str]:
    return [vocab.token_of(i) for i in sentence.tokens]


def encode_corpus(corpus: StyleCorpus, vocab: Vocab) -> dict[str, list[Sentence]]:
    return {
        name: [encode(tokens, vocab, corpus.style) for tokens in split]
        for name, split in corpus.splits.items()
    }


def oracle_style(tokens: Sequence[str], spec: SyntheticSpec) -> str | None:
    """Rule-based style label: polarity of lexicon words, flipped under a negator.

    Returns "s1" for a net positive reading, "s2" for net negative, None when
    no style evidence remains.
    """
    pos = set(spec.pos_lexicon)
    neg = set(spec.neg_lexicon)
    score = 0
    for i, tok in enumerate(tokens):
        if tok in pos:
            polarity = 1
        elif tok in neg:
            polarity = -1
        else:
            continue
        if i > 0 and tokens[i - 1] == spec.negator:
            polarity = -polarity
        score += polarity
    if score > 0:
        return "s1"
    if score < 0:
        return "s2"
    return None


def _render(template: list[str], style: str, spec: SyntheticSpec,
            rng: random.Random) -> tuple[list[str], SentenceOracle]:
    own, opposite = (
        (spec.pos_lexicon, spec.neg_lexicon) if style == "s1"
        else (spec.neg_lexicon, spec.pos_lexicon)
    )
    tokens: list[str] = []
    style_positions: list[int] = []
    negator_positions: list[int] = []
    for slot in template:
        if slot == NEUTRAL_SLOT:
            tokens.append(rng.choice(spec.neutral_lexicon))
        elif slot == STYLE_SLOT:
            if rng.random() < spec.negation_rate:
                negator_positions.append(len(tokens))
                tokens.append(spec.negator)
                style_positions.append(len(tokens))
                tokens.append(rng.choice(opposite))
            else:
                style_positions.append(len(tokens))
                tokens.append(rng.choice(own))
        else:
            tokens.append(slot)
    return tokens, SentenceOracle(tuple(style_positions), tuple(negator_positions))


def generate_synthetic(
    spec: SyntheticSpec,
    n_per_style: int,
    split_fractions: tuple[float, float] = (0.8, 0.1),
) -> tuple[StyleCorpus, StyleCorpus, dict[tuple[str, str], list[SentenceOracle]]]:
    """Generate two deduplicated style corpora plus the position oracle.

    The oracle maps (style, split) to a list of per-sentence annotations
    aligned with the split order. Deduplication keeps the three splits
    disjoint by construction.
    """
    if n_per_style < 1:
        raise ConfigError("n_per_style must be >= 1")
    rng = random.Random(spec.seed)
    corpora: dict[str, StyleCorpus] = {}
    oracle: dict[tuple[str, str], list[SentenceOracle]] = {}
    for style in STYLES:
        seen: set[tuple[str, ...]] = set()
        sentences: list[list[str]] = []
        annotations: list[SentenceOracle] = []
        attempts = 0
        while len(sentences) < n_per_style:
            attempts += 1
            if attempts > 200 * n_per_style:
                raise ConfigError(
                    "synthetic space too small for the requested n_per_style; "
                    "add templates or neutral words"
                )
            tokens, ann = _render(rng.choice(spec.templates), style, spec, rng)
            key = tuple(tokens)
            if key in seen:
                continue
            seen.add(key)
            sentences.append(tokens)
            annotations.append(ann)
        n_train = int(n_per_style * split_fractions[0])
        n_dev = int(n_per_style * split_fractions[1])
        corpora[style] = StyleCorpus(
            style=style,
            train=sentences[:n_train],
            dev=sentences[n_train:n_train + n_dev],
            test=sentences[n_train + n_dev:],
        )
        oracle[(style, "train")] = annotations[:n_train]
        oracle[(style, "dev")] = annotations[n_train:n_train + n_dev]
        oracle[(style, "test")] = annotations[n_train + n_dev:]
    return corpora["s1"], corpora["s2"], oracle


def save_oracle(oracle: dict[tuple[str, str], list[SentenceOracle]],
                path: Path | str) -> None:
    doc = {
        f"{style}/{split}": [
            {"style_positions": list(a.style_positions),
             "negator_positions": list(a.negator_positions)}
            for a in anns
        ]
        for (style, split), anns in oracle.items()
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_oracle(path: Path | str) -> dict[tuple[str, str], list[SentenceOracle]]:
    p = Path(path)
    if not p.exists():
        raise CorpusLoadError(f"oracle file not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    out: dict[tuple[str, str], list[SentenceOracle]] = {}
    for key, anns in doc.items():
        style, split = key.split("/")
        out[(style, split)] = [
            SentenceOracle(tuple(a["style_positions"]), tuple(a["negator_positions"]))
            for a in anns
        ]
    return out


def _read_split(path: Path) -> tuple[list[list[str]], int]:
    sentences: list[list[str]] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            tokens = line.lower().split()
            if not tokens:
                skipped += 1
                continue
            sentences.append(tokens)
    return sentences, skipped


def load_corpus(dir_path: Path | str, style_tag: str) -> StyleCorpus:
    """Load train/dev/test files from a style directory, lowercasing tokens."""
    root = Path(dir_path)
    splits: dict[str, list[list[str]]] = {}
    for name in ("train", "dev", "test"):
        path = root / f"{name}.txt"
        if not path.exists():
            raise CorpusLoadError(f"missing corpus file: {path}")
        sentences, skipped = _read_split(path)
        if skipped:
            log.warning("skipped %d blank line(s) in %s", skipped, path)
        splits[name] = sentences
    corpus = StyleCorpus(style=style_tag, **splits)
    as_sets = {name: {tuple(t) for t in split} for name, split in corpus.splits.items()}
    if (as_sets["train"] & as_sets["dev"]) or (as_sets["train"] & as_sets["test"]) \
            or (as_sets["dev"] & as_sets["test"]):
        log.warning("corpus splits under %s overlap", root)
    return corpus


def save_corpus(corpus: StyleCorpus, dir_path: Path | str) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for name, split in corpus.splits.items():
        lines = "\n".join(" ".join(tokens) for tokens in split)
        (root / f"{name}.txt").write_text(lines + "\n", encoding="utf-8")
