"""Automatic evaluation.

Transfer accuracy comes from an independently trained convolutional text
classifier; content overlap from an unsmoothed corpus BLEU that mirrors the
Moses multi-bleu script (clipped modified n-gram precisions for n=1..4,
geometric mean, closest-reference-length brevity penalty, case-insensitive).
On synthetic data the generation oracle supplies sharper metrics: a rule-based
style label for flip rate, an LCS recall of style-independent source tokens
for content preservation, and the hit rate of first pointed positions against
oracle style positions. A p_stop sweep traces the accuracy/BLEU trade-off.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import (Sentence, SentenceOracle, StyleCorpus, SyntheticSpec, Vocab,
                     decode, encode_corpus, oracle_style, other_style)
from .edit_engine import TraceStep
from .errors import ConfigError, ContractError
from .inference_engine import InferenceConfig, transfer_corpus
from .pointer_agent import STYLE_INDEX

log = logging.getLogger(__name__)


# -- independent style classifier ---------------------------------------------

class TextCNN(nn.Module):
    """Parallel width-{3,4,5} convolutions, max-pooled, softmax head."""

    def __init__(self, vocab_size: int, embed_dim: int = 64, num_filters: int = 32,
                 widths: tuple[int, ...] = (3, 4, 5), pad_id: int = 1):
        super().__init__()
        self.pad_id = pad_id
        self.widths = widths
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.convs = nn.ModuleList(
            nn.Conv1d(embed_dim, num_filters, w) for w in widths)
        self.fc = nn.Linear(num_filters * len(widths), 2)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """ids (B, T) -> logits (B, 2)."""
        emb = self.embedding(ids).transpose(1, 2)          # (B, E, T)
        pooled = [F.relu(conv(emb)).max(dim=2).values for conv in self.convs]
        return self.fc(torch.cat(pooled, dim=1))

    def classify_batch(self, sentences: list[Sentence]) -> torch.Tensor:
        t_max = max(max(len(s) for s in sentences), max(self.widths))
        ids = torch.full((len(sentences), t_max), self.pad_id, dtype=torch.long)
        for b, s in enumerate(sentences):
            ids[b, : len(s)] = torch.tensor(s.tokens)
        return F.softmax(self(ids), dim=1)


def train_eval_classifier(corpora: dict[str, StyleCorpus], vocab: Vocab, *,
                          embed_dim: int = 64, num_filters: int = 32,
                          epochs: int = 20, target_dev_accuracy: float = 0.97,
                          lr: float = 1e-3, batch_size: int = 64,
                          seed: int = 0) -> TextCNN:
    torch.manual_seed(seed)
    rng = random.Random(seed)
    model = TextCNN(len(vocab), embed_dim, num_filters, pad_id=vocab.pad_id)
    encoded = {s: encode_corpus(corpora[s], vocab) for s in sorted(corpora)}
    train = [s for st in sorted(encoded) for s in encoded[st]["train"]]
    dev = [s for st in sorted(encoded) for s in encoded[st]["dev"]] or train
    gold_dev = torch.tensor([STYLE_INDEX[s.style] for s in dev])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for epoch in range(epochs):
        model.train()
        order = list(range(len(train)))
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = [train[i] for i in order[start:start + batch_size]]
            probs = model.classify_batch(batch)
            labels = torch.tensor([STYLE_INDEX[s.style] for s in batch])
            loss = F.nll_loss(torch.log(probs.clamp_min(1e-12)), labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            acc = float((model.classify_batch(dev).argmax(dim=1) == gold_dev)
                        .float().mean())
        log.info("eval classifier epoch %d dev accuracy %.4f", epoch, acc)
        if acc >= target_dev_accuracy:
            break
    model.eval()
    return model


# -- corpus BLEU --------------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _as_tokens(item, vocab: Vocab | None) -> list[str]:
    if isinstance(item, Sentence):
        if vocab is None:
            raise ContractError("decoding Sentence inputs requires a vocab")
        return [t.lower() for t in decode(item, vocab)]
    return [str(t).lower() for t in item]


def corpus_bleu(outputs, references, vocab: Vocab | None = None,
                max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100], matching the Moses multi-bleu script.

    `references[k]` is the nonempty list of references for `outputs[k]`.
    No smoothing: a corpus-wide zero n-gram overlap at any order gives 0.
    The brevity penalty uses, per sentence, the reference length closest to
    the output length (ties to the shorter reference).
    """
    if len(outputs) != len(references):
        raise ContractError(
            f"{len(outputs)} outputs vs {len(references)} reference sets")
    if not outputs:
        raise ContractError("empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for out, refs in zip(outputs, references):
        if not refs:
            raise ContractError("every output needs at least one reference")
        hyp = _as_tokens(out, vocab)
        ref_tokens = [_as_tokens(r, vocab) for r in refs]
        hyp_len += len(hyp)
        best = min(ref_tokens, key=lambda r: (abs(len(r) - len(hyp)), len(r)))
        ref_len += len(best)
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            clip = Counter()
            for r in ref_tokens:
                rc = _ngrams(r, n)
                for g in rc:
                    clip[g] = max(clip[g], rc[g])
            total[n - 1] += sum(counts.values())
            matched[n - 1] += sum(min(c, clip[g]) for g, c in counts.items())
    if any(t == 0 for t in total):
        return 0.0
    if any(m == 0 for m in matched):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / max(hyp_len, 1))
    return 100.0 * bp * math.exp(log_prec)


# -- oracle metrics -----------------------------------------------------------

def lcs_length(a: list[str], b: list[str]) -> int:
    """Classic O(len(a)*len(b)) longest-common-subsequence length."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def style_flip_rate(outputs: list[list[str]], target_style: str,
                    spec: SyntheticSpec) -> float:
    hits = sum(1 for toks in outputs if oracle_style(toks, spec) == target_style)
    return hits / len(outputs)


def content_preservation_rate(sources: list[list[str]],
                              outputs: list[list[str]],
                              oracles: list[SentenceOracle]) -> float:
    """Mean LCS recall of the style-independent source tokens in the output."""
    rates = []
    for src, out, orc in zip(sources, outputs, oracles):
        content = [t for i, t in enumerate(src) if i not in orc.marked_positions]
        rates.append(1.0 if not content else lcs_length(content, out) / len(content))
    return sum(rates) / len(rates)


def pointer_precision(traces: list[list[TraceStep]],
                      oracles: list[SentenceOracle]) -> float | None:
    """Fraction of first pointed positions landing on oracle-marked (style or
    negation) positions; None when no trace took a step."""
    hits = tries = 0
    for tr, orc in zip(traces, oracles):
        if not tr:
            continue
        tries += 1
        if tr[0].action.position in orc.marked_positions:
            hits += 1
    return None if tries == 0 else hits / tries


def synthetic_references(sources: list[list[str]], oracles: list[SentenceOracle],
                         spec: SyntheticSpec, target_style: str,
                         max_refs: int = 64) -> list[list[list[str]]]:
    """All target-style renderings of each source with content held fixed.

    Every oracle-marked style expression is rewritten both directly (a
    target-polarity word, any negator dropped) and in negated form (negator
    plus an opposite-polarity word); with several expressions the variants
    combine as a product, capped at max_refs.
    """
    direct = list(spec.neg_lexicon if target_style == "s2" else spec.pos_lexicon)
    negated = list(spec.pos_lexicon if target_style == "s2" else spec.neg_lexicon)
    out: list[list[list[str]]] = []
    for src, orc in zip(sources, oracles):
        neg_set = set(orc.negator_positions)
        exprs = []  # (word position, had a negator in front) right-to-left
        for p in sorted(orc.style_positions, reverse=True):
            exprs.append((p, (p - 1) in neg_set))
        variants_per_expr = []
        for p, negated_src in exprs:
            opts = [("direct", w) for w in direct] + [("negated", w) for w in negated]
            variants_per_expr.append([(p, negated_src, mode, w) for mode, w in opts])
        refs = []
        for combo in itertools.islice(itertools.product(*variants_per_expr), max_refs):
            toks = list(src)
            for p, negated_src, mode, w in combo:  # rightmost first: stable indices
                toks[p] = w
                if mode == "direct" and negated_src:
                    del toks[p - 1]
                elif mode == "negated" and not negated_src:
                    toks.insert(p, spec.negator)
            refs.append(toks)
        out.append(refs or [list(src)])
    return out


# -- report -------------------------------------------------------------------

ACCURACY_CAVEAT = ("classifier accuracy rewards any output the classifier reads "
                   "as the target style, including degenerate ones; judge it "
                   "together with BLEU / content preservation")


@dataclass
class EvalReport:
    direction: str
    accuracy: float
    bleu: float | None = None
    synthetic_oracle: dict | None = None
    sentences: list[dict] = field(default_factory=list)
    accuracy_caveat: str = ACCURACY_CAVEAT

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ContractError("accuracy must lie in [0, 1]")
        if self.bleu is not None and not 0.0 <= self.bleu <= 100.0:
            raise ContractError("bleu must lie in [0, 100]")
        if self.synthetic_oracle:
            for key, val in self.synthetic_oracle.items():
                if val is not None and not 0.0 <= val <= 1.0:
                    raise ContractError(f"{key} must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(outputs: list[Sentence], *, target_style: str, classifier: TextCNN,
             vocab: Vocab, references: list[list[list[str]]] | None = None,
             sources: list[list[str]] | None = None,
             oracles: list[SentenceOracle] | None = None,
             synthetic_spec: SyntheticSpec | None = None,
             traces: list[list[TraceStep]] | None = None) -> EvalReport:
    """Assemble the metric report for one transfer direction's outputs."""
    if not outputs:
        raise ContractError("no outputs to evaluate")
    with torch.no_grad():
        probs = classifier.classify_batch(outputs)
    target_idx = STYLE_INDEX[target_style]
    predicted = probs.argmax(dim=1)
    accuracy = float((predicted == target_idx).float().mean())
    out_tokens = [decode(s, vocab) for s in outputs]
    bleu = None
    if references is not None:
        bleu = corpus_bleu(out_tokens, references)
    oracle_block = None
    if oracles is not None and synthetic_spec is not None and sources is not None:
        oracle_block = {
            "style_flip_rate": style_flip_rate(out_tokens, target_style, synthetic_spec),
            "content_preservation_rate":
                content_preservation_rate(sources, out_tokens, oracles),
            "pointer_precision":
                None if traces is None else pointer_precision(traces, oracles),
        }
    records = []
    for k, toks in enumerate(out_tokens):
        rec = {
            "output": toks,
            "p_target": float(probs[k, target_idx]),
            "predicted_style": "s1" if int(predicted[k]) == 0 else "s2",
        }
        if sources is not None:
            rec["source"] = sources[k]
        records.append(rec)
    direction = f"{other_style(target_style)}_to_{target_style}"
    return EvalReport(direction=direction, accuracy=accuracy, bleu=bleu,
                      synthetic_oracle=oracle_block, sentences=records)


# -- p_stop sweep -------------------------------------------------------------

def tradeoff_sweep(bundle, sentences: list[Sentence], p_stops: list[float], *,
                   direction: str, classifier: TextCNN,
                   j_max: int = 6, eta: float = 1.0,
                   csv_path: str | Path | None = None,
                   plot_path: str | Path | None = None) -> list[dict]:
    """Transfer the corpus at each p_stop; report accuracy, BLEU against the
    source sentences, and mean trace length per setting."""
    if not p_stops:
        raise ConfigError("p_stops must be nonempty")
    target = "s2" if direction == "s1_to_s2" else "s1"
    src_tokens = [decode(s, bundle.vocab) for s in sentences]
    rows = []
    for p_stop in p_stops:
        cfg = InferenceConfig(direction=direction, p_stop=p_stop,
                              j_max=j_max, eta=eta)
        outputs, traces = transfer_corpus(sentences, cfg, bundle)
        with torch.no_grad():
            probs = classifier.classify_batch(outputs)
        acc = float((probs.argmax(dim=1) == STYLE_INDEX[target]).float().mean())
        out_tokens = [decode(s, bundle.vocab) for s in outputs]
        bleu_vs_source = corpus_bleu(out_tokens, [[t] for t in src_tokens])
        rows.append({
            "p_stop": p_stop,
            "accuracy": acc,
            "bleu_vs_source": bleu_vs_source,
            "mean_trace_length": sum(len(t) for t in traces) / len(traces),
        })
        log.info("sweep p_stop=%.2f acc=%.3f bleu_vs_source=%.2f", p_stop, acc,
                 bleu_vs_source)
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    if plot_path is not None:
        _plot_sweep(rows, plot_path)
    return rows


def _plot_sweep(rows: list[dict], path: str | Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [r["p_stop"] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(xs, [r["accuracy"] for r in rows], "o-", color="tab:blue",
             label="accuracy")
    ax1.set_xlabel("p_stop")
    ax1.set_ylabel("accuracy", color="tab:blue")
    ax1.set_ylim(-0.02, 1.02)
    ax2 = ax1.twinx()
    ax2.plot(xs, [r["bleu_vs_source"] for r in rows], "s--", color="tab:red",
             label="BLEU vs source")
    ax2.set_ylabel("BLEU vs source", color="tab:red")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
