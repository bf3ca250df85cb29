"""Failure triage for the calibrated full run: why do some transfers not flip?

Retrains the exact calibration configuration (cached under /tmp between
invocations), then buckets every test-split sentence whose transferred output
the rule-based oracle does not label as the target style.
"""

from __future__ import annotations

import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_calibration import LM_CONFIG, N_PER_STYLE, TRAIN_CONFIG  # noqa: E402

import styledit as sd  # noqa: E402
from styledit.bundle import load_bundle  # noqa: E402
from styledit.corpus import oracle_style  # noqa: E402
from styledit.inference_engine import (  # noqa: E402
    InferenceConfig,
    train_termination_classifier,
    transfer_corpus,
)
from styledit.language_model import LMConfig, train_lm  # noqa: E402
from styledit.trainer import TrainConfig, Trainer  # noqa: E402

CACHE = Path("/tmp/styledit_diag_full.pt")


def build_bundle(corpora, vocab):
    if CACHE.exists():
        return load_bundle(CACHE, expect_vocab=vocab)
    lms = {s: train_lm(corpora[s], vocab, LMConfig(**LM_CONFIG)) for s in corpora}
    term = train_termination_classifier(
        corpora, vocab, embed_dim=64, hidden_dim=96, attn_dim=64, seed=0
    )
    trainer = Trainer(corpora, vocab, TrainConfig(**TRAIN_CONFIG), lms)
    trainer.pretrain_classifier()
    trainer.train_loop()
    bundle = trainer.bundle(term_classifier=term)
    bundle.eval_mode()
    bundle.save(CACHE)
    return bundle


def main():
    spec = sd.default_synthetic_spec()
    c1, c2, oracle = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    bundle = build_bundle(corpora, vocab)

    for src in sd.STYLES:
        tgt = sd.other_style(src)
        sources = corpora[src].test
        oracles = oracle[(src, "test")]
        encoded = [sd.encode(t, vocab, src) for t in sources]
        cfg = InferenceConfig(direction=f"{src}_to_{tgt}")
        transferred, traces = transfer_corpus(encoded, cfg, bundle)

        fails = []
        for k, out_sent in enumerate(transferred):
            out_toks = sd.decode(out_sent, vocab)
            got = oracle_style(out_toks, spec)
            if got != tgt:
                fails.append((k, out_toks, got))
        print(f"\n=== {src}->{tgt}: {len(fails)}/{len(sources)} failures ===")

        first_ops = Counter()
        labels = Counter()
        negated = Counter()
        for k, out_toks, got in fails:
            tr = traces[k]
            first = tr[0].action if tr else None
            first_ops[first.op.value if first else "none"] += 1
            labels[str(got)] += 1
            negated["negated" if oracles[k].negator_positions else "direct"] += 1
        print("verdicts:", dict(labels))
        print("first ops:", dict(first_ops))
        print("source form:", dict(negated))

        for k, out_toks, got in fails[:12]:
            print(f"\n  src: {' '.join(sources[k])}")
            print(f"  out: {' '.join(out_toks)}   (oracle={got})")
            for st in traces[k]:
                w = vocab.token_of(st.action.word) if st.action.word is not None else "-"
                print(
                    f"    step {st.step}: {st.action.op.value}@{st.action.position}"
                    f" word={w} crit={st.scores.get('criterion', float('nan')):.4g}"
                    f" p_src={st.scores.get('source_confidence', float('nan')):.3f}"
                )


if __name__ == "__main__":
    main()
