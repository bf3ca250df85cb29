"""Calibration run behind the end-to-end quality gate in tests/test_acceptance.py.

Trains the full pipeline on the default synthetic task at the exact
configuration the acceptance suite uses, transfers the held-out test split in
both directions at default inference settings, and records style-flip rate,
content preservation, pointer precision, and reference BLEU.  The ablation
bundles (single-operator and no-reconstruction) are trained with the same
episode budget so the content-preservation comparison is like for like.

Run from the repository root:

    python3 calibration/run_calibration.py

Results land in calibration/report.json.  The thresholds asserted by the
acceptance suite were frozen against this report.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import styledit as sd
from styledit.edit_engine import OperatorKind
from styledit.evaluator import (
    content_preservation_rate,
    corpus_bleu,
    pointer_precision,
    style_flip_rate,
    synthetic_references,
)
from styledit.inference_engine import (
    InferenceConfig,
    train_termination_classifier,
    transfer_corpus,
)
from styledit.language_model import LMConfig, train_lm
from styledit.trainer import TrainConfig, Trainer

HERE = Path(__file__).resolve().parent

# The configuration under calibration; tests/conftest.py mirrors these values.
N_PER_STYLE = 2000
ITERATIONS = 24_000
LM_CONFIG = dict(embed_dim=64, hidden_dim=96, max_epochs=10, patience=3, seed=0)
TRAIN_CONFIG = dict(
    iterations=ITERATIONS,
    seed=0,
    embed_dim=64,
    hidden_dim=96,
    attn_dim=64,
    gen_embed_dim=64,
    gen_hidden_dim=96,
    accumulate_episodes=16,
)

ABLATIONS = {
    "insert_only": dict(operators_allowed=(OperatorKind.IF, OperatorKind.IB)),
    "replace_only": dict(operators_allowed=(OperatorKind.REP,)),
    "delete_only": dict(
        operators_allowed=(OperatorKind.DC, OperatorKind.DF, OperatorKind.DB)
    ),
    "no_reconstruction": dict(disable_reconstruction=True),
}


def evaluate_bundle(bundle, corpora, oracle, spec):
    """Transfer the test split both ways and compute the headline metrics."""
    out = {}
    for src in sd.STYLES:
        tgt = sd.other_style(src)
        sources = corpora[src].test
        oracles = oracle[(src, "test")]
        encoded = [sd.encode(t, bundle.vocab, src) for t in sources]
        cfg = InferenceConfig(direction=f"{src}_to_{tgt}")
        transferred, traces = transfer_corpus(encoded, cfg, bundle)
        outputs = [sd.decode(s, bundle.vocab) for s in transferred]
        refs = synthetic_references(sources, oracles, spec, tgt)
        out[f"{src}_to_{tgt}"] = {
            "flip_rate": style_flip_rate(outputs, tgt, spec),
            "content_preservation": content_preservation_rate(
                sources, outputs, oracles
            ),
            "pointer_precision": pointer_precision(traces, oracles),
            "bleu_vs_refs": corpus_bleu(outputs, refs),
            "mean_steps": sum(len(t) for t in traces) / len(traces),
        }
    keys = ("flip_rate", "content_preservation", "pointer_precision", "bleu_vs_refs")
    out["mean"] = {
        k: sum(out[d][k] for d in out if d != "mean") / 2 for k in keys
    }
    return out


def main():
    report = {"config": {"n_per_style": N_PER_STYLE, "train": TRAIN_CONFIG, "lm": LM_CONFIG}}
    t_start = time.time()

    spec = sd.default_synthetic_spec()
    c1, c2, oracle = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    report["data"] = {
        "vocab_size": len(vocab),
        "splits": {s: {k: len(v) for k, v in corpora[s].splits.items()} for s in corpora},
    }

    t0 = time.time()
    lms = {s: train_lm(corpora[s], vocab, LMConfig(**LM_CONFIG)) for s in corpora}
    report["lm"] = {
        "seconds": round(time.time() - t0, 1),
        "dev_perplexity": {s: lms[s].dev_perplexity for s in lms},
    }

    t0 = time.time()
    term = train_termination_classifier(
        corpora, vocab, embed_dim=64, hidden_dim=96, attn_dim=64, seed=0
    )
    report["termination_classifier_seconds"] = round(time.time() - t0, 1)

    runs = {"full": {}}
    runs.update(ABLATIONS)
    report["runs"] = {}
    for name, overrides in runs.items():
        cfg = TrainConfig(**{**TRAIN_CONFIG, **overrides})
        trainer = Trainer(corpora, vocab, cfg, lms)
        t0 = time.time()
        pre = trainer.pretrain_classifier()
        trainer.train_loop()
        train_seconds = round(time.time() - t0, 1)
        bundle = trainer.bundle(term_classifier=term)
        bundle.eval_mode()
        t0 = time.time()
        metrics = evaluate_bundle(bundle, corpora, oracle, spec)
        report["runs"][name] = {
            "train_seconds": train_seconds,
            "transfer_seconds": round(time.time() - t0, 1),
            "classifier_dev_accuracy": pre["dev_accuracy"][-1],
            "metrics": metrics,
        }
        print(
            f"{name}: {train_seconds}s train | "
            + json.dumps(metrics["mean"], sort_keys=True)
        )

    report["total_seconds"] = round(time.time() - t_start, 1)
    out_path = HERE / "report.json"
    out_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out_path} after {report['total_seconds']}s")


if __name__ == "__main__":
    main()
