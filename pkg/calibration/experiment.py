"""Budget/config experiments behind the frozen calibration numbers.

Usage:
    python3 calibration/experiment.py --iterations 48000 --runs full,no_reconstruction

For each named run this trains at the calibration configuration (with the
requested episode budget), evaluates the test split both with the ablation's
operator restriction applied at inference and without it, and prints the
replace-generator's argmax word distribution at oracle style positions --
the quickest probe of whether word generation has converged.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_calibration import (  # noqa: E402
    ABLATIONS,
    LM_CONFIG,
    N_PER_STYLE,
    TRAIN_CONFIG,
    evaluate_bundle,
)

import styledit as sd  # noqa: E402
from styledit.edit_engine import OperatorKind  # noqa: E402
from styledit.evaluator import (  # noqa: E402
    content_preservation_rate,
    corpus_bleu,
    pointer_precision,
    style_flip_rate,
    synthetic_references,
)
from styledit.inference_engine import (  # noqa: E402
    InferenceConfig,
    train_termination_classifier,
    transfer_corpus,
)
from styledit.language_model import LMConfig, train_lm  # noqa: E402
from styledit.trainer import TrainConfig, Trainer  # noqa: E402


def rep_argmax_probe(bundle, corpora, oracle, spec):
    """Distribution of Rep-generator argmax words at oracle style positions."""
    out = {}
    for src in sd.STYLES:
        tgt = sd.other_style(src)
        own = set(spec.pos_lexicon if src == "s1" else spec.neg_lexicon)
        opposite = set(spec.neg_lexicon if src == "s1" else spec.pos_lexicon)
        words = Counter()
        for toks, orc in zip(corpora[src].test, oracle[(src, "test")]):
            sent = sd.encode(toks, bundle.vocab, src)
            for p in orc.style_positions:
                dist = bundle.generators.word_distribution(
                    sent, p, OperatorKind.REP, f"{src}_to_{tgt}")
                words[bundle.vocab.token_of(int(dist.argmax()))] += 1
        total = sum(words.values())
        out[f"{src}_to_{tgt}"] = {
            "opposite_frac": sum(c for w, c in words.items() if w in opposite) / total,
            "own_frac": sum(c for w, c in words.items() if w in own) / total,
            "negator_frac": words.get(spec.negator, 0) / total,
            "top": words.most_common(5),
        }
    return out


def restricted_eval(bundle, corpora, oracle, spec, allowed):
    out = {}
    for src in sd.STYLES:
        tgt = sd.other_style(src)
        sources = corpora[src].test
        oracles = oracle[(src, "test")]
        encoded = [sd.encode(t, bundle.vocab, src) for t in sources]
        cfg = InferenceConfig(direction=f"{src}_to_{tgt}", operators_allowed=allowed)
        transferred, traces = transfer_corpus(encoded, cfg, bundle)
        outputs = [sd.decode(s, bundle.vocab) for s in transferred]
        refs = synthetic_references(sources, oracles, spec, tgt)
        out[f"{src}_to_{tgt}"] = {
            "flip_rate": style_flip_rate(outputs, tgt, spec),
            "content_preservation": content_preservation_rate(sources, outputs, oracles),
            "pointer_precision": pointer_precision(traces, oracles),
            "bleu_vs_refs": corpus_bleu(outputs, refs),
            "mean_steps": sum(len(t) for t in traces) / len(traces),
        }
    keys = ("flip_rate", "content_preservation", "pointer_precision", "bleu_vs_refs")
    out["mean"] = {k: sum(out[d][k] for d in out if d != "mean") / 2 for k in keys}
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=TRAIN_CONFIG["iterations"])
    ap.add_argument("--runs", default="full,no_reconstruction")
    ap.add_argument("--save-dir", default="/tmp/styledit_experiments")
    args = ap.parse_args()

    spec = sd.default_synthetic_spec()
    c1, c2, oracle = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    lms = {s: train_lm(corpora[s], vocab, LMConfig(**LM_CONFIG)) for s in corpora}
    term = train_termination_classifier(
        corpora, vocab, embed_dim=64, hidden_dim=96, attn_dim=64, seed=0)
    save_dir = Path(args.save_dir)
    save_dir.mkdir(parents=True, exist_ok=True)

    for name in args.runs.split(","):
        overrides = dict(ABLATIONS.get(name, {}))
        cfg = TrainConfig(**{**TRAIN_CONFIG, **overrides,
                             "iterations": args.iterations})
        trainer = Trainer(corpora, vocab, cfg, lms)
        t0 = time.time()
        trainer.pretrain_classifier()
        trainer.train_loop()
        secs = round(time.time() - t0, 1)
        bundle = trainer.bundle(term_classifier=term)
        bundle.eval_mode()
        bundle.save(save_dir / f"{name}_{args.iterations}.pt")

        metrics = evaluate_bundle(bundle, corpora, oracle, spec)
        print(f"\n== {name} @ {args.iterations} ({secs}s) ==")
        print("unrestricted:", json.dumps(metrics["mean"], sort_keys=True))
        for d in ("s1_to_s2", "s2_to_s1"):
            print(f"  {d}: ", json.dumps(metrics[d], sort_keys=True))
        allowed = overrides.get("operators_allowed")
        if allowed:
            r = restricted_eval(bundle, corpora, oracle, spec,
                                tuple(allowed) + (OperatorKind.SKIP,))
            print("restricted:  ", json.dumps(r["mean"], sort_keys=True))
        probe = rep_argmax_probe(bundle, corpora, oracle, spec)
        for d, p in probe.items():
            print(f"  rep argmax {d}: opposite={p['opposite_frac']:.3f} "
                  f"own={p['own_frac']:.3f} negator={p['negator_frac']:.3f} "
                  f"top={p['top']}")


if __name__ == "__main__":
    main()
