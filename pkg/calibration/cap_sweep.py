"""Sweep classifier_confidence_cap and measure end-to-end transfer quality."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_calibration import LM_CONFIG, N_PER_STYLE, TRAIN_CONFIG, evaluate_bundle  # noqa: E402
from experiment import rep_argmax_probe  # noqa: E402

import styledit as sd  # noqa: E402
from styledit.inference_engine import train_termination_classifier  # noqa: E402
from styledit.language_model import LMConfig, train_lm  # noqa: E402
from styledit.pointer_agent import STYLE_INDEX  # noqa: E402
from styledit.trainer import TrainConfig, Trainer  # noqa: E402

PROBES = [
    # (sentence, interesting style) - delete results that previously scored
    # near-certain confidences despite carrying no style evidence
    ("the coffee here is and the room is nearby", "s2"),
    ("the food was not when we visited last week", "s1"),
    ("the food was tasty when we visited last week", "s1"),
    ("the coffee here is disgusting and the room is nearby", "s2"),
]


def main():
    iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 48_000
    caps = [float(w) for w in (sys.argv[2].split(",") if len(sys.argv) > 2
                              else ("0.95", "0.9", "0.99"))]
    spec = sd.default_synthetic_spec()
    c1, c2, oracle = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    lms = {s: train_lm(corpora[s], vocab, LMConfig(**LM_CONFIG)) for s in corpora}
    term = train_termination_classifier(
        corpora, vocab, embed_dim=64, hidden_dim=96, attn_dim=64, seed=0)

    for cap in caps:
        cfg = TrainConfig(**{**TRAIN_CONFIG, "iterations": iterations,
                             "classifier_confidence_cap": cap})
        trainer = Trainer(corpora, vocab, cfg, lms)
        t0 = time.time()
        trainer.pretrain_classifier()
        trainer.train_loop()
        secs = round(time.time() - t0, 1)
        bundle = trainer.bundle(term_classifier=term)
        bundle.eval_mode()
        bundle.save(f"/tmp/styledit_experiments/full_cap{cap:g}_{iterations}.pt")
        metrics = evaluate_bundle(bundle, corpora, oracle, spec)
        print(f"\n== cap={cap:g} @ {iterations} ({secs}s) ==", flush=True)
        print("mean:", json.dumps(metrics["mean"], sort_keys=True))
        for d in ("s1_to_s2", "s2_to_s1"):
            print(f"  {d}:", json.dumps(metrics[d], sort_keys=True))
        for text, style in PROBES:
            x = sd.encode(text.split(), vocab, style)
            with torch.no_grad():
                p = float(bundle.pointer.classify(x)[STYLE_INDEX[style]])
            print(f"  conf({style}|{text!r}) = {p:.4f}")
        probe = rep_argmax_probe(bundle, corpora, oracle, spec)
        for d, p in probe.items():
            print(f"  rep argmax {d}: opposite={p['opposite_frac']:.3f} "
                  f"top={p['top'][:3]}")


if __name__ == "__main__":
    main()
