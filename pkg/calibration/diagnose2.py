"""Bucket flip failures of a saved bundle by negation and first action."""

from __future__ import annotations

import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_calibration import N_PER_STYLE  # noqa: E402

import styledit as sd  # noqa: E402
from styledit.inference_engine import InferenceConfig, transfer  # noqa: E402


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "/tmp/styledit_experiments/full_48000.pt"
    bundle = sd.load_bundle(path)
    spec = sd.default_synthetic_spec()
    c1, c2, oracle = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}

    for src in sd.STYLES:
        tgt = sd.other_style(src)
        cfg = InferenceConfig(direction=f"{src}_to_{tgt}")
        buckets = Counter()
        examples = {}
        for toks, orc in zip(corpora[src].test, oracle[(src, "test")]):
            x = sd.encode(toks, bundle.vocab, src)
            out, trace = transfer(x, cfg, bundle)
            verdict = sd.oracle_style(sd.decode(out, bundle.vocab), spec)
            negated = bool(orc.negator_positions)
            ok = verdict == tgt
            key = (negated, ok)
            buckets[key] += 1
            if not ok and buckets[(negated, False)] <= 3:
                examples.setdefault(key, []).append((toks, trace, out))
        print(f"\n=== {src}->{tgt} ===")
        for (negated, ok), n in sorted(buckets.items()):
            print(f"  negated={negated} flipped={ok}: {n}")
        for key, exs in examples.items():
            for toks, trace, out in exs:
                print(f"  FAIL negated={key[0]}: {' '.join(toks)}")
                for s in trace:
                    w = bundle.vocab.token_of(s.action.word) if s.action.word is not None else None
                    print(f"    step {s.step}: {s.action.op.value}@{s.action.position}"
                          f" word={w} -> {' '.join(sd.decode(s.after, bundle.vocab))}"
                          f"  (crit={s.scores['criterion']:.4g}, p_src={s.scores['source_confidence']:.3f})")
                if not trace:
                    print("    (no steps taken)")
                print(f"    out: {' '.join(sd.decode(out, bundle.vocab))}")


if __name__ == "__main__":
    main()
