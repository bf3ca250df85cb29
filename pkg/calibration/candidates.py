"""Print the select_action candidate table for a few failing sentences."""

from __future__ import annotations

import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parent))

import styledit as sd  # noqa: E402
from styledit.edit_engine import TABLE_ORDER, EditAction, apply, valid_operators  # noqa: E402
from styledit.inference_engine import MaskState, _effective_mask  # noqa: E402
from styledit.pointer_agent import STYLE_INDEX  # noqa: E402


def table(bundle, tokens, src, tgt):
    x = sd.encode(tokens, bundle.vocab, src)
    direction = f"{src}_to_{tgt}"
    mask = MaskState()
    blocked = _effective_mask(x, mask, TABLE_ORDER)
    with torch.no_grad():
        dist = bundle.pointer.policy(x, mask=blocked)
    i = dist.argmax()
    probs = dist.masked_probs()
    print(f"\n{' '.join(tokens)}   [{direction}] -> position {i} ({tokens[i]})")
    top = sorted(range(len(tokens)), key=lambda k: -float(probs[k]))[:3]
    print("  pointer top:", [(k, tokens[k], round(float(probs[k]), 3)) for k in top])
    for op in TABLE_ORDER:
        if op not in valid_operators(x, i):
            continue
        if op.parameterized:
            with torch.no_grad():
                wdist = bundle.generators.word_distribution(x, i, op, direction)
            action = EditAction(op, i, int(wdist.argmax()))
        else:
            action = EditAction(op, i)
        cand = apply(x, action)
        with torch.no_grad():
            lm_log = float(bundle.lms[tgt].sentence_log_scores([cand])[0])
            conf = float(bundle.pointer.classify_batch([cand])[0, STYLE_INDEX[tgt]])
        w = bundle.vocab.token_of(action.word) if action.word is not None else ""
        import math
        print(f"  {op.value:>4} {w:<12} lm={math.exp(lm_log):.4f} conf={conf:.4f} "
              f"crit={math.exp(lm_log) * conf:.4f}  | {' '.join(sd.decode(cand, bundle.vocab))}")


def main():
    bundle = sd.load_bundle("/tmp/styledit_experiments/full_48000.pt")
    table(bundle, "the coffee here is friendly and the room is nearby".split(), "s1", "s2")
    table(bundle, "the food was not tasty when we visited last week".split(), "s2", "s1")
    table(bundle, "this place serves bland burger every single day".split(), "s2", "s1")


if __name__ == "__main__":
    main()
