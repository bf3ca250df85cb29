"""How LM capacity changes the inference criterion on known misrankings.

Loads the saved 48k bundle (pointer classifier + generators unchanged),
retrains only the style LMs at several configs, and reprints the candidate
tables for the three sentences where deletes beat the correct edit.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_calibration import N_PER_STYLE  # noqa: E402

import styledit as sd  # noqa: E402
from styledit.edit_engine import TABLE_ORDER, EditAction, apply, valid_operators  # noqa: E402
from styledit.inference_engine import MaskState, _effective_mask  # noqa: E402
from styledit.language_model import LMConfig, train_lm  # noqa: E402
from styledit.pointer_agent import STYLE_INDEX  # noqa: E402

CASES = [
    ("the coffee here is friendly and the room is nearby", "s1", "s2"),
    ("the food was not tasty when we visited last week", "s2", "s1"),
    ("this place serves bland burger every single day", "s2", "s1"),
]

CONFIGS = [
    dict(embed_dim=64, hidden_dim=96, max_epochs=10, patience=3, seed=0),
    dict(embed_dim=96, hidden_dim=128, max_epochs=25, patience=6, seed=0),
    dict(embed_dim=128, hidden_dim=192, max_epochs=40, patience=10, seed=0),
]


def show(bundle, lms, tokens, src, tgt):
    x = sd.encode(tokens.split(), bundle.vocab, src)
    direction = f"{src}_to_{tgt}"
    blocked = _effective_mask(x, MaskState(), TABLE_ORDER)
    with torch.no_grad():
        i = bundle.pointer.policy(x, mask=blocked).argmax()
    rows = []
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
            lm = math.exp(float(lms[tgt].sentence_log_scores([cand])[0]))
            conf = float(bundle.pointer.classify_batch([cand])[0, STYLE_INDEX[tgt]])
        rows.append((lm * conf, op.value, lm, conf,
                     " ".join(sd.decode(cand, bundle.vocab))))
    rows.sort(reverse=True)
    print(f"  @{i}:", " | ".join(f"{op}:{crit:.3f}(lm {lm:.3f} c {conf:.3f})"
                                 for crit, op, lm, conf, _ in rows[:4]))
    print(f"    winner: {rows[0][1]} -> {rows[0][4]}")


def main():
    bundle = sd.load_bundle("/tmp/styledit_experiments/full_48000.pt")
    spec = sd.default_synthetic_spec()
    c1, c2, _ = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}
    for cfg in CONFIGS:
        t0 = time.time()
        lms = {s: train_lm(corpora[s], bundle.vocab, LMConfig(**cfg)) for s in corpora}
        ppl = {s: lms[s].dev_perplexity for s in lms}
        print(f"\n== LMConfig {cfg}  ({time.time()-t0:.1f}s, dev ppl {ppl}) ==")
        for tokens, src, tgt in CASES:
            print(f" {tokens}  [{src}->{tgt}]")
            show(bundle, lms, tokens, src, tgt)


if __name__ == "__main__":
    main()
