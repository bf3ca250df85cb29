"""Shared fixtures: the synthetic task plus the trained models built on it.

Training fixtures are session-scoped and deterministic (every trainer seeds
torch itself), so any subset of the suite sees identical models.  The
configuration here mirrors calibration/run_calibration.py; the acceptance
suite cross-checks that the recorded calibration report used the same values.
"""

from __future__ import annotations

import pytest

import styledit as sd
from styledit.edit_engine import OperatorKind
from styledit.inference_engine import train_termination_classifier
from styledit.language_model import LMConfig, train_lm
from styledit.trainer import TrainConfig, Trainer

N_PER_STYLE = 2000
ITERATIONS = 48_000
LM_KW = dict(embed_dim=64, hidden_dim=96, max_epochs=10, patience=3, seed=0)
TRAIN_KW = dict(
    iterations=ITERATIONS,
    seed=0,
    embed_dim=64,
    hidden_dim=96,
    attn_dim=64,
    gen_embed_dim=64,
    gen_hidden_dim=96,
    accumulate_episodes=16,
)
TERM_KW = dict(embed_dim=64, hidden_dim=96, attn_dim=64, seed=0)

# Ablation configurations compared against the full system; Skip stays
# available so restricted systems can decline an edit rather than being
# forced to mangle the sentence.
ABLATIONS = {
    "insert_only": dict(operators_allowed=(
        OperatorKind.IF, OperatorKind.IB, OperatorKind.SKIP)),
    "replace_only": dict(operators_allowed=(
        OperatorKind.REP, OperatorKind.SKIP)),
    "delete_only": dict(operators_allowed=(
        OperatorKind.DC, OperatorKind.DF, OperatorKind.DB, OperatorKind.SKIP)),
    "no_reconstruction": dict(disable_reconstruction=True),
}


@pytest.fixture(scope="session")
def synth():
    """The default synthetic task: (spec, corpora by style, vocab, oracle)."""
    spec = sd.default_synthetic_spec()
    c1, c2, oracle = sd.generate_synthetic(spec, N_PER_STYLE)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    return spec, corpora, vocab, oracle


@pytest.fixture(scope="session")
def style_lms(synth):
    _, corpora, vocab, _ = synth
    return {s: train_lm(corpora[s], vocab, LMConfig(**LM_KW)) for s in corpora}


@pytest.fixture(scope="session")
def term_classifier(synth):
    _, corpora, vocab, _ = synth
    return train_termination_classifier(corpora, vocab, **TERM_KW)


def _train_bundle(synth, style_lms, term_classifier, **overrides):
    _, corpora, vocab, _ = synth
    cfg = TrainConfig(**{**TRAIN_KW, **overrides})
    trainer = Trainer(corpora, vocab, cfg, style_lms)
    history = trainer.pretrain_classifier()
    trainer.train_loop()
    bundle = trainer.bundle(term_classifier=term_classifier)
    bundle.eval_mode()
    bundle.pretrain_history = history
    return bundle


@pytest.fixture(scope="session")
def full_system(synth, style_lms, term_classifier):
    """The full configuration trained at the calibrated budget."""
    return _train_bundle(synth, style_lms, term_classifier)


@pytest.fixture(scope="session")
def ablation_systems(synth, style_lms, term_classifier):
    return {
        name: _train_bundle(synth, style_lms, term_classifier, **overrides)
        for name, overrides in ABLATIONS.items()
    }


@pytest.fixture(scope="session")
def eval_classifier(synth):
    _, corpora, vocab, _ = synth
    return sd.train_eval_classifier(corpora, vocab, seed=0)


@pytest.fixture(scope="session")
def tiny_task():
    """A small, quick-to-train variant for tests that only need plumbing."""
    spec = sd.default_synthetic_spec(seed=3)
    c1, c2, oracle = sd.generate_synthetic(spec, 200)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    return spec, corpora, vocab, oracle
