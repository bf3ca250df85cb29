"""Command-line pipeline.

Subcommands mirror the stages of the method: prepare-data builds (or loads)
a corpus pair plus vocabulary; pretrain-lm and pretrain-classifier produce
the frozen scorers the trainer depends on; train runs the episode loop and
writes the full model bundle; transfer, evaluate, sweep, and score consume
it. Every stage writes a manifest recording its config, seed, input hashes,
and a content hash of the package source, so artifacts are traceable to the
exact code and settings that produced them.

Exit codes: 0 success, 2 usage or bad input, 3 missing pipeline stage,
4 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .bundle import ModelBundle, load_bundle
from .corpus import (STYLES, StyleCorpus, SyntheticSpec, Vocab, build_vocab,
                     default_synthetic_spec, encode, generate_synthetic,
                     load_corpus, load_oracle, save_corpus, save_oracle)
from .errors import (ConfigError, ContractError, DivergenceError,
                     PreconditionError, StyleditError)
from .evaluator import (corpus_bleu, evaluate, synthetic_references,
                        tradeoff_sweep, train_eval_classifier)
from .edit_engine import trace_to_jsonl
from .inference_engine import (InferenceConfig, TerminationClassifier,
                               train_termination_classifier, transfer_corpus)
from .language_model import load_lms, save_lms, train_lm
from .pointer_agent import PointerNetwork
from .trainer import TrainConfig, Trainer

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_DIVERGENCE = 0, 2, 3, 4

MODEL_DIR_ENV = "STYLEDIT_MODEL_DIR"


def _timestamp() -> int:
    """Creation time; SOURCE_DATE_EPOCH pins it for reproducible artifacts."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    return int(epoch) if epoch else int(time.time())


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _code_hash() -> str:
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for py in sorted(root.glob("*.py")):
        h.update(py.name.encode())
        h.update(py.read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance record written next to every stage's artifacts."""

    command: str
    config: dict = field(default_factory=dict)
    seed: int | None = None
    vocab_hash: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    artifact_hashes: dict[str, str] = field(default_factory=dict)
    code_hash: str = field(default_factory=_code_hash)
    created_unix: int = field(default_factory=_timestamp)

    def add_artifact(self, name: str, path: Path) -> None:
        self.artifacts[name] = str(path)
        self.artifact_hashes[name] = _file_hash(path)

    def save(self, out_dir: Path) -> Path:
        path = Path(out_dir) / f"manifest-{self.command}.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2,
                                   sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


# -- shared I/O helpers -------------------------------------------------------

def _load_data_dir(data_dir: Path):
    """Corpora + vocab (+ synthetic spec and oracle when present)."""
    data_dir = Path(data_dir)
    corpora = {s: load_corpus(data_dir / s, s) for s in STYLES}
    vocab_path = data_dir / "vocab.txt"
    vocab = Vocab.load(vocab_path) if vocab_path.exists() \
        else build_vocab([corpora[s] for s in STYLES])
    spec = oracle = None
    if (data_dir / "spec.json").exists():
        spec = SyntheticSpec.load(data_dir / "spec.json")
    if (data_dir / "oracle.json").exists():
        oracle = load_oracle(data_dir / "oracle.json")
    return corpora, vocab, spec, oracle


def _read_token_lines(path: Path) -> list[list[str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out = []
    for n, line in enumerate(lines, 1):
        toks = line.lower().split()
        if not toks:
            raise ContractError(f"blank line {n} in {path}")
        out.append(toks)
    if not out:
        raise ContractError(f"{path} contains no sentences")
    return out


def _write_token_lines(path: Path, sentences: list[list[str]]) -> None:
    Path(path).write_text(
        "".join(" ".join(t) + "\n" for t in sentences), encoding="utf-8")


def _save_classifier_stage(path: Path, pointer: PointerNetwork,
                           term: TerminationClassifier, vocab: Vocab) -> None:
    torch.save({
        "version": 1,
        "vocab_hash": vocab.content_hash(),
        "pointer": pointer.state_dict(),
        "pointer_dims": {"embed_dim": pointer.embed_dim,
                         "hidden_dim": pointer.hidden_dim,
                         "attn_dim": pointer.attn_dim},
        "term": term.state_dict(),
        "term_dims": {"embed_dim": term.embed_dim, "hidden_dim": term.hidden_dim,
                      "attn_dim": term.attn_dim,
                      "unk_noise_rate": term.unk_noise_rate},
    }, path)


def _load_classifier_stage(path: Path, vocab: Vocab):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("vocab_hash") != vocab.content_hash():
        raise ConfigError(f"{path} was trained against a different vocabulary")
    pd = payload["pointer_dims"]
    pointer = PointerNetwork(len(vocab), pd["embed_dim"], pd["hidden_dim"],
                             pd["attn_dim"])
    pointer.load_state_dict(payload["pointer"])
    td = payload["term_dims"]
    term = TerminationClassifier(len(vocab), td["embed_dim"], td["hidden_dim"],
                                 td["attn_dim"], td["unk_noise_rate"])
    term.load_state_dict(payload["term"])
    return pointer, term


def _default_model_dir(args_out) -> Path:
    if args_out:
        return Path(args_out)
    env = os.environ.get(MODEL_DIR_ENV)
    if env:
        return Path(env)
    raise ConfigError(f"no output directory: pass --out or set {MODEL_DIR_ENV}")


def _train_config(args) -> TrainConfig:
    return TrainConfig.load(args.config) if args.config else TrainConfig()


# -- subcommands --------------------------------------------------------------

def cmd_prepare_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("prepare-data")
    if args.synthetic_spec:
        spec = default_synthetic_spec() if args.synthetic_spec == "default" \
            else SyntheticSpec.load(args.synthetic_spec)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
        c1, c2, oracle = generate_synthetic(spec, args.n_per_style)
        corpora = {"s1": c1, "s2": c2}
        spec.save(out / "spec.json")
        save_oracle(oracle, out / "oracle.json")
        manifest.add_artifact("spec", out / "spec.json")
        manifest.add_artifact("oracle", out / "oracle.json")
        manifest.seed = spec.seed
    else:
        root = Path(args.corpus_dir)
        corpora = {s: load_corpus(root / s, s) for s in STYLES}
    for s in STYLES:
        save_corpus(corpora[s], out / s)
        for split in ("train", "dev", "test"):
            manifest.add_artifact(f"{s}/{split}", out / s / f"{split}.txt")
    vocab = build_vocab([corpora[s] for s in STYLES], min_freq=args.min_freq)
    vocab.save(out / "vocab.txt")
    manifest.add_artifact("vocab", out / "vocab.txt")
    manifest.vocab_hash = vocab.content_hash()
    sizes = {s: {k: len(v) for k, v in corpora[s].splits.items()} for s in STYLES}
    manifest.config = {"n_per_style": args.n_per_style, "min_freq": args.min_freq,
                       "split_sizes": sizes}
    manifest.save(out)
    for s in STYLES:
        print(f"{s}: " + "  ".join(f"{k}={v}" for k, v in sizes[s].items()))
    print(f"vocab: {len(vocab)} tokens -> {out / 'vocab.txt'}")
    return EXIT_OK


def cmd_pretrain_lm(args) -> int:
    corpora, vocab, _, _ = _load_data_dir(Path(args.data))
    config = _train_config(args)
    out = _default_model_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lms = {s: train_lm(corpora[s], vocab, config.lm) for s in STYLES}
    save_lms(lms, out / "lm.pt")
    manifest = RunManifest("pretrain-lm", config=json.loads(config.to_json()),
                           seed=config.lm.seed, vocab_hash=vocab.content_hash())
    manifest.add_artifact("lm", out / "lm.pt")
    manifest.save(out)
    for s in STYLES:
        print(f"{s} dev perplexity: " +
              "  ".join(f"{k}={v:.3f}" for k, v in lms[s].dev_perplexity.items()))
    return EXIT_OK


def cmd_pretrain_classifier(args) -> int:
    corpora, vocab, _, _ = _load_data_dir(Path(args.data))
    config = _train_config(args)
    out = _default_model_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(corpora, vocab, config, lms={})
    history = trainer.pretrain_classifier()
    term = train_termination_classifier(
        corpora, vocab, args.unk_noise_rate,
        embed_dim=config.embed_dim, hidden_dim=config.hidden_dim,
        attn_dim=config.attn_dim, seed=config.seed)
    _save_classifier_stage(out / "classifier.pt", trainer.pointer, term, vocab)
    manifest = RunManifest("pretrain-classifier",
                           config=json.loads(config.to_json()),
                           seed=config.seed, vocab_hash=vocab.content_hash())
    manifest.add_artifact("classifier", out / "classifier.pt")
    manifest.save(out)
    print(f"pointer classifier dev accuracy: {history['dev_accuracy'][-1]:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    corpora, vocab, _, _ = _load_data_dir(Path(args.data))
    config = _train_config(args)
    out = _default_model_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    if args.resume:
        resumed = load_bundle(args.resume, expect_vocab=vocab)
        trainer = Trainer(corpora, vocab, config, resumed.lms)
        trainer.pointer.load_state_dict(resumed.pointer.state_dict())
        trainer.generators.load_state_dicts(resumed.generators.state_dicts())
        trainer.load_trainer_state(resumed.extra_state)
        term = resumed.term_classifier
        if term is None:
            # Loop checkpoints omit the termination classifier; pick it up
            # from the pretraining stage so the final bundle stays complete.
            cls_path = Path(args.classifier) if args.classifier else out / "classifier.pt"
            if cls_path.exists():
                _, term = _load_classifier_stage(cls_path, vocab)
    else:
        lm_path = Path(args.lm) if args.lm else out / "lm.pt"
        cls_path = Path(args.classifier) if args.classifier else out / "classifier.pt"
        if not lm_path.exists():
            raise PreconditionError(f"pretrain-lm required: {lm_path} not found")
        if not cls_path.exists():
            raise PreconditionError(
                f"pretrain-classifier required: {cls_path} not found")
        lms = load_lms(lm_path, vocab)
        pointer, term = _load_classifier_stage(cls_path, vocab)
        trainer = Trainer(corpora, vocab, config, lms, pointer=pointer)
    if config.checkpoint_every:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    mode = "a" if args.resume else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        trainer.train_loop(fh, ckpt_dir if config.checkpoint_every else None)
    bundle = trainer.bundle(term_classifier=term)
    bundle.eval_mode()
    bundle.save(out / "model.pt")
    manifest = RunManifest("train", config=json.loads(config.to_json()),
                           seed=config.seed, vocab_hash=vocab.content_hash())
    manifest.add_artifact("model", out / "model.pt")
    manifest.add_artifact("train_log", log_path)
    manifest.save(out)
    print(f"trained {config.iterations} episodes -> {out / 'model.pt'}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    bundle = load_bundle(args.model)
    if bundle.term_classifier is None:
        raise PreconditionError(
            "pretrain-classifier required: model bundle lacks a termination classifier")
    cfg = InferenceConfig(direction=args.direction, p_stop=args.p_stop,
                          j_max=args.j_max, eta=args.eta)
    token_lines = _read_token_lines(Path(args.input))
    sentences = [encode(toks, bundle.vocab, cfg.source_style)
                 for toks in token_lines]
    outputs, traces = transfer_corpus(sentences, cfg, bundle)
    from .corpus import decode
    _write_token_lines(Path(args.output), [decode(s, bundle.vocab) for s in outputs])
    if args.trace_out:
        blocks = [trace_to_jsonl(tr, bundle.vocab) for tr in traces]
        Path(args.trace_out).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
    edits = sum(len(t) for t in traces)
    print(f"transferred {len(outputs)} sentences with {edits} edits "
          f"-> {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    corpora, vocab, spec, oracle = _load_data_dir(Path(args.data))
    source = "s1" if args.direction == "s1_to_s2" else "s2"
    target = "s2" if args.direction == "s1_to_s2" else "s1"
    sources = corpora[source].test
    out_tokens = _read_token_lines(Path(args.outputs))
    if len(out_tokens) != len(sources):
        raise ContractError(
            f"{len(out_tokens)} outputs vs {len(sources)} test sentences")
    references = None
    if args.references:
        refs = _read_token_lines(Path(args.references))
        if len(refs) != len(out_tokens):
            raise ContractError(
                f"{len(refs)} references vs {len(out_tokens)} outputs")
        references = [[r] for r in refs]
    oracles = None
    if oracle is not None and spec is not None:
        oracles = oracle[(source, "test")]
        if references is None:
            references = synthetic_references(sources, oracles, spec, target)
    traces = None
    if args.traces:
        from .edit_engine import trace_from_jsonl

        blocks = Path(args.traces).read_text(encoding="utf-8").split("\n\n")
        traces = [trace_from_jsonl(b, vocab, source) for b in blocks]
        if len(traces) != len(out_tokens):
            raise ContractError(
                f"{len(traces)} trace blocks vs {len(out_tokens)} outputs")
    classifier = train_eval_classifier(corpora, vocab, seed=0)
    outputs = [encode(toks, vocab, source) for toks in out_tokens]
    report = evaluate(outputs, target_style=target, classifier=classifier,
                      vocab=vocab, references=references, sources=sources,
                      oracles=oracles, synthetic_spec=spec, traces=traces)
    Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    bleu_text = "n/a" if report.bleu is None else f"{report.bleu:.2f}"
    print(f"accuracy={report.accuracy:.4f}  bleu={bleu_text}")
    if report.synthetic_oracle:
        print("  ".join(f"{k}={v if v is None else round(v, 4)}"
                        for k, v in sorted(report.synthetic_oracle.items())))
    return EXIT_OK


def cmd_sweep(args) -> int:
    corpora, vocab, _, _ = _load_data_dir(Path(args.data))
    bundle = load_bundle(args.model, expect_vocab=vocab)
    if bundle.term_classifier is None:
        raise PreconditionError(
            "pretrain-classifier required: model bundle lacks a termination classifier")
    source = "s1" if args.direction == "s1_to_s2" else "s2"
    raw = corpora[source].test
    if args.limit:
        raw = raw[: args.limit]
    sentences = [encode(toks, vocab, source) for toks in raw]
    classifier = train_eval_classifier(corpora, vocab, seed=0)
    rows = tradeoff_sweep(bundle, sentences, args.p_stops,
                          direction=args.direction, classifier=classifier,
                          j_max=args.j_max, eta=args.eta,
                          csv_path=args.csv, plot_path=args.plot)
    for r in rows:
        print(f"p_stop={r['p_stop']:.2f}  accuracy={r['accuracy']:.4f}  "
              f"bleu_vs_source={r['bleu_vs_source']:.2f}  "
              f"steps={r['mean_trace_length']:.2f}")
    return EXIT_OK


def cmd_score(args) -> int:
    if args.model:
        bundle = load_bundle(args.model)
        vocab, lms = bundle.vocab, bundle.lms
    else:
        if not args.vocab:
            raise ConfigError("--lm requires --vocab")
        vocab = Vocab.load(args.vocab)
        lms = load_lms(args.lm, vocab)
    if args.style not in lms:
        raise ConfigError(f"no language model for style {args.style!r}")
    lm = lms[args.style]
    for toks in _read_token_lines(Path(args.input)):
        sent = encode(toks, vocab, args.style)
        with torch.no_grad():
            print(f"{lm.sentence_score(sent):.6g}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styledit",
        description="train and run an edit-based text style transfer system")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="build a corpus pair and vocabulary")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--synthetic-spec",
                       help="synthetic spec JSON path, or 'default'")
    group.add_argument("--corpus-dir",
                       help="directory with <style>/{train,dev,test}.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-style", type=int, default=2000)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("pretrain-lm", help="train per-style language models")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pretrain_lm)

    p = sub.add_parser("pretrain-classifier",
                       help="train the pointer and termination classifiers")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--unk-noise-rate", type=float, default=0.2)
    p.set_defaults(func=cmd_pretrain_classifier)

    p = sub.add_parser("train", help="run the episode training loop")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--lm", help="language-model checkpoint (default <out>/lm.pt)")
    p.add_argument("--classifier",
                   help="classifier checkpoint (default <out>/classifier.pt)")
    p.add_argument("--resume", help="continue from a training checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="rewrite sentences into the other style")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--direction", required=True, choices=["s1_to_s2", "s2_to_s1"])
    p.add_argument("--p-stop", type=float, default=0.5)
    p.add_argument("--j-max", type=int, default=6)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--trace-out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="score transferred outputs")
    p.add_argument("--model", required=True)
    p.add_argument("--outputs", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--direction", required=True, choices=["s1_to_s2", "s2_to_s1"])
    p.add_argument("--report", required=True)
    p.add_argument("--references")
    p.add_argument("--traces", help="trace file from transfer, for pointer precision")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="trace the p_stop accuracy/BLEU trade-off")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--direction", required=True, choices=["s1_to_s2", "s2_to_s1"])
    p.add_argument("--p-stops", type=float, nargs="+", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--plot")
    p.add_argument("--j-max", type=int, default=6)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="per-sentence language-model scores")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--lm")
    p.add_argument("--vocab")
    p.add_argument("--style", required=True, choices=["s1", "s2"])
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except StyleditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
