"""Episode-based training loop.

Pipeline: per-style language models, classifier pretraining, then a loop of
single-edit episodes alternating transfer direction. Each episode samples a
position from the pointer policy, a uniformly chosen valid operator, and (for
insert/replace) a word; rewards are the classifier-confidence delta, the
target-style LM probability of the generated word, and (for replace) a
reconstruction reward from the reverse generator. The pointer trains on the
confidence reward plus the classification loss; generators train by REINFORCE
on their own sampled word; deletes additionally supervise the reverse-direction
inserters with the deleted word. Rewards are plain floats, so no gradient can
leak through them.

Episodes run with batch size 1; gradients accumulate over a configurable
number of episodes before any optimizer steps, and only components that
actually received gradients are stepped (so momentum never drifts idle
parameters).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .bundle import ModelBundle
from .corpus import Sentence, StyleCorpus, Vocab, decode, encode_corpus, other_style
from .edit_engine import (EditAction, OperatorKind, TABLE_ORDER, apply as apply_edit,
                          inserted_index, reconstruction_targets, valid_operators)
from .errors import ConfigError, ContractError, DivergenceError
from .language_model import LMConfig, StyleLM, train_lm
from .operator_agent import (DIRECTIONS, GeneratorBank, direction_for_source,
                             operator_policy_loss, reconstruction_mle_loss,
                             reverse_direction, sample_uniform_operator)
from .pointer_agent import (STYLE_INDEX, PointerNetwork, classification_loss,
                            pointer_policy_loss)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """All knobs for the training pipeline. Coefficients must be >= 0."""

    lambda_lm: float = 0.5
    lambda_conf: float = 1.0
    lambda_rec: float = 0.5
    iterations: int = 2000
    seed: int = 0
    operators_allowed: tuple[OperatorKind, ...] = TABLE_ORDER
    disable_reconstruction: bool = False
    baseline_enabled: bool = False
    baseline_decay: float = 0.95
    accumulate_episodes: int = 16
    pointer_lr: float = 1e-3
    generator_lr: float = 1e-3
    classifier_lr: float = 1e-3
    # The classification loss keeps running through the RL phase so the
    # confidence head tracks any encoder drift.  On cleanly separable data an
    # uncapped NLL would keep sharpening the head for the whole run and
    # saturate its probabilities at 0/1 — which wrecks both the confidence
    # reward and the confidence factor in the edit-selection criterion, since
    # a saturated head is just as certain about broken sentences.  Clamping
    # the per-sentence NLL at -log(cap) maintains accuracy without that
    # runaway sharpening; cap=1.0 restores the plain uncapped loss.
    classifier_loss_during_rl: bool = True
    classifier_confidence_cap: float = 0.95
    classifier_max_epochs: int = 30
    classifier_target_dev_accuracy: float = 0.95
    classifier_batch_size: int = 64
    embed_dim: int = 128
    hidden_dim: int = 256
    attn_dim: int = 128
    gen_embed_dim: int = 128
    gen_hidden_dim: int = 256
    checkpoint_every: int = 0
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        if min(self.lambda_lm, self.lambda_conf, self.lambda_rec) < 0:
            raise ConfigError("reward coefficients must be nonnegative")
        ops = tuple(OperatorKind(o) if not isinstance(o, OperatorKind) else o
                    for o in self.operators_allowed)
        if not ops:
            raise ConfigError("operators_allowed must be nonempty")
        self.operators_allowed = ops
        if self.iterations < 0 or self.accumulate_episodes < 1:
            raise ConfigError("iterations must be >= 0 and accumulate_episodes >= 1")
        if not 0.0 < self.classifier_confidence_cap <= 1.0:
            raise ConfigError("classifier_confidence_cap must be in (0, 1]")
        if self.checkpoint_every and self.checkpoint_every % self.accumulate_episodes:
            raise ConfigError("checkpoint_every must be a multiple of accumulate_episodes")
        if isinstance(self.lm, dict):
            self.lm = LMConfig(**self.lm)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["operators_allowed"] = [op.value for op in self.operators_allowed]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        if "operators_allowed" in d:
            d["operators_allowed"] = tuple(OperatorKind(o) for o in d["operators_allowed"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            return cls.from_json(p.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config file {p}: {exc}") from exc


@dataclass
class EpisodeRecord:
    """One training episode: what was sampled, what it produced, what it earned."""

    direction: str
    original: Sentence
    position: int
    operator: OperatorKind
    word: int | None
    edited: Sentence
    rewards: dict[str, float]
    losses: dict[str, float]

    def __post_init__(self):
        if ("R_lm" in self.rewards) != self.operator.parameterized:
            raise ContractError("R_lm recorded iff the operator generated a word")
        if "R_rec" in self.rewards and self.operator is not OperatorKind.REP:
            raise ContractError("R_rec applies to Rep episodes only")

    def to_json(self, vocab: Vocab) -> str:
        return json.dumps({
            "direction": self.direction,
            "original": decode(self.original, vocab),
            "position": self.position,
            "operator": self.operator.value,
            "word": None if self.word is None else vocab.token_of(self.word),
            "edited": decode(self.edited, vocab),
            "rewards": self.rewards,
            "losses": self.losses,
        }, sort_keys=True)


def conf_reward(classifier: PointerNetwork, x_original: Sentence, x_edited: Sentence,
                target_style: str, lambda_conf: float = 1.0) -> float:
    """lambda_conf * [p(target|edited) - p(target|original)], fully detached."""
    j = STYLE_INDEX[target_style]
    with torch.no_grad():
        p_edit = classifier.classify(x_edited)[j]
        p_orig = classifier.classify(x_original)[j]
    return lambda_conf * float(p_edit - p_orig)


def lm_reward(lm: StyleLM, word: int | None, edited: Sentence, position: int,
              lambda_lm: float = 1.0) -> float:
    """lambda_lm * mean of forward/backward probability of the generated word."""
    if word is None:
        raise ContractError("lm_reward requires a generated word; gate on operator kind")
    with torch.no_grad():
        p = lm.word_prob(word, edited, position)
    return lambda_lm * p


def rec_reward(bank: GeneratorBank, edited: Sentence, target, reverse_dir: str,
               lambda_rec: float = 1.0) -> float:
    """-lambda_rec * reverse-generator NLL of the overwritten word (frozen params)."""
    with torch.no_grad():
        loss = reconstruction_mle_loss(bank, edited, target, reverse_dir)
    return -lambda_rec * float(loss)


class Trainer:
    """Owns models, per-component optimizers, and all RNG state for the loop."""

    def __init__(self, corpora: dict[str, StyleCorpus], vocab: Vocab, config: TrainConfig,
                 lms: dict[str, StyleLM], pointer: PointerNetwork | None = None,
                 generators: GeneratorBank | None = None):
        torch.set_num_threads(1)   # keep forward passes bit-reproducible
        torch.manual_seed(config.seed)
        self.config = config
        self.vocab = vocab
        self.corpora = corpora
        self.lms = lms
        self.encoded = {s: encode_corpus(corpora[s], vocab) for s in corpora}
        self.pointer = pointer or PointerNetwork(
            len(vocab), config.embed_dim, config.hidden_dim, config.attn_dim)
        self.generators = generators or GeneratorBank(
            vocab, config.gen_embed_dim, config.gen_hidden_dim)
        self.rng = random.Random(config.seed)
        self.torch_gen = torch.Generator().manual_seed(config.seed)
        self.optimizers: dict[str, torch.optim.Optimizer] = {
            "pointer": torch.optim.Adam(self.pointer.parameters(), lr=config.pointer_lr),
        }
        for (d, op), net in self.generators.items():
            self.optimizers[f"generator/{d}/{op.value}"] = torch.optim.Adam(
                net.parameters(), lr=config.generator_lr)
        self._dirty: set[str] = set()
        self._pending = 0
        self.completed = 0   # episodes finished so far; resume point
        self.baselines: dict[str, float] = {}

    # -- classifier pretraining ------------------------------------------------

    def pretrain_classifier(self) -> dict:
        """Optimize the pointer's classification loss until dev accuracy clears
        the configured bar (or the epoch budget runs out)."""
        cfg = self.config
        train = [s for st in sorted(self.encoded) for s in self.encoded[st]["train"]]
        dev = [s for st in sorted(self.encoded) for s in self.encoded[st]["dev"]]
        opt = torch.optim.Adam(self.pointer.parameters(), lr=cfg.classifier_lr)
        history = []
        for epoch in range(cfg.classifier_max_epochs):
            self.pointer.train()
            order = list(range(len(train)))
            self.rng.shuffle(order)
            for start in range(0, len(order), cfg.classifier_batch_size):
                batch = [train[i] for i in order[start:start + cfg.classifier_batch_size]]
                loss = classification_loss(self.pointer, batch)
                opt.zero_grad()
                loss.backward()
                opt.step()
            acc = self.classifier_accuracy(dev or train)
            history.append(acc)
            log.info("classifier pretrain epoch %d dev accuracy %.4f", epoch, acc)
            if acc >= cfg.classifier_target_dev_accuracy:
                break
        else:
            log.warning("classifier pretraining stopped at %.4f < target %.4f",
                        history[-1], cfg.classifier_target_dev_accuracy)
        self.pointer.eval()
        return {"dev_accuracy": history}

    def classifier_accuracy(self, sentences: list[Sentence]) -> float:
        self.pointer.eval()
        with torch.no_grad():
            correct = 0
            for start in range(0, len(sentences), 256):
                batch = sentences[start:start + 256]
                pred = self.pointer.classify_batch(batch).argmax(dim=1)
                gold = torch.tensor([STYLE_INDEX[s.style] for s in batch])
                correct += int((pred == gold).sum())
        return correct / len(sentences)

    # -- episode loop ----------------------------------------------------------

    def _baseline_adjust(self, key: str, reward: float) -> float:
        if not self.config.baseline_enabled:
            return reward
        base = self.baselines.get(key, 0.0)
        self.baselines[key] = self.config.baseline_decay * base + \
            (1 - self.config.baseline_decay) * reward
        return reward - base

    def _check_finite(self, name: str, value: torch.Tensor | float) -> None:
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if v != v or v in (float("inf"), float("-inf")):
            raise DivergenceError(f"non-finite {name} at iteration {self.completed}")

    def _position_candidates(self, x: Sentence) -> list[int]:
        allowed = set(self.config.operators_allowed)
        return [i for i in range(len(x)) if valid_operators(x, i) & allowed]

    def run_episode(self, x: Sentence, direction: str) -> EpisodeRecord:
        """One full episode: point, operate, reward, accumulate gradients.

        Positions where the ablation's operator set leaves nothing valid are
        excluded before sampling, so restricted runs never stall; under the
        default operator set every position is eligible and the policy is
        sampled as-is.
        """
        cfg = self.config
        target_style = other_style(x.style)
        candidates = self._position_candidates(x)
        if not candidates:
            raise ContractError("no position admits any allowed operator")
        dist = self.pointer.policy(x)
        self._check_finite("pointer policy", dist.probs.sum())
        if len(candidates) == len(x):
            i = dist.sample(self.torch_gen)
        else:
            sub = dist.probs.detach()[candidates]
            pick = int(torch.multinomial(sub, 1, generator=self.torch_gen).item())
            i = candidates[pick]
        valid = valid_operators(x, i) & set(cfg.operators_allowed)
        op = sample_uniform_operator(valid, self.rng)

        word = None
        if op.parameterized:
            wdist = self.generators.word_distribution(x, i, op, direction)
            word = int(torch.multinomial(wdist.detach(), 1, generator=self.torch_gen).item())
        action = EditAction(op, i, word)
        edited = apply_edit(x, action)

        rewards: dict[str, float] = {}
        losses: dict[str, float] = {}
        r_conf = conf_reward(self.pointer, x, edited, target_style, cfg.lambda_conf)
        rewards["R_conf"] = r_conf
        if op.parameterized:
            rewards["R_lm"] = lm_reward(self.lms[target_style], word, edited,
                                        inserted_index(action), cfg.lambda_lm)

        # Pointer: policy gradient on the confidence reward, joint with the
        # (capped) classification loss on the episode's source sentence.
        pointer_loss = pointer_policy_loss(
            self.pointer, x, i, self._baseline_adjust("pointer", r_conf))
        if cfg.classifier_loss_during_rl:
            l_cls = classification_loss(self.pointer, [x])
            self._check_finite("L_cls", l_cls)
            losses["L_cls"] = float(l_cls.detach())
            floor = -math.log(cfg.classifier_confidence_cap)
            pointer_loss = pointer_loss + (l_cls - floor).clamp_min(0.0)
        self._check_finite("pointer loss", pointer_loss)
        pointer_loss.backward()
        self._dirty.add("pointer")

        # Reconstruction: deletes and replaces supervise the reverse direction.
        rec_target = None
        if (op.deletes or op is OperatorKind.REP) and not cfg.disable_reconstruction:
            targets = reconstruction_targets(action, x)
            if op is OperatorKind.REP:
                rec_target = targets[0]
            if targets:
                chosen = targets[self.rng.randrange(len(targets))]
                rev = reverse_direction(direction)
                l_rec = reconstruction_mle_loss(self.generators, edited, chosen, rev)
                self._check_finite("L_rec", l_rec)
                losses["L_rec"] = float(l_rec.detach())
                l_rec.backward()
                self._dirty.add(f"generator/{rev}/{chosen.op_prime.value}")

        # Acting generator: REINFORCE on its sampled word.
        if op.parameterized:
            r = rewards["R_conf"] + rewards["R_lm"]
            if op is OperatorKind.REP and rec_target is not None:
                rewards["R_rec"] = rec_reward(self.generators, edited, rec_target,
                                              reverse_direction(direction), cfg.lambda_rec)
                r += rewards["R_rec"]
            op_loss = operator_policy_loss(
                self.generators, x, i, op, word,
                self._baseline_adjust(f"op/{direction}/{op.value}", r), direction)
            self._check_finite("operator loss", op_loss)
            op_loss.backward()
            self._dirty.add(f"generator/{direction}/{op.value}")

        self._pending += 1
        if self._pending >= cfg.accumulate_episodes:
            self.step_optimizers()
        return EpisodeRecord(direction, x, i, op, word, edited, rewards, losses)

    def step_optimizers(self) -> None:
        """Step and reset exactly the components that accumulated gradients."""
        for key in sorted(self._dirty):
            self.optimizers[key].step()
            self.optimizers[key].zero_grad(set_to_none=True)
        self._dirty.clear()
        self._pending = 0

    def grad_norms(self) -> dict[str, float]:
        """L2 norm of currently accumulated gradients per component."""
        out = {}
        comps = {"pointer": self.pointer.parameters()}
        for (d, op), net in self.generators.items():
            comps[f"generator/{d}/{op.value}"] = net.parameters()
        for key, params in comps.items():
            total = 0.0
            for p in params:
                if p.grad is not None:
                    total += float(p.grad.pow(2).sum())
            out[key] = total ** 0.5
        return out

    # -- the main loop ---------------------------------------------------------

    def train_loop(self, log_file=None, checkpoint_dir: Path | None = None) -> None:
        cfg = self.config
        splits = {s: self.encoded[s]["train"] for s in self.encoded}
        for it in range(self.completed, cfg.iterations):
            direction = DIRECTIONS[it % 2]
            source = "s1" if direction == "s1_to_s2" else "s2"
            x = splits[source][self.rng.randrange(len(splits[source]))]
            try:
                record = self.run_episode(x, direction)
            except DivergenceError:
                if checkpoint_dir is not None:
                    self.save_checkpoint(Path(checkpoint_dir) / "diverged.pt",
                                         allow_pending=True)
                raise
            self.completed = it + 1
            if log_file is not None:
                log_file.write(record.to_json(self.vocab) + "\n")
            if cfg.checkpoint_every and checkpoint_dir is not None \
                    and self.completed % cfg.checkpoint_every == 0:
                self.save_checkpoint(Path(checkpoint_dir) / f"iter_{self.completed:08d}.pt")
        if self._pending:
            self.step_optimizers()

    # -- checkpointing ---------------------------------------------------------

    def bundle(self, term_classifier=None) -> ModelBundle:
        return ModelBundle(
            vocab=self.vocab,
            pointer=self.pointer,
            generators=self.generators,
            lms=self.lms,
            term_classifier=term_classifier,
            config=json.loads(self.config.to_json()),
        )

    def save_checkpoint(self, path: str | Path, allow_pending: bool = False) -> None:
        """Snapshot with optimizer + RNG state; resuming continues bit-exactly.

        Pending (unstepped) gradients are not saved, so checkpoints land only
        at accumulation boundaries unless allow_pending is set (diagnostic
        snapshots on divergence).
        """
        if self._pending and not allow_pending:
            raise ContractError("checkpoint requested with unstepped gradients pending")
        b = self.bundle()
        b.extra_state = {
            "completed": self.completed,
            "optimizers": {k: o.state_dict() for k, o in self.optimizers.items()},
            "py_random": self.rng.getstate(),
            "torch_gen": self.torch_gen.get_state(),
            "baselines": dict(self.baselines),
        }
        b.save(path)

    def load_trainer_state(self, extra_state: dict) -> None:
        self.completed = extra_state["completed"]
        for k, opt in self.optimizers.items():
            opt.load_state_dict(extra_state["optimizers"][k])
        state = extra_state["py_random"]
        self.rng.setstate((state[0], tuple(state[1]), state[2]))
        self.torch_gen.set_state(extra_state["torch_gen"])
        self.baselines = dict(extra_state.get("baselines", {}))


def train(corpora: dict[str, StyleCorpus], config: TrainConfig, *,
          vocab: Vocab | None = None, lms: dict[str, StyleLM] | None = None,
          pointer: PointerNetwork | None = None,
          generators: GeneratorBank | None = None,
          pretrain_pointer_classifier: bool = True,
          log_path: str | Path | None = None,
          checkpoint_dir: str | Path | None = None,
          resume_from: str | Path | None = None) -> ModelBundle:
    """Full pipeline: LMs, classifier pretraining, then the episode loop.

    Pass pretrained pieces to skip their stages; `resume_from` restores a
    checkpoint written by the same config and continues the loop.
    """
    from .corpus import build_vocab

    if vocab is None:
        vocab = build_vocab([corpora[s] for s in sorted(corpora)])
    if lms is None:
        lms = {s: train_lm(corpora[s], vocab, config.lm) for s in sorted(corpora)}
    trainer = Trainer(corpora, vocab, config, lms, pointer, generators)
    if resume_from is not None:
        from .bundle import load_bundle

        ckpt = load_bundle(resume_from, expect_vocab=vocab)
        trainer.pointer.load_state_dict(ckpt.pointer.state_dict())
        trainer.generators.load_state_dicts(ckpt.generators.state_dicts())
        trainer.load_trainer_state(ckpt.extra_state)
    elif pretrain_pointer_classifier:
        trainer.pretrain_classifier()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            trainer.train_loop(fh, ckpt_dir)
    else:
        trainer.train_loop(None, ckpt_dir)
    bundle = trainer.bundle()
    bundle.eval_mode()
    return bundle
