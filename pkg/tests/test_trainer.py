import io
import json

import pytest
import torch

import styledit as sd
from styledit.bundle import ModelBundle, load_bundle
from styledit.corpus import Sentence
from styledit.edit_engine import EditAction, OperatorKind, apply
from styledit.errors import ConfigError, ContractError, DivergenceError
from styledit.language_model import LMConfig, train_lm
from styledit.operator_agent import GeneratorBank, reconstruction_mle_loss
from styledit.pointer_agent import PointerNetwork
from styledit.trainer import (
    EpisodeRecord,
    TrainConfig,
    Trainer,
    conf_reward,
    lm_reward,
    rec_reward,
    train,
)

IF, IB, REP = OperatorKind.IF, OperatorKind.IB, OperatorKind.REP
DC, DF, DB = OperatorKind.DC, OperatorKind.DF, OperatorKind.DB
SKIP = OperatorKind.SKIP

TINY = dict(embed_dim=16, hidden_dim=24, attn_dim=16,
            gen_embed_dim=16, gen_hidden_dim=24)


@pytest.fixture(scope="module")
def task():
    spec = sd.default_synthetic_spec(seed=5)
    c1, c2, _ = sd.generate_synthetic(spec, 60)
    corpora = {"s1": c1, "s2": c2}
    vocab = sd.build_vocab([c1, c2])
    lms = {s: train_lm(corpora[s], vocab,
                       LMConfig(embed_dim=16, hidden_dim=24, max_epochs=4, seed=0))
           for s in corpora}
    return corpora, vocab, lms


def make_trainer(task, **overrides):
    corpora, vocab, lms = task
    cfg = TrainConfig(**{**TINY, "iterations": 0, "seed": 0,
                         "accumulate_episodes": 1000, **overrides})
    return Trainer(corpora, vocab, cfg, lms)


class TestTrainConfig:
    def test_negative_coefficient_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(lambda_rec=-0.1)

    def test_empty_operator_set_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(operators_allowed=())

    def test_accumulation_must_be_positive(self):
        with pytest.raises(ConfigError):
            TrainConfig(accumulate_episodes=0)

    def test_checkpoint_interval_must_align_with_accumulation(self):
        with pytest.raises(ConfigError):
            TrainConfig(accumulate_episodes=16, checkpoint_every=24)
        TrainConfig(accumulate_episodes=16, checkpoint_every=32)

    def test_confidence_cap_range(self):
        with pytest.raises(ConfigError):
            TrainConfig(classifier_confidence_cap=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(classifier_confidence_cap=1.5)
        TrainConfig(classifier_confidence_cap=1.0)   # uncapped is legal

    def test_json_roundtrip(self):
        cfg = TrainConfig(lambda_lm=0.25, operators_allowed=(REP, SKIP),
                          iterations=123, seed=9)
        back = TrainConfig.from_json(cfg.to_json())
        assert back == cfg
        assert back.operators_allowed == (REP, SKIP)

    def test_operator_names_parsed_from_strings(self):
        cfg = TrainConfig.from_json('{"operators_allowed": ["DC", "Skip"]}')
        assert cfg.operators_allowed == (DC, SKIP)

    def test_load_missing_file(self):
        with pytest.raises(ConfigError):
            TrainConfig.load("/nonexistent/config.json")

    def test_load_garbage(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            TrainConfig.load(p)


class FixedClassifier:
    """classify() by table lookup, for exact reward arithmetic."""

    def __init__(self, table):
        self.table = table

    def classify(self, x):
        return torch.tensor(self.table[x.tokens])


class FixedLM:
    def word_prob(self, word, edited, position):
        return 0.42


class TestRewards:
    def test_skip_confidence_reward_exactly_zero(self):
        torch.manual_seed(0)
        net = PointerNetwork(30, embed_dim=8, hidden_dim=12, attn_dim=8)
        x = Sentence((4, 9, 17, 5), "s1")
        edited = apply(x, EditAction(SKIP, 2))
        assert edited is x
        assert conf_reward(net, x, edited, "s2") == 0.0

    def test_confidence_delta_arithmetic(self):
        x = Sentence((4, 5), "s1")
        y = Sentence((4, 6), "s1")
        stub = FixedClassifier({(4, 5): [0.9, 0.1], (4, 6): [0.2, 0.8]})
        r = conf_reward(stub, x, y, "s2")
        assert r == pytest.approx(0.8 - 0.1, abs=1e-6)
        assert conf_reward(stub, x, y, "s2", lambda_conf=0.5) == pytest.approx(r / 2)
        assert isinstance(r, float)

    def test_confidence_delta_antisymmetric_across_styles(self):
        x = Sentence((4, 5), "s1")
        y = Sentence((4, 6), "s1")
        stub = FixedClassifier({(4, 5): [0.9, 0.1], (4, 6): [0.2, 0.8]})
        assert conf_reward(stub, x, y, "s1") == -conf_reward(stub, x, y, "s2")

    def test_lm_reward_scales_word_probability(self):
        y = Sentence((4, 6), "s1")
        assert lm_reward(FixedLM(), 6, y, 1, lambda_lm=0.5) == pytest.approx(0.21)

    def test_lm_reward_requires_word(self):
        with pytest.raises(ContractError):
            lm_reward(FixedLM(), None, Sentence((4,), "s1"), 0)

    def test_rec_reward_is_negative_scaled_mle(self, task):
        _, vocab, _ = task
        torch.manual_seed(1)
        bank = GeneratorBank(vocab, embed_dim=16, hidden_dim=24)
        edited = Sentence((5, 9, 8), "s1")
        from styledit.edit_engine import ReconstructionTarget
        target = ReconstructionTarget(REP, 1, 7)
        direct = float(reconstruction_mle_loss(bank, edited, target, "s2_to_s1").detach())
        got = rec_reward(bank, edited, target, "s2_to_s1", lambda_rec=0.5)
        assert got == pytest.approx(-0.5 * direct, abs=1e-7)


class TestEpisodeRecord:
    def x(self):
        return Sentence((4, 5, 6), "s1")

    def test_word_reward_only_for_generating_operators(self):
        with pytest.raises(ContractError):
            EpisodeRecord("s1_to_s2", self.x(), 1, DC, None, Sentence((4, 6), "s1"),
                          rewards={"R_conf": 0.1, "R_lm": 0.5}, losses={})
        with pytest.raises(ContractError):
            EpisodeRecord("s1_to_s2", self.x(), 1, REP, 9, Sentence((4, 9, 6), "s1"),
                          rewards={"R_conf": 0.1}, losses={})

    def test_reconstruction_reward_only_for_replace(self):
        with pytest.raises(ContractError):
            EpisodeRecord("s1_to_s2", self.x(), 1, DC, None, Sentence((4, 6), "s1"),
                          rewards={"R_conf": 0.1, "R_rec": -0.2}, losses={})

    def test_json_uses_words_not_ids(self, task):
        _, vocab, _ = task
        toks = tuple(vocab.id_of(w) for w in ["the", "food", "was"])
        rec = EpisodeRecord("s1_to_s2", Sentence(toks, "s1"), 1, REP,
                            vocab.id_of("food"), Sentence(toks, "s1"),
                            rewards={"R_conf": 0.0, "R_lm": 0.1}, losses={"L_cls": 0.7})
        d = json.loads(rec.to_json(vocab))
        assert d["original"] == ["the", "food", "was"]
        assert d["word"] == "food"
        assert d["operator"] == "Rep"


def nonzero_components(trainer):
    return {k for k, v in trainer.grad_norms().items() if v > 0}


class TestEpisodeRouting:
    def test_skip_updates_no_generator(self, task):
        tr = make_trainer(task, operators_allowed=(SKIP,))
        x = tr.encoded["s1"]["train"][0]
        record = tr.run_episode(x, "s1_to_s2")
        assert record.operator is SKIP
        assert record.rewards == {"R_conf": 0.0}
        assert nonzero_components(tr) <= {"pointer"}
        assert "L_rec" not in record.losses

    def test_insert_updates_only_acting_generator(self, task):
        tr = make_trainer(task, operators_allowed=(IF,))
        x = tr.encoded["s1"]["train"][0]
        record = tr.run_episode(x, "s1_to_s2")
        assert record.operator is IF
        gens = nonzero_components(tr) - {"pointer"}
        assert gens == {"generator/s1_to_s2/IF"}
        assert "R_lm" in record.rewards and "L_rec" not in record.losses

    def test_delete_supervises_reverse_insert_generator(self, task):
        tr = make_trainer(task, operators_allowed=(DC,))
        x = tr.encoded["s1"]["train"][1]
        record = tr.run_episode(x, "s1_to_s2")
        gens = nonzero_components(tr) - {"pointer"}
        assert len(gens) == 1
        assert gens <= {"generator/s2_to_s1/IF", "generator/s2_to_s1/IB"}
        assert "L_rec" in record.losses
        assert "R_lm" not in record.rewards

    def test_delete_without_reconstruction_touches_nothing(self, task):
        tr = make_trainer(task, operators_allowed=(DC,), disable_reconstruction=True)
        x = tr.encoded["s1"]["train"][1]
        record = tr.run_episode(x, "s1_to_s2")
        assert nonzero_components(tr) <= {"pointer"}
        assert "L_rec" not in record.losses and "R_rec" not in record.rewards

    def test_replace_updates_both_directions(self, task):
        tr = make_trainer(task, operators_allowed=(REP,))
        x = tr.encoded["s2"]["train"][0]
        record = tr.run_episode(x, "s2_to_s1")
        gens = nonzero_components(tr) - {"pointer"}
        assert gens == {"generator/s2_to_s1/Rep", "generator/s1_to_s2/Rep"}
        assert {"R_conf", "R_lm", "R_rec"} <= set(record.rewards)
        assert "L_rec" in record.losses

    def test_zero_coefficients_leave_policies_still(self, task):
        tr = make_trainer(task, operators_allowed=(REP,),
                          lambda_lm=0.0, lambda_conf=0.0, lambda_rec=0.0)
        x = tr.encoded["s1"]["train"][2]
        tr.run_episode(x, "s1_to_s2")
        gens = nonzero_components(tr) - {"pointer"}
        # the acting policy got zero total reward; only the supervised
        # reconstruction generator moved
        assert gens == {"generator/s2_to_s1/Rep"}

    def test_everything_disabled_accumulates_nothing(self, task):
        tr = make_trainer(task, operators_allowed=(REP,),
                          lambda_lm=0.0, lambda_conf=0.0, lambda_rec=0.0,
                          disable_reconstruction=True,
                          classifier_loss_during_rl=False)
        x = tr.encoded["s1"]["train"][2]
        record = tr.run_episode(x, "s1_to_s2")
        assert all(v == 0.0 for v in tr.grad_norms().values())
        assert "L_cls" not in record.losses

    def test_position_sampling_respects_operator_validity(self, task):
        tr = make_trainer(task, operators_allowed=(DF,))
        x = tr.encoded["s1"]["train"][3]
        for _ in range(40):
            record = tr.run_episode(x, "s1_to_s2")
            assert record.operator is DF
            assert record.position >= 1


class TestTrainLoop:
    def test_directions_alternate(self, task):
        tr = make_trainer(task, iterations=9, accumulate_episodes=4)
        out = io.StringIO()
        tr.train_loop(log_file=out)
        lines = [json.loads(line) for line in out.getvalue().splitlines()]
        assert len(lines) == 9
        dirs = [d["direction"] for d in lines]
        assert dirs[:4] == ["s1_to_s2", "s2_to_s1", "s1_to_s2", "s2_to_s1"]
        assert dirs.count("s1_to_s2") == 5 and dirs.count("s2_to_s1") == 4

    def test_log_rewards_match_operator_class(self, task):
        tr = make_trainer(task, iterations=30, accumulate_episodes=8, seed=2)
        out = io.StringIO()
        tr.train_loop(log_file=out)
        for d in map(json.loads, out.getvalue().splitlines()):
            parameterized = d["operator"] in ("IF", "IB", "Rep")
            assert ("R_lm" in d["rewards"]) == parameterized
            assert (d["word"] is not None) == parameterized

    def test_same_seed_same_weights(self, task):
        runs = []
        for _ in range(2):
            tr = make_trainer(task, iterations=32, accumulate_episodes=16, seed=7)
            tr.train_loop()
            runs.append(tr)
        a, b = runs
        for k, v in a.pointer.state_dict().items():
            assert torch.equal(v, b.pointer.state_dict()[k])
        for key, sd_a in a.generators.state_dicts().items():
            for k, v in sd_a.items():
                assert torch.equal(v, b.generators.state_dicts()[key][k])

    def test_divergence_aborts_with_snapshot(self, task, tmp_path):
        tr = make_trainer(task, iterations=4, accumulate_episodes=4)
        with torch.no_grad():
            tr.pointer.attn_v.weight.fill_(float("nan"))
        with pytest.raises(DivergenceError):
            tr.train_loop(checkpoint_dir=tmp_path)
        assert (tmp_path / "diverged.pt").exists()


class TestCheckpointing:
    def test_periodic_checkpoints_written(self, task, tmp_path):
        tr = make_trainer(task, iterations=32, accumulate_episodes=16,
                          checkpoint_every=16)
        tr.train_loop(checkpoint_dir=tmp_path)
        assert (tmp_path / "iter_00000016.pt").exists()
        assert (tmp_path / "iter_00000032.pt").exists()

    def test_checkpoint_refused_mid_accumulation(self, task, tmp_path):
        tr = make_trainer(task, iterations=0, accumulate_episodes=16)
        x = tr.encoded["s1"]["train"][0]
        for _ in range(3):
            tr.run_episode(x, "s1_to_s2")
        with pytest.raises(ContractError):
            tr.save_checkpoint(tmp_path / "early.pt")

    def test_resume_is_bit_exact(self, task, tmp_path):
        corpora, vocab, lms = task
        kw = dict(iterations=48, accumulate_episodes=16, seed=13)

        straight = make_trainer(task, **kw)
        straight.train_loop()

        first = make_trainer(task, **{**kw, "iterations": 32})
        first.train_loop()
        first.save_checkpoint(tmp_path / "mid.pt")

        ckpt = load_bundle(tmp_path / "mid.pt", expect_vocab=vocab)
        resumed = make_trainer(task, **kw)
        resumed.pointer.load_state_dict(ckpt.pointer.state_dict())
        resumed.generators.load_state_dicts(ckpt.generators.state_dicts())
        resumed.load_trainer_state(ckpt.extra_state)
        assert resumed.completed == 32
        resumed.train_loop()

        for k, v in straight.pointer.state_dict().items():
            assert torch.equal(v, resumed.pointer.state_dict()[k])
        for key, sd_s in straight.generators.state_dicts().items():
            for k, v in sd_s.items():
                assert torch.equal(v, resumed.generators.state_dicts()[key][k])


class TestTrainPipeline:
    def test_replace_only_run(self, task, tmp_path):
        corpora, vocab, lms = task
        cfg = TrainConfig(**{**TINY, "iterations": 8, "accumulate_episodes": 4,
                             "operators_allowed": (REP,), "seed": 1})
        log_path = tmp_path / "episodes.jsonl"
        bundle = train(corpora, cfg, vocab=vocab, lms=lms,
                       pretrain_pointer_classifier=False, log_path=log_path)
        assert isinstance(bundle, ModelBundle)
        assert bundle.config["operators_allowed"] == ["Rep"]
        lines = log_path.read_text().splitlines()
        assert len(lines) == 8
        assert all(json.loads(line)["operator"] == "Rep" for line in lines)
