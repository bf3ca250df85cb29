import math
import random

import pytest
import torch
import torch.nn.functional as F

from styledit.corpus import Sentence
from styledit.pointer_agent import (
    STYLE_INDEX,
    PointerNetwork,
    PositionDistribution,
    classification_loss,
    pointer_policy_loss,
)
from styledit.trainer import TrainConfig, Trainer


def small_net(vocab_size=20, seed=0):
    torch.manual_seed(seed)
    return PointerNetwork(vocab_size, embed_dim=8, hidden_dim=12, attn_dim=8)


def sent(*tokens, style="s1"):
    return Sentence(tuple(tokens), style)


class TestEncode:
    def test_one_state_per_position(self):
        net = small_net()
        states, sent_state = net.encode(sent(4))
        assert states.shape == (1, 24)
        assert sent_state.shape == (24,)

    def test_permuting_tokens_changes_states(self):
        net = small_net()
        a, _ = net.encode(sent(4, 5, 6))
        b, _ = net.encode(sent(4, 6, 5))
        assert not torch.allclose(a, b)

    def test_equal_sentences_equal_states(self):
        net = small_net()
        a, sa = net.encode(sent(4, 5, 6))
        b, sb = net.encode(sent(4, 5, 6))
        assert torch.equal(a, b) and torch.equal(sa, sb)


class TestPolicy:
    def test_sums_to_one(self):
        net = small_net()
        for toks in [(4,), (4, 5, 6), tuple(range(4, 14))]:
            probs = net.policy(sent(*toks)).probs.detach()
            assert abs(float(probs.sum()) - 1.0) < 1e-6

    def test_single_position_gets_probability_one(self):
        net = small_net()
        assert float(net.policy(sent(9)).probs.detach()[0]) == pytest.approx(1.0)

    def test_equal_scores_give_uniform(self):
        net = small_net()
        with torch.no_grad():
            net.attn_v.weight.zero_()
        probs = net.policy(sent(4, 5, 6, 7, 8)).probs
        assert torch.allclose(probs, torch.full((5,), 0.2))

    def test_score_shift_invariance(self):
        net = small_net()
        x = sent(4, 5, 6, 7)
        states, sent_state = net.encode(x)
        scores = net._scores(states, sent_state)
        shifted = F.softmax(scores + 3.7, dim=0)
        assert torch.allclose(net.policy(x).probs, shifted, atol=1e-6)

    def test_deterministic(self):
        net = small_net()
        x = sent(4, 5, 6)
        assert torch.equal(net.policy(x).probs, net.policy(x).probs)


class TestPositionDistribution:
    def test_masked_probs_zeroed_without_renormalization(self):
        probs = torch.tensor([0.1, 0.2, 0.3, 0.4])
        mask = torch.tensor([False, True, False, True])
        masked = PositionDistribution(probs, mask).masked_probs()
        assert torch.equal(masked, torch.tensor([0.1, 0.0, 0.3, 0.0]))

    def test_masking_never_promotes(self):
        rng = random.Random(11)
        for _ in range(100):
            t = rng.randint(2, 8)
            raw = torch.rand(t)
            probs = raw / raw.sum()
            mask = torch.tensor([rng.random() < 0.5 for _ in range(t)])
            if bool(mask.all()):
                mask[rng.randrange(t)] = False
            choice = PositionDistribution(probs, mask).argmax()
            assert not bool(mask[choice])
            unmasked = [i for i in range(t) if not mask[i]]
            best = max(unmasked, key=lambda i: float(probs[i]))
            assert choice == best

    def test_masking_argmax_stable_when_argmax_unmasked(self):
        probs = torch.tensor([0.1, 0.6, 0.3])
        mask = torch.tensor([True, False, False])
        assert PositionDistribution(probs, mask).argmax() == 1
        assert PositionDistribution(probs, None).argmax() == 1


class TestClassify:
    def test_sums_to_one(self):
        net = small_net(seed=3)
        with torch.no_grad():
            net.classifier.weight.normal_()
        for toks in [(4,), (5, 6, 7), tuple(range(4, 12))]:
            pair = net.classify(sent(*toks)).detach()
            assert abs(float(pair.sum()) - 1.0) < 1e-6

    def test_zero_weight_head_answers_half_half(self):
        # the constructor zero-initializes the head for exactly this reason
        net = small_net(seed=5)
        pair = net.classify(sent(4, 5, 6)).detach()
        assert float(pair[0]) == pytest.approx(0.5)
        assert float(pair[1]) == pytest.approx(0.5)

    def test_one_position_pooling_reduces_to_single_state(self):
        # with T=1 the attention weights are exactly one-hot, so Eq. 5's
        # pooled vector must equal that position's state
        net = small_net(seed=7)
        with torch.no_grad():
            net.classifier.weight.normal_()
        x = sent(9)
        states, _ = net.encode(x)
        direct = F.softmax(net.classifier(states[0]), dim=0)
        assert torch.allclose(net.classify(x), direct, atol=1e-6)

    def test_classify_batch_matches_single(self):
        net = small_net(seed=9)
        with torch.no_grad():
            net.classifier.weight.normal_()
        batch = [sent(4, 5, 6), sent(7, 8), sent(9, 10, 11, 12, 13)]
        stacked = net.classify_batch(batch)
        for k, x in enumerate(batch):
            assert torch.allclose(stacked[k], net.classify(x), atol=1e-6)

    def test_pretraining_reaches_dev_accuracy(self, tiny_task):
        _, corpora, vocab, _ = tiny_task
        cfg = TrainConfig(iterations=0, seed=0, embed_dim=32, hidden_dim=48,
                          attn_dim=32, gen_embed_dim=16, gen_hidden_dim=24,
                          classifier_batch_size=32)
        trainer = Trainer(corpora, vocab, cfg, lms={})
        history = trainer.pretrain_classifier()["dev_accuracy"]
        assert history[-1] >= 0.95


class TestClassificationLoss:
    def test_uniform_classifier_loss_is_ln2(self):
        net = small_net()  # zero-init head: every prediction is (0.5, 0.5)
        batch = [sent(4, 5), sent(6, 7, style="s2")]
        loss = classification_loss(net, batch).detach()
        assert float(loss) == pytest.approx(math.log(2), abs=1e-6)

    def test_perfect_classifier_loss_is_zero(self):
        class Oracle(PointerNetwork):
            def classify_batch(self, batch):
                rows = [[1.0, 0.0] if s.style == "s1" else [0.0, 1.0]
                        for s in batch]
                return torch.tensor(rows)

        net = Oracle(20, embed_dim=8, hidden_dim=12, attn_dim=8)
        batch = [sent(4, 5), sent(6, 7, style="s2")]
        assert float(classification_loss(net, batch)) == pytest.approx(0.0)

    def test_loss_decreases_under_pretraining(self, tiny_task):
        _, corpora, vocab, _ = tiny_task
        cfg = TrainConfig(iterations=0, seed=1, embed_dim=32, hidden_dim=48,
                          attn_dim=32, gen_embed_dim=16, gen_hidden_dim=24,
                          classifier_batch_size=32)
        trainer = Trainer(corpora, vocab, cfg, lms={})
        batch = [s for st in sorted(trainer.encoded)
                 for s in trainer.encoded[st]["dev"]]
        before = float(classification_loss(trainer.pointer, batch).detach())
        trainer.pretrain_classifier()
        after = float(classification_loss(trainer.pointer, batch).detach())
        assert after < before


class TestPolicyGradient:
    def test_zero_reward_zero_update(self):
        net = small_net()
        loss = pointer_policy_loss(net, sent(4, 5, 6), 1, reward=0.0)
        loss.backward()
        for p in net.parameters():
            if p.grad is not None:
                assert float(p.grad.abs().max()) == 0.0

    def test_enumerated_estimator_matches_expected_reward_gradient(self):
        """Summing R(i)·∇log μ(i) weighted by μ(i) over all positions must
        equal the gradient of the exactly-enumerated expected reward."""
        net = small_net(seed=13).double()
        x = sent(4, 5, 6, 7)
        rewards = [0.3, -0.5, 1.2, 0.1]

        probs = net.policy(x).probs
        expected = sum(probs[i] * rewards[i] for i in range(4))
        auto = torch.autograd.grad(expected, list(net.parameters()),
                                   allow_unused=True)

        net.zero_grad()
        weights = probs.detach()
        surrogate = sum(weights[i] * pointer_policy_loss(net, x, i, rewards[i])
                        for i in range(4))
        surrogate.backward()

        for p, g_auto in zip(net.parameters(), auto):
            g_enum = p.grad
            if g_auto is None:
                assert g_enum is None or float(g_enum.abs().max()) == 0.0
                continue
            # surrogate is a descent loss: its gradient is minus the ascent one
            assert torch.allclose(-g_enum, g_auto, atol=1e-9)

    def test_log_policy_gradient_matches_finite_differences(self):
        net = small_net(seed=17).double()
        x = sent(4, 5, 6, 7)
        i = 2
        loss = pointer_policy_loss(net, x, i, reward=-1.0)  # -(-1)·log = log mu(i|x)
        params = [p for p in net.parameters() if p.requires_grad]
        grads = torch.autograd.grad(loss, params, allow_unused=True)

        rng = random.Random(23)
        checked = 0
        for p, g in zip(params, grads):
            if g is None:
                continue
            flat = p.data.view(-1)
            gflat = g.view(-1)
            for _ in range(3):
                k = rng.randrange(flat.numel())
                h = 1e-6
                orig = float(flat[k])
                with torch.no_grad():
                    flat[k] = orig + h
                    up = float(torch.log(net.policy(x).probs[i]))
                    flat[k] = orig - h
                    down = float(torch.log(net.policy(x).probs[i]))
                    flat[k] = orig
                fd = (up - down) / (2 * h)
                if abs(fd) < 1e-8 and abs(float(gflat[k])) < 1e-8:
                    continue
                rel = abs(fd - float(gflat[k])) / max(abs(fd), abs(float(gflat[k])))
                assert rel < 1e-4, f"param {p.shape} idx {k}: fd {fd} vs {float(gflat[k])}"
                checked += 1
        assert checked >= 10
