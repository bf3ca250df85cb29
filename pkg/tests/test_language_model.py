import math
import random

import pytest
import torch
import torch.nn.functional as F

from styledit.corpus import Sentence, StyleCorpus, build_vocab, encode
from styledit.errors import ConfigError
from styledit.language_model import (
    DirectionalLM,
    LMConfig,
    StyleLM,
    load_lms,
    save_lms,
    train_lm,
)

# A deliberately rigid little corpus: two sentence frames over a handful of
# fillers, so a small model learns it quickly and orderings matter.
FRAMES = [
    ["the", "{}", "was", "very", "{}"],
    ["we", "liked", "the", "{}", "a", "lot"],
]
NOUNS = ["soup", "bread", "tea", "cake"]
MODS = ["hot", "cold", "sweet", "plain"]


def mini_sentences():
    out = []
    for noun in NOUNS:
        for mod in MODS:
            out.append(["the", noun, "was", "very", mod])
        out.append(["we", "liked", "the", noun, "a", "lot"])
    return out


@pytest.fixture(scope="module")
def mini_lm():
    sents = mini_sentences()
    corpus = StyleCorpus(style="s1", train=sents * 3, dev=sents[:6])
    vocab = build_vocab([corpus])
    lm = train_lm(corpus, vocab, LMConfig(embed_dim=16, hidden_dim=24,
                                          max_epochs=12, seed=0))
    return lm, vocab


@pytest.fixture(scope="module")
def memo_lm():
    """One sentence memorized outright."""
    line = ["every", "single", "day", "we", "eat", "here"]
    corpus = StyleCorpus(style="s1", train=[line] * 40)
    vocab = build_vocab([corpus])
    lm = train_lm(corpus, vocab, LMConfig(embed_dim=16, hidden_dim=24, lr=2e-2,
                                          max_epochs=150, patience=150, seed=0))
    return lm, vocab, line


class TestTraining:
    def test_empty_corpus_rejected(self):
        corpus = StyleCorpus(style="s1")
        with pytest.raises(ConfigError):
            train_lm(corpus, build_vocab([StyleCorpus("s1", [["a"]])]))

    def test_beats_uniform(self, mini_lm):
        lm, vocab = mini_lm
        dev = [encode(w, vocab, "s1") for w in mini_sentences()[:6]]
        assert lm.perplexity(dev) < len(vocab)

    def test_perplexities_recorded_and_finite(self, mini_lm):
        lm, _ = mini_lm
        assert set(lm.dev_perplexity) == {"forward", "backward"}
        for v in lm.dev_perplexity.values():
            assert math.isfinite(v) and v > 0

    def test_memorization_drives_perplexity_to_one(self, memo_lm):
        lm, vocab, line = memo_lm
        x = encode(line, vocab, "s1")
        assert lm.perplexity([x]) < 1.05

    def test_seeded_determinism(self):
        sents = mini_sentences()
        corpus = StyleCorpus(style="s1", train=sents)
        vocab = build_vocab([corpus])
        cfg = LMConfig(embed_dim=16, hidden_dim=24, max_epochs=2, seed=11)
        a = train_lm(corpus, vocab, cfg)
        b = train_lm(corpus, vocab, cfg)
        for key, pa in a.forward.state_dict().items():
            assert torch.equal(pa, b.forward.state_dict()[key])
        for key, pa in a.backward.state_dict().items():
            assert torch.equal(pa, b.backward.state_dict()[key])

    def test_synthetic_dev_perplexity_small(self, style_lms):
        for lm in style_lms.values():
            for ppl in lm.dev_perplexity.values():
                assert ppl <= 15.0


class TestNextTokenDistributions:
    def test_softmax_rows_sum_to_one(self, mini_lm):
        lm, vocab = mini_lm
        x = encode(["the", "soup", "was", "very", "hot"], vocab, "s1")
        ids = torch.tensor([[vocab.bos_id] + list(x.tokens)]).t()
        for model in (lm.forward, lm.backward):
            with torch.no_grad():
                probs = F.softmax(model.logits(ids), dim=-1)
            sums = probs.sum(dim=-1)
            assert float((sums - 1.0).abs().max()) < 1e-6


def directional_prob(model: DirectionalLM, prefix: list[int], word: int) -> float:
    """P(word | prefix) by running the one-direction model on the raw prefix."""
    ids = torch.tensor(prefix).unsqueeze(1)
    with torch.no_grad():
        dist = F.softmax(model.logits(ids)[-1, 0], dim=0)
    return float(dist[word])


class TestWordProb:
    def test_matches_two_direction_average(self, mini_lm):
        lm, vocab = mini_lm
        words = ["we", "liked", "the", "tea", "a", "lot"]
        x = encode(words, vocab, "s1")
        for i in range(len(words)):
            fwd = directional_prob(lm.forward,
                                   [vocab.bos_id] + list(x.tokens[:i]), x.tokens[i])
            bwd = directional_prob(lm.backward,
                                   [vocab.eos_id] + list(x.tokens[i + 1:][::-1]),
                                   x.tokens[i])
            got = lm.word_prob(x.tokens[i], x, i)
            assert got == pytest.approx((fwd + bwd) / 2, abs=1e-6)

    def test_in_unit_interval(self, mini_lm):
        lm, vocab = mini_lm
        rng = random.Random(2)
        for _ in range(30):
            words = [rng.choice(NOUNS + MODS + ["the", "was"]) for _ in range(5)]
            x = encode(words, vocab, "s1")
            i = rng.randrange(5)
            assert 0.0 <= lm.word_prob(x.tokens[i], x, i) <= 1.0

    def test_word_must_match_sentence(self, mini_lm):
        lm, vocab = mini_lm
        x = encode(["the", "soup", "was", "very", "hot"], vocab, "s1")
        with pytest.raises(ValueError):
            lm.word_prob(vocab.id_of("cold"), x, 4)

    def test_forward_ignores_right_context(self, mini_lm):
        lm, vocab = mini_lm
        a = torch.tensor([[vocab.bos_id] + [vocab.id_of(w) for w in
                          ["the", "soup", "was", "very", "hot"]]]).t()
        b = a.clone()
        b[4, 0] = vocab.id_of("cake")   # differs only from position 3 onward
        with torch.no_grad():
            la = lm.forward.logits(a)
            lb = lm.forward.logits(b)
        assert torch.equal(la[:4], lb[:4])
        assert not torch.equal(la[4], lb[4])

    def test_backward_ignores_left_context(self, mini_lm):
        lm, vocab = mini_lm
        rev = ["hot", "very", "was", "soup", "the"]
        a = torch.tensor([[vocab.eos_id] + [vocab.id_of(w) for w in rev]]).t()
        b = a.clone()
        b[4, 0] = vocab.id_of("tea")
        with torch.no_grad():
            la = lm.backward.logits(a)
            lb = lm.backward.logits(b)
        assert torch.equal(la[:4], lb[:4])

    def test_memorized_words_near_certain(self, memo_lm):
        lm, vocab, line = memo_lm
        x = encode(line, vocab, "s1")
        for i in range(len(line)):
            assert lm.word_prob(x.tokens[i], x, i) >= 0.99


class AllOnesLM(StyleLM):
    """Scorer stub: every word has probability 1 in context."""

    def log_word_probs_batch(self, sentences):
        return [torch.zeros(len(s)) for s in sentences]


class TestSentenceScore:
    def test_single_token_equals_word_prob(self, mini_lm):
        lm, vocab = mini_lm
        x = encode(["soup"], vocab, "s1")
        assert lm.sentence_score(x) == pytest.approx(
            lm.word_prob(x.tokens[0], x, 0), abs=1e-7)

    def test_geometric_mean_of_word_probs(self, mini_lm):
        lm, vocab = mini_lm
        x = encode(["the", "bread", "was", "very", "plain"], vocab, "s1")
        probs = [lm.word_prob(x.tokens[i], x, i) for i in range(len(x))]
        expected = math.exp(sum(map(math.log, probs)) / len(probs))
        assert lm.sentence_score(x) == pytest.approx(expected, rel=1e-6)

    def test_certain_token_appended_to_certain_sentence_keeps_score(self, mini_lm):
        _, vocab = mini_lm
        stub = AllOnesLM("s1", forward=None, backward=None, vocab=vocab)
        short = encode(["the", "soup"], vocab, "s1")
        longer = encode(["the", "soup", "was"], vocab, "s1")
        assert stub.sentence_score(short) == 1.0
        assert stub.sentence_score(longer) == 1.0

    def test_length_comparable_scores(self, mini_lm):
        # a raw product would make any 7-word sentence lose to a 2-word one;
        # the per-token mean keeps a well-formed long sentence ahead of a
        # short scramble
        lm, vocab = mini_lm
        long_good = encode(["we", "liked", "the", "cake", "a", "lot"], vocab, "s1")
        short_bad = encode(["lot", "was"], vocab, "s1")
        assert lm.sentence_score(long_good) > lm.sentence_score(short_bad)

    def test_template_beats_its_shuffle(self, mini_lm):
        lm, vocab = mini_lm
        x = encode(["the", "tea", "was", "very", "sweet"], vocab, "s1")
        shuffled = encode(["very", "the", "sweet", "tea", "was"], vocab, "s1")
        assert lm.sentence_score(x) > lm.sentence_score(shuffled)


class TestBatchScoring:
    def test_batch_matches_single(self, mini_lm):
        lm, vocab = mini_lm
        xs = [encode(w, vocab, "s1") for w in
              [["the", "soup", "was", "very", "cold"],
               ["we", "liked", "the", "bread", "a", "lot"],
               ["tea"]]]
        with torch.no_grad():
            batch = lm.log_word_probs_batch(xs)
            for x, lp in zip(xs, batch):
                assert torch.allclose(lp, lm.log_word_probs(x), atol=1e-6)
            scores = lm.sentence_log_scores(xs)
        for k, x in enumerate(xs):
            assert float(scores[k].exp()) == pytest.approx(lm.sentence_score(x),
                                                           rel=1e-5)


class TestSaveLoad:
    def test_roundtrip(self, mini_lm, tmp_path):
        lm, vocab = mini_lm
        path = tmp_path / "lms.pt"
        save_lms({"s1": lm}, path)
        loaded = load_lms(path, vocab)
        x = encode(["the", "cake", "was", "very", "plain"], vocab, "s1")
        assert loaded["s1"].sentence_score(x) == pytest.approx(
            lm.sentence_score(x), abs=1e-8)
        assert loaded["s1"].dev_perplexity == lm.dev_perplexity

    def test_vocab_mismatch_refused(self, mini_lm, tmp_path):
        lm, _ = mini_lm
        path = tmp_path / "lms.pt"
        save_lms({"s1": lm}, path)
        other = build_vocab([StyleCorpus("s1", [["entirely", "new", "words"]])])
        with pytest.raises(ConfigError):
            load_lms(path, other)

    def test_missing_file(self, mini_lm):
        _, vocab = mini_lm
        with pytest.raises(ConfigError):
            load_lms("/nonexistent/lms.pt", vocab)

    def test_empty_save_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            save_lms({}, tmp_path / "x.pt")
