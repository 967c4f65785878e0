import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srecap.autodiff import Tensor
from srecap.concepts import BOS_ID, EOS_ID, PAD_ID, extract_sentence_concepts
from srecap.decoder import DecoderParams, DecoderState, beam_search, decode_step, greedy_search, sample_search
from srecap.model import Captioner
from srecap.trainer import with_eos

V = 5  # PAD, BOS, EOS and two words
WORDS = (EOS_ID, 3, 4)


class PrefixModel:
    """Toy decoder whose next-token distribution depends only on the emitted prefix."""

    def __init__(self, table, vocab=V):
        self.table, self.vocab = table, vocab

    def logp(self, prefix):
        p = self.table.get(prefix)
        if p is None:
            p = {t: 1.0 / len(WORDS) for t in WORDS}
        row = np.full(self.vocab, -np.inf)
        for tok, prob in p.items():
            row[tok] = np.log(prob)
        return row

    def step(self, prev, state):
        prefixes = [s + ((int(p),) if p != BOS_ID else ()) for s, p in zip(state, prev)]
        return np.stack([self.logp(s) for s in prefixes]), prefixes

    @staticmethod
    def select(state, rows):
        return [state[r] for r in rows]

    def score(self, seq, max_len):
        total, prefix = 0.0, ()
        for tok in with_eos(seq, max_len):
            total += self.logp(prefix)[tok]
            prefix += (tok,)
        return total


def random_model(rng, vocab=V):
    table = {}
    for k in range(3):
        for prefix in itertools.product((3, 4), repeat=k):
            p = rng.dirichlet(np.ones(len(WORDS)))
            table[prefix] = dict(zip(WORDS, p))
    return PrefixModel(table, vocab)


def exhaustive(model, max_len):
    best = None
    for k in range(max_len + 1):
        for seq in itertools.product((3, 4), repeat=k):
            cand = (model.score(list(seq), max_len), seq)
            if best is None or (-cand[0], cand[1]) < (-best[0], best[1]):
                best = cand
    return list(best[1]), best[0]


HAND_SET = PrefixModel({
    (): {3: 0.5, 4: 0.4, EOS_ID: 0.1},
    (3,): {3: 0.35, 4: 0.35, EOS_ID: 0.3},
    (4,): {3: 0.9, 4: 0.05, EOS_ID: 0.05},
    (4, 3): {EOS_ID: 0.95, 3: 0.03, 4: 0.02},
})


class TestSearchLoops:
    def test_hand_set_beam_beats_greedy(self):
        seqs, g_score = greedy_search(HAND_SET.step, [()], 1, 3)
        best, b_score = beam_search(HAND_SET.step, [()], HAND_SET.select, 5, 3)
        want, want_score = exhaustive(HAND_SET, 3)
        assert seqs[0][0] == 3
        assert best == want == [4, 3]
        assert abs(b_score - want_score) < 1e-12 and b_score > g_score[0]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_beam_five_is_exhaustive_argmax(self, seed):
        model = random_model(np.random.default_rng(seed))
        seq, score = beam_search(model.step, [()], model.select, 5, 3)
        want_seq, want_score = exhaustive(model, 3)
        assert seq == want_seq
        assert abs(score - want_score) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 4))
    def test_beam_never_below_greedy_and_rescoring(self, seed, beam):
        model = random_model(np.random.default_rng(seed))
        g, g_score = greedy_search(model.step, [()], 1, 3)
        seq, score = beam_search(model.step, [()], model.select, beam, 3)
        assert score >= g_score[0] - 1e-12
        assert abs(model.score(seq, 3) - score) < 1e-10
        assert abs(model.score(g[0], 3) - g_score[0]) < 1e-10

    def test_greedy_ties_go_to_lowest_id(self):
        flat = PrefixModel({(): {3: 0.45, 4: 0.45, EOS_ID: 0.1}, (3,): {EOS_ID: 1.0}, (4,): {EOS_ID: 1.0}})
        assert greedy_search(flat.step, [()], 1, 3)[0] == [[3]]

    def test_beam_ties_go_to_smaller_sequence(self):
        flat = PrefixModel({(): {3: 0.5, 4: 0.5}, (3,): {EOS_ID: 1.0}, (4,): {EOS_ID: 1.0}})
        assert beam_search(flat.step, [()], flat.select, 3, 3)[0] == [3]

    def test_banned_ids_never_emitted(self):
        # nearly all mass on PAD and BOS; the loops must pick among the rest
        model = PrefixModel({(): {PAD_ID: 0.6, BOS_ID: 0.3, 4: 0.06, EOS_ID: 0.04}})
        seqs, _ = greedy_search(model.step, [()], 1, 3)
        assert PAD_ID not in seqs[0] and BOS_ID not in seqs[0]
        sampled, _ = sample_search(model.step, [()] * 20, 20, 3, np.random.default_rng(0))
        assert all(PAD_ID not in s and BOS_ID not in s for s in sampled)
        assert PAD_ID not in beam_search(model.step, [()], model.select, 4, 3)[0]

    def test_one_hot_sampling_equals_greedy(self):
        model = PrefixModel({(): {4: 1.0}, (4,): {3: 1.0}, (4, 3): {EOS_ID: 1.0}})
        sampled, _ = sample_search(model.step, [()] * 3, 3, 5, np.random.default_rng(7))
        assert sampled == greedy_search(model.step, [()] * 3, 3, 5)[0]

    def test_lengths_bounded(self):
        model = PrefixModel({})
        for beam in (1, 3):
            assert len(beam_search(model.step, [()], model.select, beam, 2)[0]) <= 2
        assert all(len(s) <= 2 for s in sample_search(model.step, [()] * 10, 10, 2,
                                                       np.random.default_rng(1))[0])

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            greedy_search(HAND_SET.step, [()], 1, 0)
        with pytest.raises(ValueError):
            beam_search(HAND_SET.step, [()], HAND_SET.select, 0, 3)


def zero_params(vocab, e, d, da):
    z = lambda *s: Tensor(np.zeros(s))
    return DecoderParams(z(vocab, e), z(2 * e + d, 4 * d), z(4 * d), z(da, e), z(da, d), z(da), z(vocab, e),
                         z(vocab, d))


class TestDecodeStep:
    def test_zero_params_give_uniform(self):
        params = zero_params(11, 6, 5, 4)
        state = DecoderState.zeros(2, 5)
        memory, c_avg = Tensor(np.ones((2, 3, 6))), Tensor(np.ones((2, 6)))
        for _ in range(3):
            out = decode_step([BOS_ID, 3], state, memory, c_avg, params, rows=3)
            np.testing.assert_allclose(out.probs, 1.0 / 11, atol=1e-15)
            state = out.state

    def test_alpha_and_distribution(self, rng):
        e, d, da, vocab, r = 6, 5, 4, 9, 2
        params = DecoderParams(*(Tensor(rng.uniform(-0.5, 0.5, s)) for s in [
            (vocab, e), (2 * e + d, 4 * d), (4 * d,), (da, e), (da, d), (da,), (vocab, e), (vocab, d)]))
        for n in (r, 3 * r):
            out = decode_step([3, 4], DecoderState.zeros(2, d), Tensor(rng.normal(size=(2, n, e))),
                              Tensor(rng.normal(size=(2, e))), params, rows=r)
            assert out.alpha.shape == (2, n)
            np.testing.assert_allclose(out.alpha.data.sum(-1), 1.0, atol=1e-12)
            np.testing.assert_allclose(out.probs.sum(-1), 1.0, atol=1e-12)
            assert out.state.t == 1
        with pytest.raises(ValueError):
            decode_step([3, 4], DecoderState.zeros(2, d), Tensor(np.zeros((2, 2 * r, e))),
                        Tensor(np.zeros((2, e))), params, rows=r)


@pytest.fixture
def toy_model(toy_vocab, tiny_cfg):
    return Captioner.init(tiny_cfg, toy_vocab, seed=3)


def concept_set(vocab, text):
    return extract_sentence_concepts(text.split(), vocab)


class TestModelDecoding:
    def test_sample_rescoring_identity(self, toy_model, toy_vocab):
        sets = [concept_set(toy_vocab, t) for t in ("old man wearing shirt", "dog", "")]
        seqs, scores = toy_model.sample(sets, np.random.default_rng(5), max_len=6)
        targets = [with_eos(s, 6) for s in seqs]
        logp, _, mask = toy_model.token_log_probs(sets, targets, append_eos=False)
        rescored = (logp.data * mask).sum(axis=1)
        np.testing.assert_allclose(rescored, scores, atol=1e-10)

    def test_same_seed_same_sample(self, toy_model, toy_vocab):
        sets = [concept_set(toy_vocab, "young woman")]
        a = toy_model.sample(sets, np.random.default_rng(9))
        b = toy_model.sample(sets, np.random.default_rng(9))
        assert a[0] == b[0] and np.array_equal(a[1], b[1])

    def test_greedy_deterministic_and_bounded(self, toy_model, toy_vocab):
        sets = [concept_set(toy_vocab, "red shirt"), concept_set(toy_vocab, "man chasing dog")]
        first = toy_model.greedy(sets, max_len=5)
        assert first[0] == toy_model.greedy(sets, max_len=5)[0]
        assert all(len(s) <= 5 for s in first[0])

    def test_beam_one_matches_greedy_and_wider_is_no_worse(self, toy_model, toy_vocab):
        cs = concept_set(toy_vocab, "old woman wearing red shirt")
        seqs, scores = toy_model.greedy([cs], max_len=6)
        one, one_score = toy_model.beam(cs, 1, 6)
        assert one == seqs[0] and abs(one_score - scores[0]) < 1e-12
        assert toy_model.beam(cs, 4, 6)[1] >= scores[0] - 1e-12

    def test_batched_greedy_matches_single(self, toy_model, toy_vocab):
        sets = [concept_set(toy_vocab, t) for t in ("old man", "young woman wearing red shirt", "dog")]
        batched, _ = toy_model.greedy(sets)
        assert batched == [toy_model.greedy([cs])[0][0] for cs in sets]
