import itertools

import numpy as np
import pytest

from groundcap.decoder import (
    DecodeConfig, GroundedWord, beam_search, ground, grounding_accuracy, load_stopwords,
    sample_caption,
)
from groundcap.lang import BOS, EOS, PAD, Vocabulary
from groundcap.model.attention import AttentionTrace, TraceStep
from groundcap.model.captioner import build_model, initial_state, step_logits
from groundcap.model.gradcheck import tiny_example
from groundcap.proposals import BoundingBox, ProposalRecord

TOY_VOCAB = 6


def toy_model(tiny_config, seed):
    cfg = tiny_config('att', seed=seed, init_scale=1.5)
    model = build_model(cfg, TOY_VOCAB)
    features = tiny_example(cfg, TOY_VOCAB, np.random.default_rng(seed)).proposals
    return model, features


def sequence_log_prob(model, features, words):
    state = initial_state(model)
    total = 0.0
    for prev, token in zip((BOS,) + words, words + (EOS,)):
        log_probs, state, _ = step_logits(model, state, prev, features, None)
        total += float(log_probs[token])
    return total


def brute_force(model, features, min_len, max_len):
    emittable = [t for t in range(TOY_VOCAB) if t not in (BOS, EOS, PAD)]
    best = None
    for length in range(min_len, max_len + 1):
        for words in itertools.product(emittable, repeat=length):
            key = (-sequence_log_prob(model, features, words), (BOS,) + words + (EOS,))
            best = key if best is None or key < best else best
    return best


class TestBeamSearch:
    @pytest.mark.parametrize('seed', range(20))
    def test_exhaustive_beam_matches_enumeration(self, tiny_config, seed):
        model, features = toy_model(tiny_config, seed)
        result = beam_search(model, features, beam=10 ** 4, min_len=1, max_len=4)
        neg_log_prob, tokens = brute_force(model, features, 1, 4)
        assert result.tokens == tokens[1:-1]
        assert result.log_prob == -neg_log_prob

    def test_widening_the_beam_never_loses_a_finished_caption(self, tiny_config):
        # Greedy ends after one word here; wider beams used to drop that caption.
        model, features = toy_model(tiny_config, 6)
        greedy = beam_search(model, features, beam=1, min_len=1, max_len=4)
        best = beam_search(model, features, beam=10 ** 4, min_len=1, max_len=4)
        for width in (2, 3, 4):
            result = beam_search(model, features, beam=width, min_len=1, max_len=4)
            assert greedy.log_prob <= result.log_prob <= best.log_prob

    @pytest.mark.parametrize('seed', range(20))
    def test_returned_score_is_the_caption_log_prob(self, tiny_config, seed):
        model, features = toy_model(tiny_config, seed)
        best = beam_search(model, features, beam=10 ** 4, min_len=1, max_len=4).log_prob
        for width in (1, 2, 3, 4):
            result = beam_search(model, features, beam=width, min_len=1, max_len=4)
            assert result.log_prob <= best
            assert result.log_prob == pytest.approx(
                sequence_log_prob(model, features, result.tokens), abs=1e-9)

    def test_minimum_length_is_enforced(self, tiny_config):
        for seed in range(100):
            model, features = toy_model(tiny_config, seed % 20)
            result = beam_search(model, features, beam=1 + seed % 3, min_len=4, max_len=6)
            assert 4 <= len(result.tokens) <= 6
            assert result.finished

    def test_maximum_length_forces_the_end(self, tiny_config):
        model, features = toy_model(tiny_config, 0)
        result = beam_search(model, features, beam=3, min_len=2, max_len=2)
        assert len(result.tokens) == 2
        assert result.finished

    def test_specials_are_never_emitted(self, tiny_config):
        for seed in range(10):
            model, features = toy_model(tiny_config, seed)
            result = beam_search(model, features, beam=4, min_len=2, max_len=5)
            assert not {BOS, EOS, PAD} & set(result.tokens)

    @pytest.mark.parametrize('seed', range(5))
    def test_width_one_follows_the_greedy_path(self, tiny_config, seed):
        model, features = toy_model(tiny_config, seed)
        state, prev, words = initial_state(model), BOS, []
        while True:
            log_probs, state, _ = step_logits(model, state, prev, features, None)
            scores = np.array(log_probs, dtype=np.float64)
            scores[[BOS, PAD]] = -np.inf
            if len(words) < 4:
                scores[EOS] = -np.inf
            prev = int(np.argmax(scores))
            if prev == EOS or len(words) == 20:
                break
            words.append(prev)
        result = beam_search(model, features, beam=1, min_len=4)
        # Either the greedy caption or a greedy prefix that ended with a better score.
        assert result.tokens == tuple(words[:len(result.tokens)])
        assert result.log_prob >= sequence_log_prob(model, features, tuple(words)) - 1e-9

    def test_trace_covers_emitted_words(self, tiny_config):
        model, features = toy_model(tiny_config, 3)
        result = beam_search(model, features, beam=5, min_len=3, max_len=5)
        assert result.trace.words == list(result.tokens)
        assert len(result.trace.steps) == len(result.tokens)
        for step in result.trace.steps:
            assert abs(step.beta.sum() - 1.0) < 1e-9

    @pytest.mark.parametrize('beam, min_len, max_len', [
        (0, 4, 20), (5, 6, 5), (5, 0, 5), (5, 4, 21),
    ])
    def test_invalid_arguments(self, tiny_config, beam, min_len, max_len):
        model, features = toy_model(tiny_config, 0)
        with pytest.raises(ValueError):
            beam_search(model, features, beam=beam, min_len=min_len, max_len=max_len)

    def test_decode_config_defaults(self):
        cfg = DecodeConfig.from_settings({})
        assert (cfg.beam, cfg.min_len, cfg.max_len) == (20, 4, 20)


class TestSampling:
    def test_respects_length_bounds_and_seed(self, tiny_config):
        model, features = toy_model(tiny_config, 1)
        first = [sample_caption(model, features, rng=np.random.default_rng(5), min_len=2,
                                max_len=5).tokens for _ in range(2)]
        assert first[0] == first[1]
        rng = np.random.default_rng(9)
        for _ in range(20):
            tokens = sample_caption(model, features, rng=rng, min_len=2, max_len=5).tokens
            assert 2 <= len(tokens) <= 5
            assert not {BOS, EOS, PAD} & set(tokens)


def record(pid, first_frame, frames=3):
    return ProposalRecord(id=pid, first_frame=first_frame, boxes=[BoundingBox(0, 0, 10, 10)] * frames)


class TestGround:
    def test_links_content_words_to_argmax_proposal(self):
        vocab = Vocabulary(['a', 'dog', 'is', 'running'])
        trace = AttentionTrace()
        for word, beta in (('a', [0.5, 0.5]), ('dog', [0.2, 0.8]),
                           ('is', [0.5, 0.5]), ('running', [0.7, 0.3])):
            trace.append(vocab.index(word), TraceStep(epsilon=np.zeros(2), beta=np.array(beta)))
        pool = [record('p0', 0), record('p1', 5, frames=4)]
        report = ground(trace, pool, vocab, stopwords=frozenset({'a', 'is'}))
        assert [(g.word, g.t, g.proposal_id) for g in report] == [('dog', 2, 'p1'),
                                                                  ('running', 4, 'p0')]
        assert report[0].to_dict() == {'word': 'dog', 't': 2, 'proposal_id': 'p1', 'beta': 0.8,
                                       'first_frame': 5, 'last_frame': 8}

    def test_argmax_outside_pool_is_rejected(self):
        trace = AttentionTrace()
        trace.append('dog', TraceStep(epsilon=np.zeros(2), beta=np.array([0.1, 0.9])))
        with pytest.raises(ValueError):
            ground(trace, [record('p0', 0)], stopwords=frozenset())

    def test_mismatched_trace_is_rejected(self):
        trace = AttentionTrace(words=['dog', 'cat'], steps=[])
        with pytest.raises(ValueError):
            ground(trace, [record('p0', 0)], stopwords=frozenset())

    def test_default_stopwords(self):
        stopwords = load_stopwords()
        assert {'a', 'the', 'is'} <= stopwords
        assert 'dog' not in stopwords


def test_grounding_accuracy():
    def word(text, pid):
        return GroundedWord(word=text, t=1, proposal_id=pid, beta=1.0, first_frame=0,
                            last_frame=0)

    alignments = {'v1': {'subject': 'dog', 'object': 'ball', 'subject_proposal': 'p1',
                         'object_proposal': 'p2'}}
    reports = {'v1': [word('dog', 'p1'), word('playing', 'p1'), word('ball', 'p0')],
               'v2': [word('dog', 'p5')]}
    assert grounding_accuracy(reports, alignments) == 0.5
    assert grounding_accuracy({}, alignments) == 0.0
