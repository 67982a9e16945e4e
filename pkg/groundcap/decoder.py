"""
Caption decoding and word grounding.

Beam search keeps the `beam` best partial captions by total log-probability.
Every step scores all extensions of every live hypothesis, end-of-sentence
included. Extensions ending in EOS join the finished pool, which keeps its
`beam` best entries; the `beam` best other extensions stay live. Search
stops once the best finished caption scores at least the best live one;
extending a caption never raises its score. EOS is blocked until
`min_len` words were emitted and forced once `max_len` words were emitted.
BOS and PAD are never emitted.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from groundcap.lang import BOS, EOS, MAX_LENGTH, PAD, decode
from groundcap.model.attention import AttentionTrace
from groundcap.model.captioner import initial_state, step_logits
from groundcap.util.config import ConfigMixin

log = logging.getLogger(__name__)

STOPWORDS_PATH = os.path.join(os.path.dirname(__file__), 'data', 'stopwords.txt')


@dataclass
class DecodeConfig(ConfigMixin):
    beam: int = 20
    min_len: int = 4
    max_len: int = MAX_LENGTH
    sample: bool = False
    seed: int = 0

    def validate(self):
        _check_lengths(self.beam, self.min_len, self.max_len)


def _check_lengths(beam, min_len, max_len):
    if beam < 1:
        raise ValueError('beam must be at least 1, got {}.'.format(beam))
    if not 1 <= min_len <= max_len <= MAX_LENGTH:
        raise ValueError('Need 1 <= min_len <= max_len <= {}, got {} and {}.'
                         .format(MAX_LENGTH, min_len, max_len))


@dataclass(eq=False)
class BeamHypothesis:
    tokens: Tuple[int, ...]
    log_prob: float
    state: object
    steps: Tuple[object, ...] = ()

    @property
    def finished(self):
        return len(self.tokens) > 1 and self.tokens[-1] == EOS

    @property
    def words(self):
        """ Emitted token ids without BOS and the final EOS. """
        return self.tokens[1:-1] if self.finished else self.tokens[1:]

    def key(self):
        return -self.log_prob, self.tokens


@dataclass(eq=False)
class DecodeResult:
    tokens: Tuple[int, ...]
    log_prob: float
    trace: AttentionTrace
    finished: bool = True

    def sentence(self, vocab):
        return decode(self.tokens, vocab)


def _allowed_scores(log_probs, length, min_len, max_len):
    scores = np.asarray(log_probs, dtype=np.float64).copy()
    scores[BOS] = scores[PAD] = -np.inf
    if length < min_len:
        scores[EOS] = -np.inf
    if length >= max_len:
        eos = scores[EOS]
        scores[:] = -np.inf
        scores[EOS] = eos
    return scores


def _result(hyp):
    words = hyp.words
    trace = AttentionTrace()
    for word, step in zip(words, hyp.steps):
        trace.append(word, step)
    return DecodeResult(tokens=tuple(words), log_prob=hyp.log_prob, trace=trace,
                        finished=hyp.finished)


def beam_search(model, features, semantic=None, beam=20, min_len=4, max_len=MAX_LENGTH):
    _check_lengths(beam, min_len, max_len)
    live = [BeamHypothesis(tokens=(BOS,), log_prob=0.0, state=initial_state(model))]
    finished = []
    while live:
        candidates = []
        for hyp in live:
            log_probs, state, trace_step = step_logits(model, hyp.state, hyp.tokens[-1],
                                                       features, semantic)
            scores = _allowed_scores(log_probs, len(hyp.tokens) - 1, min_len, max_len)
            for token in np.flatnonzero(np.isfinite(scores)):
                candidates.append(BeamHypothesis(
                    tokens=hyp.tokens + (int(token),),
                    log_prob=hyp.log_prob + float(scores[token]),
                    state=state,
                    steps=hyp.steps + (trace_step,)))
        candidates.sort(key=BeamHypothesis.key)
        # EOS candidates never compete with live ones for a slot.
        finished = sorted(finished + [h for h in candidates if h.finished],
                          key=BeamHypothesis.key)[:beam]
        live = [h for h in candidates if not h.finished][:beam]
        if finished and live and finished[0].log_prob >= live[0].log_prob:
            break
    pool = finished or live
    best = min(pool, key=BeamHypothesis.key)
    log.debug('Beam search kept %d finished hypotheses, best log-prob %.4f.',
              len(finished), best.log_prob)
    return _result(best)


def sample_caption(model, features, semantic=None, rng=None, min_len=4, max_len=MAX_LENGTH):
    """ Ancestral sampling under the same length constraints as beam search. """
    _check_lengths(1, min_len, max_len)
    rng = rng if rng is not None else np.random.default_rng()
    hyp = BeamHypothesis(tokens=(BOS,), log_prob=0.0, state=initial_state(model))
    while not hyp.finished:
        log_probs, state, trace_step = step_logits(model, hyp.state, hyp.tokens[-1],
                                                   features, semantic)
        scores = _allowed_scores(log_probs, len(hyp.tokens) - 1, min_len, max_len)
        probs = np.exp(scores - scores.max())
        probs /= probs.sum()
        token = int(rng.choice(len(probs), p=probs))
        hyp = BeamHypothesis(tokens=hyp.tokens + (token,),
                             log_prob=hyp.log_prob + float(scores[token]),
                             state=state, steps=hyp.steps + (trace_step,))
    return _result(hyp)


def load_stopwords(path=None):
    with open(path or STOPWORDS_PATH, 'r', encoding='utf-8') as f:
        return frozenset(line.strip() for line in f if line.strip() and not line.startswith('#'))


@dataclass
class GroundedWord:
    word: str
    t: int
    proposal_id: str
    beta: float
    first_frame: int
    last_frame: int
    boxes: List[list] = field(default_factory=list)

    def to_dict(self):
        return {'word': self.word, 't': self.t, 'proposal_id': self.proposal_id,
                'beta': self.beta, 'first_frame': self.first_frame,
                'last_frame': self.last_frame}


def ground(trace, pool, vocab=None, stopwords=None):
    """ Links every non-stop word of a caption to its highest-attention
        proposal. `pool` lists the proposal records in feature-row order.
    """
    if len(trace.words) != len(trace.steps):
        raise ValueError('Trace has {} words but {} attention steps.'
                         .format(len(trace.words), len(trace.steps)))
    stopwords = load_stopwords() if stopwords is None else stopwords
    report = []
    for t, (word, step) in enumerate(zip(trace.words, trace.steps), 1):
        text = vocab.word(word) if vocab is not None else word
        if text in stopwords:
            continue
        row = step.argmax_proposal
        if row >= len(pool):
            raise ValueError('Word {!r} attends to proposal row {} but the pool has {} proposals.'
                             .format(text, row, len(pool)))
        prop = pool[row]
        report.append(GroundedWord(word=text, t=t, proposal_id=prop.id,
                                   beta=float(step.beta[row]), first_frame=prop.first_frame,
                                   last_frame=prop.last_frame,
                                   boxes=[box.as_list() for box in prop.boxes]))
    return report


def grounding_accuracy(reports, alignments):
    """ Fraction of generated subject/object words whose grounding hits
        the planted proposal. `alignments` maps a video id to its planted
        {'subject', 'object', 'subject_proposal', 'object_proposal'}.
    """
    hits = total = 0
    for video_id, report in reports.items():
        alignment = alignments.get(video_id)
        if alignment is None:
            continue
        targets = {alignment['subject']: alignment['subject_proposal'],
                   alignment['object']: alignment['object_proposal']}
        for grounded in report:
            if grounded.word in targets:
                total += 1
                hits += int(grounded.proposal_id == targets[grounded.word])
    return hits / total if total else 0.0


def decode_video(model, features, semantic, cfg: Optional[DecodeConfig] = None, rng=None):
    cfg = cfg or DecodeConfig()
    if cfg.sample:
        return sample_caption(model, features, semantic, rng=rng, min_len=cfg.min_len,
                              max_len=cfg.max_len)
    return beam_search(model, features, semantic, beam=cfg.beam, min_len=cfg.min_len,
                       max_len=cfg.max_len)
