"""
Soft attention over a proposal pool.

Each valid proposal p_i is scored against the previous hidden state,

    eps_i = W_ph · tanh(W_p p_i + W_h h_prev + b_ph)

the scores are normalised with a masked softmax into beta, and the pooled
visual input is z = sum_i beta_i p_i. Padded proposals get beta = 0 exactly
and receive no gradient.
"""
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from groundcap.model.tensor import ParamGroup, activate, softmax_masked


@dataclass(eq=False)
class AttentionParams(ParamGroup):
    W_p: np.ndarray
    W_h: np.ndarray
    b_ph: np.ndarray
    W_ph: np.ndarray

    def __post_init__(self):
        super().__post_init__()
        size = self.W_p.shape[0]
        if self.W_h.shape[0] != size or self.b_ph.shape != (size,) or self.W_ph.shape != (1, size):
            raise ValueError('Attention parameters disagree on the attention size {}.'
                             .format(size))

    @property
    def attention_size(self):
        return self.W_p.shape[0]

    @property
    def feature_size(self):
        return self.W_p.shape[1]

    @property
    def hidden_size(self):
        return self.W_h.shape[1]

    @classmethod
    def initialize(cls, feature_size, hidden_size, attention_size, rng,
                   scale=0.08, dtype=np.float32):
        def uniform(*shape):
            return rng.uniform(-scale, scale, size=shape).astype(dtype)

        return cls(
            W_p=uniform(attention_size, feature_size),
            W_h=uniform(attention_size, hidden_size),
            b_ph=np.zeros(attention_size, dtype=dtype),
            W_ph=uniform(1, attention_size),
        )


@dataclass(eq=False)
class TraceStep:
    epsilon: np.ndarray
    beta: np.ndarray

    @property
    def argmax_proposal(self):
        return int(np.argmax(self.beta))


@dataclass(eq=False)
class AttentionTrace:
    """ One TraceStep per emitted word, aligned with `words` (token ids). """
    words: List[int] = field(default_factory=list)
    steps: List[TraceStep] = field(default_factory=list)

    def append(self, word, step):
        self.words.append(word)
        self.steps.append(step)

    def __len__(self):
        return len(self.steps)

    def to_records(self, vocab=None):
        records = []
        for t, (word, step) in enumerate(zip(self.words, self.steps), 1):
            records.append({
                'word': vocab.word(word) if vocab is not None else word,
                't': t,
                'beta': [float(b) for b in step.beta],
                'argmax_proposal': step.argmax_proposal,
            })
        return records

    def to_json_lines(self, vocab=None, **extra):
        return ''.join(json.dumps(dict(extra, **record), sort_keys=True) + '\n'
                       for record in self.to_records(vocab))

    @classmethod
    def from_records(cls, records, vocab=None):
        trace = cls()
        for record in sorted(records, key=lambda r: r['t']):
            beta = np.asarray(record['beta'], dtype=np.float64)
            word = vocab.index(record['word']) if vocab is not None else record['word']
            trace.append(word, TraceStep(epsilon=np.full_like(beta, np.nan), beta=beta))
        return trace


@dataclass(eq=False)
class AttentionCache:
    params: Optional[AttentionParams]
    version: int
    features: np.ndarray
    mask: np.ndarray
    h_prev: np.ndarray
    activation: Optional[np.ndarray]
    beta: np.ndarray


def _check_inputs(params, proposals, h_prev):
    if proposals.valid_count < 1:
        raise ValueError('Attention needs at least one valid proposal.')
    if params is None:
        return
    if proposals.feature_size != params.feature_size:
        raise ValueError('Proposal features have width {}, attention expects {}.'
                         .format(proposals.feature_size, params.feature_size))
    if h_prev.shape != (params.hidden_size,):
        raise ValueError('Hidden state has shape {}, attention expects ({},).'
                         .format(h_prev.shape, params.hidden_size))


def attend(params, proposals, h_prev):
    _check_inputs(params, proposals, h_prev)
    P = proposals.features.astype(params.W_p.dtype, copy=False)
    mask = proposals.valid_mask
    pre = P @ params.W_p.T + (params.W_h @ h_prev + params.b_ph)
    act = activate('tanh', pre)
    epsilon = np.where(mask, act @ params.W_ph[0], -np.inf)
    beta = softmax_masked(epsilon, mask)
    z = beta @ P
    cache = AttentionCache(params=params, version=params.version, features=P, mask=mask,
                           h_prev=h_prev, activation=act, beta=beta)
    return z, TraceStep(epsilon=epsilon, beta=beta), cache


def mean_pool(proposals, h_prev=None, dtype=np.float32):
    """ Degenerate attention: beta is uniform over the valid proposals. """
    _check_inputs(None, proposals, h_prev)
    P = proposals.features.astype(dtype, copy=False)
    mask = proposals.valid_mask
    epsilon = np.where(mask, 0.0, -np.inf).astype(dtype)
    beta = softmax_masked(epsilon, mask)
    z = beta @ P
    cache = AttentionCache(params=None, version=0, features=P, mask=mask,
                           h_prev=h_prev, activation=None, beta=beta)
    return z, TraceStep(epsilon=epsilon, beta=beta), cache


def attend_backward(cache: Optional[AttentionCache], grad_z):
    """ Returns (param grads or None for mean pooling, grad_P, grad_h_prev). """
    if cache is None:
        raise ValueError('attend_backward needs the cache of a forward step.')
    P, beta, mask = cache.features, cache.beta, cache.mask
    grad_P = np.outer(beta, grad_z)
    params = cache.params
    if params is None:
        grad_P[~mask] = 0.0
        return None, grad_P, None
    if params.version != cache.version:
        raise ValueError('Stale attention cache: parameters changed since the forward step '
                         '(version {} vs {}).'.format(cache.version, params.version))

    grad_beta = P @ grad_z
    grad_eps = beta * (grad_beta - beta @ grad_beta)
    act = cache.activation
    grad_pre = np.outer(grad_eps, params.W_ph[0]) * (1.0 - act ** 2)
    grad_pre_sum = grad_pre.sum(axis=0)

    grads = AttentionParams(
        W_p=grad_pre.T @ P,
        W_h=np.outer(grad_pre_sum, cache.h_prev),
        b_ph=grad_pre_sum,
        W_ph=(grad_eps @ act)[None, :],
    )
    grad_P += grad_pre @ params.W_p
    grad_P[~mask] = 0.0
    grad_h_prev = params.W_h.T @ grad_pre_sum
    return grads, grad_P, grad_h_prev
