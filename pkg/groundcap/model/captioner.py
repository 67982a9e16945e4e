"""
Caption model variants and their teacher-forced forward/backward passes.

    meanpool  LSTM over the mean of the valid proposal features
    att       LSTM-ATT: attention over proposals feeds the gates
    att-sem   LSTM-ATT(SEM): semantic vector concatenated to the word input
    stacked   LSTM2-ATT(SEM): a second LSTM over [s ; h1] emits the words

`meanpool` may also take semantic blocks, in which case they are fused as in
`att-sem`.
"""
import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional

import numpy as np

from groundcap.lang import MAX_LENGTH, PAD
from groundcap.model.attention import (
    AttentionParams, AttentionTrace, attend, attend_backward, mean_pool,
)
from groundcap.model.recurrent import LstmParams, LstmState, lstm_step, lstm_step_backward
from groundcap.model.tensor import ParamGroup, affine, log_softmax, resolve_dtype
from groundcap.semantics import parse_subset
from groundcap.util.config import ConfigMixin
from groundcap.util.container import FeatureContainer, flatten_tensors, unflatten_tensor

log = logging.getLogger(__name__)

VARIANTS = ('meanpool', 'att', 'att-sem', 'stacked')
SELECT_METRICS = ('loss', 'bleu4')


@dataclass
class ModelConfig(ConfigMixin):
    variant: str = 'att'
    sem: FrozenSet[str] = frozenset()
    hidden_size: int = 128
    embedding_size: int = 128
    attention_size: Optional[int] = None
    feature_size: int = 0
    semantic_size: int = 0
    dropout: float = 0.5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 32
    epochs: int = 128
    seed: int = 0
    init_scale: float = 0.08
    forget_bias: float = 1.0
    dtype: str = 'float32'
    select_metric: str = 'bleu4'
    val_beam: int = 1

    def validate(self):
        self.sem = parse_subset(self.sem)
        if self.variant not in VARIANTS:
            raise ValueError('variant must be one of ({}), got {!r}.'
                             .format(','.join(VARIANTS), self.variant))
        if self.variant == 'att' and self.sem:
            raise ValueError('Variant att takes no semantic blocks; use att-sem or stacked.')
        if self.variant in ('att-sem', 'stacked') and not self.sem:
            raise ValueError('Variant {} needs at least one semantic block (--sem).'
                             .format(self.variant))
        for name in ('hidden_size', 'embedding_size', 'batch_size', 'val_beam'):
            if getattr(self, name) < 1:
                raise ValueError('{} must be positive.'.format(name))
        if self.attention_size is not None and self.attention_size < 1:
            raise ValueError('attention_size must be positive.')
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError('dropout must lie in [0, 1).')
        if self.learning_rate < 0 or self.epochs < 0:
            raise ValueError('learning_rate and epochs must be non-negative.')
        if self.select_metric not in SELECT_METRICS:
            raise ValueError('select_metric must be one of ({}).'.format(','.join(SELECT_METRICS)))
        resolve_dtype(self.dtype)

    @property
    def uses_attention(self):
        return self.variant != 'meanpool'

    @property
    def fuses_semantic_input(self):
        return bool(self.sem) and self.variant in ('meanpool', 'att-sem')

    @property
    def stacked(self):
        return self.variant == 'stacked'

    def to_json(self):
        settings = self.to_settings()
        settings['sem'] = sorted(self.sem)
        return settings


@dataclass(eq=False)
class EmbeddingParams(ParamGroup):
    table: np.ndarray


@dataclass(eq=False)
class OutputParams(ParamGroup):
    W_out: np.ndarray
    b_out: np.ndarray


@dataclass(eq=False)
class CaptionModel:
    config: ModelConfig
    vocab_size: int
    embedding: EmbeddingParams
    lstm1: LstmParams
    output: OutputParams
    lstm2: Optional[LstmParams] = None
    attention: Optional[AttentionParams] = None

    @property
    def dtype(self):
        return self.output.W_out.dtype

    def groups(self):
        groups = OrderedDict([('embedding', self.embedding), ('lstm1', self.lstm1)])
        if self.attention is not None:
            groups['attention'] = self.attention
        if self.lstm2 is not None:
            groups['lstm2'] = self.lstm2
        groups['output'] = self.output
        return groups

    def named_tensors(self):
        return OrderedDict(('{}.{}'.format(group_name, name), tensor)
                           for group_name, group in self.groups().items()
                           for name, tensor in group.named_tensors().items())

    def checksum(self):
        digest = hashlib.sha256()
        for name, tensor in self.named_tensors().items():
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(tensor).tobytes())
        return digest.hexdigest()

    def snapshot(self):
        return OrderedDict((name, group.copy()) for name, group in self.groups().items())

    def restore(self, snapshot):
        for name, group in self.groups().items():
            group.load(snapshot[name])


def build_model(cfg, vocab_size):
    if vocab_size < 1:
        raise ValueError('vocab_size must be positive.')
    if cfg.feature_size < 1:
        raise ValueError('feature_size must be set to the proposal descriptor width.')
    if bool(cfg.sem) != (cfg.semantic_size > 0):
        raise ValueError('semantic_size {} is inconsistent with semantic blocks {}.'
                         .format(cfg.semantic_size, sorted(cfg.sem) or 'none'))
    dtype = resolve_dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    scale = cfg.init_scale
    H, E, S = cfg.hidden_size, cfg.embedding_size, cfg.semantic_size

    embedding = EmbeddingParams(
        table=rng.uniform(-scale, scale, size=(vocab_size, E)).astype(dtype))
    input_size = E + S if cfg.fuses_semantic_input else E
    lstm1 = LstmParams.initialize(input_size, H, cfg.feature_size, rng, scale=scale,
                                  forget_bias=cfg.forget_bias, dtype=dtype)
    attention = None
    if cfg.uses_attention:
        attention = AttentionParams.initialize(cfg.feature_size, H, cfg.attention_size or H,
                                               rng, scale=scale, dtype=dtype)
    lstm2 = None
    if cfg.stacked:
        lstm2 = LstmParams.initialize(S + H, H, 0, rng, scale=scale,
                                      forget_bias=cfg.forget_bias, dtype=dtype)
    output = OutputParams(
        W_out=rng.uniform(-scale, scale, size=(vocab_size, H)).astype(dtype),
        b_out=np.zeros(vocab_size, dtype=dtype))
    return CaptionModel(config=cfg, vocab_size=vocab_size, embedding=embedding,
                        lstm1=lstm1, output=output, lstm2=lstm2, attention=attention)


@dataclass(eq=False)
class TrainingExample:
    video_id: str
    proposals: object
    target: tuple
    semantic: Optional[object] = None

    def __post_init__(self):
        if not 2 <= len(self.target) <= MAX_LENGTH + 2:
            raise ValueError('Target of video {} has {} tokens; expected 2 to {}.'
                             .format(self.video_id, len(self.target), MAX_LENGTH + 2))


@dataclass(eq=False)
class RuntimeState:
    layer1: LstmState
    layer2: Optional[LstmState] = None


def initial_state(model):
    H, dtype = model.config.hidden_size, model.dtype
    layer2 = LstmState.zeros(H, dtype) if model.lstm2 is not None else None
    return RuntimeState(layer1=LstmState.zeros(H, dtype), layer2=layer2)


@dataclass(eq=False)
class StepCache:
    token: int
    target: int
    attention: object
    layer1: object
    layer2: object
    hidden: np.ndarray
    dropout_mask: Optional[np.ndarray]
    log_probs: np.ndarray


@dataclass(eq=False)
class SentenceCache:
    model: CaptionModel
    steps: List[StepCache] = field(default_factory=list)
    counted: int = 0


def semantic_input(model, semantic):
    """ The semantic vector in the model dtype, or an empty vector when the
        model uses no semantic blocks.
    """
    cfg = model.config
    if not cfg.sem:
        return np.zeros(0, dtype=model.dtype)
    if semantic is None:
        raise ValueError('Model uses semantic blocks {} but no semantic feature was given.'
                         .format(sorted(cfg.sem)))
    vector = np.asarray(semantic.vector, dtype=model.dtype)
    if vector.shape != (cfg.semantic_size,):
        raise ValueError('Semantic feature has width {}, model expects {}.'
                         .format(vector.shape[0], cfg.semantic_size))
    return vector


def _step(model, state, token, proposals, s, dropout_mask=None):
    if not 0 <= token < model.vocab_size:
        raise ValueError('Token id {} is outside the vocabulary of size {}.'
                         .format(token, model.vocab_size))
    if proposals.feature_size != model.config.feature_size:
        raise ValueError('Proposal features have width {}, model expects {}.'
                         .format(proposals.feature_size, model.config.feature_size))
    u = model.embedding.table[token]
    x1 = np.concatenate([u, s]) if model.config.fuses_semantic_input else u
    if model.attention is not None:
        z, trace_step, att_cache = attend(model.attention, proposals, state.layer1.h)
    else:
        z, trace_step, att_cache = mean_pool(proposals, dtype=model.dtype)
    layer1, cache1 = lstm_step(model.lstm1, x1, z, state.layer1)
    layer2 = cache2 = None
    top = layer1.h
    if model.lstm2 is not None:
        x2 = np.concatenate([s, layer1.h])
        layer2, cache2 = lstm_step(model.lstm2, x2, np.zeros(0, dtype=model.dtype), state.layer2)
        top = layer2.h
    hidden = top * dropout_mask if dropout_mask is not None else top
    log_probs = log_softmax(affine(model.output.W_out, hidden, model.output.b_out))
    cache = StepCache(token=token, target=PAD, attention=att_cache, layer1=cache1,
                      layer2=cache2, hidden=hidden, dropout_mask=dropout_mask,
                      log_probs=log_probs)
    return log_probs, RuntimeState(layer1=layer1, layer2=layer2), trace_step, cache


def step_logits(model, runtime_state, prev_token, features, semantic):
    """ One decoding step with dropout disabled. Returns
        (log-probabilities over the vocabulary, next state, attention trace step).
    """
    s = semantic_input(model, semantic)
    log_probs, state, trace_step, _ = _step(model, runtime_state, prev_token, features, s)
    return log_probs, state, trace_step


def _dropout_mask(model, train_mode, rng):
    rate = model.config.dropout
    if not train_mode or rate == 0.0:
        return None
    if rng is None:
        raise ValueError('Training-mode dropout needs a random generator.')
    keep = rng.random(model.config.hidden_size) >= rate
    return keep.astype(model.dtype) / model.dtype.type(1.0 - rate)


def forward_sentence(model, example, train_mode=False, rng=None):
    """ Teacher-forced pass: step t reads the ground-truth word t-1 and is
        scored against word t. Returns (mean cross-entropy, cache, trace).
    """
    target = example.target
    if any(not 0 <= token < model.vocab_size for token in target):
        raise ValueError('Target of video {} has token ids outside the vocabulary of size {}.'
                         .format(example.video_id, model.vocab_size))
    s = semantic_input(model, example.semantic)
    state = initial_state(model)
    cache = SentenceCache(model=model)
    trace = AttentionTrace()
    total = 0.0
    for t in range(1, len(target)):
        mask = _dropout_mask(model, train_mode, rng)
        log_probs, state, trace_step, step = _step(model, state, target[t - 1],
                                                   example.proposals, s, mask)
        step.target = target[t]
        trace.append(target[t], trace_step)
        if target[t] != PAD:
            total -= float(log_probs[target[t]])
            cache.counted += 1
        cache.steps.append(step)
    if cache.counted == 0:
        raise ValueError('Target of video {} has no scored tokens.'.format(example.video_id))
    return total / cache.counted, cache, trace


def backward_sentence(cache):
    """ Exact gradients of the mean cross-entropy w.r.t. every parameter group. """
    model = cache.model
    grads = OrderedDict((name, group.zeros_like()) for name, group in model.groups().items())
    H, E, S = model.config.hidden_size, model.config.embedding_size, model.config.semantic_size
    zeros = np.zeros(H, dtype=model.dtype)
    dh1, dc1 = zeros, zeros
    dh2, dc2 = zeros, zeros

    for step in reversed(cache.steps):
        dlogits = np.exp(step.log_probs)
        if step.target == PAD:
            dlogits[:] = 0.0
        else:
            dlogits[step.target] -= 1.0
        dlogits /= cache.counted
        grads['output'].W_out += np.outer(dlogits, step.hidden)
        grads['output'].b_out += dlogits
        dtop = model.output.W_out.T @ dlogits
        if step.dropout_mask is not None:
            dtop = dtop * step.dropout_mask

        if model.lstm2 is not None:
            g2, dx2, _, dprev2 = lstm_step_backward(step.layer2, dtop + dh2, dc2)
            grads['lstm2'].accumulate(g2)
            dh2, dc2 = dprev2.h, dprev2.c
            dh1_total = dx2[S:] + dh1
        else:
            dh1_total = dtop + dh1

        g1, dx1, dz, dprev1 = lstm_step_backward(step.layer1, dh1_total, dc1)
        grads['lstm1'].accumulate(g1)
        grads['embedding'].table[step.token] += dx1[:E]
        g_att, _, dh_att = attend_backward(step.attention, dz)
        if g_att is not None:
            grads['attention'].accumulate(g_att)
            dh1 = dprev1.h + dh_att
        else:
            dh1 = dprev1.h
        dc1 = dprev1.c
    return grads


def save_model(model, directory):
    os.makedirs(directory, exist_ok=True)
    flatten_tensors(model.named_tensors()).write(os.path.join(directory, 'model.gcap'))
    with open(os.path.join(directory, 'model.json'), 'w', encoding='utf-8') as f:
        json.dump({'config': model.config.to_json(), 'vocab_size': model.vocab_size},
                  f, indent=2, sort_keys=True)
        f.write('\n')


def load_model(directory):
    with open(os.path.join(directory, 'model.json'), 'r', encoding='utf-8') as f:
        sidecar = json.load(f)
    cfg = ModelConfig.from_settings(sidecar['config'])
    model = build_model(cfg, int(sidecar['vocab_size']))
    container = FeatureContainer.read(os.path.join(directory, 'model.gcap'))
    for name, tensor in model.named_tensors().items():
        tensor[...] = unflatten_tensor(container, name, tensor.shape)
    return model
