"""
Minibatch training of a CaptionModel with per-epoch validation.

Per-example gradients are summed in minibatch order and divided by the
batch size, so a run is a pure function of the model config, the corpus
and its order.
"""
import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from groundcap.decoder import beam_search
from groundcap.lang import BOS, EOS, PAD
from groundcap.metrics import EvalPair, bleu
from groundcap.model.captioner import backward_sentence, forward_sentence
from groundcap.model.optim import Adam

log = logging.getLogger(__name__)

LOG_COLUMNS = ('epoch', 'train_loss', 'val_loss', 'val_bleu4')


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float = math.nan
    val_bleu4: float = math.nan


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Dict[str, int] = field(default_factory=dict)
    selected_epoch: int = 0

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(LOG_COLUMNS)
            for record in self.records:
                writer.writerow([record.epoch] + ['{:.6f}'.format(getattr(record, column))
                                                  for column in LOG_COLUMNS[1:]])


def _references(examples):
    """ {video_id: [reference token-id strings]} with the special ids removed. """
    refs = OrderedDict()
    for ex in examples:
        words = [str(i) for i in ex.target if i not in (BOS, EOS, PAD)]
        refs.setdefault(ex.video_id, []).append(words)
    return refs


def validate(model, examples, beam=1, min_len=4):
    """ Returns (mean teacher-forced loss, corpus BLEU@4 of decoded captions).
        Candidates and references are compared as token-id strings.
    """
    loss = sum(forward_sentence(model, ex)[0] for ex in examples) / len(examples)
    first = OrderedDict()
    for ex in examples:
        first.setdefault(ex.video_id, ex)
    pairs = []
    for video_id, references in _references(examples).items():
        ex = first[video_id]
        result = beam_search(model, ex.proposals, ex.semantic, beam=beam, min_len=min_len)
        pairs.append(EvalPair(candidate=[str(i) for i in result.tokens],
                              references=references))
    return loss, bleu(pairs)[3]


def _minibatch_grads(model, batch, rng):
    total = None
    batch_loss = 0.0
    for ex in batch:
        loss, cache, _ = forward_sentence(model, ex, train_mode=True, rng=rng)
        grads = backward_sentence(cache)
        batch_loss += loss
        if total is None:
            total = grads
        else:
            for name, group in total.items():
                group.accumulate(grads[name])
    for group in total.values():
        for tensor in group.named_tensors().values():
            tensor /= len(batch)
    return batch_loss, total


def train(model, corpus, val=(), cfg=None):
    """ Trains in place and returns (model, TrainingLog).

        When validation examples are given, the parameters of the best epoch
        under `cfg.select_metric` are restored at the end; otherwise the
        final parameters are kept.
    """
    cfg = cfg or model.config
    corpus, val = list(corpus), list(val)
    if not corpus:
        raise ValueError('Training needs at least one example.')
    rng = np.random.default_rng([cfg.seed, 1])
    optimizer = Adam.from_config(model, cfg)
    history = TrainingLog()
    best_value = {'loss': math.inf, 'bleu4': -math.inf}
    snapshots = {}

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(corpus))
        epoch_loss = 0.0
        for step, start in enumerate(range(0, len(corpus), cfg.batch_size), 1):
            batch = [corpus[i] for i in order[start:start + cfg.batch_size]]
            batch_loss, grads = _minibatch_grads(model, batch, rng)
            if not math.isfinite(batch_loss):
                raise FloatingPointError('Training diverged at epoch {} step {}: loss is {}.'
                                         .format(epoch, step, batch_loss))
            optimizer.step(grads)
            epoch_loss += batch_loss

        record = EpochRecord(epoch=epoch, train_loss=epoch_loss / len(corpus))
        if val:
            record.val_loss, record.val_bleu4 = validate(model, val, beam=cfg.val_beam)
            improved = {
                'loss': record.val_loss < best_value['loss'],
                'bleu4': record.val_bleu4 > best_value['bleu4'],
            }
            for metric, value in (('loss', record.val_loss), ('bleu4', record.val_bleu4)):
                if improved[metric]:
                    best_value[metric] = value
                    history.best_epoch[metric] = epoch
                    snapshots[metric] = model.snapshot()
        history.records.append(record)
        log.info('Epoch %d: train loss %.4f, val loss %.4f, val BLEU@4 %.4f.',
                 epoch, record.train_loss, record.val_loss, record.val_bleu4)

    history.selected_epoch = cfg.epochs
    if cfg.select_metric in snapshots:
        model.restore(snapshots[cfg.select_metric])
        history.selected_epoch = history.best_epoch[cfg.select_metric]
        log.info('Selected epoch %d by validation %s.', history.selected_epoch, cfg.select_metric)
    return model, history
