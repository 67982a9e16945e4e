"""
Finite-difference verification of the caption model gradients.

Every parameter tensor is perturbed in place, one coordinate at a time,
and the central-difference slope of the teacher-forced loss is compared
with the back-propagated gradient.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from groundcap.lang import BOS, EOS
from groundcap.model.captioner import (
    VARIANTS, ModelConfig, TrainingExample, backward_sentence, build_model, forward_sentence,
)
from groundcap.model.tensor import finite_diff_grad, relative_error
from groundcap.proposals import ProposalFeatureSet
from groundcap.semantics import assemble_semantic

log = logging.getLogger(__name__)

TOLERANCE = 1e-6


def parameter_errors(model, example, eps=1e-5):
    """ {'group.tensor': relative error} for every parameter tensor. """
    _, cache, _ = forward_sentence(model, example)
    grads = backward_sentence(cache)
    errors = OrderedDict()
    for group_name, group in model.groups().items():
        for name, tensor in group.named_tensors().items():
            original = tensor.copy()

            def loss_at(values, tensor=tensor):
                tensor[...] = values
                return forward_sentence(model, example)[0]

            numeric = finite_diff_grad(loss_at, original, eps)
            tensor[...] = original
            errors['{}.{}'.format(group_name, name)] = relative_error(
                getattr(grads[group_name], name), numeric)
    return errors


def tiny_model_config(variant, seed=0):
    sem = frozenset() if variant == 'att' else frozenset({'svo', 'cls'})
    return ModelConfig(variant=variant, sem=sem, hidden_size=4, embedding_size=3,
                       attention_size=3, feature_size=5, semantic_size=4 if sem else 0,
                       dropout=0.0, seed=seed, dtype='float64', init_scale=0.5)


def tiny_example(cfg, vocab_size, rng, m=4, valid=3, length=4):
    """ A random example with padded proposals and a short target. """
    features = np.zeros((m, cfg.feature_size))
    features[:valid] = rng.normal(size=(valid, cfg.feature_size))
    mask = np.arange(m) < valid
    proposals = ProposalFeatureSet(features=features, valid_mask=mask)
    semantic = None
    if cfg.sem:
        blocks = {block: rng.normal(size=2) for block in cfg.sem}
        semantic = assemble_semantic(subset=cfg.sem, **blocks)
    words = tuple(int(w) for w in rng.integers(4, vocab_size, size=length))
    return TrainingExample(video_id='check', proposals=proposals, semantic=semantic,
                           target=(BOS,) + words + (EOS,))


@dataclass
class GradCheckResult:
    variant: str
    seed: int
    errors: OrderedDict

    @property
    def max_error(self):
        return max(self.errors.values())

    def passed(self, tolerance=TOLERANCE):
        return self.max_error <= tolerance


def gradient_suite(seeds=range(5), variants=VARIANTS, vocab_size=9, eps=1e-5):
    results = []
    for variant in variants:
        for seed in seeds:
            cfg = tiny_model_config(variant, seed)
            if variant == 'meanpool':
                cfg = replace(cfg, sem=frozenset(), semantic_size=0)
            model = build_model(cfg, vocab_size)
            example = tiny_example(cfg, vocab_size, np.random.default_rng([seed, 7]))
            result = GradCheckResult(variant=variant, seed=seed,
                                     errors=parameter_errors(model, example, eps))
            log.info('%s seed %d: max relative error %.3g.', variant, seed, result.max_error)
            results.append(result)
    return results
