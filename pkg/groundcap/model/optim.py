import logging
from collections import OrderedDict

import numpy as np

log = logging.getLogger(__name__)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(tensor, dtype=np.float64)))
                             for group in grads.values()
                             for tensor in group.named_tensors().values())))


class Adam:
    """ Adam over every parameter group of a CaptionModel, with the
        gradients rescaled to `clip_norm` when their global L2 norm
        exceeds it. Updates happen in place and bump group versions.
    """

    def __init__(self, model, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=5.0):
        self.model = model
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        groups = model.groups()
        self.m = OrderedDict((name, group.zeros_like()) for name, group in groups.items())
        self.v = OrderedDict((name, group.zeros_like()) for name, group in groups.items())

    @classmethod
    def from_config(cls, model, cfg):
        return cls(model, learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2,
                   eps=cfg.adam_eps, clip_norm=cfg.clip_norm)

    def step(self, grads):
        """ Applies one update and returns the pre-clipping gradient norm. """
        norm = global_norm(grads)
        if not np.isfinite(norm):
            raise FloatingPointError('Gradient norm is not finite.')
        scale = 1.0
        if self.clip_norm > 0 and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, group in self.model.groups().items():
            m_group, v_group = self.m[name].named_tensors(), self.v[name].named_tensors()
            for key, param in group.named_tensors().items():
                grad = getattr(grads[name], key) * scale
                m, v = m_group[key], v_group[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                param -= (self.learning_rate * (m / correction1)
                          / (np.sqrt(v / correction2) + self.eps)).astype(param.dtype)
            group.version += 1
        return norm
