"""
Single-layer LSTM cell with a visual input that feeds all four gates.

Gate blocks are stacked in the order (i, f, o, g) along the first axis of
every weight matrix, so W_x[:H] is W_xi, W_x[H:2H] is W_xf and so on.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from groundcap.model.tensor import ParamGroup, activate, affine, linear

GATES = ('i', 'f', 'o', 'g')


@dataclass(eq=False)
class LstmParams(ParamGroup):
    W_x: np.ndarray
    W_h: np.ndarray
    W_z: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        super().__post_init__()
        hidden4 = self.b.shape[0]
        if hidden4 % 4:
            raise ValueError('Bias length {} is not a multiple of 4.'.format(hidden4))
        hidden = hidden4 // 4
        for name in ('W_x', 'W_h', 'W_z'):
            if getattr(self, name).shape[0] != hidden4:
                raise ValueError('{} has {} rows, expected {}.'
                                 .format(name, getattr(self, name).shape[0], hidden4))
        if self.W_h.shape[1] != hidden:
            raise ValueError('W_h must be square in the hidden size, got {}.'
                             .format(self.W_h.shape))

    @property
    def hidden_size(self):
        return self.b.shape[0] // 4

    @property
    def input_size(self):
        return self.W_x.shape[1]

    @property
    def visual_size(self):
        return self.W_z.shape[1]

    def gate(self, name):
        """ Returns views (W_x·, W_h·, W_z·, b·) for one gate. """
        k = GATES.index(name)
        rows = slice(k * self.hidden_size, (k + 1) * self.hidden_size)
        return self.W_x[rows], self.W_h[rows], self.W_z[rows], self.b[rows]

    @classmethod
    def initialize(cls, input_size, hidden_size, visual_size, rng,
                   scale=0.08, forget_bias=1.0, dtype=np.float32):
        def uniform(*shape):
            return rng.uniform(-scale, scale, size=shape).astype(dtype)

        params = cls(
            W_x=uniform(4 * hidden_size, input_size),
            W_h=uniform(4 * hidden_size, hidden_size),
            W_z=uniform(4 * hidden_size, visual_size),
            b=np.zeros(4 * hidden_size, dtype=dtype),
        )
        params.gate('f')[3][:] = forget_bias
        return params


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size, dtype=np.float32):
        return cls(h=np.zeros(hidden_size, dtype=dtype),
                   c=np.zeros(hidden_size, dtype=dtype))


@dataclass
class LstmCache:
    params: LstmParams
    version: int
    u: np.ndarray
    z: np.ndarray
    prev: LstmState
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def lstm_step(params, u, z, prev):
    if u.shape != (params.input_size,) or z.shape != (params.visual_size,):
        raise ValueError('LSTM expects input {} and visual {}, got {} and {}.'
                         .format(params.input_size, params.visual_size, u.shape, z.shape))
    if prev.h.shape != (params.hidden_size,) or prev.c.shape != (params.hidden_size,):
        raise ValueError('Previous state does not match hidden size {}.'
                         .format(params.hidden_size))
    H = params.hidden_size
    a = affine(params.W_x, u, params.b) + linear(params.W_h, prev.h) + linear(params.W_z, z)
    i = activate('sigmoid', a[:H])
    f = activate('sigmoid', a[H:2 * H])
    o = activate('sigmoid', a[2 * H:3 * H])
    g = activate('tanh', a[3 * H:])
    c = f * prev.c + i * g
    tanh_c = activate('tanh', c)
    h = o * tanh_c
    cache = LstmCache(params=params, version=params.version, u=u, z=z, prev=prev,
                      i=i, f=f, o=o, g=g, tanh_c=tanh_c)
    return LstmState(h=h, c=c), cache


def lstm_step_backward(cache: Optional[LstmCache], grad_h, grad_c):
    """ Back-propagates dL/dh_t and dL/dc_t through one step.
        Returns (param grads, grad_u, grad_z, grad of the previous state).
    """
    if cache is None:
        raise ValueError('lstm_step_backward needs the cache of a forward step.')
    params = cache.params
    if params.version != cache.version:
        raise ValueError('Stale LSTM cache: parameters changed since the forward step '
                         '(version {} vs {}).'.format(cache.version, params.version))

    dc = grad_c + grad_h * cache.o * (1.0 - cache.tanh_c ** 2)
    d_o = grad_h * cache.tanh_c
    d_i = dc * cache.g
    d_f = dc * cache.prev.c
    d_g = dc * cache.i
    da = np.concatenate([
        d_i * cache.i * (1.0 - cache.i),
        d_f * cache.f * (1.0 - cache.f),
        d_o * cache.o * (1.0 - cache.o),
        d_g * (1.0 - cache.g ** 2),
    ])

    grads = LstmParams(
        W_x=np.outer(da, cache.u),
        W_h=np.outer(da, cache.prev.h),
        W_z=np.outer(da, cache.z),
        b=da,
    )
    grad_u = params.W_x.T @ da
    grad_z = params.W_z.T @ da
    grad_prev = LstmState(h=params.W_h.T @ da, c=dc * cache.f)
    return grads, grad_u, grad_z, grad_prev
