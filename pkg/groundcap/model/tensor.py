"""
Dense kernel shared by every numerical module: affine maps, activations,
masked softmax and a central finite-difference gradient oracle.

Vectors and matrices are plain numpy arrays (row-major). The dtype of the
inputs is preserved, so a model built in float64 stays in float64 and a
float32 model stays in float32.
"""
from dataclasses import fields

import numpy as np
from scipy.special import expit, log_softmax as _log_softmax

ACTIVATIONS = frozenset({'sigmoid', 'tanh'})
DTYPES = {
    'float32': np.float32,
    'float64': np.float64,
}


def resolve_dtype(name):
    try:
        return DTYPES[str(name)]
    except KeyError:
        raise ValueError('dtype must be one of ({}), got {!r}.'
                         .format(','.join(sorted(DTYPES)), name))


def _check_finite(name, array):
    if not np.all(np.isfinite(array)):
        raise FloatingPointError('{} produced non-finite values.'.format(name))
    return array


def linear(W, x):
    """ W·x with a shape check. """
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ValueError('Shape mismatch: W is {}, x is {}.'.format(W.shape, x.shape))
    return W @ x


def affine(W, x, b):
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ValueError('affine expects a matrix and two vectors, got {}, {}, {}.'
                         .format(W.shape, x.shape, b.shape))
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ValueError('Shape mismatch: W is {}, x is {}, b is {}.'
                         .format(W.shape, x.shape, b.shape))
    return _check_finite('affine', W @ x + b)


def activate(kind, x):
    if kind == 'sigmoid':
        return expit(x)
    elif kind == 'tanh':
        return np.tanh(x)
    raise ValueError('activation must be one of ({}), got {!r}.'
                     .format(','.join(sorted(ACTIVATIONS)), kind))


def softmax_masked(x, mask):
    """ Softmax over the entries where mask is true. Masked entries
        are substituted by -inf before exponentiation so they come out
        as exact zeros.
    """
    x = np.asarray(x)
    mask = np.asarray(mask, dtype=bool)
    if x.shape != mask.shape:
        raise ValueError('Score and mask lengths differ: {} vs {}.'
                         .format(x.shape, mask.shape))
    if not mask.any():
        raise ValueError('softmax_masked needs at least one unmasked entry.')
    scores = np.where(mask, x, -np.inf)
    shifted = scores - scores[mask].max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def log_softmax(x):
    return _log_softmax(x)


def finite_diff_grad(f, x, eps=1e-5):
    """ Central-difference gradient of the scalar function f at x.
        f receives a perturbed copy of x, never x itself.
    """
    if eps <= 0:
        raise ValueError('eps must be positive, got {}.'.format(eps))
    x = np.array(x, dtype=np.result_type(np.asarray(x).dtype, np.float32))
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        shifted = x.copy().reshape(-1)
        shifted[i] += eps
        upper = f(shifted.reshape(x.shape))
        shifted[i] -= 2 * eps
        lower = f(shifted.reshape(x.shape))
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise FloatingPointError('f is not finite around coordinate {}.'.format(i))
        flat[i] = (upper - lower) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """ max|a - n| / max(max|a|, max|n|), zero when both vanish. """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


class ParamGroup:
    """ Mixin for dataclasses whose fields are all parameter tensors.
        `version` is bumped by every in-place update so that forward
        caches can detect that the parameters they saw have changed.
    """

    def __post_init__(self):
        self.version = 0

    def named_tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return type(self)(**{name: np.zeros_like(value)
                             for name, value in self.named_tensors().items()})

    def copy(self):
        return type(self)(**{name: value.copy()
                             for name, value in self.named_tensors().items()})

    def accumulate(self, other, scale=1.0):
        for name, value in self.named_tensors().items():
            value += scale * getattr(other, name)
        return self

    def load(self, other):
        for name, value in self.named_tensors().items():
            value[...] = getattr(other, name)
        self.version += 1
