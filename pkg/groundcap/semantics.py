"""
Semantic video features: the subject/verb/object vocabulary, one-vs-all
LS-SVM classifiers with closed-form leave-one-out, pooling of per-frame
classification and detection scores, and assembly of the semantic vector.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from groundcap.util.config import ConfigMixin

log = logging.getLogger(__name__)

PARTS = ('subject', 'verb', 'object')
BLOCKS = ('svo', 'cls', 'det')


@dataclass(frozen=True)
class SvoTriplet:
    subject: Optional[str] = None
    verb: Optional[str] = None
    object: Optional[str] = None

    def __post_init__(self):
        if self.subject is None and self.verb is None and self.object is None:
            raise ValueError('An SVO triplet needs at least one of subject, verb, object.')

    def get(self, part):
        return getattr(self, part)

    def as_list(self):
        return [self.subject, self.verb, self.object]


@dataclass(frozen=True)
class SvoVocabulary:
    subjects: Tuple[str, ...] = ()
    verbs: Tuple[str, ...] = ()
    objects: Tuple[str, ...] = ()

    def part(self, name):
        return {'subject': self.subjects, 'verb': self.verbs, 'object': self.objects}[name]

    def __len__(self):
        return len(self.subjects) + len(self.verbs) + len(self.objects)

    def offset(self, name):
        return sum(len(self.part(p)) for p in PARTS[:PARTS.index(name)])

    def span(self, name):
        start = self.offset(name)
        return slice(start, start + len(self.part(name)))

    def column(self, name, token):
        """ Column of (part, token) in the concatenated S|V|O score vector, or None. """
        tokens = self.part(name)
        if token not in tokens:
            return None
        return self.offset(name) + tokens.index(token)

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({'subjects': list(self.subjects), 'verbs': list(self.verbs),
                       'objects': list(self.objects)}, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        return cls(tuple(data['subjects']), tuple(data['verbs']), tuple(data['objects']))


@dataclass
class SemanticConfig(ConfigMixin):
    kernel: str = 'linear'
    gamma: float = 1.0
    lambda_grid: Tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
    fit_bias: bool = False
    window: int = 25
    cls_pooling: str = 'mean'
    min_sentences: int = 2

    def validate(self):
        if self.kernel not in ('linear', 'rbf'):
            raise ValueError('kernel must be one of (linear,rbf), got {!r}.'.format(self.kernel))
        if self.cls_pooling not in ('mean', 'max'):
            raise ValueError('cls_pooling must be one of (mean,max).')
        if not self.lambda_grid or min(self.lambda_grid) <= 0:
            raise ValueError('lambda_grid must hold positive values.')
        if self.window < 1:
            raise ValueError('window must be at least 1.')


def mine_svo_vocabulary(annotations, min_sentences=2):
    """ A token joins its part's vocabulary when at least `min_sentences`
        distinct sentences of one video mention it. Tokens are kept as
        written and sorted, so the result does not depend on video order.
    """
    found = {part: set() for part in PARTS}
    for triplets in annotations.values():
        for part in PARTS:
            counts = Counter(t.get(part) for t in triplets if t.get(part) is not None)
            found[part].update(token for token, n in counts.items() if n >= min_sentences)
    return SvoVocabulary(*(tuple(sorted(found[part])) for part in PARTS))


def make_svo_labels(video_ids, annotations, vocab):
    """ +1/-1 label matrix (videos x |S|+|V|+|O|): +1 when any sentence
        of the video names the token for that part.
    """
    Y = -np.ones((len(video_ids), len(vocab)))
    for row, video_id in enumerate(video_ids):
        for triplet in annotations.get(video_id, ()):
            for part in PARTS:
                col = vocab.column(part, triplet.get(part))
                if col is not None:
                    Y[row, col] = 1.0
    return Y


@dataclass(frozen=True)
class KernelSpec:
    kind: str = 'linear'
    gamma: float = 1.0


def linear_kernel(X, Y=None):
    Y = X if Y is None else Y
    return np.asarray(X, dtype=np.float64) @ np.asarray(Y, dtype=np.float64).T


def rbf_kernel(X, Y=None, gamma=1.0):
    Y = X if Y is None else Y
    return np.exp(-gamma * cdist(X, Y, 'sqeuclidean'))


def gram(spec, X, Y=None):
    if spec.kind == 'linear':
        return linear_kernel(X, Y)
    elif spec.kind == 'rbf':
        return rbf_kernel(X, Y, spec.gamma)
    raise ValueError('Unknown kernel {!r}.'.format(spec.kind))


@dataclass(eq=False)
class LsSvmModel:
    alpha: np.ndarray
    bias: float
    lam: float
    y: np.ndarray
    inverse_diag: np.ndarray
    kernel: KernelSpec = field(default_factory=KernelSpec)


def _check_gram(K):
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError('Gram matrix must be square, got {}.'.format(K.shape))
    if K.shape[0] < 2:
        raise ValueError('LS-SVM needs at least two training points.')
    if not np.all(np.isfinite(K)):
        raise ValueError('Gram matrix has non-finite entries.')
    scale = max(np.abs(K).max(), 1.0)
    if not np.allclose(K, K.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError('Gram matrix is not symmetric.')
    return K


def _solve(K, Y, lam, fit_bias):
    """ Solves (K + lam I) alpha = Y, bordered by the bias constraint when
        fit_bias is set, for every column of Y at once. Returns
        (alpha, bias, diagonal of the inverse system restricted to alpha).
    """
    if lam <= 0:
        raise ValueError('lambda must be positive, got {}.'.format(lam))
    n = K.shape[0]
    A = K + lam * np.eye(n)
    try:
        if not fit_bias:
            factor = linalg.cho_factor(A)
            alpha = linalg.cho_solve(factor, Y)
            inverse = linalg.cho_solve(factor, np.eye(n))
            return alpha, np.zeros(Y.shape[1]), np.diag(inverse).copy()
        H = np.zeros((n + 1, n + 1))
        H[0, 1:] = H[1:, 0] = 1.0
        H[1:, 1:] = A
        inverse = linalg.inv(H)
        solution = inverse @ np.vstack([np.zeros((1, Y.shape[1])), Y])
        return solution[1:], solution[0], np.diag(inverse)[1:].copy()
    except linalg.LinAlgError as e:
        raise FloatingPointError('LS-SVM system is singular: {}.'.format(e))


def lssvm_train(K, y, lam, fit_bias=False, kernel=None):
    K = _check_gram(K)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (K.shape[0],):
        raise ValueError('Labels have shape {}, expected ({},).'.format(y.shape, K.shape[0]))
    alpha, bias, inverse_diag = _solve(K, y[:, None], lam, fit_bias)
    return LsSvmModel(alpha=alpha[:, 0], bias=float(bias[0]), lam=float(lam), y=y,
                      inverse_diag=inverse_diag, kernel=kernel or KernelSpec())


def lssvm_loo(model):
    """ Leave-one-out predictions without retraining:
        y_i - alpha_i / [inverse system]_ii.
    """
    if model.inverse_diag is None or model.inverse_diag.shape != model.alpha.shape:
        raise ValueError('Model does not retain the inverse diagonal needed for LOO.')
    if np.any(model.inverse_diag == 0) or not np.all(np.isfinite(model.inverse_diag)):
        raise FloatingPointError('LS-SVM system is singular; LOO is undefined.')
    return model.y - model.alpha / model.inverse_diag


def lssvm_predict(model, k_test):
    k_test = np.asarray(k_test, dtype=np.float64)
    if k_test.shape[-1] != model.alpha.shape[0]:
        raise ValueError('Kernel vector has length {}, model was trained on {} points.'
                         .format(k_test.shape[-1], model.alpha.shape[0]))
    return k_test @ model.alpha + model.bias


@dataclass(eq=False)
class SvoClassifier:
    models: List[LsSvmModel]

    @property
    def lambdas(self):
        return [model.lam for model in self.models]

    def train_responses(self):
        return np.column_stack([lssvm_loo(model) for model in self.models])

    def predict(self, K_test):
        return np.column_stack([lssvm_predict(model, K_test) for model in self.models])


def loo_errors(K, Y, lam, fit_bias=False):
    """ Mean squared leave-one-out residual of every column of Y. """
    alpha, _, inverse_diag = _solve(K, Y, lam, fit_bias)
    return ((alpha / inverse_diag[:, None]) ** 2).mean(axis=0)


def train_one_vs_all(K, Y, grid, fit_bias=False, kernel=None):
    """ One binary LS-SVM per column of Y, each with the lambda from the
        grid that minimises its leave-one-out error (ties -> smaller lambda).
    """
    K = _check_gram(K)
    Y = np.asarray(Y, dtype=np.float64)
    grid = sorted(grid)
    errors = np.vstack([loo_errors(K, Y, lam, fit_bias) for lam in grid])
    best = np.argmin(errors, axis=0)
    models = [None] * Y.shape[1]
    for g in np.unique(best):
        columns = np.flatnonzero(best == g)
        alpha, bias, inverse_diag = _solve(K, Y[:, columns], grid[g], fit_bias)
        for j, col in enumerate(columns):
            models[col] = LsSvmModel(alpha=alpha[:, j], bias=float(bias[j]), lam=grid[g],
                                     y=Y[:, col], inverse_diag=inverse_diag,
                                     kernel=kernel or KernelSpec())
    log.info('Trained %d one-vs-all LS-SVMs on %d videos.', Y.shape[1], K.shape[0])
    return SvoClassifier(models=models)


@dataclass(eq=False)
class PartwiseSvoClassifier:
    """ One set of one-vs-all LS-SVMs per part, each over its own kernel.
        Responses come back in the S|V|O column order of the vocabulary.
    """
    vocab: SvoVocabulary
    parts: Dict[str, SvoClassifier]

    def _stack(self, blocks):
        return np.hstack([blocks[part] for part in PARTS if part in blocks])

    @property
    def lambdas(self):
        return [lam for part in PARTS if part in self.parts for lam in self.parts[part].lambdas]

    def train_responses(self):
        return self._stack({part: clf.train_responses() for part, clf in self.parts.items()})

    def predict(self, test_grams):
        """ `test_grams` maps each part to its (n_test x n_train) kernel block. """
        return self._stack({part: clf.predict(test_grams[part]) for part, clf in self.parts.items()})


def train_partwise(grams, Y, vocab, grid, fit_bias=False, kernel=None):
    """ Trains the columns of each part on that part's Gram matrix. """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[1] != len(vocab):
        raise ValueError('Label matrix has {} columns but the vocabulary has {} tokens.'
                         .format(Y.shape[1], len(vocab)))
    parts = {}
    for part in PARTS:
        span = vocab.span(part)
        if span.start == span.stop:
            continue
        parts[part] = train_one_vs_all(grams[part], Y[:, span], grid, fit_bias, kernel)
    if not parts:
        raise ValueError('The SVO vocabulary is empty.')
    return PartwiseSvoClassifier(vocab=vocab, parts=parts)


def pool_cls_scores(per_frame, mode='mean'):
    scores = np.asarray(per_frame, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError('Classification pooling needs at least one frame.')
    if mode == 'mean':
        return scores.mean(axis=0)
    elif mode == 'max':
        return scores.max(axis=0)
    raise ValueError('Unknown pooling mode {!r}.'.format(mode))


def pool_det_scores(per_frame, window=25):
    """ Per class: mean over each full window of consecutive frames (the
        window shrinks to the video length for short videos), then the
        maximum over window positions.
    """
    scores = np.asarray(per_frame, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError('Detection pooling needs at least one frame.')
    if window < 1:
        raise ValueError('window must be at least 1, got {}.'.format(window))
    width = min(window, scores.shape[0])
    windows = np.lib.stride_tricks.sliding_window_view(scores, width, axis=0)
    return windows.mean(axis=-1).max(axis=0)


def frame_detection_scores(per_frame_detections, n_classes):
    """ frames x classes matrix of the best detection score per class. """
    scores = np.zeros((len(per_frame_detections), n_classes))
    for frame, detections in enumerate(per_frame_detections):
        for det in detections:
            if not 0 <= det.cls < n_classes:
                raise ValueError('Detection class {} outside [0, {}).'.format(det.cls, n_classes))
            scores[frame, det.cls] = max(scores[frame, det.cls], det.score)
    return scores


def parse_subset(text):
    if isinstance(text, (set, frozenset, tuple, list)):
        blocks = frozenset(text)
    else:
        blocks = frozenset(part.strip() for part in str(text or '').split(',') if part.strip())
    unknown = blocks - set(BLOCKS)
    if unknown:
        raise ValueError('Unknown semantic blocks: {}.'.format(', '.join(sorted(unknown))))
    return blocks


@dataclass(eq=False)
class SemanticFeature:
    subset: FrozenSet[str]
    svo_scores: Optional[np.ndarray] = None
    cls_scores: Optional[np.ndarray] = None
    det_scores: Optional[np.ndarray] = None

    @property
    def vector(self):
        blocks = [getattr(self, block + '_scores') for block in BLOCKS if block in self.subset]
        return np.concatenate(blocks) if blocks else np.zeros(0)

    @property
    def width(self):
        return self.vector.shape[0]


def assemble_semantic(svo=None, cls=None, det=None, subset=frozenset(BLOCKS)):
    """ Concatenates the active blocks in the fixed order SVO | CLS | DET. """
    subset = parse_subset(subset)
    given = {'svo': svo, 'cls': cls, 'det': det}
    for block in subset:
        if given[block] is None:
            raise ValueError('Semantic block {!r} is active but missing.'.format(block))
    values = {block + '_scores': np.asarray(given[block], dtype=np.float64)
              for block in subset}
    feature = SemanticFeature(subset=subset, **values)
    if not np.all(np.isfinite(feature.vector)):
        raise ValueError('Semantic feature has non-finite entries.')
    return feature


def predict_triplets(scores, vocab):
    """ Top-scoring token of each non-empty part, per row of scores. """
    triplets = []
    for row in np.atleast_2d(scores):
        picked = {}
        for part in PARTS:
            tokens = vocab.part(part)
            if tokens:
                picked[part] = tokens[int(np.argmax(row[vocab.span(part)]))]
        triplets.append(SvoTriplet(**picked))
    return triplets


def svo_accuracy(scores, labels, vocab):
    """ Per part, the fraction of videos whose top-scoring class is one
        of their labels.
    """
    accuracy = {}
    for part in PARTS:
        span = vocab.span(part)
        if span.start == span.stop:
            continue
        top = np.argmax(scores[:, span], axis=1)
        hits = labels[:, span][np.arange(len(top)), top] > 0
        accuracy[part] = float(hits.mean())
    return accuracy


def most_common_triplet(triplets):
    picked = {}
    for part in PARTS:
        counts = Counter(t.get(part) for t in triplets if t.get(part) is not None)
        if counts:
            picked[part] = min(counts, key=lambda token: (-counts[token], token))
    return SvoTriplet(**picked)


def binary_svo_accuracy(predicted, annotations):
    """ Per part, the fraction of videos whose predicted token equals the
        most common human token for that part.
    """
    hits = Counter()
    totals = Counter()
    for video_id, triplet in predicted.items():
        reference = most_common_triplet(annotations[video_id])
        for part in PARTS:
            if reference.get(part) is None:
                continue
            totals[part] += 1
            hits[part] += int(triplet.get(part) == reference.get(part))
    return {part: hits[part] / totals[part] for part in PARTS if totals[part]}


def read_annotations(path):
    """ Reads {video_id, sentence_id, svo} JSON lines into
        {video_id: [SvoTriplet, ...]} ordered by sentence id.
    """
    rows = {}
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                triplet = SvoTriplet(*entry['svo'])
                rows.setdefault(entry['video_id'], []).append((entry['sentence_id'], triplet))
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise ValueError('{}:{}: malformed annotation ({!r}).'.format(path, lineno, e))
    return {video_id: [t for _, t in sorted(entries, key=lambda e: e[0])]
            for video_id, entries in rows.items()}
