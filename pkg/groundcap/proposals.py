"""
Spatio-temporal proposal pools: geometry, filtering, semantic scoring and
the fixed-width feature matrix handed to the attention unit.

Proposal boxes and descriptors are inputs; this module never touches pixels.
"""
import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from groundcap.util.config import ConfigMixin

log = logging.getLogger(__name__)

DETECTION_COLUMNS = ('frame', 'class', 'score', 'x1', 'y1', 'x2', 'y2')


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError('Invalid box {}: corners are out of order.'.format(self.as_list()))

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def intersection(self, other):
        width = min(self.x2, other.x2) - max(self.x1, other.x1)
        height = min(self.y2, other.y2) - max(self.y1, other.y1)
        if width <= 0 or height <= 0:
            return 0.0
        return width * height

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    cls: int
    score: float


@dataclass(eq=False)
class ProposalRecord:
    id: str
    first_frame: int
    boxes: List[BoundingBox]
    descriptor: Optional[np.ndarray] = None
    score: float = 0.0
    descriptor_offset: Optional[int] = None

    def __post_init__(self):
        if not self.boxes:
            raise ValueError('Proposal {} has no boxes.'.format(self.id))
        if self.first_frame < 0:
            raise ValueError('Proposal {} starts at negative frame {}.'
                             .format(self.id, self.first_frame))

    @property
    def last_frame(self):
        return self.first_frame + len(self.boxes) - 1

    @property
    def frames(self):
        return range(self.first_frame, self.last_frame + 1)

    def box_at(self, frame):
        if frame < self.first_frame or frame > self.last_frame:
            return None
        return self.boxes[frame - self.first_frame]


@dataclass(eq=False)
class ProposalFeatureSet:
    features: np.ndarray
    valid_mask: np.ndarray
    source_ids: List[Optional[str]] = field(default_factory=list)

    def __post_init__(self):
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        m = self.valid_mask.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != m:
            raise ValueError('Feature matrix {} does not match mask of length {}.'
                             .format(self.features.shape, m))
        k = int(self.valid_mask.sum())
        if k == 0:
            raise ValueError('A proposal feature set needs at least one valid proposal.')
        if not self.valid_mask[:k].all():
            raise ValueError('Valid proposals must occupy the leading rows.')
        if np.any(self.features[k:]):
            raise ValueError('Padded proposal rows must be all-zero.')
        if not self.source_ids:
            self.source_ids = [str(i) for i in range(k)] + [None] * (m - k)
        if len(self.source_ids) != m or any(
                (sid is None) == bool(valid)
                for sid, valid in zip(self.source_ids, self.valid_mask)):
            raise ValueError('source_ids are inconsistent with the validity mask.')

    @property
    def m(self):
        return self.features.shape[0]

    @property
    def feature_size(self):
        return self.features.shape[1]

    @property
    def valid_count(self):
        return int(self.valid_mask.sum())


@dataclass
class ProposalConfig(ConfigMixin):
    m: int = 20
    min_frames: int = 15
    min_area_fraction: float = 0.005
    dedup_threshold: float = 0.5
    frame_width: int = 320
    frame_height: int = 240
    n_classes: int = 1000
    n_detection_classes: int = 20

    def validate(self):
        if self.m < 1:
            raise ValueError('m must be at least 1.')
        if not 0.0 <= self.dedup_threshold <= 1.0:
            raise ValueError('dedup_threshold must lie in [0, 1].')


def iou_2d(a, b):
    inter = a.intersection(b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def st_iou(a, b):
    """ Volumetric IoU over the union of both frame spans. A frame covered
        by only one proposal adds that box's area to the union.
    """
    inter = union = 0.0
    first = min(a.first_frame, b.first_frame)
    last = max(a.last_frame, b.last_frame)
    for frame in range(first, last + 1):
        box_a, box_b = a.box_at(frame), b.box_at(frame)
        if box_a is not None and box_b is not None:
            overlap = box_a.intersection(box_b)
            inter += overlap
            union += box_a.area + box_b.area - overlap
        elif box_a is not None:
            union += box_a.area
        elif box_b is not None:
            union += box_b.area
    if union <= 0:
        return 0.0
    return inter / union


def id_order(proposal_id):
    """ Sort key comparing the digit runs of an id as numbers, so p9 < p10. """
    return tuple(int(part) if part.isdigit() else part
                 for part in re.split(r'(\d+)', proposal_id))


def _ranking_key(prop):
    return (-prop.score, id_order(prop.id), prop.id)


def filter_pool(pool, cfg):
    frame_area = cfg.frame_width * cfg.frame_height
    candidates = []
    for prop in pool:
        if len(prop.boxes) < cfg.min_frames:
            log.debug('Dropping %s: span of %d frames.', prop.id, len(prop.boxes))
            continue
        if np.median([box.area for box in prop.boxes]) < cfg.min_area_fraction * frame_area:
            log.debug('Dropping %s: median box area too small.', prop.id)
            continue
        candidates.append(prop)

    kept = []
    for prop in sorted(candidates, key=_ranking_key):
        if all(st_iou(prop, other) <= cfg.dedup_threshold for other in kept):
            kept.append(prop)
    return kept


def _frame_detections(frame_dets, frame):
    try:
        return frame_dets[frame]
    except (IndexError, KeyError):
        raise ValueError('Missing detection data for frame {}.'.format(frame))


def score_proposal(prop, frame_cls, frame_dets):
    """ Mean over the span of the frame's top classification score,
        averaged with the mean over the span of the best detection score
        weighted by its IoU with the proposal box.
    """
    cls_total = det_total = 0.0
    for frame in prop.frames:
        if frame >= len(frame_cls):
            raise ValueError('Missing classification scores for frame {}.'.format(frame))
        cls_total += float(np.max(frame_cls[frame]))
        box = prop.box_at(frame)
        weighted = [det.score * iou_2d(det.box, box)
                    for det in _frame_detections(frame_dets, frame)]
        det_total += max(weighted, default=0.0)
    span = len(prop.boxes)
    return (cls_total / span + det_total / span) / 2.0


def score_pool(pool, frame_cls, frame_dets):
    return [replace(prop, score=score_proposal(prop, frame_cls, frame_dets)) for prop in pool]


def select_and_pad(pool, m, dtype=np.float32):
    if m < 1:
        raise ValueError('m must be at least 1, got {}.'.format(m))
    if not pool:
        raise ValueError('A video must yield at least one proposal.')
    chosen = sorted(pool, key=_ranking_key)[:m]
    width = chosen[0].descriptor.shape[0]
    features = np.zeros((m, width), dtype=dtype)
    mask = np.zeros(m, dtype=bool)
    source_ids = [None] * m
    for row, prop in enumerate(chosen):
        if prop.descriptor.shape != (width,):
            raise ValueError('Proposal {} descriptor has shape {}, expected ({},).'
                             .format(prop.id, prop.descriptor.shape, width))
        features[row] = prop.descriptor
        mask[row] = True
        source_ids[row] = prop.id
    return ProposalFeatureSet(features=features, valid_mask=mask, source_ids=source_ids)


def detections_from_rows(rows, n_frames):
    """ Groups detection rows [frame, class, score, x1, y1, x2, y2]
        into one list per frame.
    """
    per_frame = [[] for _ in range(n_frames)]
    for row in np.asarray(rows).reshape(-1, len(DETECTION_COLUMNS)):
        frame = int(row[0])
        if not 0 <= frame < n_frames:
            raise ValueError('Detection refers to frame {} outside the video.'.format(frame))
        per_frame[frame].append(Detection(box=BoundingBox(*map(float, row[3:7])),
                                          cls=int(row[1]), score=float(row[2])))
    return per_frame


def check_bounds(prop, cfg=None, n_frames=None):
    """ Rejects boxes outside the frame and spans past the last frame. """
    if cfg is not None:
        for box in prop.boxes:
            if box.x1 < 0 or box.y1 < 0 or box.x2 > cfg.frame_width or box.y2 > cfg.frame_height:
                raise ValueError('Proposal {} has box {} outside the {}x{} frame.'
                                 .format(prop.id, box.as_list(), cfg.frame_width,
                                         cfg.frame_height))
    if n_frames is not None and prop.last_frame >= n_frames:
        raise ValueError('Proposal {} ends at frame {} but the video has {} frames.'
                         .format(prop.id, prop.last_frame, n_frames))
    return prop


def read_proposals(path, descriptors=None, cfg=None, frame_counts=None):
    """ Reads proposal JSON lines into {video_id: [ProposalRecord]}.
        `descriptors` maps a video id to its descriptor matrix; each record's
        descriptor_offset selects a row. With `cfg` every box must lie in the
        frame, and with `frame_counts` ({video_id: frames}) every span must
        end inside its video.
    """
    pools = {}
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                video_id = entry['video_id']
                offset = int(entry['descriptor_offset'])
                descriptor = None
                if descriptors is not None:
                    descriptor = np.asarray(descriptors[video_id][offset])
                prop = ProposalRecord(id=str(entry['id']),
                                      first_frame=int(entry['first_frame']),
                                      boxes=[BoundingBox(*box) for box in entry['boxes']],
                                      descriptor=descriptor,
                                      score=float(entry.get('score', 0.0)),
                                      descriptor_offset=offset)
                n_frames = (frame_counts or {}).get(video_id)
                check_bounds(prop, cfg, n_frames)
            except (KeyError, TypeError, IndexError, json.JSONDecodeError) as e:
                raise ValueError('{}:{}: malformed proposal record ({!r}).'
                                 .format(path, lineno, e))
            except ValueError as e:
                raise ValueError('{}:{}: {}'.format(path, lineno, e))
            pools.setdefault(video_id, []).append(prop)
    log.info('Read %d proposals for %d videos from %s.',
             sum(len(p) for p in pools.values()), len(pools), path)
    return pools


def write_proposals(path, pools):
    with open(path, 'w', encoding='utf-8') as f:
        for video_id in sorted(pools):
            for prop in pools[video_id]:
                entry = {
                    'video_id': video_id,
                    'id': prop.id,
                    'first_frame': prop.first_frame,
                    'boxes': [box.as_list() for box in prop.boxes],
                    'descriptor_offset': prop.descriptor_offset,
                    'score': prop.score,
                }
                f.write(json.dumps(entry, sort_keys=True) + '\n')
