"""
Synthetic corpus with a known grounding.

Each video plants a subject proposal and an object proposal at random rows
of its pool. The subject proposal carries a one-hot subject block in its
descriptor and the object proposal a one-hot object block; every other
proposal is noise. The caption is "a <subject> is <verb> a <object>", the
verb being a fixed function of (subject, object), so a model has to read
both planted proposals to get the sentence right.
"""
import logging
import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from groundcap.corpus import FEATURE_FILES, write_json_lines
from groundcap.proposals import BoundingBox, ProposalRecord, write_proposals
from groundcap.util.config import ConfigMixin, write_config
from groundcap.util.container import FeatureContainer

log = logging.getLogger(__name__)


@dataclass
class SyntheticCorpusSpec(ConfigMixin):
    n_videos: int = 250
    n_test: int = 50
    n_val: int = 0
    m: int = 8
    feature_size: int = 32
    noise: float = 0.1
    seed: int = 0
    subjects: Tuple[str, ...] = ('man', 'woman', 'dog', 'cat')
    verbs: Tuple[str, ...] = ('riding', 'playing', 'holding')
    objects: Tuple[str, ...] = ('horse', 'guitar', 'ball', 'bike')
    sentences_per_video: int = 2
    n_frames: int = 48
    n_classes: int = 10
    n_detection_classes: int = 8
    frame_width: int = 320
    frame_height: int = 240

    def validate(self):
        if len(self.subjects) < 2 or len(self.verbs) < 2 or len(self.objects) < 2:
            raise ValueError('Need at least two subjects, verbs and objects.')
        if self.feature_size < len(self.subjects) + len(self.objects):
            raise ValueError('feature_size {} cannot hold {} subject and {} object slots.'
                             .format(self.feature_size, len(self.subjects), len(self.objects)))
        if self.m < 2:
            raise ValueError('A pool needs room for the subject and the object (m >= 2).')
        if self.n_test < 0 or self.n_val < 0 or self.n_test + self.n_val >= self.n_videos:
            raise ValueError('n_test + n_val must leave at least one training video.')
        if self.noise < 0:
            raise ValueError('noise must be non-negative.')
        if self.n_frames < 4 or self.sentences_per_video < 1:
            raise ValueError('n_frames must be at least 4 and sentences_per_video at least 1.')

    def verb_for(self, subject_index, object_index):
        return self.verbs[(subject_index * len(self.objects) + object_index) % len(self.verbs)]

    def split_of(self, index):
        n_train = self.n_videos - self.n_test - self.n_val
        if index < n_train:
            return 'train'
        return 'val' if index < n_train + self.n_val else 'test'


def _random_box(spec, rng):
    w = rng.uniform(spec.frame_width / 4, spec.frame_width / 2)
    h = rng.uniform(spec.frame_height / 4, spec.frame_height / 2)
    x1 = rng.uniform(0, spec.frame_width - w)
    y1 = rng.uniform(0, spec.frame_height - h)
    return BoundingBox(round(x1, 2), round(y1, 2), round(x1 + w, 2), round(y1 + h, 2))


def _random_proposal(spec, rng, proposal_id, row):
    first = int(rng.integers(0, spec.n_frames // 2))
    length = int(rng.integers(spec.n_frames // 4, spec.n_frames - first + 1))
    box = _random_box(spec, rng)
    return ProposalRecord(id=proposal_id, first_frame=first, boxes=[box] * length,
                          descriptor_offset=row, score=0.0)


def _detection_rows(prop, cls, score=0.9):
    return [[frame, cls, score] + prop.box_at(frame).as_list() for frame in prop.frames]


def generate(spec):
    """ Returns the corpus as in-memory tables; see `write_corpus`. """
    rng = np.random.default_rng(spec.seed)
    n_s, n_o = len(spec.subjects), len(spec.objects)
    containers = {name: FeatureContainer() for name in FEATURE_FILES}
    pools, annotations, references, alignment = {}, [], [], []
    for index in range(spec.n_videos):
        video_id = 'vid{:04d}'.format(index)
        s, o = int(rng.integers(n_s)), int(rng.integers(n_o))
        subject_row, object_row = (int(r) for r in rng.choice(spec.m, size=2, replace=False))
        descriptors = rng.normal(0.0, spec.noise, size=(spec.m, spec.feature_size))
        descriptors[subject_row, s] += 1.0
        descriptors[object_row, n_s + o] += 1.0
        pool = [_random_proposal(spec, rng, '{}/p{:02d}'.format(video_id, row), row)
                for row in range(spec.m)]
        pools[video_id] = pool

        dets = (_detection_rows(pool[subject_row], s % spec.n_detection_classes)
                + _detection_rows(pool[object_row], (n_s + o) % spec.n_detection_classes))
        containers['proposals'][video_id] = descriptors
        containers['cls'][video_id] = rng.uniform(0.0, 1.0, size=(spec.n_frames, spec.n_classes))
        containers['det'][video_id] = np.asarray(dets, dtype=np.float64).reshape(-1, 7)

        subject, verb, obj = spec.subjects[s], spec.verb_for(s, o), spec.objects[o]
        sentence = 'a {} is {} a {}'.format(subject, verb, obj)
        for sentence_id in range(spec.sentences_per_video):
            annotations.append({'video_id': video_id, 'sentence_id': sentence_id,
                                'svo': [subject, verb, obj]})
        references.append({'video_id': video_id, 'split': spec.split_of(index),
                           'sentences': [sentence] * spec.sentences_per_video})
        alignment.append({'video_id': video_id, 'subject': subject, 'verb': verb,
                          'object': obj, 'subject_proposal': pool[subject_row].id,
                          'object_proposal': pool[object_row].id,
                          'subject_row': subject_row, 'object_row': object_row})
    return containers, pools, annotations, references, alignment


def write_corpus(spec, directory):
    containers, pools, annotations, references, alignment = generate(spec)
    os.makedirs(directory, exist_ok=True)
    for name, container in containers.items():
        container.write(os.path.join(directory, FEATURE_FILES[name]))
    write_proposals(os.path.join(directory, 'proposals.jsonl'), pools)
    write_json_lines(os.path.join(directory, 'annotations.jsonl'), annotations)
    write_json_lines(os.path.join(directory, 'references.jsonl'), references)
    write_json_lines(os.path.join(directory, 'alignment.jsonl'), alignment)
    write_config(os.path.join(directory, 'corpus.cfg'), {
        'm': spec.m,
        'min_frames': 1,
        'frame_width': spec.frame_width,
        'frame_height': spec.frame_height,
        'n_classes': spec.n_classes,
        'n_detection_classes': spec.n_detection_classes,
    })
    log.info('Wrote synthetic corpus of %d videos (%d test, %d val) to %s.',
             spec.n_videos, spec.n_test, spec.n_val, directory)
    return alignment
