"""
Access to a corpus directory:

    corpus.cfg          frame geometry and class counts (key = value)
    proposals.gcap      descriptor matrix per video (proposals x D)
    cls.gcap            per-frame classification scores (frames x classes)
    det.gcap            detections per video, rows [frame, class, score, x1, y1, x2, y2]
    proposals.jsonl     one proposal record per line
    annotations.jsonl   {video_id, sentence_id, svo}
    references.jsonl    {video_id, split, sentences}
    alignment.jsonl     planted subject/object proposals (synthetic corpora)
    semantic.gcap       svo/<vid> classifier scores, written by svo-train
    subject.gcap, verb.gcap, object.gcap
                        optional per-part SVO classifier features (rows x F per video)
"""
import json
import logging
import os
from collections import OrderedDict
from functools import cached_property

import numpy as np

from groundcap.lang import encode
from groundcap.model.captioner import TrainingExample
from groundcap.proposals import ProposalConfig, detections_from_rows, read_proposals, select_and_pad
from groundcap.semantics import (
    PARTS, SemanticConfig, assemble_semantic, frame_detection_scores, pool_cls_scores,
    pool_det_scores, read_annotations,
)
from groundcap.util.config import load_config
from groundcap.util.container import FeatureContainer

log = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
FEATURE_FILES = {
    'proposals': 'proposals.gcap',
    'cls': 'cls.gcap',
    'det': 'det.gcap',
}
PART_FEATURE_FILES = {part: part + '.gcap' for part in PARTS}


def read_json_lines(path):
    rows = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError('{}:{}: invalid JSON ({}).'.format(path, lineno, e))
    return rows


def write_json_lines(path, rows):
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + '\n')


class Corpus:

    def __init__(self, directory, proposals_file='proposals.jsonl'):
        if not os.path.isdir(directory):
            raise ValueError('Corpus directory {} does not exist.'.format(directory))
        self.directory = directory
        self.proposals_file = proposals_file

    def path(self, name):
        return os.path.join(self.directory, name)

    @cached_property
    def settings(self):
        path = self.path('corpus.cfg')
        return load_config(path) if os.path.exists(path) else {}

    @cached_property
    def proposal_config(self):
        return ProposalConfig.from_settings(self.settings)

    @cached_property
    def descriptors(self):
        return FeatureContainer.read(self.path(FEATURE_FILES['proposals']))

    @cached_property
    def cls_scores(self):
        return FeatureContainer.read(self.path(FEATURE_FILES['cls']))

    @cached_property
    def detections(self):
        path = self.path(FEATURE_FILES['det'])
        return FeatureContainer.read(path) if os.path.exists(path) else FeatureContainer(cols=7)

    @cached_property
    def pools(self):
        frame_counts = {vid: scores.shape[0] for vid, scores in self.cls_scores.items()}
        return read_proposals(self.path(self.proposals_file), descriptors=self.descriptors,
                              cfg=self.proposal_config, frame_counts=frame_counts)

    @cached_property
    def annotations(self):
        return read_annotations(self.path('annotations.jsonl'))

    @cached_property
    def references(self):
        """ {video_id: {'split': ..., 'sentences': [...]}} in file order. """
        refs = OrderedDict()
        for row in read_json_lines(self.path('references.jsonl')):
            if row.get('split') not in SPLITS:
                raise ValueError('Video {} has unknown split {!r}.'
                                 .format(row.get('video_id'), row.get('split')))
            refs[row['video_id']] = {'split': row['split'], 'sentences': list(row['sentences'])}
        return refs

    @cached_property
    def alignment(self):
        path = self.path('alignment.jsonl')
        if not os.path.exists(path):
            return {}
        return {row['video_id']: row for row in read_json_lines(path)}

    @cached_property
    def svo_scores(self):
        path = self.path('semantic.gcap')
        if not os.path.exists(path):
            return None
        return FeatureContainer.read(path).with_prefix('svo/')

    def videos(self, split=None):
        return [vid for vid, ref in self.references.items()
                if split is None or ref['split'] == split]

    def frame_cls(self, video_id):
        return self.cls_scores[video_id]

    def frame_dets(self, video_id):
        n_frames = self.frame_cls(video_id).shape[0]
        rows = self.detections[video_id] if video_id in self.detections else np.zeros((0, 7))
        return detections_from_rows(rows, n_frames)

    def feature_set(self, video_id, m=None):
        if video_id not in self.pools:
            raise ValueError('Video {} has no proposals.'.format(video_id))
        return select_and_pad(self.pools[video_id], m or self.proposal_config.m)

    def ordered_pool(self, feature_set, video_id):
        """ Proposal records in the row order of a feature set. """
        by_id = {prop.id: prop for prop in self.pools[video_id]}
        return [by_id[sid] for sid in feature_set.source_ids if sid is not None]

    def video_descriptor(self, video_id):
        """ Mean descriptor over the whole proposal pool; input to the SVO kernels. """
        return np.asarray(self.descriptors[video_id], dtype=np.float64).mean(axis=0)

    @cached_property
    def part_features(self):
        """ {part: container} for every part with its own feature file. """
        return {part: FeatureContainer.read(self.path(name))
                for part, name in PART_FEATURE_FILES.items() if os.path.exists(self.path(name))}

    def part_source(self, part):
        return PART_FEATURE_FILES[part] if part in self.part_features else FEATURE_FILES['proposals']

    def part_descriptor(self, video_id, part):
        """ Row mean of the part's own features, or the pooled proposal
            descriptor when the corpus has no file for that part.
        """
        if part not in self.part_features:
            return self.video_descriptor(video_id)
        features = self.part_features[part]
        if video_id not in features:
            raise ValueError('Video {} has no {} features.'.format(video_id, part))
        return np.asarray(features[video_id], dtype=np.float64).mean(axis=0)

    def semantic(self, video_id, subset, cfg=None):
        if not subset:
            return None
        cfg = cfg or SemanticConfig()
        blocks = {}
        if 'svo' in subset:
            if self.svo_scores is None or video_id not in self.svo_scores:
                raise ValueError('No SVO scores for video {}; run svo-train first.'
                                 .format(video_id))
            blocks['svo'] = self.svo_scores[video_id].reshape(-1)
        if 'cls' in subset:
            blocks['cls'] = pool_cls_scores(self.frame_cls(video_id), cfg.cls_pooling)
        if 'det' in subset:
            per_frame = frame_detection_scores(self.frame_dets(video_id),
                                               self.proposal_config.n_detection_classes)
            blocks['det'] = pool_det_scores(per_frame, cfg.window)
        return assemble_semantic(subset=subset, **blocks)

    def examples(self, split, vocab, subset=frozenset(), m=None, semantic_cfg=None):
        """ One TrainingExample per distinct reference sentence of every
            video in the split.
        """
        examples = []
        for video_id in self.videos(split):
            proposals = self.feature_set(video_id, m)
            semantic = self.semantic(video_id, subset, semantic_cfg)
            for sentence in dict.fromkeys(self.references[video_id]['sentences']):
                examples.append(TrainingExample(video_id=video_id, proposals=proposals,
                                                semantic=semantic, target=encode(sentence, vocab)))
        log.info('Loaded %d %s examples from %s.', len(examples), split, self.directory)
        return examples

    def sentences(self, split):
        return [s for vid in self.videos(split) for s in self.references[vid]['sentences']]
