import csv
import logging
import os
import sys
from collections import OrderedDict

import numpy as np

from groundcap.commands.base import EngineCommand
from groundcap.commands.train import RUN_SETTINGS
from groundcap.corpus import SPLITS, Corpus, read_json_lines, write_json_lines
from groundcap.decoder import (
    DecodeConfig, GroundedWord, decode_video, ground, grounding_accuracy, load_stopwords,
)
from groundcap.lang import Vocabulary, tokenize
from groundcap.metrics import EvalPair, bleu, token_accuracy
from groundcap.model.attention import AttentionTrace
from groundcap.model.captioner import load_model
from groundcap.semantics import SemanticConfig
from groundcap.util.config import load_config

log = logging.getLogger(__name__)

GROUNDED_FIELDS = ('word', 't', 'proposal_id', 'beta', 'first_frame', 'last_frame')


def _check_split(split):
    if split not in SPLITS:
        raise ValueError('--split must be one of ({}), got {!r}.'.format(','.join(SPLITS), split))


class RunCommand(EngineCommand):
    """ A command that reads a trained run directory. """

    def require_run(self):
        self.require_dir('corpus')
        self.require_dir('model')
        self.run_settings = load_config(os.path.join(self.model, RUN_SETTINGS))

    def open_corpus(self):
        return Corpus(self.corpus, proposals_file=self.run_settings.get('proposals',
                                                                        'proposals.jsonl'))


class Generate(RunCommand):
    """ Decodes a caption for every video of a split and writes the
        captions and the per-word attention traces as JSON lines.
    """
    command_name = 'generate'
    user_options = EngineCommand.base_options + [
        ('corpus=', None, 'Corpus directory'),
        ('model=', None, 'Run directory written by train'),
        ('output=', 'o', 'Captions file (default: <model>/captions.jsonl)'),
        ('traces=', None, 'Attention traces file (default: <model>/traces.jsonl)'),
        ('split=', None, 'Split to caption (default: test)'),
        ('beam=', None, 'Beam width (default: 20)'),
        ('min-len=', None, 'Minimum caption length (default: 4)'),
        ('max-len=', None, 'Maximum caption length (default: 20)'),
        ('sample', None, 'Sample captions instead of beam search'),
        ('seed=', None, 'Random seed for sampling'),
    ]
    setting_options = ('beam', 'min_len', 'max_len', 'seed')

    def initialize_command(self):
        self.corpus = ''
        self.model = ''
        self.output = ''
        self.traces = ''
        self.split = 'test'
        self.sample = False

    def finalize_command(self):
        self.require_run()
        _check_split(self.split)
        self.output = self.output or os.path.join(self.model, 'captions.jsonl')
        self.traces = self.traces or os.path.join(self.model, 'traces.jsonl')
        if self.sample:
            self.settings['sample'] = 'true'
        self.cfg = DecodeConfig.from_settings(self.settings)

    def run(self):
        corpus = self.open_corpus()
        model = load_model(self.model)
        vocab = Vocabulary.load(os.path.join(self.model, 'vocab.txt'))
        semantic_cfg = SemanticConfig.from_settings(self.run_settings)
        m = int(self.run_settings.get('m', corpus.proposal_config.m))
        rng = np.random.default_rng(self.cfg.seed)
        captions = []
        with open(self.traces, 'w', encoding='utf-8') as traces:
            for video_id in corpus.videos(self.split):
                features = corpus.feature_set(video_id, m)
                semantic = corpus.semantic(video_id, model.config.sem, semantic_cfg)
                result = decode_video(model, features, semantic, self.cfg, rng)
                captions.append({'video_id': video_id, 'sentence': result.sentence(vocab),
                                 'log_prob': round(result.log_prob, 6)})
                traces.write(result.trace.to_json_lines(vocab, video_id=video_id))
        write_json_lines(self.output, captions)
        log.info('Captioned %d %s videos into %s.', len(captions), self.split, self.output)


class Ground(RunCommand):
    """ Links every non-stop word of the generated captions to the proposal
        with the highest attention weight and reports its frame span. Writes
        one record per video: the caption with its grounded words.
    """
    command_name = 'ground'
    user_options = EngineCommand.base_options + [
        ('corpus=', None, 'Corpus directory'),
        ('model=', None, 'Run directory written by train'),
        ('captions=', None, 'Captions written by generate (default: <model>/captions.jsonl)'),
        ('traces=', None, 'Attention traces (default: <model>/traces.jsonl)'),
        ('output=', 'o', 'Grounding report (default: <model>/grounding.jsonl)'),
        ('stopwords=', None, 'Stop-word list, one word per line'),
    ]

    def initialize_command(self):
        self.corpus = ''
        self.model = ''
        self.captions = ''
        self.traces = ''
        self.output = ''
        self.stopwords = ''

    def finalize_command(self):
        self.require_run()
        self.captions = self.captions or os.path.join(self.model, 'captions.jsonl')
        self.traces = self.traces or os.path.join(self.model, 'traces.jsonl')
        self.output = self.output or os.path.join(self.model, 'grounding.jsonl')

    def run(self):
        corpus = self.open_corpus()
        m = int(self.run_settings.get('m', corpus.proposal_config.m))
        stopwords = load_stopwords(self.stopwords or None)
        by_video = OrderedDict()
        for record in read_json_lines(self.traces):
            by_video.setdefault(record['video_id'], []).append(record)

        reports, rows = OrderedDict(), []
        for caption in read_json_lines(self.captions):
            video_id = caption['video_id']
            if video_id not in by_video:
                raise ValueError('No attention trace for video {} in {}.'
                                 .format(video_id, self.traces))
            trace = AttentionTrace.from_records(by_video[video_id])
            pool = corpus.ordered_pool(corpus.feature_set(video_id, m), video_id)
            reports[video_id] = ground(trace, pool, stopwords=stopwords)
            rows.append({'video_id': video_id, 'sentence': caption['sentence'],
                         'log_prob': caption['log_prob'],
                         'grounding': [grounded.to_dict() for grounded in reports[video_id]]})
        write_json_lines(self.output, rows)
        log.info('Grounded %d words of %d captions into %s.',
                 sum(len(report) for report in reports.values()), len(rows), self.output)
        if corpus.alignment:
            log.info('Grounding accuracy against planted proposals: %.4f.',
                     grounding_accuracy(reports, corpus.alignment))


class Eval(EngineCommand):
    """ Scores generated captions against the reference sentences with
        corpus BLEU@1-4 and prints the result as CSV, every score as a
        percentage. Given a grounding report and a corpus with planted
        alignments, grounding accuracy is reported too.
    """
    command_name = 'eval'
    user_options = EngineCommand.base_options + [
        ('candidates=', None, 'Captions written by generate'),
        ('references=', None, 'references.jsonl of the corpus'),
        ('split=', None, 'Only score videos of this split'),
        ('grounding=', None, 'Grounding report written by ground'),
        ('alignment=', None, 'Planted alignment sidecar of a synthetic corpus'),
        ('output=', 'o', 'CSV file (default: stdout)'),
    ]

    def initialize_command(self):
        self.candidates = ''
        self.references = ''
        self.split = ''
        self.grounding = ''
        self.alignment = ''
        self.output = ''

    def finalize_command(self):
        self.require('candidates', 'references')
        if self.split:
            _check_split(self.split)
        if bool(self.grounding) != bool(self.alignment):
            raise ValueError('--grounding and --alignment must be given together.')

    def scores(self):
        references = {row['video_id']: row for row in read_json_lines(self.references)}
        pairs, first_refs, candidates = [], [], []
        for row in read_json_lines(self.candidates):
            ref = references.get(row['video_id'])
            if ref is None:
                raise ValueError('No references for video {}.'.format(row['video_id']))
            if self.split and ref.get('split') != self.split:
                continue
            candidate = tokenize(row['sentence'])
            sentences = [tokenize(s) for s in ref['sentences']]
            pairs.append(EvalPair(candidate=candidate, references=sentences))
            candidates.append(candidate)
            first_refs.append(sentences[0])
        scores = OrderedDict(('BLEU@{}'.format(n), value)
                             for n, value in enumerate(bleu(pairs), 1))
        scores['METEOR'] = 'n/a'
        scores['token_accuracy'] = token_accuracy(candidates, first_refs)
        if self.grounding:
            reports = OrderedDict()
            for row in read_json_lines(self.grounding):
                reports[row['video_id']] = [
                    GroundedWord(**{key: word[key] for key in GROUNDED_FIELDS})
                    for word in row['grounding']]
            alignments = {row['video_id']: row for row in read_json_lines(self.alignment)}
            scores['grounding_accuracy'] = grounding_accuracy(reports, alignments)
        return scores

    def run(self):
        scores = self.scores()
        out = open(self.output, 'w', newline='', encoding='utf-8') if self.output else sys.stdout
        try:
            writer = csv.writer(out)
            writer.writerow(['metric', 'value'])
            for metric, value in scores.items():
                if not isinstance(value, str):
                    value = '{:.4f}'.format(100.0 * value)
                writer.writerow([metric, value])
        finally:
            if out is not sys.stdout:
                out.close()
