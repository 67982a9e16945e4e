import logging
import os

from groundcap.commands.base import EngineCommand
from groundcap.corpus import Corpus
from groundcap.proposals import ProposalConfig, filter_pool, score_pool, write_proposals
from groundcap.semantics import SemanticConfig, mine_svo_vocabulary
from groundcap.synth import SyntheticCorpusSpec, write_corpus

log = logging.getLogger(__name__)


class Synth(EngineCommand):
    """ Writes a synthetic corpus whose subject and object proposals are
        planted at random rows of every pool. The planted rows are kept in
        alignment.jsonl, which only evaluation reads.
    """
    command_name = 'synth'
    user_options = EngineCommand.base_options + [
        ('output=', 'o', 'Corpus directory to write'),
        ('seed=', None, 'Random seed'),
        ('n-videos=', None, 'Number of videos'),
        ('n-test=', None, 'Number of test videos'),
        ('n-val=', None, 'Number of validation videos'),
        ('m=', None, 'Proposals per video'),
        ('feature-size=', None, 'Descriptor width D'),
        ('noise=', None, 'Standard deviation of the descriptor noise'),
    ]
    setting_options = ('seed', 'n_videos', 'n_test', 'n_val', 'm', 'feature_size', 'noise')

    def initialize_command(self):
        self.output = ''

    def finalize_command(self):
        self.require('output')
        self.spec = SyntheticCorpusSpec.from_settings(self.settings)

    def run(self):
        write_corpus(self.spec, self.output)


class MineVocab(EngineCommand):
    """ Mines the subject/verb/object vocabulary from the annotated SVO
        triplets of the training videos.
    """
    command_name = 'mine-vocab'
    user_options = EngineCommand.base_options + [
        ('corpus=', None, 'Corpus directory'),
        ('output=', 'o', 'SVO vocabulary JSON (default: <corpus>/svo_vocab.json)'),
        ('min-sentences=', None, 'Sentences of one video that must name a token'),
    ]
    setting_options = ('min_sentences',)

    def initialize_command(self):
        self.corpus = ''
        self.output = ''

    def finalize_command(self):
        self.require_dir('corpus')
        self.output = self.output or os.path.join(self.corpus, 'svo_vocab.json')
        self.cfg = SemanticConfig.from_settings(self.settings)

    def run(self):
        corpus = Corpus(self.corpus)
        train = set(corpus.videos('train'))
        annotations = {vid: triplets for vid, triplets in corpus.annotations.items()
                       if vid in train}
        vocab = mine_svo_vocabulary(annotations, self.cfg.min_sentences)
        if not len(vocab):
            raise ValueError('No SVO token reaches {} sentences in any training video.'
                             .format(self.cfg.min_sentences))
        vocab.save(self.output)
        log.info('Mined %d subjects, %d verbs and %d objects from %d videos into %s.',
                 len(vocab.subjects), len(vocab.verbs), len(vocab.objects),
                 len(annotations), self.output)


class ScoreProposals(EngineCommand):
    """ Filters every proposal pool by span and box area, removes
        near-duplicates and scores the survivors with the per-frame
        classification and detection scores.
    """
    command_name = 'score-proposals'
    user_options = EngineCommand.base_options + [
        ('corpus=', None, 'Corpus directory'),
        ('output=', 'o', 'Scored proposals (default: <corpus>/proposals.scored.jsonl)'),
        ('min-frames=', None, 'Minimum proposal span in frames'),
        ('dedup-threshold=', None, 'Spatio-temporal IoU above which proposals are duplicates'),
    ]
    setting_options = ('min_frames', 'dedup_threshold')

    def initialize_command(self):
        self.corpus = ''
        self.output = ''

    def finalize_command(self):
        self.require_dir('corpus')
        self.output = self.output or os.path.join(self.corpus, 'proposals.scored.jsonl')

    def run(self):
        corpus = Corpus(self.corpus)
        cfg = ProposalConfig.from_settings(dict(corpus.settings, **self.settings))
        scored = {}
        for video_id, pool in corpus.pools.items():
            kept = filter_pool(pool, cfg)
            if not kept:
                raise ValueError('Video {} has no proposal left after filtering.'.format(video_id))
            scored[video_id] = score_pool(kept, corpus.frame_cls(video_id),
                                          corpus.frame_dets(video_id))
            log.debug('%s: kept %d of %d proposals.', video_id, len(kept), len(pool))
        write_proposals(self.output, scored)
        log.info('Scored %d proposals of %d videos into %s.',
                 sum(len(p) for p in scored.values()), len(scored), self.output)
