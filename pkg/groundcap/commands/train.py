import logging
import os
from dataclasses import replace

from groundcap.commands.base import EngineCommand
from groundcap.corpus import Corpus
from groundcap.lang import build_vocabulary
from groundcap.model.captioner import ModelConfig, build_model, save_model
from groundcap.model.gradcheck import TOLERANCE, gradient_suite
from groundcap.semantics import SemanticConfig
from groundcap.training import train
from groundcap.util.config import write_config

log = logging.getLogger(__name__)

RUN_SETTINGS = 'run.cfg'


class Train(EngineCommand):
    """ Trains a caption model on the training split of a corpus and writes
        a run directory holding the checkpoint, the vocabulary, the
        per-epoch log and the settings needed to decode with it.
    """
    command_name = 'train'
    user_options = EngineCommand.base_options + [
        ('corpus=', None, 'Corpus directory'),
        ('output=', 'o', 'Run directory to write'),
        ('proposals=', None, 'Proposal file inside the corpus (default: proposals.jsonl)'),
        ('variant=', None, 'meanpool, att, att-sem or stacked'),
        ('sem=', None, 'Comma-separated semantic blocks (svo,cls,det)'),
        ('epochs=', None, 'Number of epochs'),
        ('seed=', None, 'Random seed'),
        ('hidden-size=', None, 'LSTM hidden size'),
        ('embedding-size=', None, 'Word embedding size'),
        ('batch-size=', None, 'Minibatch size'),
        ('learning-rate=', None, 'Adam learning rate'),
        ('dropout=', None, 'Dropout rate on the top hidden state'),
        ('dtype=', None, 'float32 or float64'),
    ]
    setting_options = ('variant', 'sem', 'epochs', 'seed', 'hidden_size', 'embedding_size',
                       'batch_size', 'learning_rate', 'dropout', 'dtype')

    def initialize_command(self):
        self.corpus = ''
        self.output = ''
        self.proposals = ''

    def finalize_command(self):
        self.require_dir('corpus')
        self.require('output')
        self.proposals = self.proposals or 'proposals.jsonl'
        self.cfg = ModelConfig.from_settings(self.settings)
        self.semantic_cfg = SemanticConfig.from_settings(self.settings)

    def run(self):
        corpus = Corpus(self.corpus, proposals_file=self.proposals)
        m = corpus.proposal_config.m
        vocab = build_vocabulary(corpus.sentences('train'))
        examples = corpus.examples('train', vocab, self.cfg.sem, m, self.semantic_cfg)
        val = corpus.examples('val', vocab, self.cfg.sem, m, self.semantic_cfg)
        if not examples:
            raise ValueError('Corpus {} has no training videos.'.format(self.corpus))
        first = examples[0]
        cfg = replace(self.cfg, feature_size=first.proposals.feature_size,
                      semantic_size=first.semantic.width if first.semantic is not None else 0)
        model = build_model(cfg, len(vocab))
        model, history = train(model, examples, val, cfg)

        os.makedirs(self.output, exist_ok=True)
        save_model(model, self.output)
        vocab.save(os.path.join(self.output, 'vocab.txt'))
        history.write_csv(os.path.join(self.output, 'train_log.csv'))
        write_config(os.path.join(self.output, RUN_SETTINGS),
                     dict(self.semantic_cfg.to_settings(), m=m, proposals=self.proposals))
        log.info('Saved model %s (epoch %d) to %s.', model.checksum()[:12],
                 history.selected_epoch, self.output)


class GradCheck(EngineCommand):
    """ Compares back-propagated gradients of every model variant with
        central finite differences in float64 and fails when any relative
        error exceeds the tolerance.
    """
    command_name = 'grad-check'
    user_options = EngineCommand.base_options + [
        ('seeds=', None, 'Number of random models per variant (default: 5)'),
        ('tolerance=', None, 'Largest accepted relative error (default: 1e-6)'),
    ]

    def initialize_command(self):
        self.seeds = 5
        self.tolerance = TOLERANCE

    def finalize_command(self):
        self.seeds = int(self.seeds)
        self.tolerance = float(self.tolerance)
        if self.seeds < 1 or self.tolerance <= 0:
            raise ValueError('--seeds must be positive and --tolerance greater than zero.')

    def run(self):
        results = gradient_suite(seeds=range(self.seeds))
        print('variant,seed,max_relative_error')
        for result in results:
            print('{},{},{:.3e}'.format(result.variant, result.seed, result.max_error))
        failed = [r for r in results if not r.passed(self.tolerance)]
        if failed:
            worst = max(failed, key=lambda r: r.max_error)
            raise FloatingPointError('{} of {} gradient checks exceed {:g}; worst is {} seed {} '
                                     'at {:.3e}.'.format(len(failed), len(results), self.tolerance,
                                                         worst.variant, worst.seed,
                                                         worst.max_error))
