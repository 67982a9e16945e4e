import json
import logging
import os

import numpy as np

from groundcap.commands.base import EngineCommand
from groundcap.corpus import Corpus
from groundcap.semantics import (
    PARTS, KernelSpec, SemanticConfig, SvoVocabulary, binary_svo_accuracy, gram,
    make_svo_labels, predict_triplets, svo_accuracy, train_partwise,
)
from groundcap.util.container import FeatureContainer

log = logging.getLogger(__name__)


class SvoTrain(EngineCommand):
    """ Trains one LS-SVM per subject, verb and object token and writes the
        SVO score block of every video. Each part has its own kernel over
        that part's feature file (subject.gcap, verb.gcap, object.gcap);
        a part without one uses the mean proposal descriptor.

        Training videos get their leave-one-out responses so that the
        caption model never sees scores from a classifier trained on the
        same video; every other video gets the full-model response.
    """
    command_name = 'svo-train'
    user_options = EngineCommand.base_options + [
        ('corpus=', None, 'Corpus directory'),
        ('vocab=', None, 'SVO vocabulary JSON (default: <corpus>/svo_vocab.json)'),
        ('output=', 'o', 'Score container (default: <corpus>/semantic.gcap)'),
        ('kernel=', None, 'linear or rbf'),
        ('gamma=', None, 'RBF kernel width'),
        ('fit-bias', None, 'Fit an unregularised bias term'),
    ]
    setting_options = ('kernel', 'gamma')

    def initialize_command(self):
        self.corpus = ''
        self.vocab = ''
        self.output = ''
        self.fit_bias = False

    def finalize_command(self):
        self.require_dir('corpus')
        self.vocab = self.vocab or os.path.join(self.corpus, 'svo_vocab.json')
        self.output = self.output or os.path.join(self.corpus, 'semantic.gcap')
        if not os.path.exists(self.vocab):
            raise ValueError('SVO vocabulary {} does not exist; run mine-vocab first.'
                             .format(self.vocab))
        if self.fit_bias:
            self.settings['fit_bias'] = 'true'
        self.cfg = SemanticConfig.from_settings(self.settings)

    def part_matrix(self, corpus, part, video_ids):
        return np.vstack([corpus.part_descriptor(vid, part) for vid in video_ids])

    def run(self):
        corpus = Corpus(self.corpus)
        vocab = SvoVocabulary.load(self.vocab)
        kernel = KernelSpec(kind=self.cfg.kernel, gamma=self.cfg.gamma)
        train_ids = corpus.videos('train')
        held_out = frozenset(corpus.videos()) - frozenset(train_ids)
        other_ids = [vid for vid in corpus.videos() if vid in held_out]
        X_train = {part: self.part_matrix(corpus, part, train_ids) for part in PARTS}

        Y = make_svo_labels(train_ids, corpus.annotations, vocab)
        classifier = train_partwise({part: gram(kernel, X) for part, X in X_train.items()}, Y,
                                    vocab, self.cfg.lambda_grid, self.cfg.fit_bias, kernel)
        scores = {vid: row for vid, row in zip(train_ids, classifier.train_responses())}
        if other_ids:
            test_grams = {part: gram(kernel, self.part_matrix(corpus, part, other_ids), X)
                          for part, X in X_train.items()}
            scores.update(zip(other_ids, classifier.predict(test_grams)))

        container = FeatureContainer()
        for vid in corpus.videos():
            container['svo/' + vid] = scores[vid].reshape(1, -1)
        container.write(self.output)

        report = {
            'features': {part: corpus.part_source(part) for part in PARTS},
            'lambdas': classifier.lambdas,
            'loo_accuracy': svo_accuracy(classifier.train_responses(), Y, vocab),
        }
        annotated = [vid for vid in other_ids if vid in corpus.annotations]
        if annotated:
            triplets = predict_triplets(np.vstack([scores[vid] for vid in annotated]), vocab)
            report['binary_accuracy'] = binary_svo_accuracy(dict(zip(annotated, triplets)),
                                                            corpus.annotations)
        report_path = os.path.splitext(self.output)[0] + '_report.json'
        with open(report_path, 'w', encoding='utf-8') as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write('\n')
        log.info('Wrote SVO scores of %d videos to %s (LOO accuracy %s).',
                 len(container), self.output, report['loo_accuracy'])
