import numpy as np
import pytest

from groundcap.semantics import (
    KernelSpec, SvoTriplet, SvoVocabulary, assemble_semantic, binary_svo_accuracy, gram,
    lssvm_loo, lssvm_predict, lssvm_train, make_svo_labels, mine_svo_vocabulary,
    most_common_triplet, parse_subset, pool_cls_scores, pool_det_scores, predict_triplets,
    read_annotations, svo_accuracy, train_one_vs_all, train_partwise,
)


def problem(seed, n=30, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    return X, y


def explicit_loo(K, y, lam, fit_bias):
    predictions = np.empty_like(y)
    for i in range(len(y)):
        keep = np.arange(len(y)) != i
        model = lssvm_train(K[np.ix_(keep, keep)], y[keep], lam, fit_bias)
        predictions[i] = lssvm_predict(model, K[i, keep])
    return predictions


class TestLsSvm:
    @pytest.mark.parametrize('seed', range(10))
    @pytest.mark.parametrize('fit_bias', [False, True])
    @pytest.mark.parametrize('kernel', [KernelSpec('linear'), KernelSpec('rbf', gamma=0.2)])
    def test_closed_form_loo_matches_retraining(self, seed, fit_bias, kernel):
        X, y = problem(seed)
        K = gram(kernel, X)
        model = lssvm_train(K, y, lam=0.1, fit_bias=fit_bias)
        np.testing.assert_allclose(lssvm_loo(model), explicit_loo(K, y, 0.1, fit_bias),
                                   rtol=0, atol=1e-8)

    def test_without_bias_the_bias_is_zero(self):
        X, y = problem(0)
        assert lssvm_train(gram(KernelSpec(), X), y, lam=1.0).bias == 0.0

    def test_bias_constraint_holds(self):
        X, y = problem(1)
        model = lssvm_train(gram(KernelSpec(), X), y, lam=1.0, fit_bias=True)
        assert abs(model.alpha.sum()) < 1e-10

    @pytest.mark.parametrize('seed', range(3))
    def test_grid_choice_minimises_loo_error(self, seed):
        X, y = problem(seed)
        K = gram(KernelSpec('rbf', gamma=0.5), X)
        grid = [1e-3, 1e-2, 1e-1, 1.0, 10.0]
        errors = [np.mean((explicit_loo(K, y, lam, False) - y) ** 2) for lam in grid]
        classifier = train_one_vs_all(K, y[:, None], grid)
        assert classifier.lambdas == [grid[int(np.argmin(errors))]]
        np.testing.assert_allclose(classifier.train_responses()[:, 0],
                                   explicit_loo(K, y, classifier.lambdas[0], False),
                                   rtol=0, atol=1e-8)

    def test_columns_are_trained_independently(self):
        X, y = problem(4)
        K = gram(KernelSpec(), X)
        Y = np.column_stack([y, -y, np.where(X[:, 1] > 0, 1.0, -1.0)])
        classifier = train_one_vs_all(K, Y, [0.1, 1.0, 10.0])
        for col, lam in enumerate(classifier.lambdas):
            single = lssvm_train(K, Y[:, col], lam)
            np.testing.assert_allclose(classifier.predict(K[:3])[:, col],
                                       lssvm_predict(single, K[:3]), atol=1e-10)

    def test_identity_kernel_halves_the_labels(self):
        y = np.array([1.0, -1.0, 1.0, 1.0])
        np.testing.assert_allclose(lssvm_train(np.eye(4), y, lam=1.0).alpha, y / 2, atol=1e-12)

    def test_heavy_regularisation_scales_the_labels(self):
        X, y = problem(5)
        model = lssvm_train(gram(KernelSpec(), X), y, lam=1e12)
        np.testing.assert_allclose(model.alpha * 1e12, y, rtol=1e-6)

    @pytest.mark.parametrize('seed', range(5))
    def test_solution_satisfies_the_system(self, seed):
        X, y = problem(seed)
        K = gram(KernelSpec('rbf', gamma=0.3), X)
        model = lssvm_train(K, y, lam=0.05)
        assert np.abs((K + 0.05 * np.eye(len(y))) @ model.alpha - y).max() < 1e-8

    def test_rbf_separates_blobs(self):
        rng = np.random.default_rng(2)

        def blobs(n):
            y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
            return y[:, None] * 3.0 + rng.normal(0.0, 0.5, size=(n, 2)), y

        X, y = blobs(40)
        X_test, y_test = blobs(200)
        kernel = KernelSpec('rbf', gamma=0.5)
        model = lssvm_train(gram(kernel, X), y, lam=1e-3, fit_bias=True)
        assert np.all(np.sign(lssvm_predict(model, gram(kernel, X))) == y)
        assert np.mean(np.sign(lssvm_predict(model, gram(kernel, X_test, X))) == y_test) >= 0.95

    def test_partwise_training_uses_each_part_kernel(self):
        X, y = problem(6)
        X_verb, _ = problem(7)
        vocab = SvoVocabulary(('man', 'dog'), ('ride',), ('horse',))
        Y = np.column_stack([y, -y, np.where(X_verb[:, 0] > 0, 1.0, -1.0),
                             np.where(X[:, 2] > 0, 1.0, -1.0)])
        kernel = KernelSpec('rbf', gamma=0.3)
        grams = {'subject': gram(kernel, X), 'verb': gram(kernel, X_verb),
                 'object': gram(kernel, X)}
        grid = [0.01, 0.1, 1.0]
        classifier = train_partwise(grams, Y, vocab, grid, kernel=kernel)
        responses = classifier.train_responses()
        assert responses.shape == (30, 4)

        shared = train_one_vs_all(grams['subject'], Y, grid, kernel=kernel)
        np.testing.assert_allclose(responses[:, [0, 1, 3]],
                                   shared.train_responses()[:, [0, 1, 3]], atol=1e-10)
        verb = train_one_vs_all(grams['verb'], Y[:, 2:3], grid, kernel=kernel)
        np.testing.assert_allclose(responses[:, 2], verb.train_responses()[:, 0], atol=1e-10)
        assert classifier.lambdas[2] == verb.lambdas[0]

        test_grams = {part: K[:5] for part, K in grams.items()}
        np.testing.assert_allclose(classifier.predict(test_grams)[:, 2],
                                   verb.predict(grams['verb'][:5])[:, 0], atol=1e-10)

    def test_partwise_training_needs_matching_labels(self):
        vocab = SvoVocabulary(('man',), (), ())
        with pytest.raises(ValueError):
            train_partwise({'subject': np.eye(3)}, np.ones((3, 2)), vocab, [1.0])
        with pytest.raises(ValueError):
            train_partwise({}, np.ones((3, 0)), SvoVocabulary(), [1.0])

    def test_invalid_systems(self):
        with pytest.raises(ValueError):
            lssvm_train(np.eye(3), np.ones(3), lam=0.0)
        with pytest.raises(ValueError):
            lssvm_train(np.ones((2, 3)), np.ones(2), lam=1.0)
        with pytest.raises(ValueError):
            lssvm_train(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2), lam=1.0)
        with pytest.raises(ValueError):
            lssvm_predict(lssvm_train(np.eye(2), np.ones(2), lam=1.0), np.ones(3))


class TestPooling:
    def test_classification_pooling(self):
        per_frame = [[0.1, 0.9], [0.3, 0.5]]
        np.testing.assert_allclose(pool_cls_scores(per_frame), [0.2, 0.7])
        np.testing.assert_allclose(pool_cls_scores(per_frame, 'max'), [0.3, 0.9])

    def test_detection_window_maximum(self):
        per_frame = [[0.0, 1.0], [1.0, 0.0], [3.0, 0.0]]
        np.testing.assert_allclose(pool_det_scores(per_frame, window=2), [2.0, 0.5])

    def test_short_video_uses_one_window(self):
        per_frame = [[0.0], [1.0], [3.0]]
        np.testing.assert_allclose(pool_det_scores(per_frame, window=25), [4 / 3])

    def test_empty_video(self):
        with pytest.raises(ValueError):
            pool_cls_scores(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            pool_det_scores(np.zeros((0, 3)))


class TestAssembly:
    def test_blocks_follow_fixed_order(self):
        feature = assemble_semantic(svo=[1.0], cls=[2.0, 3.0], det=[4.0],
                                    subset=frozenset({'det', 'svo'}))
        np.testing.assert_array_equal(feature.vector, [1.0, 4.0])
        assert feature.width == 2

    def test_missing_and_unknown_blocks(self):
        with pytest.raises(ValueError):
            assemble_semantic(cls=[1.0], subset='svo,cls')
        with pytest.raises(ValueError):
            parse_subset('svo,motion')
        with pytest.raises(ValueError):
            assemble_semantic(svo=[np.nan], subset='svo')

    def test_subset_parsing(self):
        assert parse_subset(' cls , svo ') == frozenset({'svo', 'cls'})
        assert parse_subset('') == frozenset()


ANNOTATIONS = {
    'v1': [SvoTriplet('man', 'ride', 'horse'), SvoTriplet('man', 'ride', 'bike'),
           SvoTriplet('woman', None, 'horse')],
    'v2': [SvoTriplet('dog', 'run', None), SvoTriplet('cat', 'run', None)],
}


class TestSvoVocabulary:
    def test_mining_requires_repeated_mentions(self):
        vocab = mine_svo_vocabulary(ANNOTATIONS)
        assert vocab == SvoVocabulary(('man',), ('ride', 'run'), ('horse',))
        assert mine_svo_vocabulary(ANNOTATIONS, min_sentences=1).subjects == (
            'cat', 'dog', 'man', 'woman')

    def test_mining_ignores_video_order(self):
        expected = mine_svo_vocabulary(ANNOTATIONS, min_sentences=1)
        rng = np.random.default_rng(0)
        ids = list(ANNOTATIONS)
        for _ in range(5):
            shuffled = {ids[i]: ANNOTATIONS[ids[i]] for i in rng.permutation(len(ids))}
            assert mine_svo_vocabulary(shuffled, min_sentences=1) == expected

    def test_columns(self):
        vocab = SvoVocabulary(('man', 'dog'), ('ride',), ('horse', 'bike'))
        assert vocab.column('object', 'bike') == 4
        assert vocab.column('verb', 'fly') is None
        assert vocab.span('object') == slice(3, 5)

    def test_labels_take_any_sentence(self):
        vocab = SvoVocabulary(('man', 'dog'), ('ride',), ('horse', 'bike'))
        Y = make_svo_labels(['v1', 'v2', 'v3'], ANNOTATIONS, vocab)
        np.testing.assert_array_equal(Y, [[1, -1, 1, 1, 1],
                                          [-1, 1, -1, -1, -1],
                                          [-1, -1, -1, -1, -1]])

    def test_save_and_load(self, tmp_path):
        vocab = mine_svo_vocabulary(ANNOTATIONS)
        path = str(tmp_path / 'svo_vocab.json')
        vocab.save(path)
        assert SvoVocabulary.load(path) == vocab

    def test_empty_triplet(self):
        with pytest.raises(ValueError):
            SvoTriplet()


class TestSvoAccuracy:
    vocab = SvoVocabulary(('man', 'dog'), ('ride',), ('horse', 'bike'))

    def test_top_class_accuracy(self):
        labels = make_svo_labels(['v1', 'v2'], ANNOTATIONS, self.vocab)
        scores = np.array([[0.9, 0.1, 0.5, 0.2, 0.8],
                           [0.9, 0.1, 0.5, 0.2, 0.8]])
        assert svo_accuracy(scores, labels, self.vocab) == {
            'subject': 0.5, 'verb': 0.5, 'object': 0.5}

    def test_binary_accuracy_against_most_common_token(self):
        predicted = dict(zip(['v1', 'v2'], predict_triplets(
            np.array([[0.9, 0.1, 0.5, 0.8, 0.2],
                      [0.2, 0.7, 0.1, 0.8, 0.2]]), self.vocab)))
        assert predicted['v2'] == SvoTriplet('dog', 'ride', 'horse')
        assert binary_svo_accuracy(predicted, ANNOTATIONS) == {
            'subject': 0.5, 'verb': 0.5, 'object': 1.0}

    def test_most_common_breaks_ties_alphabetically(self):
        assert most_common_triplet(ANNOTATIONS['v2']) == SvoTriplet('cat', 'run', None)


def test_read_annotations_orders_by_sentence(tmp_path):
    path = tmp_path / 'annotations.jsonl'
    path.write_text('{"video_id": "v1", "sentence_id": 2, "svo": ["dog", "run", null]}\n'
                    '{"video_id": "v1", "sentence_id": 1, "svo": ["man", "ride", "horse"]}\n',
                    encoding='utf-8')
    assert read_annotations(str(path)) == {'v1': [SvoTriplet('man', 'ride', 'horse'),
                                                  SvoTriplet('dog', 'run', None)]}
