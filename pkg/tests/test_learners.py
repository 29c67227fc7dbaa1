import logging
import unittest
from logging import NullHandler

import numpy as np
from numpy.testing import assert_allclose

from CoPert import learners
from CoPert.exceptions import (EmptyCandidates, EmptyData, NotFitted,
                               SingularSystem, UnknownLearner)
from CoPert.learners import (CVLearner, ForestLearner, FrozenLearner,
                             MeanLearner, RidgeLearner, make_learner)
from CoPert.utils import make_rng
from pyutils.genutils import get_qualname
from pyutils.testutils import TestBase

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


class TestLearners(TestBase):
    TEST_MODULE_QUALNAME = get_qualname(learners)
    LOGGER_NAME = __name__
    SHOW_FIRST_CHARS_IN_LOG = 0
    CREATE_SANDBOX_TMP_DIR = False
    CREATE_DATA_TMP_DIR = False

    def test_mean_learner(self):
        self.log_test_method_name()
        learner = MeanLearner().fit(np.zeros((4, 2)), [1, 2, 3, 6])
        assert_allclose(learner.predict(np.ones((3, 2))),
                        [3, 3, 3], atol=1e-12, err_msg="Wrong mean prediction")
        self.assertEqual(learners.fit_mean([2.0, 4.0]).mean_, 3.0,
                         msg="fit_mean should fit the mean")
        with self.assertRaises(NotFitted, msg="Predicting before fitting"):
            MeanLearner().predict(np.zeros((2, 1)))
        with self.assertRaises(EmptyData, msg="0 samples can't be fitted"):
            MeanLearner().fit(np.zeros((0, 1)), [])

    def test_ridge_without_penalty_is_least_squares(self):
        self.log_test_method_name()
        extra_msg = "Case where the ridge penalty is 0 and the " \
            "targets are exactly linear"
        self.log_main_message(extra_msg=extra_msg)
        rng = make_rng(3)
        X = rng.normal(size=(50, 3))
        y = 1.5 + X @ np.array([2.0, -1.0, 0.5])
        fit = learners.fit_ridge(X, y, penalty=0)
        assert_allclose(fit.coef_, [2.0, -1.0, 0.5], atol=1e-10,
                        err_msg="Wrong slopes")
        self.assertAlmostEqual(fit.intercept_, 1.5, delta=1e-10,
                               msg="Wrong intercept")
        shrunk = RidgeLearner(penalty=100.0).fit(X, y)
        self.assertLess(np.abs(shrunk.coef_).sum(), np.abs(fit.coef_).sum(),
                        msg="A penalty should shrink the slopes")
        with self.assertRaises(SingularSystem, msg="Collinear features"):
            RidgeLearner(penalty=0).fit(np.column_stack([X[:, 0], X[:, 0]]), y)
        with self.assertRaises(ValueError, msg="Negative penalty"):
            RidgeLearner(penalty=-1)

    def test_forest_weights_reproduce_predictions(self):
        self.log_test_method_name()
        extra_msg = "Case where the forest weights times y equal " \
            "the forest predictions"
        self.log_main_message(extra_msg=extra_msg)
        rng = make_rng(4)
        X = rng.random((80, 2))
        y = np.sin(4 * X[:, 0]) + X[:, 1]
        query = rng.random((15, 2))
        forest = learners.fit_forest(X, y, {"n_trees": 30}, seed=5)
        W = learners.forest_weights(forest, X, query)
        self.assertEqual(W.shape, (15, 80), msg="Wrong weight shape")
        self.assertTrue(np.all(W >= 0), msg="Weights should be nonnegative")
        assert_allclose(W.sum(axis=1), np.ones(15), atol=1e-12,
                        err_msg="Each row should sum to 1")
        assert_allclose(W @ y, forest.predict(query), atol=1e-10,
                        err_msg="W @ y should equal the predictions")
        with self.assertRaises(NotFitted, msg="Weights need a fitted forest"):
            ForestLearner(n_trees=3).weights(X, query)

    def test_forest_is_deterministic(self):
        self.log_test_method_name()
        rng = make_rng(6)
        X = rng.random((60, 3))
        y = X.sum(axis=1)
        first = ForestLearner(n_trees=20, seed=11).fit(X, y).predict(X)
        second = ForestLearner(n_trees=20, seed=11).fit(X, y).predict(X)
        other = ForestLearner(n_trees=20, seed=12).fit(X, y).predict(X)
        self.assertTrue(np.array_equal(first, second),
                        msg="The same seed should give the same forest")
        self.assertFalse(np.array_equal(first, other),
                         msg="Another seed should give another forest")

    def test_predict_proba_is_clipped(self):
        self.log_test_method_name()
        X = np.linspace(-3, 3, 40)[:, None]
        y = (X[:, 0] > 0).astype(float)
        ridge = RidgeLearner(penalty=0).fit(X, y)
        proba = ridge.predict_proba(np.array([[-10.0], [0.0], [10.0]]))
        self.assertTrue(np.all((proba >= 0) & (proba <= 1)),
                        msg="Probabilities should lie in [0, 1]")
        self.assertEqual(proba[0], 0.0, msg="Far left should clip to 0")
        self.assertEqual(proba[2], 1.0, msg="Far right should clip to 1")

    def test_cv_selects_the_mean_on_noise(self):
        self.log_test_method_name()
        extra_msg = "Case where the targets are pure noise"
        self.log_main_message(extra_msg=extra_msg)
        rng = make_rng(7)
        X = rng.random((300, 2))
        y = rng.normal(size=300)
        cv = make_learner("cv", seed=1, n_trees=40).fit(X, y)
        self.assertEqual(cv.selected_.name, "mean",
                         msg="The mean should win on noise, losses: "
                             "{}".format(cv.cv_losses_))
        self.assertEqual(len(cv.cv_losses_), 3, msg="One loss per candidate")

    def test_cv_selects_a_forest_on_signal(self):
        self.log_test_method_name()
        extra_msg = "Case where the targets are sin(6x) plus noise"
        self.log_main_message(extra_msg=extra_msg)
        rng = make_rng(8)
        X = rng.random((500, 1))
        y = np.sin(6 * X[:, 0]) + 0.1 * rng.normal(size=500)
        cv = make_learner("cv", seed=2, n_trees=40).fit(X, y)
        self.assertIn(cv.selected_.name, ["forest", "forest_shallow"],
                      msg="A forest should beat the mean, losses: "
                          "{}".format(cv.cv_losses_))
        self.assertLess(np.mean((cv.predict(X) - np.sin(6 * X[:, 0])) ** 2),
                        0.05, msg="The refitted winner should track sin(6x)")

    def test_cv_single_candidate_and_errors(self):
        self.log_test_method_name()
        X = np.arange(10.0)[:, None]
        y = np.arange(10.0)
        cv = CVLearner([MeanLearner()]).fit(X, y)
        self.assertEqual(cv.selected_.name, "mean",
                         msg="A single candidate is selected without CV")
        self.assertEqual(cv.cv_losses_, {}, msg="No CV loss is computed")
        with self.assertRaises(EmptyCandidates, msg="No candidates"):
            CVLearner([])
        with self.assertRaises(UnknownLearner, msg="Unknown name"):
            make_learner("boosting")

    def test_frozen_learner_and_clone(self):
        self.log_test_method_name()
        frozen = FrozenLearner(lambda X: 2 * X[:, 0])
        assert_allclose(
            frozen.fit(None, None).predict(np.array([[1.0], [3.0]])), [2, 6],
            atol=1e-12, err_msg="A frozen learner should ignore fit")
        self.assertIs(make_learner(frozen), frozen,
                      msg="A frozen learner is its own clone")
        forest = ForestLearner(n_trees=5, seed=1)
        forest.fit(make_rng(9).random((10, 1)), np.arange(10.0))
        clone = forest.clone(seed=9)
        self.assertFalse(clone.fitted, msg="A clone should be unfitted")
        self.assertEqual(clone.seed, 9, msg="The clone should take the seed")
        self.assertEqual(clone.n_trees, 5,
                         msg="The clone should keep the hyper-parameters")

    def test_fit_cv_select(self):
        self.log_test_method_name()
        X = np.linspace(0, 1, 50)[:, None]
        y = 3 * X[:, 0]
        selector = CVLearner([MeanLearner(), RidgeLearner(penalty=0)])
        winner = learners.fit_cv_select(X, y, selector, seed=3)
        self.assertEqual(winner.name, "ridge",
                         msg="Ridge should win on a linear target")


if __name__ == '__main__':
    unittest.main()
