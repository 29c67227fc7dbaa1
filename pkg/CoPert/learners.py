"""Module that defines the nuisance learners used by the estimators.

Every learner follows the same small protocol:

* :meth:`Learner.fit` ``(X, y)`` trains the learner in place and returns it,
* :meth:`Learner.predict` ``(X)`` returns real predictions,
* :meth:`Learner.predict_proba` ``(X)`` returns predictions clipped into
  ``[0, 1]`` (binary targets are regressed as 0/1 values),
* :meth:`Learner.clone` returns an unfitted copy with the same
  hyper-parameters and seed.

The learner menu (``mean``, ``ridge``, ``forest_shallow``, ``forest`` and
``cv``) is built by :func:`make_learner`.

"""
import copy
import logging
from logging import NullHandler

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg
from sklearn.model_selection import KFold
from sklearn.tree import DecisionTreeRegressor

from CoPert.default_config import (CV_FOLDS, DEFAULT_SEED, forest_defaults,
                                   learner_menu)
from CoPert.exceptions import (EmptyCandidates, EmptyData, InsufficientData,
                               NotFitted, SingularSystem, UnknownLearner)
from CoPert.utils import derive_seed, get_n_jobs, make_rng

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


def _as_features(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _as_targets(y):
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise EmptyData("Can't fit a learner on 0 samples")
    return y


class Learner:
    """Base class of the nuisance learners.

    Parameters
    ----------
    name : str
        Name of the learner in the menu.
    seed : int
        Seed of every random choice made by :meth:`fit`.

    """
    def __init__(self, name, seed=DEFAULT_SEED):
        self.name = name
        self.seed = seed
        self.fitted = False

    def fit(self, X, y):
        raise NotImplementedError

    def _predict(self, X):
        raise NotImplementedError

    def predict(self, X):
        if not self.fitted:
            raise NotFitted("Learner '{}' must be fitted before predicting"
                            "".format(self.name))
        return self._predict(_as_features(X))

    def predict_proba(self, X):
        return np.clip(self.predict(X), 0.0, 1.0)

    def clone(self, seed=None):
        """Return an unfitted copy, optionally with another seed."""
        new = copy.copy(self)
        new._reset()
        new.fitted = False
        if seed is not None:
            new.seed = seed
        return new

    def _reset(self):
        pass

    def __repr__(self):
        return "{}(name={}, seed={})".format(type(self).__name__, self.name,
                                             self.seed)


class MeanLearner(Learner):
    """Learner that predicts the training mean everywhere."""
    def __init__(self, seed=DEFAULT_SEED):
        super().__init__("mean", seed)
        self.mean_ = None

    def fit(self, X, y):
        y = _as_targets(y)
        self.mean_ = float(np.mean(y))
        self.fitted = True
        return self

    def _predict(self, X):
        return np.full(X.shape[0], self.mean_)

    def _reset(self):
        self.mean_ = None


class RidgeLearner(Learner):
    """Linear least squares with a ridge penalty on the slopes.

    The intercept is not penalized: features and targets are centered before
    solving ``(Xc^T Xc + penalty I) beta = Xc^T yc``.

    Parameters
    ----------
    penalty : float
        Nonnegative ridge penalty.

    """
    def __init__(self, penalty=1.0, seed=DEFAULT_SEED):
        super().__init__("ridge", seed)
        if penalty < 0:
            raise ValueError("penalty must be nonnegative, got {}".format(
                penalty))
        self.penalty = float(penalty)
        self.coef_ = None
        self.intercept_ = None

    def fit(self, X, y):
        y = _as_targets(y)
        X = _as_features(X)
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        Xc = X - x_mean
        p = X.shape[1]
        if self.penalty == 0 and np.linalg.matrix_rank(Xc) < p:
            raise SingularSystem(
                "Normal equations are rank-deficient ({} features, rank {})"
                "".format(p, np.linalg.matrix_rank(Xc)))
        gram = Xc.T @ Xc + self.penalty * np.eye(p)
        try:
            self.coef_ = linalg.solve(gram, Xc.T @ (y - y_mean),
                                      assume_a="sym")
        except linalg.LinAlgError as e:
            raise SingularSystem("Can't solve the normal equations: "
                                 "{}".format(e)) from e
        self.intercept_ = float(y_mean - x_mean @ self.coef_)
        self.fitted = True
        return self

    def _predict(self, X):
        return X @ self.coef_ + self.intercept_

    def _reset(self):
        self.coef_ = None
        self.intercept_ = None


def _fit_tree(X, y, seed, index, max_depth, min_leaf, max_features):
    # Per-tree stream, keyed by the tree index
    rng = make_rng(seed, index)
    n = X.shape[0]
    inbag = rng.integers(0, n, n)
    tree = DecisionTreeRegressor(max_depth=max_depth,
                                 min_samples_leaf=min_leaf,
                                 max_features=max_features,
                                 random_state=int(rng.integers(0, 2 ** 31 - 1)))
    tree.fit(X[inbag], y[inbag])
    return tree, np.bincount(inbag, minlength=n)


class ForestLearner(Learner):
    """Random forest of CART regression trees.

    Each tree is grown on a bootstrap resample of the rows with ``sqrt(p)``
    candidate features per split. Binary targets are regressed as 0/1 values,
    so :meth:`predict_proba` is the clipped regression.

    Parameters
    ----------
    n_trees : int
        Number of trees (250 by default).
    max_depth : int or None
        Maximum depth of the trees; None grows them fully.
    min_leaf : int
        Minimum number of (bootstrap) samples per leaf.
    max_features : str or int or None
        Number of candidate features per split, as understood by
        :class:`sklearn.tree.DecisionTreeRegressor`.
    seed : int
        The seed of tree ``t`` is derived from ``(seed, t)``, so results don't
        depend on the number of joblib workers.
    name : str, optional

    Attributes
    ----------
    trees_ : list of sklearn.tree.DecisionTreeRegressor
    inbag_counts_ : numpy.ndarray
        Array of shape ``(n_trees, n_train)`` with the number of times each
        training row was drawn by each tree.

    """
    def __init__(self, n_trees=forest_defaults["n_trees"],
                 max_depth=forest_defaults["max_depth"],
                 min_leaf=forest_defaults["min_leaf"],
                 max_features=forest_defaults["max_features"],
                 seed=DEFAULT_SEED, name="forest"):
        super().__init__(name, seed)
        self.n_trees = int(n_trees)
        self.max_depth = max_depth
        self.min_leaf = int(min_leaf)
        self.max_features = max_features
        self.trees_ = None
        self.inbag_counts_ = None
        self.train_X_ = None

    def fit(self, X, y):
        y = _as_targets(y)
        X = _as_features(X)
        if X.shape[0] < 2:
            raise EmptyData("A forest needs at least 2 samples, got {}".format(
                X.shape[0]))
        results = Parallel(n_jobs=get_n_jobs(), prefer="threads")(
            delayed(_fit_tree)(X, y, self.seed, t, self.max_depth,
                               self.min_leaf, self.max_features)
            for t in range(self.n_trees))
        self.trees_ = [tree for tree, _ in results]
        self.inbag_counts_ = np.vstack([counts for _, counts in results])
        self.train_X_ = X
        self.fitted = True
        return self

    def _predict(self, X):
        return np.mean([tree.predict(X) for tree in self.trees_], axis=0)

    def _reset(self):
        self.trees_ = None
        self.inbag_counts_ = None
        self.train_X_ = None

    def weights(self, train_X, query_X):
        """Return the forest weights of the training rows for each query.

        Entry ``(i, k)`` averages, over trees, the share of the bootstrap
        draws of the query's leaf that are copies of training row ``k``.
        Each row sums to 1 and ``weights @ y_train`` equals
        :meth:`predict`.
        """
        if not self.fitted:
            raise NotFitted("Forest must be fitted before extracting weights")
        train_X = _as_features(train_X)
        query_X = _as_features(query_X)
        if train_X.shape != self.train_X_.shape:
            raise ValueError(
                "train_X has shape {} but the forest was fitted on {}".format(
                    train_X.shape, self.train_X_.shape))
        out = np.zeros((query_X.shape[0], train_X.shape[0]))
        for tree, counts in zip(self.trees_, self.inbag_counts_):
            train_leaves = tree.apply(train_X)
            query_leaves = tree.apply(query_X)
            leaf_sizes = np.bincount(train_leaves, weights=counts,
                                     minlength=tree.tree_.node_count)
            same_leaf = query_leaves[:, None] == train_leaves[None, :]
            out += same_leaf * counts[None, :] / leaf_sizes[query_leaves][:, None]
        return out / self.n_trees


class FrozenLearner(Learner):
    """Learner wrapping a known function; :meth:`fit` does nothing.

    Parameters
    ----------
    fn : callable
        Maps an ``n x p`` feature array to ``n`` predictions.

    """
    def __init__(self, fn, name="frozen"):
        super().__init__(name)
        self.fn = fn
        self.fitted = True

    def fit(self, X, y):
        return self

    def _predict(self, X):
        return np.asarray(self.fn(X), dtype=float).ravel() * np.ones(X.shape[0])

    def clone(self, seed=None):
        return self


class CVLearner(Learner):
    """Learner that picks one of its candidates by K-fold cross-validation
    and refits it on all the data.

    The loss is the mean squared error, or the Brier score when
    ``classification`` is True. Ties go to the first candidate.

    Parameters
    ----------
    candidates : list of Learner
    n_folds : int
        Number of CV folds (5 by default).
    classification : bool
        Whether the candidates are scored on :meth:`Learner.predict_proba`.
    seed : int

    Attributes
    ----------
    selected_ : Learner
        The refitted winner.
    cv_losses_ : dict
        CV loss of each candidate, by name.

    """
    def __init__(self, candidates, n_folds=CV_FOLDS, classification=False,
                 seed=DEFAULT_SEED):
        super().__init__("cv", seed)
        if not candidates:
            raise EmptyCandidates("The CV selector needs at least one "
                                  "candidate")
        self.candidates = list(candidates)
        self.n_folds = int(n_folds)
        self.classification = classification
        self.selected_ = None
        self.cv_losses_ = None

    def _loss(self, learner, X, y):
        pred = learner.predict_proba(X) if self.classification \
            else learner.predict(X)
        return (pred - y) ** 2

    def fit(self, X, y):
        y = _as_targets(y)
        X = _as_features(X)
        if len(self.candidates) == 1:
            self.cv_losses_ = {}
            self.selected_ = self.candidates[0].clone().fit(X, y)
            self.fitted = True
            return self
        if X.shape[0] < self.n_folds:
            raise InsufficientData(
                "CV with {} folds needs at least {} samples, got {}".format(
                    self.n_folds, self.n_folds, X.shape[0]))
        kfold = KFold(n_splits=self.n_folds, shuffle=True,
                      random_state=derive_seed(self.seed))
        splits = list(kfold.split(X))
        self.cv_losses_ = {}
        best, best_loss = None, np.inf
        for pos, candidate in enumerate(self.candidates):
            squared = np.empty(X.shape[0])
            for train, test in splits:
                fold_fit = candidate.clone().fit(X[train], y[train])
                squared[test] = self._loss(fold_fit, X[test], y[test])
            loss = float(np.mean(squared))
            self.cv_losses_["{}:{}".format(pos, candidate.name)] = loss
            # Strict comparison: the first candidate wins ties
            if loss < best_loss:
                best, best_loss = candidate, loss
        logger.debug("CV selected '{}' with loss {:.6g}".format(best.name,
                                                               best_loss))
        self.selected_ = best.clone().fit(X, y)
        self.fitted = True
        return self

    def _predict(self, X):
        return self.selected_.predict(X)

    def predict_proba(self, X):
        if not self.fitted:
            raise NotFitted("Learner 'cv' must be fitted before predicting")
        return self.selected_.predict_proba(X)

    def clone(self, seed=None):
        new = CVLearner([c.clone() for c in self.candidates], self.n_folds,
                        self.classification, self.seed)
        if seed is not None:
            new.seed = seed
            new.candidates = [c.clone(seed=seed) for c in self.candidates]
        return new


def make_learner(name, seed=DEFAULT_SEED, classification=False, **kwargs):
    """Build a learner of the menu by name.

    Parameters
    ----------
    name : str
        One of ``mean``, ``ridge``, ``forest_shallow``, ``forest`` and
        ``cv``. A :class:`Learner` instance is returned as an unfitted clone.
    seed : int
    classification : bool
        For ``cv``: score the candidates with the Brier score.
    kwargs : dict, optional
        Overrides of the menu's hyper-parameters, e.g. ``n_trees=100``.
        Forest keywords are passed down to the candidates of ``cv``.

    Returns
    -------
    learner : Learner

    Raises
    ------
    UnknownLearner
        Raised if the name is not in the menu.

    """
    if isinstance(name, Learner):
        return name.clone(seed=None if isinstance(name, FrozenLearner)
                          else seed)
    if name not in learner_menu:
        raise UnknownLearner("Unknown learner '{}': choose from {}".format(
            name, ", ".join(learner_menu)))
    params = dict(learner_menu[name])
    if name == "mean":
        return MeanLearner(seed=seed)
    if name == "ridge":
        params.update(kwargs)
        return RidgeLearner(penalty=params["penalty"], seed=seed)
    if name == "cv":
        candidates = [make_learner(c, seed, **kwargs)
                      for c in params["candidates"]]
        return CVLearner(candidates, classification=classification,
                         seed=seed)
    forest_params = dict(forest_defaults)
    forest_params.update(params)
    forest_params.update({k: v for k, v in kwargs.items()
                          if k in forest_defaults})
    return ForestLearner(seed=seed, name=name, **forest_params)


def fit_mean(targets):
    """Return a :class:`MeanLearner` fitted on ``targets``."""
    targets = _as_targets(targets)
    return MeanLearner().fit(np.zeros((targets.size, 1)), targets)


def fit_ridge(features, targets, penalty):
    """Return a :class:`RidgeLearner` fitted with the given penalty."""
    return RidgeLearner(penalty=penalty).fit(features, targets)


def fit_forest(features, targets, params=None, seed=DEFAULT_SEED):
    """Return a :class:`ForestLearner` fitted with ``params`` overriding the
    forest defaults."""
    params = dict(params or {})
    return ForestLearner(seed=seed, **params).fit(features, targets)


def forest_weights(model, train_features, query_features):
    """Return the ``n_query x n_train`` forest weight matrix of a fitted
    :class:`ForestLearner`. See :meth:`ForestLearner.weights`."""
    return model.weights(train_features, query_features)


def fit_cv_select(features, targets, selector, seed=DEFAULT_SEED):
    """Run the CV selection of ``selector`` (a :class:`CVLearner`) with the
    given seed and return the refitted winner."""
    learner = selector.clone(seed=seed)
    learner.fit(features, targets)
    return learner.selected_
