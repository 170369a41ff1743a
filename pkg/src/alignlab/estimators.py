"""Scikit-learn style estimator facades over the training machinery.

`AlignClassifier` wraps a dense network trained with any of the learning
rules on integer-labelled data; `AlignSequenceRegressor` wraps the
recurrent cell for per-step sequence regression. Both follow the
fit/predict/get_params protocol so they compose with sklearn tooling.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .network import forward, mlp
from .rnn import RNNSpec, RNNTrainer, rnn_unroll
from .rules import TrainConfig, Trainer
from .tasks import one_hot_targets


class AlignClassifier(ClassifierMixin, BaseEstimator):
    """Multilayer classifier trained with a configurable learning rule.

    Targets are encoded one-hot minus 0.1 internally; predictions are the
    argmax of the network output."""

    def __init__(self, hidden=(128,), rule="normal", lr=0.1, batch_size=32,
                 epochs=10, seed=0, activation="relu", cache_init=True):
        self.hidden = hidden
        self.rule = rule
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.activation = activation
        self.cache_init = cache_init

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        targets = one_hot_targets(encoded, self.classes_.size)
        spec = mlp(X.shape[1], list(self.hidden), self.classes_.size,
                   self.activation)
        cfg = TrainConfig(lr=self.lr, batch_size=min(self.batch_size,
                                                     X.shape[0]),
                          epochs=self.epochs, rule=self.rule, seed=self.seed)
        trainer = Trainer(spec, cfg, X.astype(np.float64), targets,
                          cache_init=self.cache_init)
        self.loss_curve_ = [trainer.run_epoch() for _ in range(self.epochs)]
        self.spec_ = spec
        self.trainer_ = trainer
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "trainer_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("feature count changed between fit and predict")
        return forward(self.trainer_.params, self.spec_,
                       X.astype(np.float64)).f

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class AlignSequenceRegressor(RegressorMixin, BaseEstimator):
    """Recurrent per-step regressor: X is (n, K) input sequences, y is
    (n, K) target sequences."""

    def __init__(self, hidden=64, rule="normal", lr=0.01, batch_size=10,
                 epochs=10, seed=0, activation="relu"):
        self.hidden = hidden
        self.rule = rule
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.activation = activation

    def fit(self, X, y):
        X = check_array(X)
        y = check_array(y)
        if X.shape != y.shape:
            raise ValueError("input and target sequences must share a shape")
        spec = RNNSpec(self.hidden, activation=self.activation)
        trainer = RNNTrainer(spec, self.rule, self.lr,
                             min(self.batch_size, X.shape[0]), self.seed,
                             X, y)
        self.loss_curve_ = [trainer.run_epoch() for _ in range(self.epochs)]
        self.spec_ = spec
        self.trainer_ = trainer
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "trainer_")
        X = check_array(X)
        return rnn_unroll(self.trainer_.params, self.spec_, X).yhat[:, :, 0]
