"""scikit-learn style front-ends.

``CircleNestedSampler`` fits the circle posterior to ``(positions, readings)``
and predicts white-probabilities at new positions.  ``PredictiveEntropy``
scores candidate positions against a fitted ensemble.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .inquiry import predictive_entropy
from .model import Dataset, FieldBounds, Prior, SensorResponse, sample_prior
from .nested import (PosteriorEnsemble, SamplerConfig, resample_ensemble, run_nested,
                     summarize)


def check_positions(X, bounds: FieldBounds | None = None, allow_empty: bool = False):
    """Validate an ``(n, 2)`` array of positions, optionally inside ``bounds``."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=0 if allow_empty else 1)
    if X.shape[1] != 2:
        raise ValueError(f"positions must have 2 columns, got {X.shape[1]}")
    if bounds is not None and len(X):
        bad = ((X[:, 0] < bounds.x_min) | (X[:, 0] > bounds.x_max)
               | (X[:, 1] < bounds.y_min) | (X[:, 1] > bounds.y_max))
        if bad.any():
            raise ValueError(f"{int(bad.sum())} position(s) outside the field")
    return X


def check_circles(C):
    C = check_array(C, dtype=np.float64)
    if C.shape[1] != 3:
        raise ValueError(f"circles must have 3 columns (x0, y0, r), got {C.shape[1]}")
    if len(C) < 2:
        raise ValueError("need at least two circles")
    return C


class CircleNestedSampler(BaseEstimator):
    """Posterior over a white circle's center and radius.

    Parameters
    ----------
    x_min, x_max, y_min, y_max : float
        Field bounds in cm.
    r_min, r_max : float
        Radius prior range in cm.
    d_white, d_black, sigma : float
        Sensor levels and Gaussian noise.
    n_live, termination_frac, walk_steps, retry_limit :
        Nested-sampling settings.
    ensemble_size : int
        Number of equally weighted circles kept after fitting.
    random_state : int, Generator or None

    Attributes
    ----------
    run_ : NestedRun or None
        None when fitted on no data.
    ensemble_ : PosteriorEnsemble
    log_z_, log_z_err_ : float
    mean_, std_ : ndarray of shape (3,)
        Posterior mean and standard deviation of ``(x0, y0, r)``.
    """

    def __init__(self, x_min=0.0, x_max=20.0, y_min=0.0, y_max=30.0, r_min=1.0,
                 r_max=15.0, d_white=0.8, d_black=0.2, sigma=0.06, n_live=100,
                 termination_frac=1e-3, walk_steps=20, retry_limit=10,
                 ensemble_size=150, random_state=None):
        self.x_min = x_min
        self.x_max = x_max
        self.y_min = y_min
        self.y_max = y_max
        self.r_min = r_min
        self.r_max = r_max
        self.d_white = d_white
        self.d_black = d_black
        self.sigma = sigma
        self.n_live = n_live
        self.termination_frac = termination_frac
        self.walk_steps = walk_steps
        self.retry_limit = retry_limit
        self.ensemble_size = ensemble_size
        self.random_state = random_state

    def _prior(self):
        return Prior(FieldBounds(self.x_min, self.x_max, self.y_min, self.y_max),
                     self.r_min, self.r_max)

    def _response(self):
        return SensorResponse(self.d_white, self.d_black, self.sigma)

    def fit(self, X, y):
        prior = self._prior()
        response = self._response()
        X = check_positions(X, prior.bounds, allow_empty=True)
        y = np.asarray(y, dtype=np.float64).ravel()
        if len(X):
            X, y = check_X_y(X, y, dtype=np.float64)
        elif len(y):
            raise ValueError("readings given without positions")
        rng = np.random.default_rng(self.random_state)

        data = Dataset()
        for (px, py), d in zip(X, y):
            data.append(px, py, d)
        if len(data):
            cfg = SamplerConfig(self.n_live, self.termination_frac, self.walk_steps,
                                self.retry_limit)
            self.run_ = run_nested(data, response, prior, cfg, rng)
            self.ensemble_ = resample_ensemble(self.run_, self.ensemble_size, rng)
            self.log_z_, self.log_z_err_ = self.run_.log_z, self.run_.log_z_err
        else:
            self.run_ = None
            circles = sample_prior(prior.bounds, prior.r_min, prior.r_max, rng,
                                   size=self.ensemble_size)
            self.ensemble_ = PosteriorEnsemble(circles)
            self.log_z_, self.log_z_err_ = 0.0, 0.0
        s = summarize(self.ensemble_)
        self.mean_, self.std_ = s.mean, s.std
        self.n_features_in_ = 2
        return self

    def predict_proba(self, X):
        """Columns are ``[P(black), P(white)]`` from the ensemble's coverage."""
        check_is_fitted(self, "ensemble_")
        X = check_positions(X)
        c = self.ensemble_.circles
        dx = X[:, 0][None, :] - c[:, 0:1]
        dy = X[:, 1][None, :] - c[:, 1:2]
        white = (dx * dx + dy * dy <= c[:, 2:3] ** 2).mean(axis=0)
        return np.column_stack([1.0 - white, white])

    def predict(self, X):
        """Expected reading at each position."""
        white = self.predict_proba(X)[:, 1]
        return self.d_black + white * (self.d_white - self.d_black)

    def sample(self):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.circles.copy()


class PredictiveEntropy(TransformerMixin, BaseEstimator):
    """Maps candidate positions to their predictive entropy.

    ``fit`` takes an ``(n_circles, 3)`` ensemble; ``transform`` takes
    ``(n_points, 2)`` positions and returns ``(n_points, 1)`` entropies in nats.
    """

    def __init__(self, d_white=0.8, d_black=0.2, sigma=0.06, n_bins=16, k_per_model=5,
                 random_state=None):
        self.d_white = d_white
        self.d_black = d_black
        self.sigma = sigma
        self.n_bins = n_bins
        self.k_per_model = k_per_model
        self.random_state = random_state

    def fit(self, X, y=None):
        self.circles_ = check_circles(X)
        self.n_features_in_ = 3
        return self

    def _score(self, P):
        check_is_fitted(self, "circles_")
        P = check_positions(P)
        rng = np.random.default_rng(self.random_state)
        return predictive_entropy(self.circles_, P,
                                  SensorResponse(self.d_white, self.d_black, self.sigma),
                                  self.n_bins, self.k_per_model, rng)

    def transform(self, X):
        return self._score(X)[0][:, None]

    def select(self, X):
        """Position with the highest entropy (first among ties)."""
        P = check_positions(X)
        h, _ = self._score(P)
        return P[int(np.argmax(h))]
