"""scikit-learn style wrappers around the feature map, the VI solver and the
classifier-guidance baseline. Inputs ``X`` are rows ``[t, x_1, ..., x_d]``."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_time_state_rows
from .dataset import ObservationDataset
from .fnclass import features
from .policy import PolicyHandle, classifier_guidance_fit, ridge_model
from .solver import SolverConfig, fit


def _rows(X, basis):
    X = check_array(X, dtype=float)
    return check_time_state_rows(X, basis.dim, basis.horizon)


class FeatureMap(TransformerMixin, BaseEstimator):
    """Time-space features ``phi(t, x)`` of a :class:`BasisSpec`."""

    def __init__(self, basis=None):
        self.basis = basis

    def fit(self, X=None, y=None):
        if self.basis is None:
            raise ValueError("FeatureMap needs a basis")
        self.n_features_out_ = self.basis.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        t, x = _rows(X, self.basis)
        return features(self.basis, t, x, hessian=False).phi


class VIValueEstimator(BaseEstimator):
    """Value function fitted by the ball-constrained proximal iteration.

    Parameters
    ----------
    basis : BasisSpec
    diffusion : DiffusionSpec
    alpha : float
    gamma, ridge : float or None
        None selects the data-driven defaults.
    max_iters, ball_radius, stop_tol : see :class:`SolverConfig`
    potential_scaling : {'alpha_r', 'r_over_alpha'}

    Attributes
    ----------
    model_ : ValueModel
    report_ : FitReport
    """

    def __init__(self, basis=None, diffusion=None, alpha=1.0, gamma=None, ridge=None, max_iters=500,
                 ball_radius=100.0, stop_tol=1e-8, potential_scaling="alpha_r"):
        self.basis = basis
        self.diffusion = diffusion
        self.alpha = alpha
        self.gamma = gamma
        self.ridge = ridge
        self.max_iters = max_iters
        self.ball_radius = ball_radius
        self.stop_tol = stop_tol
        self.potential_scaling = potential_scaling

    def fit(self, X, y=None, theta0=None):
        """Fit on an :class:`ObservationDataset` (``y`` is ignored)."""
        if not isinstance(X, ObservationDataset):
            raise TypeError("VIValueEstimator.fit expects an ObservationDataset")
        cfg = SolverConfig(self.gamma, self.max_iters, self.ball_radius, self.ridge, self.stop_tol)
        self.model_, self.report_ = fit(X, self.basis, self.diffusion, self.alpha, cfg, theta0,
                                        self.potential_scaling)
        self.coef_ = self.model_.theta
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        t, x = _rows(X, self.basis)
        return self.model_.value(t, x)

    def policy(self, X):
        """Plug-in actions ``Lambda grad f / f`` at the rows of ``X``."""
        check_is_fitted(self, "model_")
        t, x = _rows(X, self.basis)
        ph = PolicyHandle("value_model", self.model_, self.diffusion, self.alpha)
        return ph.evaluate(self.diffusion, t, x)


class ClassifierGuidanceRegressor(RegressorMixin, BaseEstimator):
    """Ridge regression of ``exp(Y / alpha)`` on snapshot features.

    ``fit(X, y)`` takes snapshot rows and already-transformed targets;
    :meth:`fit_dataset` pairs every snapshot with its trajectory's reward.
    """

    def __init__(self, basis=None, alpha=1.0, ridge=1e-8):
        self.basis = basis
        self.alpha = alpha
        self.ridge = ridge

    def fit(self, X, y):
        t, x = _rows(X, self.basis)
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != t.shape[0]:
            raise ValueError(f"X has {t.shape[0]} rows but y has {y.shape[0]}")
        if np.any(y <= 0):
            raise ValueError("targets must be positive (they model exp(Y / alpha))")
        self.model_ = ridge_model(self.basis, t, x, y, self.ridge)
        self.coef_ = self.model_.theta
        return self

    def fit_dataset(self, dataset):
        self.model_ = classifier_guidance_fit(dataset, self.basis, self.alpha, self.ridge)
        self.coef_ = self.model_.theta
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        t, x = _rows(X, self.basis)
        return self.model_.value(t, x)
