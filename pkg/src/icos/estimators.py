"""scikit-learn style wrappers: ``fit(X=source, y=target)`` then ``predict(source)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline import RansacParams, ransac_registration, ransac_rotation
from .exceptions import InvalidParameter
from .geometry import CorrespondenceSet, SimilarityTransform
from .invariants import INLIER_MULTIPLIER, SIGMA_FLOOR, residuals
from .samplers import IcosParams, icos_registration, icos_rotation_search


def check_correspondences(X, y) -> tuple:
    """Validate paired ``(N, 3)`` float arrays of equal length."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if y is None:
        raise InvalidParameter("target array y is required")
    y = check_array(y, dtype=np.float64, ensure_min_samples=1)
    if X.shape[1] != 3 or y.shape[1] != 3:
        raise InvalidParameter(f"expected (N, 3) arrays, got {X.shape} and {y.shape}")
    if len(X) != len(y):
        raise InvalidParameter(f"source and target lengths differ: {len(X)} != {len(y)}")
    return X, y


class _TransformEstimator(BaseEstimator):
    """Shared fitted-state handling. Subclasses implement ``_run(X, y)``."""

    _vectors = False

    def fit(self, X, y):
        X, y = check_correspondences(X, y)
        cset = CorrespondenceSet.vectors(X, y) if self._vectors else CorrespondenceSet.points(X, y)
        report = self._run(cset)
        est = report.estimate
        if not isinstance(est, SimilarityTransform):
            est = SimilarityTransform(1.0, est)
        self.report_ = report
        self.transform_ = est
        self.rotation_ = est.rotation
        self.scale_ = est.scale
        self.translation_ = est.translation
        self.inliers_ = np.asarray(report.inliers, dtype=int)
        self.inlier_mask_ = np.zeros(len(X), dtype=bool)
        self.inlier_mask_[self.inliers_] = True
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        """Map source rows through the fitted transform."""
        check_is_fitted(self, "transform_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise InvalidParameter(f"expected (N, 3) array, got {X.shape}")
        return self.transform_.apply(X)

    def score(self, X, y):
        """Fraction of pairs whose residual under the fit is within the inlier threshold."""
        check_is_fitted(self, "transform_")
        X, y = check_correspondences(X, y)
        est = self.rotation_ if self._vectors else self.transform_
        cset = CorrespondenceSet.vectors(X, y) if self._vectors else CorrespondenceSet.points(X, y)
        thr = INLIER_MULTIPLIER * max(self.sigma, SIGMA_FLOOR)
        return float(np.mean(residuals(cset, est) <= thr))


class IcosRotationSearch(_TransformEstimator):
    """Rotation from vector correspondences by invariant-constrained sampling.

    Parameters
    ----------
    sigma : float
        Inlier noise level; all bounds scale with it.
    X : int, optional
        Extension structures to collect; defaults by problem size.
    seed : int or None
    max_restarts, refine_passes, use_budget_formula
        Forwarded to :class:`~icos.samplers.IcosParams`.
    """

    _vectors = True

    def __init__(self, sigma=0.01, X=None, seed=0, max_restarts=100000, refine_passes=2, use_budget_formula=False):
        self.sigma = sigma
        self.X = X
        self.seed = seed
        self.max_restarts = max_restarts
        self.refine_passes = refine_passes
        self.use_budget_formula = use_budget_formula

    def _run(self, cset):
        kw = dict(
            seed=self.seed,
            max_restarts=self.max_restarts,
            refine_passes=self.refine_passes,
            use_budget_formula=self.use_budget_formula,
        )
        if self.X is not None:
            kw["X"] = self.X
        return icos_rotation_search(cset, IcosParams.for_rotation_search(self.sigma, len(cset), **kw))


class IcosRegistration(_TransformEstimator):
    """Similarity (or rigid, with ``known_scale``) transform from point correspondences."""

    def __init__(
        self, sigma=0.01, known_scale=False, X=4, seed=0, max_restarts=100000, refine_passes=2, use_budget_formula=False
    ):
        self.sigma = sigma
        self.known_scale = known_scale
        self.X = X
        self.seed = seed
        self.max_restarts = max_restarts
        self.refine_passes = refine_passes
        self.use_budget_formula = use_budget_formula

    def _run(self, cset):
        params = IcosParams.for_registration(
            self.sigma,
            X=self.X,
            seed=self.seed,
            max_restarts=self.max_restarts,
            refine_passes=self.refine_passes,
            use_budget_formula=self.use_budget_formula,
        )
        return icos_registration(cset, params, known_scale=self.known_scale)


class _RansacMixin:
    def _params(self):
        return RansacParams(
            sigma=self.sigma,
            confidence=self.confidence,
            max_iterations=None if self.time_budget is not None else self.max_iterations,
            time_budget=self.time_budget,
            inlier_threshold=self.inlier_threshold,
            seed=self.seed,
        )


class RansacRotation(_RansacMixin, _TransformEstimator):
    """RANSAC baseline over 2-vector samples. ``time_budget`` overrides ``max_iterations``."""

    _vectors = True

    def __init__(self, sigma=0.01, max_iterations=1000, time_budget=None, confidence=0.995, inlier_threshold=None, seed=0):
        self.sigma = sigma
        self.max_iterations = max_iterations
        self.time_budget = time_budget
        self.confidence = confidence
        self.inlier_threshold = inlier_threshold
        self.seed = seed

    def _run(self, cset):
        return ransac_rotation(cset, self._params())


class RansacRegistration(_RansacMixin, _TransformEstimator):
    """RANSAC baseline over 3-point samples."""

    def __init__(
        self,
        sigma=0.01,
        known_scale=True,
        max_iterations=1000,
        time_budget=None,
        confidence=0.995,
        inlier_threshold=None,
        seed=0,
    ):
        self.sigma = sigma
        self.known_scale = known_scale
        self.max_iterations = max_iterations
        self.time_budget = time_budget
        self.confidence = confidence
        self.inlier_threshold = inlier_threshold
        self.seed = seed

    def _run(self, cset):
        return ransac_registration(cset, self._params(), known_scale=self.known_scale)
