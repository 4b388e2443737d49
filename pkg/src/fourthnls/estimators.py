"""scikit-learn style wrappers around the functional core.

* :class:`LinearPropagator` is a transformer: ``transform`` applies ``S(t)``
  to a list of fields, ``inverse_transform`` applies ``S(-t)``.
* :class:`PicardSolver` and :class:`SplitStepSolver` are fitted on initial
  data; ``predict(times)`` returns the solution interpolated at the
  requested instants.
* :class:`PowerLawFit` fits ``y = c x^p`` on log-log axes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .lab import fit_scaling
from .solver import SolverConfig, solve_picard, solve_splitstep
from .spectral import Field, propagate
from .validation import check_epsilon, check_field, check_positive

__all__ = ["LinearPropagator", "PicardSolver", "SplitStepSolver", "PowerLawFit"]


def _as_fields(X) -> list[Field]:
    if isinstance(X, Field):
        return [X]
    fields = list(X)
    for f in fields:
        check_field(f)
    return fields


class LinearPropagator(TransformerMixin, BaseEstimator):
    def __init__(self, t: float = 0.0, eps: int = 0):
        self.t = t
        self.eps = eps

    def fit(self, X=None, y=None):
        check_epsilon(self.eps)
        if not np.isfinite(self.t):
            raise ValueError("t must be finite")
        return self

    def transform(self, X):
        return [propagate(f, self.t, check_epsilon(self.eps)) for f in _as_fields(X)]

    def inverse_transform(self, X):
        return [propagate(f, -self.t, check_epsilon(self.eps)) for f in _as_fields(X)]


class _SolverBase(BaseEstimator):
    def __init__(self, nonlinearity: str = "lap(u)*conj(lap(u))", eps: int = 0, T: float = 0.05,
                 substeps: int = 64, max_iter: int = 50, delta: float = 0.25,
                 contraction_target: float = 0.5, tol: float = 1e-9, cube_side: float = 1.0):
        self.nonlinearity = nonlinearity
        self.eps = eps
        self.T = T
        self.substeps = substeps
        self.max_iter = max_iter
        self.delta = delta
        self.contraction_target = contraction_target
        self.tol = tol
        self.cube_side = cube_side

    def _config(self) -> SolverConfig:
        return SolverConfig(
            eps=check_epsilon(self.eps),
            P=self.nonlinearity,
            T=check_positive("T", self.T),
            substeps=int(self.substeps),
            max_iter=int(self.max_iter),
            delta=self.delta,
            contraction_target=self.contraction_target,
            tol=self.tol,
            cube_side=self.cube_side,
        )

    def _solve(self, u0: Field, cfg: SolverConfig):
        raise NotImplementedError

    def fit(self, X, y=None):
        u0 = check_field(X)
        sol = self._solve(u0, self._config())
        self.solution_ = sol
        self.report_ = sol.report
        self.accepted_T_ = sol.report.accepted_T
        return self

    def predict(self, times) -> list[Field]:
        """Solution at ``times`` (linear interpolation in the interaction picture)."""
        if not hasattr(self, "solution_"):
            raise NotFittedError("call fit before predict")
        trace = self.solution_.trace
        cfg_eps = check_epsilon(self.eps)
        out = []
        for t in np.atleast_1d(np.asarray(times, dtype=float)):
            if not 0 <= t <= trace.times[-1] * (1 + 1e-12):
                raise ValueError(f"t={t} outside the solved interval [0, {trace.times[-1]}]")
            i = int(np.clip(np.searchsorted(trace.times, t, side="right") - 1, 0, len(trace) - 2))
            t0, t1 = trace.times[i], trace.times[i + 1]
            w = (t - t0) / (t1 - t0)
            a = propagate(trace.field(i), t - t0, cfg_eps)
            b = propagate(trace.field(i + 1), t - t1, cfg_eps)
            out.append(a * (1 - w) + b * w)
        return out


class PicardSolver(_SolverBase):
    def _solve(self, u0, cfg):
        return solve_picard(u0, cfg)


class SplitStepSolver(_SolverBase):
    def _solve(self, u0, cfg):
        return solve_splitstep(u0, cfg)


class PowerLawFit(RegressorMixin, BaseEstimator):
    def fit(self, X, y):
        fit = fit_scaling(np.ravel(X), np.ravel(y))
        self.fit_ = fit
        self.slope_ = fit.slope
        self.intercept_ = fit.intercept
        self.max_residual_ = fit.max_residual
        return self

    def predict(self, X):
        if not hasattr(self, "fit_"):
            raise NotFittedError("call fit before predict")
        return self.fit_.predict(np.ravel(X))

    def score(self, X, y, sample_weight=None):
        """Coefficient of determination on log-log axes."""
        ly = np.log(np.ravel(y))
        pred = np.log(self.predict(X))
        ss_res = np.sum((ly - pred) ** 2)
        ss_tot = np.sum((ly - ly.mean()) ** 2)
        return float(1 - ss_res / ss_tot) if ss_tot > 0 else 1.0
