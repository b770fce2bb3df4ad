"""Estimator-style wrapper: ``fit`` a problem, ``predict`` values at lattice points."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .lattice import RECOMBINING, build_lattice
from .model import ProblemSpec, validate_hypotheses
from .exceptions import HypothesisError
from .solvers import SolverOptions, residuals, solve


class ObliqueRBSDESolver(BaseEstimator):
    """Solve a switched reflected system on a lattice.

    ``fit`` takes a :class:`ProblemSpec` in place of a design matrix.
    ``predict`` takes rows ``(t, w)`` that lie on the fitted lattice and
    returns the value of every mode there, shape ``(n_rows, m)``.
    """

    def __init__(self, backend="direct", n_steps=64, lattice_kind=RECOMBINING, n_pen=None,
                 tol_projection=1e-12, picard_tol=1e-10, picard_max_iters=50, validate=True,
                 atol=1e-9):
        self.backend = backend
        self.n_steps = n_steps
        self.lattice_kind = lattice_kind
        self.n_pen = n_pen
        self.tol_projection = tol_projection
        self.picard_tol = picard_tol
        self.picard_max_iters = picard_max_iters
        self.validate = validate
        self.atol = atol

    def fit(self, spec, y=None):
        if not isinstance(spec, ProblemSpec):
            raise TypeError(f"fit expects a ProblemSpec, got {type(spec).__name__}")
        if self.validate:
            report = validate_hypotheses(spec)
            if not report.ok:
                failed = ", ".join(c.hypothesis for c in report.failures())
                raise HypothesisError(f"problem violates hypotheses {failed}", report)
            self.validation_ = report
        opts = SolverOptions(tol_projection=self.tol_projection, picard_tol=self.picard_tol,
                             picard_max_iters=self.picard_max_iters, n_pen=self.n_pen)
        self.lattice_ = build_lattice(spec.horizon, self.n_steps, self.lattice_kind)
        self.solution_ = solve(spec, self.lattice_, self.backend, opts)
        self.spec_ = spec
        self.n_modes_ = spec.mode_count
        self.y0_ = self.solution_.y0
        return self

    def residuals(self):
        check_is_fitted(self, "solution_")
        return residuals(self.solution_, self.spec_)

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"X must have columns (t, w), got {X.shape[1]} columns")
        lat = self.lattice_
        out = np.empty((X.shape[0], self.n_modes_))
        for r, (t, w) in enumerate(X):
            level = int(round(t / lat.dt))
            if not (0 <= level <= lat.steps and abs(lat.time(level) - t) <= self.atol):
                raise ValueError(f"t={t} is not a time of the fitted lattice")
            hits = np.flatnonzero(np.abs(lat.states(level) - w) <= self.atol)
            if not hits.size:
                raise ValueError(f"w={w} is not a node state at t={t}")
            out[r] = self.solution_.Y[level][:, hits[0]]
        return out
