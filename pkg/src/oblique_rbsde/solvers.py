"""Backward-induction solvers for the coupled reflected system.

Every backend walks the lattice from the terminal level to the root.  At
level ``n`` it takes the conditional expectation of the next level, applies
one implicit-in-``y`` Euler step of the generator, and then enforces the
constraint region

    max_{j != i} h_ij(t, Y_j)  <=  Y_i  <=  S_i(t, w)

either exactly (``direct``, ``picard``) or through a penalty term
(``penalty_upper``, ``penalty_oblique``).  The pushes needed to stay in the
region are recorded as the one-step increments ``dk_plus`` (lower barrier)
and ``dk_minus`` (upper barrier).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import (
    ContractionError,
    InternalConsistencyError,
    PicardNonConvergence,
    ProjectionNonConvergence,
)
from .lattice import Lattice, cond_expect, cond_expect_dw
from .model import LinearCosts, ProblemSpec

logger = logging.getLogger(__name__)

BACKENDS = ("direct", "penalty_upper", "penalty_oblique", "picard")

__all__ = [
    "BACKENDS",
    "SolverOptions",
    "Solution",
    "SkorokhodResiduals",
    "ProjectionResult",
    "driver_step",
    "oblique_project",
    "solve",
    "solve_direct",
    "solve_penalty_upper",
    "solve_penalty_oblique",
    "solve_picard",
    "residuals",
    "q_violation",
    "expected_increment_totals",
]


@dataclass(frozen=True)
class SolverOptions:
    tol_projection: float = 1e-12
    max_projection_sweeps: int | None = None  # None means 4 * mode_count
    tol_driver_fixpoint: float = 1e-13  # unused: the affine step is solved in closed form
    n_pen: float | None = None
    picard_tol: float = 1e-10
    picard_max_iters: int = 50
    monotonicity_tol: float = 1e-12

    def __post_init__(self):
        for name in ("tol_projection", "tol_driver_fixpoint", "picard_tol", "monotonicity_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_projection_sweeps is not None and self.max_projection_sweeps < 1:
            raise ValueError("max_projection_sweeps must be >= 1")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        if self.n_pen is not None and not self.n_pen >= 0:
            raise ValueError("n_pen must be nonnegative")

    def sweep_limit(self, mode_count: int) -> int:
        return self.max_projection_sweeps or 4 * mode_count


@dataclass(frozen=True)
class Solution:
    """Value surfaces on a lattice.

    ``Y[n]`` has shape ``(m, nodes at level n)`` for ``n = 0 .. N``;
    ``Z``, ``dk_plus`` and ``dk_minus`` are given on the non-terminal levels
    ``0 .. N-1`` only.
    """

    backend: str
    lattice: Lattice
    Y: tuple
    Z: tuple
    dk_plus: tuple
    dk_minus: tuple
    meta: dict = field(default_factory=dict)

    @property
    def mode_count(self) -> int:
        return self.Y[0].shape[0]

    @property
    def y0(self) -> np.ndarray:
        return self.Y[0][:, 0].copy()

    def sup_gap(self, other: "Solution") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.Y, other.Y))


class SkorokhodResiduals(NamedTuple):
    upper: np.ndarray
    lower: np.ndarray

    def worst(self) -> float:
        return float(max(np.max(np.abs(self.upper)), np.max(np.abs(self.lower))))


class ProjectionResult(NamedTuple):
    y: np.ndarray
    dk_plus: np.ndarray
    dk_minus: np.ndarray
    sweeps: int


def _check_contraction(spec: ProblemSpec, dt: float) -> None:
    C = spec.generator.lipschitz
    if not dt * C < 1.0:
        raise ContractionError(f"dt * C = {dt * C:.6g} >= 1; refine the lattice")


def _warn_if_nonmonotone(spec: ProblemSpec, lat: Lattice) -> None:
    c = max((abs(c) for c in spec.generator.z_coefs), default=0.0)
    if c * lat.sqrt_dt > 1.0:
        logger.warning("|c| * sqrt(dt) = %.3g > 1: the scheme is not monotone", c * lat.sqrt_dt)


def driver_step(e, z, t: float, i: int, spec: ProblemSpec, dt: float, opts: SolverOptions | None = None):
    """Solve ``y = e + dt * psi(t, y, z, i)`` for ``y``.

    The generator is affine, so the implicit equation has the closed form
    ``y = (e + dt (a_i(t) + c_i z)) / (1 - dt b_i)``.
    """
    _check_contraction(spec, dt)
    g = spec.generator
    return (np.asarray(e, dtype=float) + dt * (g.intercept(i, t) + g.z_coefs[i] * np.asarray(z, dtype=float))) / (
        1.0 - dt * g.y_coefs[i]
    )


def _driver_all(spec, lat, level, e, z):
    t = lat.time(level)
    return np.stack([driver_step(e[i], z[i], t, i, spec, lat.dt) for i in range(spec.mode_count)])


def oblique_project(ybar, t: float, w, spec: ProblemSpec, opts: SolverOptions | None = None) -> ProjectionResult:
    """Project ``ybar`` onto the constraint region at ``(t, w)``.

    Iterates ``F(y)_i = min(S_i, max(ybar_i, max_{j != i} h_ij(t, y_j)))``
    from ``y = min(S, ybar)`` (Jacobi sweeps over the modes, vectorised over any
    trailing node axis) until the sup-norm change drops below
    ``tol_projection``.  ``sweeps`` counts the sweeps that still moved the
    iterate.
    """
    opts = opts or SolverOptions()
    ybar = np.asarray(ybar, dtype=float)
    if not np.all(np.isfinite(ybar)):
        raise ValueError("ybar must be finite")
    S = np.broadcast_to(spec.barriers(t, w), ybar.shape)
    limit = opts.sweep_limit(spec.mode_count)
    # Every fixed point dominates min(S, ybar), and F is order preserving, so
    # starting there the sweeps increase monotonically to the fixed point.
    y = np.minimum(S, ybar)
    productive = 0
    for sweep in range(1, limit + 1):
        new = np.minimum(S, np.maximum(ybar, spec.lower_barriers(t, y)))
        change = float(np.max(np.abs(new - y))) if new.size else 0.0
        y = new
        if change < opts.tol_projection:
            dkp = np.maximum(y - ybar, 0.0)
            dkm = np.maximum(ybar - y, 0.0)
            return ProjectionResult(y, dkp, dkm, productive)
        productive = sweep
    raise ProjectionNonConvergence(
        f"oblique projection did not settle within {limit} sweeps (free switching loop?)",
        last_iterate=y,
        sweeps=limit,
    )


def _terminal(spec: ProblemSpec, lat: Lattice) -> np.ndarray:
    return spec.terminal_values(lat.states(lat.steps))


def _step_inputs(spec, lat, n, y_next):
    e = cond_expect(lat, n, y_next)
    z = cond_expect_dw(lat, n, y_next)
    return z, _driver_all(spec, lat, n, e, z)


def _pack(backend, lat, Y, Z, dkp, dkm, meta):
    return Solution(backend, lat, tuple(Y), tuple(Z), tuple(dkp), tuple(dkm), meta)


def solve_direct(spec: ProblemSpec, lat: Lattice, opts: SolverOptions | None = None) -> Solution:
    """Backward induction with the exact oblique projection at every node."""
    opts = opts or SolverOptions()
    _check_contraction(spec, lat.dt)
    _warn_if_nonmonotone(spec, lat)
    N = lat.steps
    Y = [None] * (N + 1)
    Z, dkp, dkm = [None] * N, [None] * N, [None] * N
    Y[N] = _terminal(spec, lat)
    worst = 0
    for n in range(N - 1, -1, -1):
        Z[n], ybar = _step_inputs(spec, lat, n, Y[n + 1])
        proj = oblique_project(ybar, lat.time(n), lat.states(n), spec, opts)
        Y[n], dkp[n], dkm[n] = proj.y, proj.dk_plus, proj.dk_minus
        worst = max(worst, proj.sweeps)
    return _pack("direct", lat, Y, Z, dkp, dkm, {"max_projection_sweeps": worst})


def solve_penalty_upper(spec: ProblemSpec, lat: Lattice, opts: SolverOptions | None = None,
                        n_pen: float | None = None) -> Solution:
    """Penalise the upper barrier, ignore switching.

    Each mode is solved on its own; the implicit step is
    ``y = e + dt psi(t, y, z) - dt n (y - S)^+``, which is piecewise affine
    in ``y``.
    """
    opts = opts or SolverOptions()
    n_pen = opts.n_pen if n_pen is None else n_pen
    if n_pen is None or not n_pen >= 0:
        raise ValueError("solve_penalty_upper needs a nonnegative n_pen")
    _check_contraction(spec, lat.dt)
    g = spec.generator
    dt, N, m = lat.dt, lat.steps, spec.mode_count
    lam = dt * n_pen
    Y = [None] * (N + 1)
    Z, dkp, dkm = [None] * N, [None] * N, [None] * N
    Y[N] = _terminal(spec, lat)
    b = np.array(g.y_coefs)[:, None]
    for n in range(N - 1, -1, -1):
        t = lat.time(n)
        e = cond_expect(lat, n, Y[n + 1])
        Z[n] = cond_expect_dw(lat, n, Y[n + 1])
        a = np.array([g.intercept(i, t) for i in range(m)])[:, None]
        rhs = e + dt * (a + np.array(g.z_coefs)[:, None] * Z[n])
        S = spec.barriers(t, lat.states(n))
        free = rhs / (1.0 - dt * b)
        pen = (rhs + lam * S) / (1.0 - dt * b + lam)
        Y[n] = np.where(free > S, pen, free)
        dkm[n] = lam * np.maximum(Y[n] - S, 0.0)
        dkp[n] = np.zeros_like(Y[n])
    return _pack("penalty_upper", lat, Y, Z, dkp, dkm, {"n_pen": float(n_pen)})


def _penalized_root(rhs, denom, lam, breakpoints):
    """Root of ``denom * y - lam * sum_l (bp_l - y)^+ = rhs``.

    The left side is continuous and increasing in ``y``; on each segment
    between sorted breakpoints it is affine, so try every active count and
    keep the candidate with the smallest residual.
    """
    bp = -np.sort(-breakpoints, axis=0)  # descending along the mode axis
    partial = np.concatenate([np.zeros_like(rhs)[None], np.cumsum(bp, axis=0)], axis=0)
    q = np.arange(bp.shape[0] + 1).reshape((-1,) + (1,) * rhs.ndim)
    cand = (rhs[None] + lam * partial) / (denom + lam * q)
    resid = denom * cand - lam * np.sum(np.maximum(bp[None] - cand[:, None], 0.0), axis=1) - rhs[None]
    pick = np.argmin(np.abs(resid), axis=0)
    return np.take_along_axis(cand, pick[None], axis=0)[0]


def solve_penalty_oblique(spec: ProblemSpec, lat: Lattice, opts: SolverOptions | None = None,
                          n_pen: float | None = None) -> Solution:
    """Penalise the switching constraints, reflect at the upper barrier.

    Per node the coupled implicit system
    ``y_i = e_i + dt psi(t, y_i, z_i, i) + dt n sum_l (y_i - y_l + k(i,l))^-``
    is solved by Gauss-Seidel sweeps; every scalar update is clipped at
    ``S_i``.  Linear costs only.
    """
    if not isinstance(spec.costs, LinearCosts):
        raise TypeError("penalty_oblique is defined for linear switching costs only")
    opts = opts or SolverOptions()
    n_pen = opts.n_pen if n_pen is None else n_pen
    if n_pen is None or not n_pen > 0:
        raise ValueError("solve_penalty_oblique needs a positive n_pen")
    _check_contraction(spec, lat.dt)
    g = spec.generator
    k = spec.costs.matrix
    dt, N, m = lat.dt, lat.steps, spec.mode_count
    lam = dt * n_pen
    limit = 10 * opts.sweep_limit(m)
    others = [[l for l in range(m) if l != i] for i in range(m)]
    Y = [None] * (N + 1)
    Z, dkp, dkm = [None] * N, [None] * N, [None] * N
    Y[N] = _terminal(spec, lat)
    worst = 0
    for n in range(N - 1, -1, -1):
        t = lat.time(n)
        e = cond_expect(lat, n, Y[n + 1])
        Z[n] = cond_expect_dw(lat, n, Y[n + 1])
        a = np.array([g.intercept(i, t) for i in range(m)])[:, None]
        rhs = e + dt * (a + np.array(g.z_coefs)[:, None] * Z[n])
        denom = 1.0 - dt * np.array(g.y_coefs)
        S = spec.barriers(t, lat.states(n))
        y = np.minimum(S, rhs / denom[:, None])
        for sweep in range(1, limit + 1):
            change = 0.0
            for i in range(m):
                if not others[i]:
                    continue
                bps = np.stack([y[l] - k[i, l] for l in others[i]])
                new = np.minimum(S[i], _penalized_root(rhs[i], denom[i], lam, bps))
                change = max(change, float(np.max(np.abs(new - y[i]))))
                y[i] = new
            if change < opts.tol_projection:
                break
        else:
            raise ProjectionNonConvergence(
                f"penalised Gauss-Seidel did not settle within {limit} sweeps at level {n}",
                last_iterate=y, sweeps=limit,
            )
        worst = max(worst, sweep)
        push = lam * np.sum(np.maximum(-(y[:, None, :] - y[None, :, :] + k[:, :, None]), 0.0), axis=1)
        Y[n] = y
        dkp[n] = push
        dkm[n] = np.maximum(rhs + dt * np.array(g.y_coefs)[:, None] * y + push - y, 0.0)
    return _pack("penalty_oblique", lat, Y, Z, dkp, dkm, {"n_pen": float(n_pen), "max_gs_sweeps": worst})


def _picard_pass(spec, lat, lower_from):
    N = lat.steps
    Y = [None] * (N + 1)
    Z, dkp, dkm = [None] * N, [None] * N, [None] * N
    Y[N] = _terminal(spec, lat)
    for n in range(N - 1, -1, -1):
        t = lat.time(n)
        Z[n], ybar = _step_inputs(spec, lat, n, Y[n + 1])
        S = spec.barriers(t, lat.states(n))
        if lower_from is None:
            y = np.minimum(S, ybar)
        else:
            L = spec.lower_barriers(t, lower_from[n])
            y = np.minimum(S, np.maximum(L, ybar))
        Y[n] = y
        dkp[n] = np.maximum(y - ybar, 0.0)
        dkm[n] = np.maximum(ybar - y, 0.0)
    return Y, Z, dkp, dkm


def solve_picard(spec: ProblemSpec, lat: Lattice, opts: SolverOptions | None = None) -> Solution:
    """Picard iteration over decoupled double-barrier problems.

    Iterate 0 reflects at the upper barrier only.  Iterate ``n`` solves each
    mode separately with lower barrier ``max_{j != i} h_ij(t, Y_j^{n-1})``.
    Iterates must increase pointwise; the loop stops once the sup-norm change
    falls below ``picard_tol``.
    """
    opts = opts or SolverOptions()
    _check_contraction(spec, lat.dt)
    _warn_if_nonmonotone(spec, lat)
    prev = None
    trace = []
    for it in range(opts.picard_max_iters + 1):
        Y, Z, dkp, dkm = _picard_pass(spec, lat, prev)
        if prev is not None:
            diffs = [y - p for y, p in zip(Y, prev)]
            low = min(float(np.min(d)) for d in diffs)
            if low < -opts.monotonicity_tol:
                raise InternalConsistencyError(
                    f"Picard iterate {it} fell below iterate {it - 1} by {-low:.3g}"
                )
            delta = max(float(np.max(np.abs(d))) for d in diffs)
            trace.append({"iteration": it, "sup_delta": delta, "min_increment": low})
            if delta < opts.picard_tol:
                return _pack("picard", lat, Y, Z, dkp, dkm, {"iterations": it, "trace": trace})
        prev = Y
    raise PicardNonConvergence(
        f"Picard iteration did not converge within {opts.picard_max_iters} iterations",
        gaps=[r["sup_delta"] for r in trace],
    )


def solve(spec: ProblemSpec, lat: Lattice, backend: str = "direct", opts: SolverOptions | None = None,
          n_pen: float | None = None) -> Solution:
    if backend == "direct":
        return solve_direct(spec, lat, opts)
    if backend == "picard":
        return solve_picard(spec, lat, opts)
    if backend == "penalty_upper":
        return solve_penalty_upper(spec, lat, opts, n_pen)
    if backend == "penalty_oblique":
        return solve_penalty_oblique(spec, lat, opts, n_pen)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


def residuals(sol: Solution, spec: ProblemSpec, lat: Lattice | None = None) -> SkorokhodResiduals:
    """Probability-weighted discrete minimal-boundary sums, one per mode."""
    lat = lat or sol.lattice
    m = spec.mode_count
    upper = np.zeros(m)
    lower = np.zeros(m)
    for n in range(lat.steps):
        t = lat.time(n)
        p = lat.probabilities(n)
        y = sol.Y[n]
        S = spec.barriers(t, lat.states(n))
        upper += np.sum(p * (S - y) * sol.dk_minus[n], axis=-1)
        if m > 1:
            L = spec.lower_barriers(t, y)
            gap = np.where(sol.dk_plus[n] > 0, (y - L) * sol.dk_plus[n], 0.0)
            lower += np.sum(p * gap, axis=-1)
    return SkorokhodResiduals(upper, lower)


def q_violation(sol: Solution, spec: ProblemSpec) -> tuple[float, float]:
    """Largest excursion above the upper barrier and below the lower one."""
    lat = sol.lattice
    up = low = 0.0
    for n in range(lat.steps + 1):
        t = lat.time(n)
        y = sol.Y[n]
        up = max(up, float(np.max(y - spec.barriers(t, lat.states(n)))))
        if spec.mode_count > 1:
            low = max(low, float(np.max(spec.lower_barriers(t, y) - y)))
    return up, low


def expected_increment_totals(sol: Solution) -> tuple[np.ndarray, np.ndarray]:
    """``E[K^+(T)]`` and ``E[K^-(T)]`` per mode."""
    lat = sol.lattice
    kp = np.zeros(sol.mode_count)
    km = np.zeros(sol.mode_count)
    for n in range(lat.steps):
        p = lat.probabilities(n)
        kp += np.sum(p * sol.dk_plus[n], axis=-1)
        km += np.sum(p * sol.dk_minus[n], axis=-1)
    return kp, km
