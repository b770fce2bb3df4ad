"""Problem data for the switched system and checks of its standing hypotheses.

Modes are numbered ``0 .. m-1`` throughout the package.  A problem is

* a generator per mode, affine in ``(y, z)``:  ``a_i(t) + b_i * y + c_i * z``;
* switching costs, either linear (``h_ij(t, y) = y - k[i][j]``) or a general
  vectorised callable ``h(i, j, t, y)``;
* an upper barrier ``S_i(t, w)`` and terminal payoff ``g_i(w)`` per mode, both
  declared as :class:`ScalarField` objects over the Brownian state ``w``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .exceptions import SpecStructureError

__all__ = [
    "TimeFunction",
    "ScalarField",
    "GeneratorSpec",
    "LinearCosts",
    "GeneralCosts",
    "ProblemSpec",
    "GridSpec",
    "HypothesisCheck",
    "ValidationReport",
    "eval_h",
    "validate_hypotheses",
]


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(np.asarray(x, dtype=float))))


@dataclass(frozen=True)
class TimeFunction:
    """Piecewise-constant function of time.

    ``values[k]`` applies on ``[breaks[k-1], breaks[k])``; with no breaks the
    function is the constant ``values[0]``.
    """

    values: tuple = (0.0,)
    breaks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        if len(self.values) != len(self.breaks) + 1:
            raise SpecStructureError("TimeFunction needs len(values) == len(breaks) + 1")
        if not (_finite(self.values) and _finite(self.breaks or [0.0])):
            raise SpecStructureError("TimeFunction parameters must be finite")
        if any(b1 >= b2 for b1, b2 in zip(self.breaks, self.breaks[1:])):
            raise SpecStructureError("TimeFunction breaks must be strictly increasing")

    @classmethod
    def constant(cls, value: float) -> "TimeFunction":
        return cls(values=(value,))

    def __call__(self, t):
        if not self.breaks:
            return self.values[0] if np.ndim(t) == 0 else np.full(np.shape(t), self.values[0])
        idx = np.searchsorted(self.breaks, t, side="right")
        out = np.asarray(self.values)[idx]
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        if not self.breaks:
            return self.values[0]
        return {"kind": "piecewise_constant", "breaks": list(self.breaks), "values": list(self.values)}


@dataclass(frozen=True)
class ScalarField:
    """A declared function of ``(t, w)``.

    kind ``"constant"``: ``alpha``;  ``"affine"``: ``alpha + beta * w``;
    ``"clipped_affine"``: ``min(cap, alpha + beta * w)``.
    """

    kind: str
    alpha: float = 0.0
    beta: float = 0.0
    cap: float = math.inf

    KINDS = ("constant", "affine", "clipped_affine")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise SpecStructureError(f"unknown ScalarField kind {self.kind!r}")
        for name in ("alpha", "beta"):
            object.__setattr__(self, name, float(getattr(self, name)))
            if not math.isfinite(getattr(self, name)):
                raise SpecStructureError(f"ScalarField.{name} must be finite")
        object.__setattr__(self, "cap", float(self.cap))
        if self.kind == "clipped_affine" and not math.isfinite(self.cap):
            raise SpecStructureError("clipped_affine needs a finite cap")

    @classmethod
    def constant(cls, value: float) -> "ScalarField":
        return cls("constant", alpha=value)

    @classmethod
    def affine(cls, alpha: float, beta: float) -> "ScalarField":
        return cls("affine", alpha=alpha, beta=beta)

    @classmethod
    def clipped_affine(cls, alpha: float, beta: float, cap: float) -> "ScalarField":
        return cls("clipped_affine", alpha=alpha, beta=beta, cap=cap)

    def __call__(self, t, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "constant":
            out = np.full(np.broadcast(np.asarray(t), w).shape, self.alpha)
        elif self.kind == "affine":
            out = self.alpha + self.beta * w + 0.0 * np.asarray(t)
        else:
            out = np.minimum(self.cap, self.alpha + self.beta * w) + 0.0 * np.asarray(t)
        return float(out) if out.ndim == 0 else out

    def shifted(self, delta: float) -> "ScalarField":
        cap = self.cap + delta if self.kind == "clipped_affine" else self.cap
        return ScalarField(self.kind, self.alpha + delta, self.beta, cap)

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.alpha}
        d = {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}
        if self.kind == "clipped_affine":
            d["cap"] = self.cap
        return d


Intercept = Union[TimeFunction, Callable[[float], float]]


@dataclass(frozen=True)
class GeneratorSpec:
    """Per-mode affine generator ``psi(t, y, z, i) = a_i(t) + b_i y + c_i z``."""

    intercepts: tuple
    y_coefs: tuple
    z_coefs: tuple

    def __post_init__(self):
        intercepts = tuple(
            TimeFunction.constant(a) if isinstance(a, (int, float)) else a for a in self.intercepts
        )
        object.__setattr__(self, "intercepts", intercepts)
        object.__setattr__(self, "y_coefs", tuple(float(b) for b in self.y_coefs))
        object.__setattr__(self, "z_coefs", tuple(float(c) for c in self.z_coefs))
        if not (len(intercepts) == len(self.y_coefs) == len(self.z_coefs)):
            raise SpecStructureError("generator coefficient lists differ in length")
        if not (_finite(self.y_coefs or [0]) and _finite(self.z_coefs or [0])):
            raise SpecStructureError("generator coefficients must be finite")
        if any(not callable(a) for a in intercepts):
            raise SpecStructureError("generator intercepts must be numbers or callables of t")

    @classmethod
    def constant_rates(cls, rates: Sequence[float], y_coefs=None, z_coefs=None) -> "GeneratorSpec":
        m = len(rates)
        return cls(
            tuple(TimeFunction.constant(a) for a in rates),
            tuple(y_coefs if y_coefs is not None else [0.0] * m),
            tuple(z_coefs if z_coefs is not None else [0.0] * m),
        )

    @property
    def mode_count(self) -> int:
        return len(self.intercepts)

    @property
    def lipschitz(self) -> float:
        return max((abs(b) + abs(c) for b, c in zip(self.y_coefs, self.z_coefs)), default=0.0)

    def intercept(self, i: int, t: float) -> float:
        return float(self.intercepts[i](t))

    def __call__(self, t, y, z, i):
        return self.intercept(i, t) + self.y_coefs[i] * y + self.z_coefs[i] * z

    def shifted(self, deltas: Sequence[float]) -> "GeneratorSpec":
        """Add ``deltas[i]`` to each intercept (constant and piecewise forms only)."""
        new = []
        for a, d in zip(self.intercepts, deltas):
            if not isinstance(a, TimeFunction):
                raise TypeError("only TimeFunction intercepts can be shifted")
            new.append(TimeFunction(tuple(v + d for v in a.values), a.breaks))
        return GeneratorSpec(tuple(new), self.y_coefs, self.z_coefs)


@dataclass(frozen=True)
class LinearCosts:
    """Constant switching costs: ``h_ij(t, y) = y - k[i][j]``."""

    k: tuple

    def __post_init__(self):
        k = tuple(tuple(float(x) for x in row) for row in self.k)
        object.__setattr__(self, "k", k)
        if any(len(row) != len(k) for row in k):
            raise SpecStructureError("cost matrix must be square")
        if not _finite(k or [0.0]):
            raise SpecStructureError("cost matrix entries must be finite")

    @classmethod
    def uniform(cls, m: int, cost: float) -> "LinearCosts":
        return cls(tuple(tuple(0.0 if i == j else cost for j in range(m)) for i in range(m)))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.k, dtype=float)

    @property
    def mode_count(self) -> int:
        return len(self.k)

    def h(self, i, j, t, y):
        return y - self.k[i][j]


@dataclass(frozen=True)
class GeneralCosts:
    """Switching transforms supplied as a vectorised callable ``h(i, j, t, y)``."""

    func: Callable
    mode_count: int
    nondecreasing: bool = True
    declared: dict | None = field(default=None, compare=False)

    @classmethod
    def affine(cls, slope, offset) -> "GeneralCosts":
        """``h_ij(t, y) = slope[i][j] * y - offset[i][j]``, the serialisable general form."""
        s = np.array(slope, dtype=float)
        o = np.array(offset, dtype=float)
        m = s.shape[0]
        if s.shape != (m, m) or o.shape != (m, m):
            raise SpecStructureError("affine cost slope and offset must both be m x m")
        if not (_finite(s) and _finite(o)):
            raise SpecStructureError("affine cost parameters must be finite")

        def func(i, j, t, y):
            return s[i, j] * np.asarray(y, dtype=float) - o[i, j] + 0.0 * np.asarray(t)

        return cls(func, m, bool(np.all(s >= 0)),
                   {"kind": "affine", "slope": s.tolist(), "offset": o.tolist()})

    def h(self, i, j, t, y):
        return self.func(i, j, t, y)


CostSpec = Union[LinearCosts, GeneralCosts]


def eval_h(costs: CostSpec, i: int, j: int, t, y):
    """Value after switching from mode ``i`` to mode ``j`` when ``j`` is worth ``y``."""
    if i == j:
        raise ValueError(f"h_{{{i},{j}}} is undefined: a switch needs two distinct modes")
    return costs.h(i, j, t, y)


@dataclass(frozen=True)
class ProblemSpec:
    mode_count: int
    horizon: float
    generator: GeneratorSpec
    costs: CostSpec
    upper_barriers: tuple
    terminals: tuple
    allow_nonstrict_costs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "upper_barriers", tuple(self.upper_barriers))
        object.__setattr__(self, "terminals", tuple(self.terminals))
        m = self.mode_count
        if not isinstance(m, (int, np.integer)) or m < 1:
            raise SpecStructureError("mode_count must be an integer >= 1")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise SpecStructureError("horizon must be finite and positive")
        for name, n in (
            ("generator", self.generator.mode_count),
            ("costs", self.costs.mode_count),
            ("upper_barriers", len(self.upper_barriers)),
            ("terminals", len(self.terminals)),
        ):
            if n != m:
                raise SpecStructureError(f"{name} has {n} entries, expected mode_count={m}")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.costs, LinearCosts)

    def barrier(self, i, t, w):
        return self.upper_barriers[i](t, w)

    def barriers(self, t, w) -> np.ndarray:
        """Upper barriers of all modes, shape ``(m,) + shape(w)``."""
        return np.stack([np.asarray(s(t, w), dtype=float) for s in self.upper_barriers])

    def terminal_values(self, w) -> np.ndarray:
        return np.stack([np.asarray(g(self.horizon, w), dtype=float) for g in self.terminals])

    def lower_barriers(self, t, y) -> np.ndarray:
        """``max_{j != i} h_ij(t, y_j)`` for every ``i``; ``-inf`` when ``m == 1``.

        ``y`` has shape ``(m, ...)``.
        """
        y = np.asarray(y, dtype=float)
        m = self.mode_count
        if m == 1:
            return np.full_like(y, -np.inf)
        if self.is_linear:
            k = self.costs.matrix.copy()
            np.fill_diagonal(k, np.inf)
            k = k.reshape(k.shape + (1,) * (y.ndim - 1))
            return np.max(y[None, ...] - k, axis=1)
        out = np.full_like(y, -np.inf)
        for i in range(m):
            for j in range(m):
                if i != j:
                    out[i] = np.maximum(out[i], self.costs.h(i, j, t, y[j]))
        return out


@dataclass(frozen=True)
class GridSpec:
    """Finite grid on which hypotheses about continuous data are sampled.

    The same ``[lower, upper]`` box is used for the value variable ``y`` and
    the Brownian state ``w``.
    """

    n_times: int = 21
    n_points: int = 41
    lower: float = -5.0
    upper: float = 5.0

    def times(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, horizon, self.n_times)

    def points(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n_points)


@dataclass(frozen=True)
class HypothesisCheck:
    hypothesis: str
    status: str  # "pass" | "fail" | "warn"
    witness: tuple | None = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple
    grid: GridSpec = field(default_factory=GridSpec)

    @property
    def ok(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    def failures(self):
        return [e for e in self.entries if e.status == "fail"]

    def __getitem__(self, hypothesis: str) -> HypothesisCheck:
        for e in self.entries:
            if e.hypothesis == hypothesis:
                return e
        raise KeyError(hypothesis)

    def summary(self) -> str:
        lines = [f"{e.hypothesis}: {e.status}" + (f" at {e.witness} ({e.detail})" if e.witness else "")
                 for e in self.entries]
        return "\n".join(lines)

    def to_dict(self):
        return {
            "ok": self.ok,
            "grid": {"n_times": self.grid.n_times, "n_points": self.grid.n_points,
                     "lower": self.grid.lower, "upper": self.grid.upper},
            "entries": [
                {"hypothesis": e.hypothesis, "status": e.status,
                 "witness": None if e.witness is None else [_plain(x) for x in e.witness],
                 "detail": e.detail}
                for e in self.entries
            ],
        }


def _plain(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def _check(name, witness=None, detail="", warn=False):
    if witness is None:
        return HypothesisCheck(name, "pass")
    return HypothesisCheck(name, "warn" if warn else "fail", tuple(_plain(w) for w in witness), detail)


def _linear_cost_checks(spec: ProblemSpec):
    k = spec.costs.matrix
    m = spec.mode_count
    out = []

    witness = None
    for i, j in itertools.product(range(m), repeat=2):
        if (i == j and k[i, j] != 0.0) or (i != j and not k[i, j] > 0.0):
            witness = (i, j, k[i, j])
            break
    out.append(_check("H3'(i)", witness, "need k(i,i) = 0 and k(i,j) > 0"))

    weak = strict = None
    for i, j, l in itertools.product(range(m), repeat=3):
        if i == j or j == l:
            continue
        lhs, rhs = k[i, j] + k[j, l], k[i, l]
        if weak is None and lhs < rhs:
            weak = (i, j, l)
        if strict is None and not lhs > rhs:
            strict = (i, j, l)
    out.append(_check("H3'(ii)", weak, "k(i,j) + k(j,l) >= k(i,l) violated"))
    out.append(_check("H5", strict, "strict triangle k(i,j) + k(j,l) > k(i,l) violated",
                      warn=spec.allow_nonstrict_costs and weak is None))

    # No free loop: every directed cycle must have positive total cost.
    # d[i, i] after Floyd-Warshall is the cheapest closed walk through i.
    d = k.copy()
    np.fill_diagonal(d, np.inf)
    for via in range(m):
        d = np.minimum(d, d[:, [via]] + d[[via], :])
    bad = [i for i in range(m) if d[i, i] <= 0.0]
    out.append(_check("H3", (bad[0], d[bad[0], bad[0]]) if bad else None,
                      "a switching loop with non-positive total cost exists"))
    return out


def _general_cost_checks(spec: ProblemSpec, ts, ys):
    m = spec.mode_count
    h = spec.costs.h
    out = []
    tt, yy = np.meshgrid(ts, ys, indexing="ij")

    witness = None
    for i, j in itertools.product(range(m), repeat=2):
        if i == j:
            continue
        v = np.asarray(h(i, j, tt, yy), dtype=float)
        bad = np.argwhere(~(v <= yy))
        if bad.size:
            a, b = bad[0]
            witness = (i, j, ts[a], ys[b], v[a, b])
            break
        if spec.costs.nondecreasing:
            dec = np.argwhere(np.diff(v, axis=1) < 0)
            if dec.size:
                a, b = dec[0]
                witness = (i, j, ts[a], ys[b], v[a, b])
                break
    out.append(_check("H2", witness, "need h_ij(t,y) <= y and h_ij(t,.) nondecreasing"))

    def hh(i, j, t, y):
        return y if i == j else np.asarray(h(i, j, t, y), dtype=float)

    witness = None
    for i, j, l in itertools.product(range(m), repeat=3):
        if i == j or j == l:
            continue
        lhs = hh(i, j, tt, hh(j, l, tt, yy))
        rhs = hh(i, l, tt, yy)
        bad = np.argwhere(~(lhs < rhs))
        if bad.size:
            a, b = bad[0]
            witness = (i, j, l, ts[a], ys[b])
            break
    out.append(_check("H5", witness, "h_ij(t, h_jl(t,y)) < h_il(t,y) violated"))

    witness = None
    for i, j in itertools.product(range(m), repeat=2):
        if i < j:
            bad = np.argwhere(~(hh(i, j, tt, hh(j, i, tt, yy)) < yy))
            if bad.size:
                a, b = bad[0]
                witness = (i, j, ts[a], ys[b])
                break
    out.append(_check("H3", witness, "two-mode switching loop does not lose value"))
    return out


def validate_hypotheses(spec: ProblemSpec, sample_grid: GridSpec | None = None) -> ValidationReport:
    """Check the standing hypotheses on ``spec``.

    Linear costs are checked exactly; conditions involving continuous data
    (general costs, barrier membership) are checked on ``sample_grid``.
    Structural problems raise :class:`SpecStructureError` instead.
    """
    grid = sample_grid or GridSpec()
    ts, ys = grid.times(spec.horizon), grid.points()
    m = spec.mode_count
    entries = []

    entries.append(_check("H1(ii)", None if math.isfinite(spec.generator.lipschitz) else (spec.generator.lipschitz,)))
    witness = None
    for i in range(m):
        vals = np.array([spec.generator.intercept(i, t) for t in ts])
        if not _finite(vals):
            witness = (i, float(ts[np.argmin(np.isfinite(vals))]))
            break
    entries.append(_check("H1(i)", witness, "generator intercept is not finite on [0, T]"))

    if spec.is_linear:
        entries.extend(_linear_cost_checks(spec))
    else:
        entries.extend(_general_cost_checks(spec, ts, ys))

    tt, ww = np.meshgrid(ts, ys, indexing="ij")
    S = spec.barriers(tt, ww)
    witness = None
    for i, j in itertools.product(range(m), repeat=2):
        if i == j:
            continue
        lhs = np.asarray(spec.costs.h(i, j, tt, S[j]), dtype=float)
        bad = np.argwhere(~(lhs <= S[i]))
        if bad.size:
            a, b = bad[0]
            witness = (i, j, ts[a], ys[b], lhs[a, b], S[i][a, b])
            break
    entries.append(_check("S_in_Q", witness, "h_ij(t, S_j) <= S_i violated"))

    g = spec.terminal_values(ys)
    S_T = spec.barriers(spec.horizon, ys)
    bad = np.argwhere(~(g <= S_T))
    entries.append(_check("terminal_le_S", None if not bad.size else
                          (bad[0][0], ys[bad[0][1]], g[tuple(bad[0])], S_T[tuple(bad[0])]),
                          "g_i(w) <= S_i(T, w) violated"))
    witness = None
    for i, j in itertools.product(range(m), repeat=2):
        if i == j:
            continue
        lhs = np.asarray(spec.costs.h(i, j, spec.horizon, g[j]), dtype=float)
        bad = np.argwhere(~(lhs <= g[i]))
        if bad.size:
            b = bad[0][0]
            witness = (i, j, ys[b], lhs[b], g[i][b])
            break
    entries.append(_check("terminal_in_Q", witness, "h_ij(T, g_j) <= g_i violated"))
    return ValidationReport(tuple(entries), grid)
