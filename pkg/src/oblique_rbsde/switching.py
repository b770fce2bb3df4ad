"""Switched one-dimensional equations, the switching/stopping game, and the
exhaustive oracle that certifies the value surfaces on small full trees.

Timing convention: the controller arrives at node ``v`` in some mode ``i``
and the feedback map chooses the mode ``j = sigma(v, i)`` that runs over
``[t_v, t_{v+1})``.  A switch costs ``h_ij`` applied to the value of running
in ``j`` from ``v``; at most one switch happens per node.  Terminal nodes
carry no decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import OracleGuardError
from .lattice import FULL_TREE, Lattice, build_lattice, cond_expect, cond_expect_dw
from .model import LinearCosts, ProblemSpec
from .parallel import ordered_map
from .solvers import SolverOptions, driver_step, solve_direct

MAX_ORACLE_STATES = 16
MAX_ORACLE_PAIRS = 1 << 22
_CHUNK_ELEMENTS = 1 << 22

__all__ = [
    "SwitchingStrategy",
    "StoppingRule",
    "SwitchedSolution",
    "OracleResult",
    "ModeVerification",
    "VerificationReport",
    "evaluate_switched",
    "evaluate_game",
    "extract_optimal_strategy",
    "enumerate_oracle",
    "verify_representation",
]


def _offset(level: int) -> int:
    return (1 << level) - 1


@dataclass(frozen=True)
class SwitchingStrategy:
    """Feedback map ``(node, arriving mode) -> running mode``.

    ``choices[n]`` is an integer array of shape ``(m, nodes at level n)``;
    entry ``[i, p]`` is the mode run from node ``p`` when arriving in ``i``.
    """

    lattice: Lattice
    choices: tuple
    initial_mode: int = 0

    def __post_init__(self):
        if len(self.choices) != self.lattice.steps:
            raise ValueError("a strategy needs one decision array per non-terminal level")
        m = self.mode_count
        for n, c in enumerate(self.choices):
            if c.shape != (m, self.lattice.node_count(n)):
                raise ValueError(f"strategy level {n} has shape {c.shape}")
            if c.size and (c.min() < 0 or c.max() >= m):
                raise ValueError("strategy modes out of range")
        if not 0 <= self.initial_mode < m:
            raise ValueError("initial mode out of range")

    @property
    def mode_count(self) -> int:
        return self.choices[0].shape[0]

    @classmethod
    def never_switch(cls, lat: Lattice, m: int, initial_mode: int = 0) -> "SwitchingStrategy":
        return cls(lat, tuple(np.repeat(np.arange(m)[:, None], lat.node_count(n), axis=1)
                              for n in range(lat.steps)), initial_mode)

    @classmethod
    def from_function(cls, lat: Lattice, m: int, func, initial_mode: int = 0) -> "SwitchingStrategy":
        """Build from ``func(level, node, mode) -> mode``."""
        return cls(lat, tuple(
            np.array([[func(n, p, i) for p in range(lat.node_count(n))] for i in range(m)], dtype=np.int64)
            for n in range(lat.steps)), initial_mode)

    @classmethod
    def decode(cls, index: int, lat: Lattice, m: int, initial_mode: int = 0) -> "SwitchingStrategy":
        levels = _decode_strategies(np.array([index], dtype=np.int64), lat.steps, m)
        return cls(lat, tuple(c[0] for c in levels), initial_mode)

    def encode(self) -> int:
        """Position of this strategy in the oracle's enumeration order (full trees)."""
        m = self.mode_count
        index = 0
        for n, c in enumerate(self.choices):
            for p in range(c.shape[1]):
                for i in range(m):
                    index += int(c[i, p]) * m ** ((_offset(n) + p) * m + i)
        return index

    def running_modes(self) -> list[np.ndarray]:
        """Mode run from every node, starting in ``initial_mode`` (full trees only)."""
        if self.lattice.kind != FULL_TREE:
            raise ValueError("path modes are node functions only on a full tree")
        out = []
        arriving = np.array([self.initial_mode])
        for n, c in enumerate(self.choices):
            running = c[arriving, np.arange(c.shape[1])]
            out.append(running)
            arriving = np.repeat(running, 2)
        return out

    def switch_sequence(self, path: int) -> list[tuple[float, int]]:
        """Switching times and modes ``[(theta_0, alpha_0), ...]`` along a terminal path word.

        ``path`` is a terminal node index of the full tree; bit ``N - 1 - n``
        of it is the move taken after level ``n``.  The first entry is
        ``(0, initial_mode)``; a switch at the root adds a second entry at
        time 0.
        """
        lat = self.lattice
        N = lat.steps
        seq = [(0.0, self.initial_mode)]
        mode = self.initial_mode
        for n in range(N):
            p = path >> (N - n)
            nxt = int(self.choices[n][mode, p])
            if nxt != mode:
                seq.append((lat.time(n), nxt))
                mode = nxt
        return seq


@dataclass(frozen=True)
class StoppingRule:
    """Stop the first time the path reaches a node flagged in ``stops``."""

    lattice: Lattice
    stops: tuple

    def __post_init__(self):
        if len(self.stops) != self.lattice.steps:
            raise ValueError("a stopping rule needs one flag array per non-terminal level")
        for n, s in enumerate(self.stops):
            if s.shape != (self.lattice.node_count(n),):
                raise ValueError(f"stopping rule level {n} has shape {s.shape}")

    @classmethod
    def never(cls, lat: Lattice) -> "StoppingRule":
        return cls(lat, tuple(np.zeros(lat.node_count(n), dtype=bool) for n in range(lat.steps)))

    @classmethod
    def at_root(cls, lat: Lattice) -> "StoppingRule":
        stops = [np.zeros(lat.node_count(n), dtype=bool) for n in range(lat.steps)]
        stops[0][0] = True
        return cls(lat, tuple(stops))

    @classmethod
    def decode(cls, index: int, lat: Lattice) -> "StoppingRule":
        return cls(lat, tuple(s[0] for s in _decode_rules(np.array([index], dtype=np.int64), lat.steps)))

    def encode(self) -> int:
        return sum(1 << (_offset(n) + int(p)) for n, s in enumerate(self.stops) for p in np.flatnonzero(s))

    def stopping_level(self, path: int) -> int:
        N = self.lattice.steps
        for n in range(N):
            if self.stops[n][path >> (N - n)]:
                return n
        return N


@dataclass(frozen=True)
class SwitchedSolution:
    """Values of the switched reflected equation under one strategy.

    ``U[n][j, p]``: value at node ``p`` while running mode ``j``;
    ``W[n][i, p]``: value on arrival in mode ``i`` (after the switch cost);
    ``V`` and ``dL`` are the martingale integrand and the upper-reflection
    increments for each running mode.
    """

    strategy: SwitchingStrategy
    U: tuple
    W: tuple
    V: tuple
    dL: tuple

    @property
    def value(self) -> float:
        return float(self.W[0][self.strategy.initial_mode, 0])


def _decode_strategies(indices: np.ndarray, N: int, m: int) -> list[np.ndarray]:
    states = m * _offset(N)
    pos = np.arange(states, dtype=np.int64)
    digits = (indices[:, None] // (np.int64(m) ** pos)[None, :]) % m
    out = []
    for n in range(N):
        block = digits[:, _offset(n) * m:(_offset(n) + (1 << n)) * m]
        out.append(block.reshape(len(indices), 1 << n, m).transpose(0, 2, 1))
    return out


def _decode_rules(indices: np.ndarray, N: int) -> list[np.ndarray]:
    return [((indices[:, None] >> (_offset(n) + np.arange(1 << n, dtype=np.int64))[None, :]) & 1).astype(bool)
            for n in range(N)]


def _switch_values(spec: ProblemSpec, t: float, U: np.ndarray) -> np.ndarray:
    """``H[..., i, j, :] = h_ij(t, U[..., j, :])`` with ``H[..., i, i, :] = U[..., i, :]``."""
    m = spec.mode_count
    if isinstance(spec.costs, LinearCosts):
        return U[..., None, :, :] - spec.costs.matrix[:, :, None]
    H = np.repeat(U[..., None, :, :], m, axis=-3)
    for i in range(m):
        for j in range(m):
            if i != j:
                H[..., i, j, :] = spec.costs.h(i, j, t, U[..., j, :])
    return H


def _backward(spec, lat, choices, stops=None, reflect=True, keep=False):
    """Backward recursion for a batch of strategies (and stopping rules).

    ``choices[n]``: shape ``(A, m, nodes)``.  ``stops[n]``: shape
    ``(R, nodes)`` or None.  Values carry the batch prefix ``(A,)`` or
    ``(A, R)`` followed by ``(m, nodes)``.
    """
    N = lat.steps
    m = spec.mode_count
    W = spec.terminal_values(lat.states(N))
    A = choices[0].shape[0]
    prefix = (A,) if stops is None else (A, stops[0].shape[0])
    W = np.broadcast_to(W, prefix + W.shape)
    levels = []
    for n in range(N - 1, -1, -1):
        t = lat.time(n)
        e = cond_expect(lat, n, W)
        z = cond_expect_dw(lat, n, W)
        cont = np.stack([driver_step(e[..., j, :], z[..., j, :], t, j, spec, lat.dt) for j in range(m)], axis=-2)
        S = spec.barriers(t, lat.states(n))
        if reflect:
            U = np.minimum(S, cont)
        else:
            U = cont
        if stops is not None:
            U = np.where(stops[n][None, :, None, :], S, U)
        H = _switch_values(spec, t, U)
        sigma = choices[n] if stops is None else choices[n][:, None]
        W = np.take_along_axis(H, sigma[..., None, :], axis=-2)[..., 0, :]
        if keep:
            levels.append((U, W, z, cont - U))
    return W[..., 0], levels[::-1]


def evaluate_switched(spec: ProblemSpec, tree: Lattice, strategy: SwitchingStrategy) -> SwitchedSolution:
    """Solve the switched equation with a single upper reflection under ``strategy``."""
    if strategy.lattice != tree or strategy.mode_count != spec.mode_count:
        raise ValueError("strategy was built for a different lattice or mode count")
    _, levels = _backward(spec, tree, [c[None] for c in strategy.choices], keep=True)
    W_terminal = spec.terminal_values(tree.states(tree.steps))
    U = tuple(l[0][0] for l in levels) + (W_terminal,)
    W = tuple(l[1][0] for l in levels) + (W_terminal,)
    return SwitchedSolution(strategy, U, W, tuple(l[2][0] for l in levels), tuple(l[3][0] for l in levels))


def evaluate_game(spec: ProblemSpec, tree: Lattice, strategy: SwitchingStrategy, rule: StoppingRule) -> float:
    """Payoff of the unreflected switched equation stopped by ``rule``.

    A stopped node pays the barrier of the mode running there; the terminal
    level pays the terminal payoff.
    """
    if strategy.lattice != tree or rule.lattice != tree:
        raise ValueError("strategy and rule must be built on the evaluation lattice")
    root, _ = _backward(spec, tree, [c[None] for c in strategy.choices],
                        stops=[s[None] for s in rule.stops], reflect=False)
    return float(root[0, 0, strategy.initial_mode])


def extract_optimal_strategy(sol, spec: ProblemSpec, lat: Lattice | None = None, initial_mode: int = 0,
                             tol: float = 1e-11):
    """Read the optimal feedback strategy and stopping rule off value surfaces.

    Arriving in mode ``i`` at a node, switch when ``Y_i`` sits on its lower
    barrier (within ``tol``), choosing the smallest index attaining it.  The
    rule stops where the running mode's value meets its upper barrier; it is
    a node predicate only on a full tree and is ``None`` otherwise.
    """
    lat = lat or sol.lattice
    m = spec.mode_count
    choices = []
    for n in range(lat.steps):
        t = lat.time(n)
        Y = sol.Y[n]
        H = _switch_values(spec, t, Y)
        idx = np.arange(m)
        H[idx, idx, :] = -np.inf
        best = H.max(axis=1)
        binding = H >= Y[:, None, :] - tol
        first = np.argmax(binding, axis=1)
        switch = Y <= best + tol
        choices.append(np.where(switch, first, idx[:, None]).astype(np.int64))
    strategy = SwitchingStrategy(lat, tuple(choices), initial_mode)
    if lat.kind != FULL_TREE:
        return strategy, None
    stops = []
    for n, running in enumerate(strategy.running_modes()):
        nodes = np.arange(lat.node_count(n))
        S = spec.barriers(lat.time(n), lat.states(n))
        stops.append(sol.Y[n][running, nodes] >= S[running, nodes] - tol)
    return strategy, StoppingRule(lat, tuple(stops))


@dataclass
class OracleResult:
    initial_mode: int
    best_value: float
    best_strategy: SwitchingStrategy
    n_strategies: int
    n_rules: int = 0
    minmax: float | None = None
    maxmin: float | None = None
    minmax_rule: StoppingRule | None = None
    maxmin_strategy: SwitchingStrategy | None = None
    switched_values: np.ndarray | None = field(default=None, repr=False)
    payoffs: np.ndarray | None = field(default=None, repr=False)


def _guard(m: int, depth: int, games: bool) -> tuple[int, int]:
    states = m * _offset(depth)
    if states > MAX_ORACLE_STATES:
        raise OracleGuardError(f"{states} feedback states exceed the limit of {MAX_ORACLE_STATES}", count=states)
    n_strat = m ** states
    n_rules = 1 << _offset(depth) if games else 1
    if n_strat * n_rules > MAX_ORACLE_PAIRS:
        raise OracleGuardError(f"{n_strat} strategies x {n_rules} rules exceed {MAX_ORACLE_PAIRS}",
                               count=n_strat * n_rules)
    return n_strat, n_rules


def _oracle_tables(spec: ProblemSpec, tree: Lattice, games: bool = True):
    """Root values of every strategy (and every strategy/rule pair), all initial modes."""
    m, N = spec.mode_count, tree.steps
    n_strat, n_rules = _guard(m, N, games)
    per_strategy = (n_rules if games else 1) * m * m * (1 << N)
    chunk = max(1, _CHUNK_ELEMENTS // per_strategy)
    bounds = [(a, min(a + chunk, n_strat)) for a in range(0, n_strat, chunk)]
    rules = _decode_rules(np.arange(n_rules, dtype=np.int64), N) if games else None

    def run(bound):
        idx = np.arange(*bound, dtype=np.int64)
        choices = _decode_strategies(idx, N, m)
        switched, _ = _backward(spec, tree, choices)
        payoff = _backward(spec, tree, choices, stops=rules, reflect=False)[0] if games else None
        return switched, payoff

    parts = ordered_map(run, bounds)
    switched = np.concatenate([p[0] for p in parts])
    payoff = np.concatenate([p[1] for p in parts]) if games else None
    return switched, payoff


def _result_for_mode(tree, m, i, switched, payoff):
    a_best = int(np.argmax(switched[:, i]))
    res = OracleResult(
        initial_mode=i,
        best_value=float(switched[a_best, i]),
        best_strategy=SwitchingStrategy.decode(a_best, tree, m, i),
        n_strategies=switched.shape[0],
        switched_values=switched[:, i],
    )
    if payoff is not None:
        P = payoff[:, :, i]
        per_rule = P.max(axis=0)
        per_strategy = P.min(axis=1)
        r_star, a_star = int(np.argmin(per_rule)), int(np.argmax(per_strategy))
        res.n_rules = P.shape[1]
        res.minmax = float(per_rule[r_star])
        res.maxmin = float(per_strategy[a_star])
        res.minmax_rule = StoppingRule.decode(r_star, tree)
        res.maxmin_strategy = SwitchingStrategy.decode(a_star, tree, m, i)
        res.payoffs = P
    return res


def enumerate_oracle(spec: ProblemSpec, depth: int = 3, initial_mode: int = 0, games: bool = True) -> OracleResult:
    """Exhaustive optimum over all feedback strategies (and stopping rules) on a full tree."""
    if not 0 <= initial_mode < spec.mode_count:
        raise ValueError("initial mode out of range")
    tree = build_lattice(spec.horizon, depth, FULL_TREE)
    switched, payoff = _oracle_tables(spec, tree, games)
    return _result_for_mode(tree, spec.mode_count, initial_mode, switched, payoff)


@dataclass
class ModeVerification:
    initial_mode: int
    y0: float
    best_value: float
    minmax: float
    maxmin: float
    extracted_value: float
    saddle_value: float
    gaps: dict
    passed: bool
    counterexample: dict | None = None


@dataclass
class VerificationReport:
    depth: int
    tol: float
    modes: list
    n_strategies: int
    n_rules: int

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.modes)

    @property
    def worst_gap(self) -> float:
        return max(max(m.gaps.values()) for m in self.modes)

    def to_dict(self):
        return {
            "passed": self.passed,
            "depth": self.depth,
            "tol": self.tol,
            "worst_gap": self.worst_gap,
            "n_strategies": self.n_strategies,
            "n_rules": self.n_rules,
            "modes": [
                {
                    "initial_mode": m.initial_mode,
                    "Y0": m.y0,
                    "best_value": m.best_value,
                    "minmax": m.minmax,
                    "maxmin": m.maxmin,
                    "extracted_value": m.extracted_value,
                    "saddle_value": m.saddle_value,
                    "gaps": m.gaps,
                    "passed": m.passed,
                    "counterexample": m.counterexample,
                }
                for m in self.modes
            ],
        }


def verify_representation(spec: ProblemSpec, depth: int = 3, opts: SolverOptions | None = None,
                          tol: float = 1e-10) -> VerificationReport:
    """Compare the direct solution with the exhaustive switching/stopping oracle.

    For every initial mode checks that ``Y_i(0)`` equals the best switched
    value and the min-max game value, that the extracted strategy attains
    ``Y_i(0)``, and that the extracted (strategy, rule) pair is a saddle point
    against every enumerated strategy and rule.
    """
    tree = build_lattice(spec.horizon, depth, FULL_TREE)
    sol = solve_direct(spec, tree, opts)
    switched, payoff = _oracle_tables(spec, tree, games=True)
    m = spec.mode_count
    modes = []
    for i in range(m):
        res = _result_for_mode(tree, m, i, switched, payoff)
        y0 = float(sol.Y[0][i, 0])
        strat, rule = extract_optimal_strategy(sol, spec, tree, initial_mode=i)
        extracted = evaluate_switched(spec, tree, strat).value
        a_hat, r_hat = strat.encode(), rule.encode()
        P = res.payoffs
        center = float(P[a_hat, r_hat])
        col, row = P[:, r_hat], P[a_hat, :]
        gaps = {
            "best_value": abs(y0 - res.best_value),
            "minmax": abs(y0 - res.minmax),
            "maxmin": abs(y0 - res.maxmin),
            "extracted_strategy": abs(extracted - y0),
            "saddle_value": abs(center - y0),
            "saddle_strategy_side": max(0.0, float(np.max(col)) - center),
            "saddle_rule_side": max(0.0, center - float(np.min(row))),
        }
        passed = all(g <= tol for g in gaps.values())
        counter = None
        if not passed:
            a_bad = int(np.argmax(col))
            r_bad = int(np.argmin(row))
            counter = {
                "extracted_strategy_index": a_hat,
                "extracted_rule_index": r_hat,
                "best_deviation_strategy_index": a_bad,
                "best_deviation_strategy_payoff": float(col[a_bad]),
                "best_deviation_rule_index": r_bad,
                "best_deviation_rule_payoff": float(row[r_bad]),
                "best_strategy_index": res.best_strategy.encode(),
            }
        modes.append(ModeVerification(i, y0, res.best_value, res.minmax, res.maxmin, extracted, center,
                                      gaps, passed, counter))
    return VerificationReport(depth, tol, modes, res.n_strategies, res.n_rules)
