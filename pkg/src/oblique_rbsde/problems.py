"""Small reference problems and random problem generators."""

from __future__ import annotations

import numpy as np

from .model import GeneratorSpec, LinearCosts, ProblemSpec, ScalarField


def _const(values):
    return tuple(ScalarField.constant(v) for v in values)


def zero_problem(T: float = 1.0) -> ProblemSpec:
    """Two modes, zero generator and payoff, barrier 1: the solution is identically 0."""
    return ProblemSpec(2, T, GeneratorSpec.constant_rates([0.0, 0.0]), LinearCosts.uniform(2, 0.1),
                       _const([1.0, 1.0]), _const([0.0, 0.0]))


def two_rate_problem(T: float = 1.0, barrier: float = 10.0) -> ProblemSpec:
    """Mode 0 earns at rate 1, mode 1 earns nothing; switching costs 0.1."""
    return ProblemSpec(2, T, GeneratorSpec.constant_rates([1.0, 0.0]), LinearCosts.uniform(2, 0.1),
                       _const([barrier, barrier]), _const([0.0, 0.0]))


def capped_rate_problem(T: float = 1.0) -> ProblemSpec:
    """One mode earning at rate 1 with the value capped at 0.5."""
    return ProblemSpec(1, T, GeneratorSpec.constant_rates([1.0]), LinearCosts(((0.0,),)),
                       _const([0.5]), _const([0.0]))


def capped_two_rate_problem(T: float = 1.0) -> ProblemSpec:
    """Two-mode version of :func:`capped_rate_problem` with rates 1 and 0.5."""
    return ProblemSpec(2, T, GeneratorSpec.constant_rates([1.0, 0.5]), LinearCosts.uniform(2, 0.1),
                       _const([0.5, 0.5]), _const([0.0, 0.0]))


def martingale_problem(T: float = 1.0, m: int = 2) -> ProblemSpec:
    """Terminal payoff ``w`` with barriers ``w + 5``: barriers never bind."""
    return ProblemSpec(m, T, GeneratorSpec.constant_rates([0.0] * m), LinearCosts.uniform(m, 0.1),
                       tuple(ScalarField.affine(5.0, 1.0) for _ in range(m)),
                       tuple(ScalarField.affine(0.0, 1.0) for _ in range(m)))


def cyclic_problem(T: float = 1.0) -> ProblemSpec:
    """Three modes with rates (1, 0.5, 0) and uniform cost 0.1."""
    return ProblemSpec(3, T, GeneratorSpec.constant_rates([1.0, 0.5, 0.0]), LinearCosts.uniform(3, 0.1),
                       _const([10.0] * 3), _const([0.0] * 3))


def random_costs(rng: np.random.Generator, m: int, low: float = 0.05, high: float = 0.5) -> LinearCosts:
    """Random positive costs satisfying the strict triangle inequality.

    Drawing every entry from ``[low, high]`` with ``high < 2 * low`` would be
    too restrictive, so redraw until the strict inequality holds.
    """
    while True:
        k = rng.uniform(low, high, size=(m, m))
        np.fill_diagonal(k, 0.0)
        ok = all(k[i, j] + k[j, l] > k[i, l]
                 for i in range(m) for j in range(m) for l in range(m) if i != j and j != l)
        if ok:
            return LinearCosts(tuple(map(tuple, k)))


def random_problem(rng: np.random.Generator, m: int = 2, T: float = 1.0, y_coef: float = 0.0,
                   z_coef: float = 0.0) -> ProblemSpec:
    """Random problem satisfying every hypothesis.

    Rates are uniform on ``[-1, 1]``, costs on ``[0.05, 0.5]`` and the common
    constant barrier on ``[0.3, 5]``.  Terminal payoffs are clipped-affine with
    a shared slope; their intercepts and caps differ by less than the
    smallest cost so the payoff vector lies in the constraint region.
    ``y_coef`` and ``z_coef`` bound the magnitude of random ``b_i`` and
    ``c_i``.
    """
    costs = random_costs(rng, m)
    kmin = min(costs.k[i][j] for i in range(m) for j in range(m) if i != j) if m > 1 else 1.0
    barrier = rng.uniform(0.3, 5.0)
    slope = rng.uniform(-1.0, 1.0)
    base_cap = barrier - rng.uniform(0.0, 1.0)
    base_alpha = rng.uniform(-1.0, base_cap)
    spread = 0.9 * kmin
    terminals = []
    for _ in range(m):
        cap = base_cap - rng.uniform(0.0, spread)
        alpha = base_alpha + rng.uniform(0.0, spread)
        terminals.append(ScalarField.clipped_affine(alpha, slope, cap))
    gen = GeneratorSpec.constant_rates(
        rng.uniform(-1.0, 1.0, size=m).tolist(),
        rng.uniform(-y_coef, y_coef, size=m).tolist() if y_coef else None,
        rng.uniform(-z_coef, z_coef, size=m).tolist() if z_coef else None,
    )
    return ProblemSpec(m, T, gen, costs, _const([barrier] * m), tuple(terminals))
