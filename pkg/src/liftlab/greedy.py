"""Greedy subroutines: weighted set cover greedy, the greedy cover ordering,
and the plain / modified knapsack greedy.

These are the primitives every rounding algorithm in the package calls, so
they accept pre-covered and restriction masks and break all ties by lowest
index for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import InfeasibleError
from .instances import KnapsackInstance, SetCoverInstance, harmonic, popcount

# Threshold under which a fractional coordinate counts as integral 0/1.
INTEGRAL_TOL = 1e-6


@dataclass(frozen=True)
class GreedyStep:
    set_index: int
    new_items: int
    density: Fraction


@dataclass(frozen=True)
class GreedyReport:
    """Outcome of a (possibly restricted) greedy set cover run.

    ``chosen`` lists preselected sets first, then greedy picks in pick order.
    ``residual_bound`` is the harmonic factor actually certified: H(b) with b
    the largest residual set size when the greedy started.
    """

    chosen: tuple[int, ...]
    total_cost: Fraction
    steps: tuple[GreedyStep, ...]
    residual_bound: Fraction
    preselected: tuple[int, ...] = ()


def greedy_setcover(
    inst: SetCoverInstance,
    pre_covered: int = 0,
    restricted_to: int | None = None,
) -> GreedyReport:
    """Iteratively add the minimum-density set among ``restricted_to``.

    Density of S is cost(S) / |S minus covered|; ties go to the lowest set
    index.  Raises when the restricted sets cannot cover the residual
    universe.
    """
    if restricted_to is None:
        restricted_to = (1 << inst.m) - 1
    allowed = [s for s in range(inst.m) if restricted_to >> s & 1]
    covered = pre_covered & inst.universe_mask
    b = 0
    for s in allowed:
        b = max(b, popcount(inst.masks[s] & ~covered))
    bound = harmonic(b)

    chosen: list[int] = []
    steps: list[GreedyStep] = []
    total = Fraction(0)
    universe = inst.universe_mask
    while covered != universe:
        best_s = -1
        best_density: Fraction | None = None
        uncovered = ~covered & universe
        for s in allowed:
            u = popcount(inst.masks[s] & uncovered)
            if u == 0:
                continue
            density = inst.costs[s] / u
            if best_density is None or density < best_density:
                best_s, best_density = s, density
        if best_s < 0:
            raise InfeasibleError("restricted sets cannot cover the residual universe")
        new = popcount(inst.masks[best_s] & uncovered)
        steps.append(GreedyStep(best_s, new, best_density))
        chosen.append(best_s)
        total += inst.costs[best_s]
        covered |= inst.masks[best_s]
    return GreedyReport(
        chosen=tuple(chosen),
        total_cost=total,
        steps=tuple(steps),
        residual_bound=bound,
    )


def greedy_order(cover: Sequence[int], inst: SetCoverInstance) -> tuple[int, ...]:
    """Order a feasible cover so each prefix obeys the n/i residual bound.

    Iteratively picks the cover-set with the most still-uncovered items
    (ties by index).  The output always satisfies
    |S_i minus union(S_1..S_{i'-1})| <= n/i' for all i' <= i, which
    ``check_order_bound`` verifies independently.
    """
    union = 0
    for s in cover:
        union |= inst.masks[s]
    if union != inst.universe_mask:
        raise InfeasibleError("input is not a feasible cover")
    remaining = sorted(set(cover))
    covered = 0
    order: list[int] = []
    while remaining:
        best_s = min(remaining, key=lambda s: (-popcount(inst.masks[s] & ~covered), s))
        order.append(best_s)
        covered |= inst.masks[best_s]
        remaining.remove(best_s)
    if not check_order_bound(inst, order):
        raise AssertionError("greedy ordering violated its residual bound")
    return tuple(order)


def check_order_bound(inst: SetCoverInstance, order: Sequence[int]) -> bool:
    """Independent checker for the ordering guarantee (recomputes from scratch)."""
    n = inst.n
    prefix = 0
    prefixes = [0]
    for s in order:
        prefix |= inst.masks[s]
        prefixes.append(prefix)
    for ip in range(1, len(order) + 1):
        before = prefixes[ip - 1]
        for i in range(ip - 1, len(order)):
            if popcount(inst.masks[order[i]] & ~before) * ip > n:
                return False
    return True


@dataclass(frozen=True)
class KnapsackGreedyReport:
    chosen: int                 # item bitmask
    reward: Fraction
    forced_in: int = 0
    forced_out: int = 0


def _ratio_order(inst: KnapsackInstance, items: Sequence[int]) -> list[int]:
    # Decreasing reward/cost; zero-cost items sort first; ties by index.
    def key(i: int):
        c = inst.costs[i]
        if c == 0:
            return (0, Fraction(0), i)
        return (1, -inst.rewards[i] / c, i)

    return sorted(items, key=key)


def knapsack_greedy(inst: KnapsackInstance) -> KnapsackGreedyReport:
    """Add items by decreasing reward/cost until the current one does not fit.

    Stops at the first non-fitting item (rather than skipping it), which is
    the variant whose reward R satisfies LP optimum <= R + max reward.
    """
    chosen, reward, _ = _greedy_fill(inst, list(range(inst.n)), inst.capacity)
    return KnapsackGreedyReport(chosen=chosen, reward=reward)


def _greedy_fill(
    inst: KnapsackInstance, items: Sequence[int], capacity: Fraction
) -> tuple[int, Fraction, Fraction]:
    chosen = 0
    reward = Fraction(0)
    remaining = capacity
    for i in _ratio_order(inst, items):
        if inst.costs[i] <= remaining:
            chosen |= 1 << i
            reward += inst.rewards[i]
            remaining -= inst.costs[i]
        else:
            break
    return chosen, reward, remaining


def knapsack_modified_greedy(
    inst: KnapsackInstance,
    x: Sequence[float | Fraction],
    restrict: int | None = None,
    *,
    integral_tol: float = INTEGRAL_TOL,
) -> KnapsackGreedyReport:
    """Greedy seeded by a fractional solution: force x=1 items in, x=0 out.

    Runs the plain greedy on the remaining fractional items of ``restrict``
    with the capacity left after the forced items.  Integrality of the float
    solution is judged within ``integral_tol``.
    """
    if restrict is None:
        restrict = (1 << inst.n) - 1
    forced_in = 0
    forced_out = 0
    fractional: list[int] = []
    for i in range(inst.n):
        if not restrict >> i & 1:
            continue
        v = x[i]
        if v >= 1 - integral_tol:
            forced_in |= 1 << i
        elif v <= integral_tol:
            forced_out |= 1 << i
        else:
            fractional.append(i)
    forced_cost = inst.cost_of(forced_in)
    if forced_cost > inst.capacity:
        raise InfeasibleError("forced-in items exceed capacity; solution was not feasible")
    fill, fill_reward, _ = _greedy_fill(inst, fractional, inst.capacity - forced_cost)
    return KnapsackGreedyReport(
        chosen=forced_in | fill,
        reward=inst.reward_of(forced_in) + fill_reward,
        forced_in=forced_in,
        forced_out=forced_out,
    )
