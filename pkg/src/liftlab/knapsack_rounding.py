"""PSD-lift knapsack rounding.

Solve the level-L PSD lift of the knapsack LP once, then round recursively:
as long as some high-reward item is fractional, either its moment column
keeps enough of the objective (condition on it, losing at most a (1 - eps^2)
factor) or PSD-ness guarantees some other item whose column grows the
objective by more than (1 + eps^3); both steps drop one lift level.  The
threshold rho is a rounding parameter only: the lift is solved once and the
sweep reruns the rounding on fresh copies for every candidate threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .convex import (
    DELTA_COND,
    TAU_PSD,
    MomentVector,
    SDPProblem,
    SDPSolution,
    SubsetIndex,
    condition,
    quadratic_form_gap,
    sdp_solve,
)
from .errors import NumericalError
from .greedy import KnapsackGreedyReport, knapsack_modified_greedy
from .instances import KnapsackInstance

DESK_LEVEL_CAP = 6
LIFT_ITEM_LIMIT = 12


@dataclass(frozen=True)
class KSRoundConfig:
    epsilon: Fraction
    level: int | None = None     # None: ceil(1/eps^3) + ceil(1/eps), capped
    rho: Fraction | None = None

    def __post_init__(self):
        if not 0 < self.epsilon <= Fraction(3, 10):
            raise ValueError("epsilon must lie in (0, 0.3]")
        if self.level is not None and self.level < 1:
            raise ValueError("level must be >= 1")

    @property
    def effective_level(self) -> int:
        if self.level is not None:
            return self.level
        eps = self.epsilon
        nominal = math.ceil(1 / eps**3) + math.ceil(1 / eps)
        return min(nominal, DESK_LEVEL_CAP)


def build_knapsack_lift(inst: KnapsackInstance, level: int) -> SDPProblem:
    """Moment/PSD lift of the knapsack LP at the given level.

    Variables are subset moments; the capacity and box rows are imposed on
    every conditioned copy (multiplied through by each subset of at most
    level-1 items), so conditioning level-1 times still leaves an order-2
    PSD state satisfying the capacity row.
    """
    n = inst.n
    if n > LIFT_ITEM_LIMIT or level > DESK_LEVEL_CAP or level < 1:
        raise ValueError(
            f"desk-scale lift supports n <= {LIFT_ITEM_LIMIT}, 1 <= level <= {DESK_LEVEL_CAP}"
        )
    costs = [float(c) for c in inst.costs]
    cap = float(inst.capacity)
    rows = []
    for pre_mask in SubsetIndex(n, level - 1).masks:
        coeffs: dict[int, float] = {}
        for j in range(n):
            key = pre_mask | (1 << j)
            coeffs[key] = coeffs.get(key, 0.0) + costs[j]
        coeffs[pre_mask] = coeffs.get(pre_mask, 0.0) - cap
        rows.append(({k: v for k, v in coeffs.items() if v != 0.0}, "<=", 0.0))
        for j in range(n):
            if pre_mask >> j & 1:
                continue
            rows.append(({pre_mask | (1 << j): 1.0, pre_mask: -1.0}, "<=", 0.0))
    objective = {1 << i: float(inst.rewards[i]) for i in range(n)}
    # Index sets that cannot all fit carry zero moment in every integral
    # solution; pinning them keeps alternating projections on that face.
    var_level = min(2 * level, n)
    fixed = []
    for mask in SubsetIndex(n, var_level).masks:
        if sum((inst.costs[j] for j in range(n) if mask >> j & 1), Fraction(0)) > inst.capacity:
            fixed.append(mask)
    return SDPProblem(
        n=n,
        matrix_size=level,
        rows=rows,
        objective=objective,
        fixed_zero=frozenset(fixed),
    )


def knapsack_lp_opt(inst: KnapsackInstance) -> tuple[Fraction, list[Fraction]]:
    """Exact LP optimum of the fractional relaxation (greedy fill, one split item)."""
    x = [Fraction(0)] * inst.n
    remaining = inst.capacity
    value = Fraction(0)

    def key(i: int):
        c = inst.costs[i]
        if c == 0:
            return (0, Fraction(0), i)
        return (1, -inst.rewards[i] / c, i)

    for i in sorted(range(inst.n), key=key):
        if inst.costs[i] <= remaining:
            x[i] = Fraction(1)
            value += inst.rewards[i]
            remaining -= inst.costs[i]
        elif remaining > 0 and inst.costs[i] > 0:
            frac = remaining / inst.costs[i]
            x[i] = frac
            value += inst.rewards[i] * frac
            remaining = Fraction(0)
    return value, x


def solve_knapsack_lift(inst: KnapsackInstance, level: int) -> SDPSolution:
    """Solve the lift once; the LP value caps the bisection from above."""
    prob = build_knapsack_lift(inst, level)
    lp_value, _ = knapsack_lp_opt(inst)
    sol = sdp_solve(prob, objective_hi=float(lp_value))
    if sol.status != "optimal":
        raise NumericalError(f"knapsack lift solve failed: {sol.status} {sol.message}")
    return sol


@dataclass
class KSMomentState:
    """Rounding state: current moment vector plus remaining conditioning budget."""

    y: MomentVector
    budget: int

    def copy(self) -> "KSMomentState":
        return KSMomentState(y=self.y.copy(), budget=self.budget)


def initial_state(solution: SDPSolution, level: int) -> KSMomentState:
    return KSMomentState(y=solution.y.copy(), budget=level - 1)


@dataclass(frozen=True)
class KSStep:
    branch: str                  # "condition-keep" | "condition-gain"
    item: int
    x_item: float
    margin: float
    phi_before: float
    phi_after: float
    psd_gap: float               # quadratic-form slack at the new state
    big_item_mass: float         # max x_i over items too costly to still fit


@dataclass(frozen=True)
class KSRoundOutcome:
    report: KnapsackGreedyReport
    terminal_branch: str         # "greedy-integral" | "greedy-small-mass" | "budget-fallback"
    steps: tuple[KSStep, ...]
    rho: Fraction


def _colsums(y: MomentVector, r: Sequence[float]) -> list[float]:
    n = y.n
    out = []
    for i in range(n):
        bi = 1 << i
        out.append(sum(r[j] * y.values[bi | (1 << j)] for j in range(n)))
    return out


def _big_item_mass(inst: KnapsackInstance, x: Sequence[float]) -> float:
    """Max mass on items that no longer fit next to the forced-in ones."""
    ones = [i for i in range(inst.n) if x[i] >= 1 - DELTA_COND]
    used = sum((inst.costs[i] for i in ones), Fraction(0))
    worst = 0.0
    for i in range(inst.n):
        if i in ones:
            continue
        if inst.costs[i] > inst.capacity - used:
            worst = max(worst, x[i])
    return worst


def margin_tolerance(inst: KnapsackInstance) -> float:
    r2 = sum(float(r) ** 2 for r in inst.rewards)
    return 10 * TAU_PSD * r2


def check_increase_exists(
    inst: KnapsackInstance,
    y: MomentVector,
    s_rho: set[int],
    s0: set[int],
    s1: set[int],
    epsilon: Fraction,
) -> tuple[int, float]:
    """Item outside the threshold set whose column grows the objective.

    Returns the maximum-margin item i not in s_rho, s0, or s1 with
    colsum_i > (1 + eps^3) x_i phi (within the margin tolerance), verifying
    on the side that no x=1 item qualifies.  Failure beyond tolerance is a
    hard error carrying the full margin dump.
    """
    r = [float(v) for v in inst.rewards]
    x = y.singletons()
    phi = sum(ri * xi for ri, xi in zip(r, x))
    gain = float(1 + epsilon**3)
    colsums = _colsums(y, r)
    margins = {i: colsums[i] - gain * x[i] * phi for i in range(inst.n)}
    tol = margin_tolerance(inst)
    offenders = [i for i in sorted(s1 - s_rho) if margins[i] > tol]
    if offenders:
        raise NumericalError(
            f"x=1 items {offenders} pass the strict-increase test; margins {margins}"
        )
    candidates = [i for i in range(inst.n) if i not in s_rho and i not in s0 and i not in s1]
    if not candidates:
        raise NumericalError(f"no candidate items for the increase step; margins {margins}")
    best = max(candidates, key=lambda i: (margins[i], -i))
    if margins[best] <= -tol:
        raise NumericalError(
            f"no item passes the strict-increase test within tolerance; margins {margins}"
        )
    return best, margins[best]


def ks_round(
    inst: KnapsackInstance, state: KSMomentState, cfg: KSRoundConfig
) -> KSRoundOutcome:
    """One rounding run at a fixed threshold rho (must be set in cfg)."""
    if cfg.rho is None:
        raise ValueError("ks_round needs a threshold rho; use rho_sweep to try them all")
    rho = cfg.rho
    eps = cfg.epsilon
    keep = float(1 - eps**2)
    r = [float(v) for v in inst.rewards]
    y = state.y
    budget = state.budget
    steps: list[KSStep] = []

    while True:
        x = y.singletons()
        phi = sum(ri * xi for ri, xi in zip(r, x))
        s_rho = {i for i in range(inst.n) if inst.rewards[i] > rho}
        s0 = {i for i in range(inst.n) if x[i] <= DELTA_COND}
        s1 = {i for i in range(inst.n) if x[i] >= 1 - DELTA_COND}

        if s_rho <= (s0 | s1):
            report = knapsack_modified_greedy(inst, x)
            return KSRoundOutcome(report, "greedy-integral", tuple(steps), rho)

        rho_mass = sum(r[i] * x[i] for i in s_rho - s1)
        if rho_mass < float(eps) * phi:
            restrict = 0
            for i in range(inst.n):
                if i not in s_rho or i in s1:
                    restrict |= 1 << i
            report = knapsack_modified_greedy(inst, x, restrict=restrict)
            return KSRoundOutcome(report, "greedy-small-mass", tuple(steps), rho)

        if budget <= 0:
            report = knapsack_modified_greedy(inst, x)
            return KSRoundOutcome(report, "budget-fallback", tuple(steps), rho)

        colsums = _colsums(y, r)
        pick = -1
        branch = ""
        margin = 0.0
        for i in sorted(s_rho - s0 - s1):
            if colsums[i] >= keep * x[i] * phi:
                pick = i
                branch = "condition-keep"
                margin = colsums[i] - keep * x[i] * phi
                break
        if pick < 0:
            pick, margin = check_increase_exists(inst, y, s_rho, s0, s1, eps)
            branch = "condition-gain"
        y = condition(y, pick)
        budget -= 1
        x_new = y.singletons()
        phi_new = sum(ri * xi for ri, xi in zip(r, x_new))
        steps.append(
            KSStep(
                branch=branch,
                item=pick,
                x_item=x[pick],
                margin=margin,
                phi_before=phi,
                phi_after=phi_new,
                psd_gap=quadratic_form_gap(y, r),
                big_item_mass=_big_item_mass(inst, x_new),
            )
        )


@dataclass(frozen=True)
class KSSweepResult:
    best: KSRoundOutcome
    runs: tuple[KSRoundOutcome, ...]
    rho_values: tuple[Fraction, ...]
    opt: Fraction | None
    rho_matching_opt_threshold: Fraction | None
    sdp_objective: float


def rho_sweep(
    inst: KnapsackInstance,
    cfg: KSRoundConfig,
    *,
    solution: SDPSolution | None = None,
    opt: Fraction | None = None,
    jobs: int = 1,
) -> KSSweepResult:
    """Round once per candidate threshold in {0} | {r_i}, all from one solved lift.

    The best outcome wins by reward, ties to the smaller threshold.  When the
    exact optimum is supplied (or computable), the threshold whose cutoff set
    matches {i : r_i > eps * OPT} is recorded.
    """
    level = cfg.effective_level
    if solution is None:
        solution = solve_knapsack_lift(inst, level)
    rho_values = tuple([Fraction(0)] + [Fraction(r) for r in inst.rewards])
    base = initial_state(solution, level)

    def run(rho: Fraction) -> KSRoundOutcome:
        return ks_round(inst, base.copy(), KSRoundConfig(cfg.epsilon, cfg.level, rho))

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = tuple(pool.map(run, rho_values))
    else:
        runs = tuple(run(rho) for rho in rho_values)

    best = runs[0]
    for outcome in runs[1:]:
        if (outcome.report.reward, -outcome.rho) > (best.report.reward, -best.rho):
            best = outcome

    matching: Fraction | None = None
    if opt is None:
        try:
            from .instances import exact_knapsack_opt

            opt, _ = exact_knapsack_opt(inst)
        except Exception:
            opt = None
    if opt is not None:
        threshold = cfg.epsilon * opt
        target = {i for i in range(inst.n) if inst.rewards[i] > threshold}
        for rho in rho_values:
            if {i for i in range(inst.n) if inst.rewards[i] > rho} == target:
                matching = rho
                break
    return KSSweepResult(
        best=best,
        runs=runs,
        rho_values=rho_values,
        opt=opt,
        rho_matching_opt_threshold=matching,
        sdp_objective=solution.objective,
    )
