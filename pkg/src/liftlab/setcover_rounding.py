"""Set cover rounding through the lifted bound-constrained polytope.

Fold the objective into the covering LP as the row sum c(S) x_S <= q, find
the least q whose level-d lift stays feasible by bisection, then condition d
times, always on the support set covering the most still-uncovered items.
What remains has only small residual sets, so the greedy finish certifies a
total cost of at most H(floor(n/d)) * q.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .convex import (
    DELTA_COND,
    EPS_FEAS,
    LPProblem,
    MomentVector,
    SubsetIndex,
    clean_moment_values,
    condition,
    lp_solve,
)
from .errors import InfeasibleError, NumericalError
from .greedy import GreedyReport, greedy_setcover
from .instances import SetCoverInstance, bits, harmonic, mask_of, popcount
from .sherali_adams import ExactRow, sa_lift

# Flat per-step amplification budget for row residuals under conditioning.
COND_ROW_TOL = 2 * EPS_FEAS / DELTA_COND


@dataclass(frozen=True)
class FeasibilityPolytopeQ:
    """Covering rows plus the folded objective row, all exact.

    ``rows`` holds the cover rows (one per item) followed by the cost row;
    the box rows 0 <= x_S <= 1 are implicit and added by the lift.
    """

    inst: SetCoverInstance
    q: Fraction
    rows: tuple[ExactRow, ...]


def build_Pq(inst: SetCoverInstance, q: Fraction) -> FeasibilityPolytopeQ:
    if q < 0:
        raise ValueError("cost bound q must be nonnegative")
    rows: list[ExactRow] = []
    for item in range(inst.n):
        coeffs = {s: Fraction(1) for s in range(inst.m) if inst.masks[s] >> item & 1}
        rows.append((coeffs, ">=", Fraction(1)))
    rows.append(({s: inst.costs[s] for s in range(inst.m)}, "<=", Fraction(q)))
    return FeasibilityPolytopeQ(inst=inst, q=Fraction(q), rows=tuple(rows))


def level_feasible(pq: FeasibilityPolytopeQ, d: int) -> tuple[bool, MomentVector | None]:
    """Feasibility of the level-d lift of the bounded polytope, as an LP.

    On success returns a witness moment vector of level d + 1 that minimizes
    the lifted cost among lift-feasible points.
    """
    if d < 1:
        raise ValueError("level d must be >= 1")
    m = pq.inst.m
    lifted = sa_lift(pq.rows, m, d)
    idx = SubsetIndex(m, d + 1)
    rows = []
    for coeffs, sense, rhs in lifted:
        rows.append(({idx.pos[mask]: float(a) for mask, a in coeffs.items()}, sense, float(rhs)))
    rows.append(({0: 1.0}, "==", 1.0))
    objective = {idx.pos[1 << s]: float(pq.inst.costs[s]) for s in range(m)}
    sol = lp_solve(LPProblem(n=len(idx), objective=objective, rows=rows))
    if sol.status == "infeasible":
        return False, None
    if sol.status != "optimal":
        raise NumericalError(f"lift LP failed: {sol.message}")
    values = {mask: float(sol.x[idx.pos[mask]]) for mask in idx.masks}
    witness = MomentVector(
        n=m, level=d + 1, values=clean_moment_values(values, snap_tol=10 * EPS_FEAS)
    )
    return True, witness


def binary_search_q(
    inst: SetCoverInstance, d: int
) -> tuple[Fraction, MomentVector]:
    """Least lift-feasible cost bound on the search grid, with its witness.

    Integer costs get exact integer bisection (so q* <= OPT exactly); for
    general rational costs the bisection narrows to
    delta_q = 1e-6 * (1 + sum of costs) and q* <= OPT + delta_q.
    """
    if not inst.coverable:
        raise InfeasibleError("universe is not coverable by the given sets")
    total = sum(inst.costs, Fraction(0))
    integral = all(c.denominator == 1 for c in inst.costs)

    def probe(q: Fraction):
        return level_feasible(build_Pq(inst, q), d)

    ok, witness = probe(total)
    if not ok:
        raise NumericalError("lift infeasible at the sum of all costs; solver failure")
    if integral:
        lo, hi = 0, int(total)
        while lo < hi:
            mid = (lo + hi) // 2
            ok, wit = probe(Fraction(mid))
            if ok:
                hi = mid
                witness = wit
            else:
                lo = mid + 1
        return Fraction(hi), witness
    delta_q = Fraction(1, 10**6) * (1 + total)
    lo, hi = Fraction(0), total
    while hi - lo > delta_q:
        mid = (lo + hi) / 2
        ok, wit = probe(mid)
        if ok:
            hi = mid
            witness = wit
        else:
            lo = mid
    return hi, witness


@dataclass(frozen=True)
class ConditioningStep:
    level_index: int            # d down to 1
    set_index: int
    alpha: int                  # uncovered items of the chosen set at pick time
    x_after: tuple[float, ...]
    max_row_violation: float


@dataclass(frozen=True)
class ConditioningTrace:
    d: int
    steps: tuple[ConditioningStep, ...]
    chosen: tuple[int, ...]            # conditioning order
    final_x: tuple[float, ...]
    final_support: tuple[int, ...]
    early_stop: bool
    ones_mask: int                     # sets at value 1 when the phase ended

    def verify(self, pq: FeasibilityPolytopeQ) -> list[str]:
        """Independent check of every trace invariant; returns violations."""
        problems: list[str] = []
        inst = pq.inst
        n = inst.n
        alphas = [s.alpha for s in self.steps]
        for a_prev, a_next in zip(alphas, alphas[1:]):
            if a_next > a_prev:
                problems.append("alpha sequence not monotone nonincreasing")
                break
        for step in self.steps:
            if step.alpha * (self.d - step.level_index + 1) > n:
                problems.append(
                    f"alpha bound violated at level {step.level_index}: {step.alpha}"
                )
        if not self.early_stop:
            integral = sum(
                1
                for v in self.final_x
                if v <= DELTA_COND or v >= 1 - DELTA_COND
            )
            if integral < self.d:
                problems.append(f"final solution integral in only {integral} coordinates")
            covered = inst.covered_by(mask_of(self.chosen))
            for s in self.final_support:
                if popcount(inst.masks[s] & ~covered) * self.d > n:
                    problems.append(f"residual set {s} exceeds n/d uncovered items")
        for step in self.steps:
            if step.max_row_violation > COND_ROW_TOL:
                problems.append(
                    f"row violation {step.max_row_violation:.3e} beyond budget at level {step.level_index}"
                )
        return problems


def _row_violation(pq: FeasibilityPolytopeQ, x: list[float]) -> float:
    worst = 0.0
    for coeffs, sense, rhs in pq.rows:
        value = sum(float(a) * x[s] for s, a in coeffs.items())
        gap = float(rhs) - value if sense == ">=" else value - float(rhs)
        worst = max(worst, gap)
    for v in x:
        worst = max(worst, -v, v - 1.0)
    return worst


def conditioning_phase(
    witness: MomentVector, pq: FeasibilityPolytopeQ, d: int
) -> ConditioningTrace:
    """Condition d times on the support set covering the most uncovered items.

    Stops early once the coordinates at value 1 cover the whole universe.
    Support may only shrink: a coordinate that falls below DELTA_COND stays
    out for the remainder of the phase.
    """
    inst = pq.inst
    y = witness
    active = set(y.support(DELTA_COND))
    covered = 0
    chosen: list[int] = []
    steps: list[ConditioningStep] = []
    early = False
    ones_mask = 0
    for level_index in range(d, 0, -1):
        x = y.singletons()
        ones_mask = mask_of(s for s in range(inst.m) if x[s] >= 1 - DELTA_COND)
        if inst.covered_by(ones_mask) == inst.universe_mask:
            early = True
            break
        pick = -1
        best_alpha = -1
        for s in sorted(active):
            alpha = popcount(inst.masks[s] & ~covered)
            if alpha > best_alpha:
                pick, best_alpha = s, alpha
        if pick < 0 or best_alpha <= 0:
            raise NumericalError(
                "support exhausted while universe items remain uncovered"
            )
        y = condition(y, pick)
        x_after = y.singletons()
        active = {s for s in active if x_after[s] >= DELTA_COND}
        active.add(pick)
        covered |= inst.masks[pick]
        chosen.append(pick)
        steps.append(
            ConditioningStep(
                level_index=level_index,
                set_index=pick,
                alpha=best_alpha,
                x_after=tuple(x_after),
                max_row_violation=_row_violation(pq, x_after),
            )
        )
    final_x = y.singletons()
    if not early:
        ones_mask = mask_of(s for s in range(inst.m) if final_x[s] >= 1 - DELTA_COND)
        if inst.covered_by(ones_mask) == inst.universe_mask:
            early = True
    return ConditioningTrace(
        d=d,
        steps=tuple(steps),
        chosen=tuple(chosen),
        final_x=tuple(final_x),
        final_support=tuple(sorted(active)),
        early_stop=early,
        ones_mask=ones_mask,
    )


@dataclass(frozen=True)
class LsRoundResult:
    report: GreedyReport
    q_star: Fraction
    certified_bound: Fraction      # harmonic(floor(n/d)) * q_star
    trace: ConditioningTrace
    d: int


def ls_round(inst: SetCoverInstance, d: int) -> LsRoundResult:
    """Full pipeline: bound bisection, conditioning, greedy finish.

    The returned cover provably costs at most harmonic(floor(n/d)) * q*,
    checked exactly before returning.
    """
    if d < 1:
        raise ValueError("level d must be >= 1")
    q_star, witness = binary_search_q(inst, d)
    pq = build_Pq(inst, q_star)
    trace = conditioning_phase(witness, pq, d)
    problems = trace.verify(pq)
    if problems:
        raise NumericalError("conditioning trace invariants failed: " + "; ".join(problems))

    if trace.early_stop:
        chosen = tuple(trace.chosen) + tuple(
            s for s in bits(trace.ones_mask) if s not in trace.chosen
        )
        report = GreedyReport(
            chosen=chosen,
            total_cost=sum((inst.costs[s] for s in chosen), Fraction(0)),
            steps=(),
            residual_bound=Fraction(0),
            preselected=tuple(trace.chosen),
        )
    else:
        pre = inst.covered_by(mask_of(trace.chosen))
        allowed = mask_of(s for s in trace.final_support if s not in trace.chosen)
        try:
            inner = greedy_setcover(inst, pre_covered=pre, restricted_to=allowed)
        except InfeasibleError as exc:
            raise NumericalError(f"residual greedy failed: {exc}") from exc
        chosen = tuple(trace.chosen) + inner.chosen
        report = GreedyReport(
            chosen=chosen,
            total_cost=sum((inst.costs[s] for s in trace.chosen), Fraction(0))
            + inner.total_cost,
            steps=inner.steps,
            residual_bound=inner.residual_bound,
            preselected=tuple(trace.chosen),
        )
    bound = harmonic(inst.n // d) * q_star
    if report.total_cost > bound:
        raise NumericalError(
            f"certified bound violated: cost {report.total_cost} > {bound}"
        )
    return LsRoundResult(
        report=report, q_star=q_star, certified_bound=bound, trace=trace, d=d
    )
