"""Guess-then-greedy set cover approximation.

Enumerates every collection of at most d cover-sets, discards the sets that
would still contribute more than n/d uncovered items, finishes each guess
with the restricted greedy, and keeps the cheapest cover found.  The
certified approximation factor is H(floor(n/d)).
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from math import comb

from .errors import BudgetError, InfeasibleError
from .greedy import GreedyReport, greedy_setcover
from .instances import SetCoverInstance, harmonic, popcount


@dataclass(frozen=True)
class SubexpConfig:
    d: int
    cap: int | None = None      # max number of guessed collections (safety valve)
    jobs: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("guess budget d must be >= 1")
        if self.cap is not None and self.cap < 1:
            raise ValueError("enumeration cap must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class SubexpResult:
    best: GreedyReport
    certified_ratio: Fraction | None   # None when the cap truncated enumeration
    iterations: int
    cap_exceeded: bool


def _candidate(inst: SetCoverInstance, guess: tuple[int, ...], d: int):
    """Run one guess; returns (cost, chosen-order, report) or None if skipped."""
    n = inst.n
    pre = 0
    for s in guess:
        pre |= inst.masks[s]
    allowed = 0
    reach = pre
    for s in range(inst.m):
        if popcount(inst.masks[s] & ~pre) * d <= n:
            allowed |= 1 << s
            reach |= inst.masks[s]
    if reach != inst.universe_mask:
        return None
    report = greedy_setcover(inst, pre_covered=pre, restricted_to=allowed)
    cost = report.total_cost + sum((inst.costs[s] for s in guess), Fraction(0))
    return cost, guess + report.chosen, report


def guess_and_greedy(inst: SetCoverInstance, cfg: SubexpConfig) -> SubexpResult:
    """Best cover over all collections of at most d guessed sets.

    Collections are enumerated lexicographically by index set, smaller sizes
    first.  When the cap cuts enumeration short the result keeps the best
    cover so far but withdraws the approximation certificate.
    """
    if not inst.coverable:
        raise InfeasibleError("universe is not coverable by the given sets")
    d = cfg.d
    total_guesses = sum(comb(inst.m, j) for j in range(min(d, inst.m) + 1))
    limit = total_guesses if cfg.cap is None else min(cfg.cap, total_guesses)
    cap_exceeded = limit < total_guesses

    guesses = itertools.islice(
        itertools.chain.from_iterable(
            itertools.combinations(range(inst.m), j) for j in range(min(d, inst.m) + 1)
        ),
        limit,
    )

    def run(guess: tuple[int, ...]):
        return _candidate(inst, guess, d)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            candidates = list(pool.map(run, guesses, chunksize=64))
    else:
        candidates = [run(g) for g in guesses]

    best = None
    for cand in candidates:
        if cand is None:
            continue
        if best is None or (cand[0], cand[1]) < (best[0], best[1]):
            best = cand
    if best is None:
        raise BudgetError("enumeration cap hit before any covering guess was found")

    cost, order, inner = best
    guessed = order[: len(order) - len(inner.chosen)]
    report = GreedyReport(
        chosen=order,
        total_cost=cost,
        steps=inner.steps,
        residual_bound=inner.residual_bound,
        preselected=guessed,
    )
    ratio = None if cap_exceeded else harmonic(inst.n // d)
    return SubexpResult(
        best=report,
        certified_ratio=ratio,
        iterations=limit,
        cap_exceeded=cap_exceeded,
    )
