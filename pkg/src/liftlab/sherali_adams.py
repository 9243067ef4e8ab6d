"""Level-l lifting of covering LPs and the exact feasibility certificate.

For instances where every item lies in exactly f cover-sets, the assignment
y_A = (f-l-1)!/(f-l-1+|A|)! satisfies the whole level-l lifted LP whenever
f >= 3l.  Everything here is exact rational arithmetic: the lift rows, the
certificate, the two combinatorial inequality checks behind it, and the
integrality-gap experiment that reports how far the certificate pushes the
lifted LP value below the exact optimum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .errors import BudgetError, InstanceError, SizeLimitError
from .instances import (
    GenerationConfig,
    SetCoverInstance,
    exact_setcover_opt,
    gen_uniform_frequency_instance,
    instance_digest,
    popcount,
    serialize_setcover,
)

# Exact row over subset-indexed variables: (coeffs by mask, sense, rhs).
ExactRow = tuple[dict[int, Fraction], str, Fraction]

PAIR_BUDGET = 200_000


def sa_pairs(nvars: int, budget: int) -> Iterator[tuple[int, int]]:
    """Disjoint (P, E) bitmask pairs with |P| + |E| <= budget, deterministic order."""
    universe = list(range(nvars))
    for total in range(budget + 1):
        for psize in range(total + 1):
            esize = total - psize
            for pcombo in itertools.combinations(universe, psize):
                pmask = 0
                for i in pcombo:
                    pmask |= 1 << i
                rest = [i for i in universe if not pmask >> i & 1]
                for ecombo in itertools.combinations(rest, esize):
                    emask = 0
                    for i in ecombo:
                        emask |= 1 << i
                    yield pmask, emask


def count_sa_pairs(nvars: int, budget: int) -> int:
    total = 0
    for k in range(budget + 1):
        total += math.comb(nvars, k) * (2**k)
    return total


def _submasks(mask: int) -> Iterator[int]:
    """All subsets of a bitmask, including 0 and the mask itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def sa_lift(
    base_rows: Sequence[ExactRow],
    nvars: int,
    level: int,
    *,
    include_box: bool = True,
) -> list[ExactRow]:
    """Lift base rows (plus the 2n box rows) by every disjoint (P, E) pair.

    Each base row sum_j a_j x_j {sense} b becomes, for |P|+|E| <= level,

        sum_j a_j sum_{T subset E} (-1)^|T| y_{P|T|{j}}
            - b sum_{T subset E} (-1)^|T| y_{P|T}  {sense}  0.

    Row count is (len(base_rows) + 2*nvars) * #pairs when box rows are
    included.
    """
    if count_sa_pairs(nvars, level) > PAIR_BUDGET:
        raise BudgetError("lift enumeration budget exceeded")
    rows = list(base_rows)
    if include_box:
        for j in range(nvars):
            rows.append(({j: Fraction(1)}, ">=", Fraction(0)))
            rows.append(({j: Fraction(1)}, "<=", Fraction(1)))
    lifted: list[ExactRow] = []
    pairs = list(sa_pairs(nvars, level))
    for coeffs, sense, rhs in rows:
        for pmask, emask in pairs:
            out: dict[int, Fraction] = {}
            for sub in _submasks(emask):
                sign = -1 if popcount(sub) % 2 else 1
                base = pmask | sub
                for j, a in coeffs.items():
                    key = base | (1 << j)
                    out[key] = out.get(key, Fraction(0)) + sign * a
                if rhs:
                    out[base] = out.get(base, Fraction(0)) - sign * rhs
            out = {k: v for k, v in out.items() if v != 0}
            lifted.append((out, sense, Fraction(0)))
    return lifted


# ---------------------------------------------------------------------------
# The closed-form certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificateParams:
    """Uniform frequency f, lift level, and number of cover-set variables."""

    f: int
    level: int
    n: int

    def __post_init__(self):
        if self.level < 0:
            raise InstanceError("level must be nonnegative")
        if self.f < 1:
            raise InstanceError("frequency must be >= 1")
        if self.f < 3 * self.level:
            raise InstanceError("certificate requires frequency >= 3 * level")
        if self.f > self.n:
            raise InstanceError("frequency cannot exceed the number of cover-sets")


def certificate_value(f: int, level: int, a: int) -> Fraction:
    """Exact (f-l-1)! / (f-l-1+a)! for subset size a <= level + 1."""
    if f < 1 or level < 0 or f < 3 * level:
        raise InstanceError("certificate_value requires f >= max(1, 3*level)")
    if not 0 <= a <= level + 1:
        raise InstanceError(f"subset size {a} outside [0, level+1]")
    base = f - level - 1
    denom = 1
    for t in range(1, a + 1):
        denom *= base + t
    return Fraction(1, denom)


def certificate_table(f: int, level: int) -> tuple[Fraction, ...]:
    return tuple(certificate_value(f, level, a) for a in range(level + 2))


def box_form(f: int, level: int, e: int, p: int) -> Fraction:
    """Alternating inclusion-exclusion value of the lifted box form.

    Equals sum_{t=0}^{e} (-1)^t C(e,t) (f-l-1)!/(f-l-1+p+t)!, the value every
    lifted form with |E| = e, |P| = p takes at the certificate.
    """
    if e < 0 or p < 0:
        raise InstanceError("e and p must be nonnegative")
    total = Fraction(0)
    for t in range(e + 1):
        term = Fraction(math.comb(e, t)) * certificate_value(f, level, p + t)
        total += term if t % 2 == 0 else -term
    return total


def table_box_form(table: Sequence[Fraction], e: int, p: int) -> Fraction:
    """Same alternating sum evaluated on an arbitrary size-indexed table."""
    total = Fraction(0)
    for t in range(e + 1):
        term = Fraction(math.comb(e, t)) * table[p + t]
        total += term if t % 2 == 0 else -term
    return total


def check_box_inequality(x: int, e: int, p: int) -> tuple[bool, Fraction]:
    """Exact check of 0 <= sum_t (-1)^t C(e,t)/(x+t)! <= 1/(x-p)!.

    Requires the hypothesis 3x >= 5e (checked, not silently evaluated) and
    x >= p >= 0.  Returns (holds, middle value).
    """
    if e < 0 or p < 0:
        raise InstanceError("e and p must be nonnegative")
    if 3 * x < 5 * e:
        raise InstanceError(f"hypothesis 3x >= 5e violated (x={x}, e={e})")
    if x < p:
        raise InstanceError(f"x must be at least p (x={x}, p={p})")
    value = Fraction(0)
    for t in range(e + 1):
        term = Fraction(math.comb(e, t), math.factorial(x + t))
        value += term if t % 2 == 0 else -term
    upper = Fraction(1, math.factorial(x - p))
    return (0 <= value <= upper), value


def check_cover_inequality(f: int, level: int, e: int, p: int) -> tuple[bool, Fraction]:
    """Exact slack of (f - e) * B(e, p+1) - B(e, p) >= 0.

    Requires e < f - level and p + e <= level.  The slack is zero exactly
    when e = 0 and p = level, strictly positive otherwise.
    """
    if not e < f - level:
        raise InstanceError(f"requires e < f - level (e={e}, f={f}, level={level})")
    if p + e > level:
        raise InstanceError(f"requires p + e <= level (p={p}, e={e}, level={level})")
    slack = (f - e) * box_form(f, level, e, p + 1) - box_form(f, level, e, p)
    return slack >= 0, slack


# ---------------------------------------------------------------------------
# Certificate verification against a concrete instance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    feasible: bool
    violated: str | None
    mode: str
    rows_checked: int
    modes_agree: bool | None = None


def _uniform_frequency(inst: SetCoverInstance) -> int:
    freqs = inst.item_frequencies()
    f = freqs[0]
    if any(fi != f for fi in freqs):
        raise InstanceError("instance does not have uniform item frequency")
    return f


def _verify_direct(
    inst: SetCoverInstance, level: int, table: Sequence[Fraction]
) -> VerificationReport:
    m = inst.m
    if table[0] != 1:
        return VerificationReport(False, "normalization y_empty != 1", "direct", 1)
    cover_rows: list[ExactRow] = []
    for item in range(inst.n):
        coeffs = {
            s: Fraction(1) for s in range(m) if inst.masks[s] >> item & 1
        }
        cover_rows.append((coeffs, ">=", Fraction(1)))
    rows = sa_lift(cover_rows, m, level)
    checked = 1
    for coeffs, sense, _ in rows:
        value = Fraction(0)
        for mask, a in coeffs.items():
            value += a * table[popcount(mask)]
        checked += 1
        ok = value >= 0 if sense == ">=" else value <= 0
        if not ok:
            return VerificationReport(
                False, f"lifted row violated (value {value})", "direct", checked
            )
    # Upper side of the lifted box family.
    for pmask, emask in sa_pairs(m, level + 1):
        value = Fraction(0)
        for sub in _submasks(emask):
            sign = -1 if popcount(sub) % 2 else 1
            value += sign * table[popcount(pmask | sub)]
        checked += 1
        if not 0 <= value <= 1:
            return VerificationReport(
                False,
                f"box form out of [0,1] (|P|={popcount(pmask)}, |E|={popcount(emask)})",
                "direct",
                checked,
            )
    return VerificationReport(True, None, "direct", checked)


def _verify_symmetric(
    inst: SetCoverInstance, level: int, f: int, table: Sequence[Fraction]
) -> VerificationReport:
    m = inst.m
    if table[0] != 1:
        return VerificationReport(False, "normalization y_empty != 1", "symmetric", 1)
    checked = 1
    # Box forms, both sides, at budget level + 1.
    for total in range(level + 2):
        for p in range(total + 1):
            e = total - p
            if p + e > m:
                continue
            value = table_box_form(table, e, p)
            checked += 1
            if not 0 <= value <= 1:
                return VerificationReport(
                    False, f"box pattern (e={e}, p={p}) out of [0,1]", "symmetric", checked
                )
    # Cover rows reduce to overlap patterns (p, e, p1, e1).
    for total in range(level + 1):
        for p in range(total + 1):
            e = total - p
            for p1 in range(min(p, f) + 1):
                p0 = p - p1
                if p0 > m - f:
                    continue
                for e1 in range(min(e, f - p1) + 1):
                    e0 = e - e1
                    if e0 > m - f - p0:
                        continue
                    lhs = (f - p1 - e1) * table_box_form(table, e, p + 1)
                    lhs += p1 * table_box_form(table, e, p)
                    rhs = table_box_form(table, e, p)
                    checked += 1
                    if lhs < rhs:
                        return VerificationReport(
                            False,
                            f"cover pattern (p={p}, e={e}, p1={p1}, e1={e1}) violated",
                            "symmetric",
                            checked,
                        )
    return VerificationReport(True, None, "symmetric", checked)


def verify_certificate(
    inst: SetCoverInstance,
    level: int,
    *,
    mode: str = "both",
    table: Sequence[Fraction] | None = None,
) -> VerificationReport:
    """Check the certificate against the whole lifted LP of the instance.

    ``direct`` substitutes into every lifted row; ``symmetric`` checks the
    reduced overlap patterns.  With ``both`` the two verdicts must agree.
    A ``table`` override supports mutation testing.
    """
    f = _uniform_frequency(inst)
    params = CertificateParams(f=f, level=level, n=inst.m)
    if table is None:
        table = certificate_table(params.f, level)
    if mode == "direct":
        return _verify_direct(inst, level, table)
    if mode == "symmetric":
        return _verify_symmetric(inst, level, f, table)
    if mode != "both":
        raise ValueError(f"unknown mode {mode!r}")
    direct = _verify_direct(inst, level, table)
    symmetric = _verify_symmetric(inst, level, f, table)
    agree = direct.feasible == symmetric.feasible
    return VerificationReport(
        feasible=direct.feasible and symmetric.feasible,
        violated=direct.violated or symmetric.violated,
        mode="both",
        rows_checked=direct.rows_checked + symmetric.rows_checked,
        modes_agree=agree,
    )


# ---------------------------------------------------------------------------
# Integrality-gap experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    """Measured desk-scale gap next to the closed-form quantities.

    ``gap_ratio`` is exact optimum / (sum of lifted singleton values); the
    two formula bounds are reported separately and never asserted at desk
    scale.
    """

    n: int
    epsilon: Fraction
    gamma: Fraction
    seed: int
    frequency: int
    level: int
    singleton_value: Fraction
    lifted_objective: Fraction
    opt: Fraction | None
    gap_ratio: Fraction | None
    formula_bound: float
    formula_bound_exact_base: float
    certificate_feasible: bool
    instance_digest: str


def gap_level(cfg: GenerationConfig) -> int:
    """Lift level floor(gamma * (eps - eps^2) * n / (1 + gamma))."""
    eps = cfg.epsilon
    return math.floor(cfg.gamma * (eps - eps * eps) * cfg.n / (1 + cfg.gamma))


def gap_experiment(cfg: GenerationConfig) -> GapReport:
    """Generate a uniform-frequency instance, certify the lifted LP value,
    and compare with the exact optimum.

    Requires eta = epsilon^2, which makes the frequency (eps - eps^2) * n
    rounded down; the level then satisfies frequency >= 3 * level because
    gamma <= 1/2.
    """
    eps = cfg.epsilon
    if cfg.eta != eps * eps:
        raise InstanceError("gap experiment requires eta = epsilon^2")
    level = gap_level(cfg)
    f = cfg.frequency
    if f < max(1, 3 * level):
        raise InstanceError("parameters give frequency below certificate requirements")
    inst = gen_uniform_frequency_instance(cfg)
    verdict = verify_certificate(inst, level, mode="both")
    singleton = certificate_value(f, level, 1)
    lifted_obj = cfg.n * singleton
    opt: Fraction | None = None
    ratio: Fraction | None = None
    try:
        opt_cost, _ = exact_setcover_opt(inst)
        opt = opt_cost
        ratio = opt / lifted_obj
    except SizeLimitError:
        pass
    ln_n = math.log(cfg.n)
    formula = float((1 - eps) / (1 + cfg.gamma)) * ln_n
    formula_exact = float((eps - eps * eps) / (1 + cfg.gamma)) / math.log(float(1 + eps)) * ln_n
    return GapReport(
        n=cfg.n,
        epsilon=eps,
        gamma=cfg.gamma,
        seed=cfg.seed,
        frequency=f,
        level=level,
        singleton_value=singleton,
        lifted_objective=lifted_obj,
        opt=opt,
        gap_ratio=ratio,
        formula_bound=formula,
        formula_bound_exact_base=formula_exact,
        certificate_feasible=verdict.feasible,
        instance_digest=instance_digest(serialize_setcover(inst)),
    )
