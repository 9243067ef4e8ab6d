"""Shared convex machinery: LP solving, moment vectors and matrices, PSD
certification, conditioning, and a desk-scale SDP solver.

The SDP solver runs an alternating-projection feasibility core (project onto
the PSD cone in matrix space, onto the linear rows and box in coefficient
space) and bisects on the objective, treating "objective >= theta" as one
more row.  All tolerances live here so reports can name them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import NumericalError
from .instances import popcount

# Centralized tolerances; every guarantee statement in reports names these.
EPS_FEAS = 1e-7          # LP feasibility
TAU_LIN = 1e-6           # SDP linear residual
TAU_PSD = 1e-6           # SDP minimum eigenvalue
DELTA_COND = 1e-6        # conditioning support threshold
OBJ_REL_TOL = 1e-5       # objective bisection: delta = OBJ_REL_TOL * (1 + |obj|)

# Declared budget for how much one conditioning step may amplify row residuals.
COND_ROW_BUDGET = 2 * EPS_FEAS / DELTA_COND


# ---------------------------------------------------------------------------
# Linear programming
# ---------------------------------------------------------------------------

Row = tuple[dict[int, float], str, float]   # (coeffs by var index, sense, rhs)


@dataclass
class LPProblem:
    """Box-bounded LP: minimize c.x subject to rows and lb <= x <= ub."""

    n: int
    objective: dict[int, float]
    rows: list[Row]
    lb: float | Sequence[float] = 0.0
    ub: float | Sequence[float] = 1.0


@dataclass
class LPSolution:
    status: str                    # "optimal" | "infeasible" | "error"
    x: np.ndarray | None = None
    value: float | None = None
    max_violation: float = 0.0
    farkas: dict | None = None
    message: str = ""


def _bounds_arrays(p: LPProblem) -> tuple[np.ndarray, np.ndarray]:
    lb = np.full(p.n, p.lb, dtype=float) if np.isscalar(p.lb) else np.asarray(p.lb, dtype=float)
    ub = np.full(p.n, p.ub, dtype=float) if np.isscalar(p.ub) else np.asarray(p.ub, dtype=float)
    if not (np.isfinite(lb).all() and np.isfinite(ub).all()):
        raise ValueError("lp_solve requires finite box bounds on all variables")
    return lb, ub


def _assemble(p: LPProblem):
    """Split rows into <= and == sparse matrices (>= rows are negated)."""
    ub_data, ub_rows, ub_cols, ub_rhs = [], [], [], []
    eq_data, eq_rows, eq_cols, eq_rhs = [], [], [], []
    for coeffs, sense, rhs in p.rows:
        if sense == "==":
            r = len(eq_rhs)
            for j, a in coeffs.items():
                eq_rows.append(r)
                eq_cols.append(j)
                eq_data.append(a)
            eq_rhs.append(rhs)
            continue
        sign = 1.0 if sense == "<=" else -1.0
        r = len(ub_rhs)
        for j, a in coeffs.items():
            ub_rows.append(r)
            ub_cols.append(j)
            ub_data.append(sign * a)
        ub_rhs.append(sign * rhs)
    A_ub = (
        sparse.csr_matrix((ub_data, (ub_rows, ub_cols)), shape=(len(ub_rhs), p.n))
        if ub_rhs
        else None
    )
    A_eq = (
        sparse.csr_matrix((eq_data, (eq_rows, eq_cols)), shape=(len(eq_rhs), p.n))
        if eq_rhs
        else None
    )
    return A_ub, np.array(ub_rhs), A_eq, np.array(eq_rhs)


def _synthesize_farkas(p: LPProblem, A_ub, b_ub, A_eq, b_eq, lb, ub) -> dict | None:
    """Infeasibility certificate from the duals of the elastic relaxation.

    Solves min t with every row relaxed by t; at an optimum with t > 0 the
    duals aggregate into a single row whose best value over the box still
    exceeds its right-hand side.  The certificate is verified before being
    returned.
    """
    blocks = []
    rhs_parts = []
    if A_ub is not None:
        blocks.append(A_ub)
        rhs_parts.append(b_ub)
    if A_eq is not None:
        blocks.append(A_eq)
        rhs_parts.append(b_eq)
        blocks.append(-A_eq)
        rhs_parts.append(-b_eq)
    if not blocks:
        return None
    A_all = sparse.vstack([sparse.hstack([B, -np.ones((B.shape[0], 1))]) for B in blocks])
    b_all = np.concatenate(rhs_parts)
    c = np.zeros(p.n + 1)
    c[-1] = 1.0
    bounds = [(lo, hi) for lo, hi in zip(lb, ub)] + [(0, None)]
    res = linprog(c, A_ub=A_all, b_ub=b_all, bounds=bounds, method="highs")
    if res.status != 0 or res.fun is None or res.fun <= 0:
        return None
    duals = -np.asarray(res.ineqlin.marginals)   # >= 0 for <= rows
    duals = np.maximum(duals, 0.0)
    agg = np.zeros(p.n)
    agg_rhs = 0.0
    offset = 0
    for B, rp in zip(blocks, rhs_parts):
        y = duals[offset : offset + B.shape[0]]
        agg += B.T @ y
        agg_rhs += y @ rp
        offset += B.shape[0]
    box_min = float(np.where(agg > 0, agg * lb, agg * ub).sum())
    gap = box_min - agg_rhs
    if gap <= 0:
        return None
    return {
        "row_multipliers": duals.tolist(),
        "aggregated_rhs": float(agg_rhs),
        "aggregated_box_minimum": box_min,
        "gap": float(gap),
    }


def lp_solve(p: LPProblem) -> LPSolution:
    """Solve the LP; optimal within EPS_FEAS, or a verified Farkas certificate."""
    lb, ub = _bounds_arrays(p)
    c = np.zeros(p.n)
    for j, a in p.objective.items():
        c[j] = a
    A_ub, b_ub, A_eq, b_eq = _assemble(p)
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub if A_ub is not None else None,
        A_eq=A_eq,
        b_eq=b_eq if A_eq is not None else None,
        bounds=list(zip(lb, ub)),
        method="highs",
    )
    if res.status == 0:
        x = np.asarray(res.x)
        viol = 0.0
        if A_ub is not None:
            viol = max(viol, float(np.max(A_ub @ x - b_ub, initial=0.0)))
        if A_eq is not None:
            viol = max(viol, float(np.max(np.abs(A_eq @ x - b_eq), initial=0.0)))
        viol = max(viol, float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        if viol > EPS_FEAS:
            return LPSolution(
                status="error",
                x=x,
                max_violation=viol,
                message=f"solution residual {viol:.3e} exceeds EPS_FEAS",
            )
        return LPSolution(status="optimal", x=x, value=float(res.fun), max_violation=viol)
    if res.status == 2:
        cert = _synthesize_farkas(p, A_ub, b_ub, A_eq, b_eq, lb, ub)
        msg = "" if cert else "infeasible, but Farkas synthesis failed verification"
        return LPSolution(status="infeasible", farkas=cert, message=msg)
    return LPSolution(status="error", message=f"solver stall or failure (status {res.status})")


# ---------------------------------------------------------------------------
# Moment vectors and matrices
# ---------------------------------------------------------------------------


class SubsetIndex:
    """Canonical enumeration of subsets of [n] with size <= k.

    The empty set comes first, then singletons {0}..{n-1}, then larger sets;
    so positions 0..n line up with the basis vectors used for column
    extraction from a moment matrix.
    """

    def __init__(self, n: int, k: int):
        self.n = n
        self.k = min(k, n)
        masks: list[int] = []
        for size in range(self.k + 1):
            for combo in itertools.combinations(range(n), size):
                mask = 0
                for i in combo:
                    mask |= 1 << i
                masks.append(mask)
        self.masks: tuple[int, ...] = tuple(masks)
        self.pos: dict[int, int] = {mask: i for i, mask in enumerate(masks)}

    def __len__(self) -> int:
        return len(self.masks)


@dataclass
class MomentVector:
    """Values indexed by subsets of [n] (as bitmasks) up to ``level``."""

    n: int
    level: int
    values: dict[int, float]

    def get(self, mask: int) -> float:
        return self.values[mask]

    def singleton(self, i: int) -> float:
        return self.values[1 << i]

    def singletons(self) -> list[float]:
        return [self.values[1 << i] for i in range(self.n)]

    def support(self, tol: float = DELTA_COND) -> list[int]:
        return [i for i in range(self.n) if self.values[1 << i] >= tol]

    def copy(self) -> "MomentVector":
        return MomentVector(self.n, self.level, dict(self.values))


def clean_moment_values(values: dict[int, float], snap_tol: float) -> dict[int, float]:
    """Snap values that stray outside [0, 1] by at most ``snap_tol`` back in."""
    out = {}
    for mask, v in values.items():
        if -snap_tol <= v < 0.0:
            v = 0.0
        elif 1.0 < v <= 1.0 + snap_tol:
            v = 1.0
        out[mask] = v
    out[0] = 1.0
    return out


def integral_moment_vector(n: int, level: int, chosen: int) -> MomentVector:
    """Exact moments of a 0-1 point: y_A = 1 iff A is contained in ``chosen``."""
    level = min(level, n)
    idx = SubsetIndex(n, level)
    values = {mask: 1.0 if mask & ~chosen == 0 else 0.0 for mask in idx.masks}
    return MomentVector(n=n, level=level, values=values)


def product_moment_vector(n: int, level: int, x: Sequence[float]) -> MomentVector:
    """Rank-one product moments y_A = prod_{i in A} x_i."""
    level = min(level, n)
    idx = SubsetIndex(n, level)
    values = {}
    for mask in idx.masks:
        v = 1.0
        m = mask
        while m:
            low = m & -m
            v *= x[low.bit_length() - 1]
            m ^= low
        values[mask] = v
    return MomentVector(n=n, level=level, values=values)


@dataclass
class MomentMatrix:
    """Square matrix with rows/columns indexed by subsets; entry (A,B) = y_{A|B}."""

    mat: np.ndarray
    row_masks: tuple[int, ...]

    def column(self, i: int) -> np.ndarray:
        """Column for the singleton {i}; column 0 is the empty set."""
        return self.mat[:, 0] if i < 0 else self.mat[:, i + 1]


def build_moment_matrix(y: MomentVector, order: int | None = None) -> MomentMatrix:
    """Assemble the matrix over index sets of size <= order (default level//2)."""
    if y.level < 2:
        raise ValueError("moment matrix needs a vector of level >= 2")
    if order is None:
        order = y.level // 2
    idx = SubsetIndex(y.n, order)
    size = len(idx)
    mat = np.empty((size, size))
    for a, ma in enumerate(idx.masks):
        for b in range(a, size):
            union = ma | idx.masks[b]
            try:
                v = y.values[union]
            except KeyError as exc:
                raise ValueError(f"missing subset entry for mask {union:b}") from exc
            mat[a, b] = v
            mat[b, a] = v
    return MomentMatrix(mat=mat, row_masks=idx.masks)


def psd_check(mat: np.ndarray, tau: float = TAU_PSD) -> tuple[bool, float]:
    """Minimum eigenvalue of a symmetric matrix; PSD iff min_eig >= -tau."""
    mat = np.asarray(mat, dtype=float)
    scale = max(1.0, float(np.abs(mat).max(initial=0.0)))
    if float(np.abs(mat - mat.T).max(initial=0.0)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric within 1e-12")
    min_eig = float(np.linalg.eigvalsh(mat)[0])
    return min_eig >= -tau, min_eig


def condition(y: MomentVector, i: int) -> MomentVector:
    """Rescaled column restriction: y'_A = y_{A ∪ {i}} / y_{i}.

    Drops one level, pins the conditioned coordinate to exactly 1, preserves
    coordinates that were already integral (within DELTA_COND) bit for bit,
    and clips everything else into [0, 1].  Conditioning on a coordinate
    below DELTA_COND is refused; above 1 - DELTA_COND the column equals
    column 0, so the vector is simply restricted one level down.
    """
    bit = 1 << i
    if bit not in y.values:
        raise ValueError(f"variable {i} not present in the moment vector")
    xi = y.values[bit]
    if xi < DELTA_COND:
        raise ValueError(f"refusing to condition on coordinate {i} with mass {xi:.3e}")
    new_level = y.level if y.level >= y.n else y.level - 1
    if new_level < 1:
        raise ValueError("cannot condition a level-1 vector further")

    if xi >= 1.0 - DELTA_COND:
        values = {m: v for m, v in y.values.items() if popcount(m) <= new_level}
    else:
        values = {}
        for mask in y.values:
            if popcount(mask) > new_level:
                continue
            v = y.values[mask | bit] / xi
            if v < 0.0:
                v = 0.0
            elif v > 1.0:
                v = 1.0
            values[mask] = v
    # Integral coordinates pass through exactly.
    for j in range(y.n):
        if j == i:
            continue
        jb = 1 << j
        if jb in y.values:
            xj = y.values[jb]
            if xj <= DELTA_COND or xj >= 1.0 - DELTA_COND:
                values[jb] = xj
    values[0] = 1.0
    values[bit] = 1.0
    return MomentVector(n=y.n, level=new_level, values=values)


# ---------------------------------------------------------------------------
# SDP: alternating projections with objective bisection
# ---------------------------------------------------------------------------

SDP_MATRIX_ORDER_LIMIT = 400


@dataclass
class SDPProblem:
    """Maximize a linear function of moment entries subject to linear rows and
    PSD-ness of the induced moment matrix over index sets of size <= matrix_size.

    ``fixed_zero`` pins moment entries that every integral solution zeroes
    (e.g. index sets that cannot all fit in a knapsack).  Pinning them keeps
    the iteration inside the face the solutions live on, which is what makes
    the alternating projections converge geometrically.
    """

    n: int
    matrix_size: int
    rows: list[Row]
    objective: dict[int, float]
    fixed_zero: frozenset[int] = frozenset()

    @property
    def var_level(self) -> int:
        return min(2 * self.matrix_size, self.n)


@dataclass
class SDPSolution:
    status: str                  # "optimal" | "infeasible" | "stalled"
    y: MomentVector | None
    objective: float
    linear_residual: float
    min_eig: float
    probes: int
    cycles: int
    message: str = ""


class _APCore:
    """Alternating projections on one moment-structured feasibility system.

    Index sets pinned to zero are dropped from the matrix (their rows are
    structurally zero), which both shrinks the eigendecompositions and keeps
    the iteration on the face where the solutions live.
    """

    def __init__(self, prob: SDPProblem):
        self.prob = prob
        self.vind = SubsetIndex(prob.n, prob.var_level)
        self.N = len(self.vind)
        self.free = np.ones(self.N, dtype=bool)
        for mask in prob.fixed_zero:
            pos = self.vind.pos.get(mask)
            if pos is not None:
                self.free[pos] = False
        row_masks = [
            m for m in SubsetIndex(prob.n, prob.matrix_size).masks if m not in prob.fixed_zero
        ]
        size = len(row_masks)
        if size > SDP_MATRIX_ORDER_LIMIT:
            raise NumericalError(
                f"moment matrix order {size} exceeds desk-scale limit {SDP_MATRIX_ORDER_LIMIT}"
            )
        self.row_masks = row_masks
        u = np.empty((size, size), dtype=np.int64)
        for a, ma in enumerate(row_masks):
            for b, mb in enumerate(row_masks):
                u[a, b] = self.vind.pos[ma | mb]
        self.U = u
        counts = np.bincount(u.ravel(), minlength=self.N).astype(float)
        self.counts = np.maximum(counts, 1.0)
        self.averaged = counts > 0
        self.obj = np.zeros(self.N)
        for mask, a in prob.objective.items():
            self.obj[self.vind.pos[mask]] = a

    def row_matrix(self, rows: Iterable[Row]):
        data, ri, ci, rhs = [], [], [], []
        for coeffs, sense, r in rows:
            if sense == "==":
                raise ValueError("SDP rows must be inequalities")
            sign = 1.0 if sense == "<=" else -1.0
            k = len(rhs)
            for mask, a in coeffs.items():
                ri.append(k)
                ci.append(self.vind.pos[mask])
                data.append(sign * a)
            rhs.append(sign * r)
        R = sparse.csr_matrix((data, (ri, ci)), shape=(len(rhs), self.N))
        return R, np.array(rhs)

    def start_point(self) -> np.ndarray:
        y = np.full(self.N, 0.5)
        y[~self.free] = 0.0
        y[0] = 1.0
        return y

    def to_vector(self, y: np.ndarray) -> MomentVector:
        values = {mask: float(y[i]) for i, mask in enumerate(self.vind.masks)}
        return MomentVector(
            n=self.prob.n,
            level=self.prob.var_level,
            values=clean_moment_values(values, snap_tol=10 * TAU_LIN),
        )

    def residuals(self, y: np.ndarray, R, rhs) -> float:
        if R.shape[0] == 0:
            return 0.0
        return float(np.max(R @ y - rhs, initial=0.0))

    def _pin(self, y: np.ndarray) -> None:
        np.clip(y, 0.0, 1.0, out=y)
        y[~self.free] = 0.0
        y[0] = 1.0

    def _linear_phase(self, y: np.ndarray, R, rhs) -> np.ndarray:
        # A few projected-gradient steps on the violated rows.
        for _ in range(3):
            viol = R @ y - rhs
            act = viol > 0
            if not act.any():
                break
            g = R.T @ np.where(act, viol, 0.0)
            g[~self.free] = 0.0
            g[0] = 0.0
            Rg = R @ g
            denom = float((Rg[act] ** 2).sum())
            if denom <= 0:
                break
            alpha = float((viol[act] * Rg[act]).sum()) / denom
            y = y - alpha * g
            self._pin(y)
        return y

    def feasible_point(
        self,
        R,
        rhs,
        warm: np.ndarray | None,
        max_cycles: int,
        tau_lin: float = TAU_LIN,
        tau_psd: float = TAU_PSD,
    ) -> tuple[np.ndarray | None, float, float, int, bool]:
        """Anderson-accelerated alternating projections.

        One cycle maps y through the linear rows and then the PSD cone;
        Anderson extrapolation over a short history accelerates the
        composite fixed-point iteration.  Returns
        (y or None, lin_res, min_eig, cycles, stalled); the accepted point
        is measured, not assumed: its own rows and matrix satisfy the
        tolerances.
        """
        depth = 6
        y = self.start_point() if warm is None else warm.copy()
        self._pin(y)
        hist_y: list[np.ndarray] = []
        hist_g: list[np.ndarray] = []
        lin_res = np.inf
        min_eig = -np.inf
        best_v = np.inf
        best_cycle = 0
        for cycle in range(1, max_cycles + 1):
            mid = self._linear_phase(y.copy(), R, rhs)
            mat = mid[self.U]
            w, v = np.linalg.eigh(mat)
            min_eig = float(w[0])
            lin_res = self.residuals(mid, R, rhs)
            if lin_res <= tau_lin and min_eig >= -tau_psd:
                return mid, lin_res, min_eig, cycle, False
            violation = lin_res + max(0.0, -min_eig)
            if violation < 0.999 * best_v:
                best_v = violation
                best_cycle = cycle
            elif cycle - best_cycle >= 150 and best_v > 5 * max(tau_lin, tau_psd):
                # No progress for a long stretch: the sets do not intersect.
                return None, lin_res, min_eig, cycle, True
            wc = np.clip(w, 0.0, None)
            mat_psd = (v * wc) @ v.T
            g = np.bincount(self.U.ravel(), weights=mat_psd.ravel(), minlength=self.N)
            g /= self.counts
            g = np.where(self.averaged, g, mid)
            self._pin(g)

            hist_y.append(y)
            hist_g.append(g)
            if len(hist_y) > depth:
                hist_y.pop(0)
                hist_g.pop(0)
            y = g
            if len(hist_y) >= 2:
                resid = np.stack([gg - yy for yy, gg in zip(hist_y, hist_g)], axis=1)
                k = resid.shape[1]
                system = np.vstack([resid, np.ones((1, k))])
                target = np.zeros(system.shape[0])
                target[-1] = 1.0
                try:
                    alpha, *_ = np.linalg.lstsq(system, target, rcond=None)
                except np.linalg.LinAlgError:
                    alpha = None
                if alpha is not None and np.all(np.isfinite(alpha)) and np.abs(alpha).max() < 1e6:
                    cand = np.stack(hist_g, axis=1) @ alpha
                    self._pin(cand)
                    y = cand
        return None, lin_res, min_eig, max_cycles, False


# Tolerances for the final polish probe; conditioning divides eigenvalue
# slack by the conditioned masses, so the returned point is made much
# cleaner than TAU_PSD demands.
POLISH_TAU_LIN = 1e-10
POLISH_TAU_PSD = 1e-10


def sdp_solve(
    prob: SDPProblem,
    *,
    warm: MomentVector | None = None,
    objective_hi: float | None = None,
    max_cycles: int = 2000,
) -> SDPSolution:
    """Maximize the objective by bisection, each probe an AP feasibility run.

    The bisection climbs from the objective of an unconstrained feasible
    point, warm-starting every probe from the best point found so far; the
    gradual climb is what keeps each probe fast.  The returned point
    satisfies every row within TAU_LIN and has moment matrix minimum
    eigenvalue >= -TAU_PSD; its objective sits within
    OBJ_REL_TOL * (1 + |obj|) of the bisection's converged fixed point.
    The final point is polished at a slightly backed-off objective bound,
    where the feasible set regains interior, driving residuals to ~1e-10.
    """
    core = _APCore(prob)
    warm_arr = None
    if warm is not None:
        warm_arr = np.zeros(core.N)
        for i, mask in enumerate(core.vind.masks):
            warm_arr[i] = warm.values.get(mask, 0.0)
    cycles_total = 0
    probes = 0

    def probe(theta: float | None, start, cycles, tau_lin=TAU_LIN, tau_psd=TAU_PSD):
        nonlocal cycles_total, probes
        rows = prob.rows
        if theta is not None:
            rows = rows + [({m: a for m, a in prob.objective.items()}, ">=", theta)]
        R, rhs = core.row_matrix(rows)
        out = core.feasible_point(R, rhs, start, cycles, tau_lin, tau_psd)
        cycles_total += out[3]
        probes += 1
        return out

    y0, lin_res, min_eig, _, stalled = probe(None, warm_arr, max_cycles)
    if y0 is None:
        status = "infeasible" if stalled else "stalled"
        return SDPSolution(
            status=status,
            y=None,
            objective=float("nan"),
            linear_residual=lin_res,
            min_eig=min_eig,
            probes=probes,
            cycles=cycles_total,
            message="alternating-projection distance stalled" if stalled else "no convergence",
        )

    lo = float(core.obj @ y0)
    hi = objective_hi if objective_hi is not None else float(np.clip(core.obj, 0, None).sum())
    hi = max(hi, lo)
    best = y0
    best_res = (lin_res, min_eig)

    while hi - lo > OBJ_REL_TOL * (1.0 + abs(lo)):
        mid = 0.5 * (lo + hi)
        y, lin_res, min_eig, _, _ = probe(mid, best, max_cycles)
        if y is not None:
            lo = mid
            best = y
            best_res = (lin_res, min_eig)
        else:
            hi = mid

    # Polish just below the certified bound, where the set has interior again.
    backoff = lo - OBJ_REL_TOL * (1.0 + abs(lo))
    y, lin_res, min_eig, _, _ = probe(
        backoff, best, 4 * max_cycles, POLISH_TAU_LIN, POLISH_TAU_PSD
    )
    if y is not None:
        best = y
        best_res = (lin_res, min_eig)

    vec = core.to_vector(best)
    return SDPSolution(
        status="optimal",
        y=vec,
        objective=float(core.obj @ best),
        linear_residual=best_res[0],
        min_eig=best_res[1],
        probes=probes,
        cycles=cycles_total,
    )


def quadratic_form_gap(y: MomentVector, r: Sequence[float]) -> float:
    """Slack of the PSD quadratic-form inequality for reward vector r.

    Returns sum_i r_i sum_j r_j y_{ij} - (sum_i r_i y_i)^2, which is
    >= -TAU_PSD * |r|^2 whenever the order-2 moment matrix is PSD within
    TAU_PSD.
    """
    n = y.n
    lhs = 0.0
    for i in range(n):
        bi = 1 << i
        row = 0.0
        for j in range(n):
            row += r[j] * y.values[bi | (1 << j)]
        lhs += r[i] * row
    phi = sum(r[i] * y.values[1 << i] for i in range(n))
    return lhs - phi * phi
