"""Problem instances, parsers, generators, and exact brute-force oracles.

Costs and rewards are exact rationals end to end; floating point is confined
to the convex solvers.  Item membership is stored as bitmasks over the
universe, which keeps the exact oracles (mask DP, branch and bound, gray-code
enumeration) fast at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import GenerationError, InfeasibleError, InstanceError, SizeLimitError

# Exact rationals: stdlib Fraction already stores lowest terms with a positive
# denominator at arbitrary precision.
Rational = Fraction

ORACLE_ITEM_LIMIT = 24          # hard cap for the exact set cover oracle
ORACLE_DP_ITEM_LIMIT = 20       # mask DP below this, branch and bound above
KNAPSACK_ENUM_LIMIT = 24        # hard cap for subset enumeration
KNAPSACK_DP_CAPACITY_LIMIT = 10**6


def parse_rational(value: object, *, what: str = "value") -> Fraction:
    """Parse a JSON scalar (int, decimal number, or "p/q" string) exactly."""
    if isinstance(value, bool):
        raise InstanceError(f"{what}: boolean is not a number")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # Interpret the decimal literal, not the binary float underneath.
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise InstanceError(f"{what}: cannot parse rational {value!r}") from exc
    raise InstanceError(f"{what}: expected number or 'p/q' string, got {type(value).__name__}")


def format_rational(value: Fraction) -> int | str:
    """Canonical JSON form: plain int when integral, else "p/q"."""
    if value.denominator == 1:
        return int(value)
    return f"{value.numerator}/{value.denominator}"


def harmonic(x) -> Fraction:
    """Exact harmonic number: sum of 1/k for k = 1..floor(x); 0 for x < 1."""
    if x < 0:
        raise ValueError("harmonic is defined for nonnegative arguments")
    k = math.floor(x)
    total = Fraction(0)
    for j in range(1, k + 1):
        total += Fraction(1, j)
    return total


def popcount(mask: int) -> int:
    return mask.bit_count()


def bits(mask: int) -> list[int]:
    """Indices of set bits, ascending."""
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def mask_of(indices: Iterable[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


# ---------------------------------------------------------------------------
# Set cover
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetCoverInstance:
    """Weighted set cover instance over a universe of ``n`` items.

    ``masks[s]`` is the item bitmask of cover-set ``s`` and ``costs[s]`` its
    exact nonnegative cost.
    """

    n: int
    masks: tuple[int, ...]
    costs: tuple[Fraction, ...]

    def __post_init__(self):
        if self.n < 1:
            raise InstanceError("universe must contain at least one item")
        if len(self.masks) < 1:
            raise InstanceError("instance must contain at least one cover-set")
        if len(self.masks) != len(self.costs):
            raise InstanceError("masks and costs length mismatch")
        full = self.universe_mask
        for s, mask in enumerate(self.masks):
            if mask & ~full:
                raise InstanceError(f"set {s}: item index out of range [0, {self.n})")
        for s, cost in enumerate(self.costs):
            if cost < 0:
                raise InstanceError(f"set {s}: negative cost {cost}")

    @property
    def m(self) -> int:
        return len(self.masks)

    @property
    def universe_mask(self) -> int:
        return (1 << self.n) - 1

    @property
    def coverable(self) -> bool:
        union = 0
        for mask in self.masks:
            union |= mask
        return union == self.universe_mask

    @property
    def max_set_size(self) -> int:
        return max(popcount(mask) for mask in self.masks)

    def items_of(self, s: int) -> list[int]:
        return bits(self.masks[s])

    def cost_of(self, chosen: int) -> Fraction:
        """Total cost of the cover-sets in bitmask ``chosen``."""
        return sum((self.costs[s] for s in bits(chosen)), Fraction(0))

    def covered_by(self, chosen: int) -> int:
        covered = 0
        for s in bits(chosen):
            covered |= self.masks[s]
        return covered

    def item_frequencies(self) -> list[int]:
        return [sum(1 for mask in self.masks if mask >> i & 1) for i in range(self.n)]


def parse_setcover(text: str) -> SetCoverInstance:
    """Parse the set cover JSON schema.

    ``{"n": <int>, "sets": [{"cost": <number or "p/q">, "items": [<int>...]}, ...]}``
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "n" not in doc or "sets" not in doc:
        raise InstanceError("document must be an object with 'n' and 'sets'")
    n = doc["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise InstanceError("'n' must be a positive integer")
    raw_sets = doc["sets"]
    if not isinstance(raw_sets, list) or not raw_sets:
        raise InstanceError("'sets' must be a nonempty array")
    masks: list[int] = []
    costs: list[Fraction] = []
    for s, entry in enumerate(raw_sets):
        if not isinstance(entry, dict):
            raise InstanceError(f"set {s}: expected object")
        cost = parse_rational(entry.get("cost", 0), what=f"set {s} cost")
        if cost < 0:
            raise InstanceError(f"set {s}: negative cost {cost}")
        items = entry.get("items", [])
        if not isinstance(items, list):
            raise InstanceError(f"set {s}: 'items' must be an array")
        mask = 0
        for it in items:
            if not isinstance(it, int) or isinstance(it, bool):
                raise InstanceError(f"set {s}: item indices must be integers")
            if not 0 <= it < n:
                raise InstanceError(f"set {s}: item index {it} out of range [0, {n})")
            mask |= 1 << it
        masks.append(mask)
        costs.append(cost)
    return SetCoverInstance(n=n, masks=tuple(masks), costs=tuple(costs))


def setcover_to_dict(inst: SetCoverInstance) -> dict:
    return {
        "n": inst.n,
        "sets": [
            {"cost": format_rational(inst.costs[s]), "items": inst.items_of(s)}
            for s in range(inst.m)
        ],
    }


def serialize_setcover(inst: SetCoverInstance) -> str:
    return json.dumps(setcover_to_dict(inst), sort_keys=True, separators=(",", ":"))


def instance_digest(canonical: str) -> str:
    return hashlib.sha256(canonical.encode()).hexdigest()


def exact_setcover_opt(inst: SetCoverInstance) -> tuple[Fraction, int]:
    """Minimum-cost cover by exact search; returns (cost, cover-set bitmask).

    Mask DP (state = set of covered items) up to 20 items, branch and bound
    with an exact per-item density bound up to 24.
    """
    if inst.n > ORACLE_ITEM_LIMIT:
        raise SizeLimitError(f"exact set cover oracle supports n <= {ORACLE_ITEM_LIMIT}")
    if not inst.coverable:
        raise InfeasibleError("universe is not coverable by the given sets")
    scale = math.lcm(*(c.denominator for c in inst.costs))
    icosts = [int(c * scale) for c in inst.costs]
    if inst.n <= ORACLE_DP_ITEM_LIMIT:
        best, chosen = _setcover_mask_dp(inst.n, inst.masks, icosts)
    else:
        best, chosen = _setcover_branch_and_bound(inst.n, inst.masks, icosts)
    return Fraction(best, scale), chosen


def _setcover_mask_dp(n: int, masks: Sequence[int], icosts: Sequence[int]) -> tuple[int, int]:
    full = (1 << n) - 1
    size = full + 1
    INF = 1 + sum(icosts)
    dp = [INF] * size
    prev = [0] * size
    used = [-1] * size
    dp[0] = 0
    item_sets = [[s for s, m in enumerate(masks) if m >> i & 1] for i in range(n)]
    for mask in range(size):
        d = dp[mask]
        if d >= INF or mask == full:
            continue
        rest = ~mask & full
        low = (rest & -rest).bit_length() - 1
        for s in item_sets[low]:
            nm = mask | masks[s]
            nd = d + icosts[s]
            if nd < dp[nm]:
                dp[nm] = nd
                prev[nm] = mask
                used[nm] = s
    chosen = 0
    mask = full
    while mask:
        chosen |= 1 << used[mask]
        mask = prev[mask]
    return dp[full], chosen


def _setcover_branch_and_bound(n: int, masks: Sequence[int], icosts: Sequence[int]) -> tuple[int, int]:
    full = (1 << n) - 1
    # Sets containing each item, largest coverage first for earlier pruning.
    item_sets = [
        sorted(
            (s for s, m in enumerate(masks) if m >> i & 1),
            key=lambda s: (-popcount(masks[s]), s),
        )
        for i in range(n)
    ]
    # Valid additive bound: any cover pays at least min density per item.
    min_density = [
        min(Fraction(icosts[s], popcount(masks[s])) for s in item_sets[i]) for i in range(n)
    ]

    # Greedy incumbent.
    covered = 0
    incumbent = 0
    incumbent_mask = 0
    while covered != full:
        best_s, best_key = -1, None
        for s, m in enumerate(masks):
            u = popcount(m & ~covered)
            if u == 0:
                continue
            key = Fraction(icosts[s], u)
            if best_key is None or key < best_key:
                best_s, best_key = s, key
        covered |= masks[best_s]
        incumbent += icosts[best_s]
        incumbent_mask |= 1 << best_s

    best = incumbent
    best_mask = incumbent_mask
    seen: dict[int, int] = {}

    def bound(uncovered: int) -> Fraction:
        total = Fraction(0)
        for i in bits(uncovered):
            total += min_density[i]
        return total

    def rec(cov: int, cost: int, chosen: int) -> None:
        nonlocal best, best_mask
        if cov == full:
            if cost < best:
                best, best_mask = cost, chosen
            return
        if cost + bound(~cov & full) >= best:
            return
        prior = seen.get(cov)
        if prior is not None and prior <= cost:
            return
        seen[cov] = cost
        rest = ~cov & full
        low = (rest & -rest).bit_length() - 1
        for s in item_sets[low]:
            rec(cov | masks[s], cost + icosts[s], chosen | 1 << s)

    rec(0, 0, 0)
    return best, best_mask


def naive_setcover_opt(inst: SetCoverInstance) -> tuple[Fraction, int]:
    """Independent oracle: enumerate all 2^m subsets of cover-sets (m <= 20)."""
    if inst.m > 20:
        raise SizeLimitError("naive enumeration supports m <= 20")
    if not inst.coverable:
        raise InfeasibleError("universe is not coverable by the given sets")
    full = inst.universe_mask
    best: Fraction | None = None
    best_mask = 0
    for chosen in range(1 << inst.m):
        covered = 0
        cost = Fraction(0)
        for s in bits(chosen):
            covered |= inst.masks[s]
            cost += inst.costs[s]
        if covered == full and (best is None or cost < best):
            best, best_mask = cost, chosen
    return best, best_mask


# ---------------------------------------------------------------------------
# Knapsack
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrunedItem:
    original_index: int
    reward: Fraction
    cost: Fraction


@dataclass(frozen=True)
class KnapsackInstance:
    """Knapsack instance; retained items all satisfy cost <= capacity.

    ``pruned`` logs the items dropped at normalization time because their
    cost exceeded the capacity.
    """

    rewards: tuple[Fraction, ...]
    costs: tuple[Fraction, ...]
    capacity: Fraction
    pruned: tuple[PrunedItem, ...] = ()

    def __post_init__(self):
        if len(self.rewards) != len(self.costs):
            raise InstanceError("rewards and costs length mismatch")
        if self.capacity < 0:
            raise InstanceError("capacity must be nonnegative")
        for i, (r, c) in enumerate(zip(self.rewards, self.costs)):
            if r < 0:
                raise InstanceError(f"item {i}: negative reward")
            if c < 0:
                raise InstanceError(f"item {i}: negative cost")
            if c > self.capacity:
                raise InstanceError(f"item {i}: cost exceeds capacity (prune before constructing)")

    @property
    def n(self) -> int:
        return len(self.rewards)

    def reward_of(self, chosen: int) -> Fraction:
        return sum((self.rewards[i] for i in bits(chosen)), Fraction(0))

    def cost_of(self, chosen: int) -> Fraction:
        return sum((self.costs[i] for i in bits(chosen)), Fraction(0))

    @staticmethod
    def create(
        rewards: Sequence[Fraction], costs: Sequence[Fraction], capacity: Fraction
    ) -> "KnapsackInstance":
        """Build an instance, pruning items with cost > capacity into the log."""
        kept_r: list[Fraction] = []
        kept_c: list[Fraction] = []
        pruned: list[PrunedItem] = []
        for i, (r, c) in enumerate(zip(rewards, costs)):
            if c > capacity:
                pruned.append(PrunedItem(i, Fraction(r), Fraction(c)))
            else:
                kept_r.append(Fraction(r))
                kept_c.append(Fraction(c))
        return KnapsackInstance(tuple(kept_r), tuple(kept_c), Fraction(capacity), tuple(pruned))


def parse_knapsack(text: str) -> KnapsackInstance:
    """Parse the knapsack JSON schema.

    ``{"capacity": <number or "p/q">, "items": [{"reward": ..., "cost": ...}, ...]}``
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "capacity" not in doc or "items" not in doc:
        raise InstanceError("document must be an object with 'capacity' and 'items'")
    capacity = parse_rational(doc["capacity"], what="capacity")
    if capacity < 0:
        raise InstanceError("capacity must be nonnegative")
    raw_items = doc["items"]
    if not isinstance(raw_items, list):
        raise InstanceError("'items' must be an array")
    rewards: list[Fraction] = []
    costs: list[Fraction] = []
    for i, entry in enumerate(raw_items):
        if not isinstance(entry, dict):
            raise InstanceError(f"item {i}: expected object")
        r = parse_rational(entry.get("reward", 0), what=f"item {i} reward")
        c = parse_rational(entry.get("cost", 0), what=f"item {i} cost")
        if r < 0:
            raise InstanceError(f"item {i}: negative reward")
        if c < 0:
            raise InstanceError(f"item {i}: negative cost")
        rewards.append(r)
        costs.append(c)
    return KnapsackInstance.create(rewards, costs, capacity)


def knapsack_to_dict(inst: KnapsackInstance) -> dict:
    return {
        "capacity": format_rational(inst.capacity),
        "items": [
            {"reward": format_rational(r), "cost": format_rational(c)}
            for r, c in zip(inst.rewards, inst.costs)
        ],
    }


def serialize_knapsack(inst: KnapsackInstance) -> str:
    return json.dumps(knapsack_to_dict(inst), sort_keys=True, separators=(",", ":"))


def exact_knapsack_opt(inst: KnapsackInstance) -> tuple[Fraction, int]:
    """Maximum reward over feasible item subsets; returns (reward, item bitmask)."""
    n = inst.n
    if n == 0:
        return Fraction(0), 0
    scale = math.lcm(inst.capacity.denominator, *(c.denominator for c in inst.costs))
    cap_int = int(inst.capacity * scale)
    if cap_int <= KNAPSACK_DP_CAPACITY_LIMIT:
        return _knapsack_capacity_dp(inst, scale, cap_int)
    if n <= KNAPSACK_ENUM_LIMIT:
        return _knapsack_enumerate(inst)
    raise SizeLimitError(
        f"exact knapsack oracle needs n <= {KNAPSACK_ENUM_LIMIT} or scaled capacity <= {KNAPSACK_DP_CAPACITY_LIMIT}"
    )


def _knapsack_capacity_dp(inst: KnapsackInstance, scale: int, cap_int: int) -> tuple[Fraction, int]:
    icosts = [int(c * scale) for c in inst.costs]
    dp: list[Fraction] = [Fraction(0)] * (cap_int + 1)
    chosen = [0] * (cap_int + 1)
    for i in range(inst.n):
        c, r = icosts[i], inst.rewards[i]
        for w in range(cap_int, c - 1, -1):
            cand = dp[w - c] + r
            if cand > dp[w]:
                dp[w] = cand
                chosen[w] = chosen[w - c] | 1 << i
    return dp[cap_int], chosen[cap_int]


def _knapsack_enumerate(inst: KnapsackInstance) -> tuple[Fraction, int]:
    # Gray-code walk keeps the running cost and reward incremental.
    best = Fraction(0)
    best_mask = 0
    cost = Fraction(0)
    reward = Fraction(0)
    mask = 0
    for k in range(1, 1 << inst.n):
        i = (k & -k).bit_length() - 1
        bit = 1 << i
        if mask & bit:
            mask ^= bit
            cost -= inst.costs[i]
            reward -= inst.rewards[i]
        else:
            mask |= bit
            cost += inst.costs[i]
            reward += inst.rewards[i]
        if cost <= inst.capacity and reward > best:
            best, best_mask = reward, mask
    return best, best_mask


# ---------------------------------------------------------------------------
# Hard-instance generator (uniform item frequency)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    """Parameters for the uniform-frequency generator.

    ``epsilon``, ``eta``, ``gamma`` are exact rationals so derived quantities
    (frequency, lift level) floor without floating-point ambiguity.
    """

    n: int
    epsilon: Fraction
    eta: Fraction
    gamma: Fraction = Fraction(1, 2)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon <= Fraction(1, 2):
            raise InstanceError("epsilon must lie in (0, 1/2]")
        if not 0 < self.eta < self.epsilon:
            raise InstanceError("eta must lie in (0, epsilon)")
        if not 0 < self.gamma <= Fraction(1, 2):
            raise InstanceError("gamma must lie in (0, 1/2]")
        if self.frequency < 1:
            raise InstanceError("derived frequency floor((epsilon-eta)*n) must be >= 1")

    @property
    def frequency(self) -> int:
        return math.floor((self.epsilon - self.eta) * self.n)


def uniform_frequency_instance(n: int, f: int, rng: random.Random) -> SetCoverInstance:
    """n unit-cost sets over n items; every item lands in exactly f random sets."""
    if not 1 <= f <= n:
        raise InstanceError("frequency must lie in [1, n]")
    masks = [0] * n
    for item in range(n):
        for s in rng.sample(range(n), f):
            masks[s] |= 1 << item
    return SetCoverInstance(n=n, masks=tuple(masks), costs=tuple(Fraction(1) for _ in range(n)))


def gen_uniform_frequency_instance(
    cfg: GenerationConfig,
    *,
    require_opt_bound: bool = False,
    retry_budget: int = 50,
) -> SetCoverInstance:
    """Seeded uniform-frequency instance.

    The exact frequency property holds by construction.  With
    ``require_opt_bound`` the optimum is additionally verified against the
    target lower bound via the exact oracle (checking (1+eps)^OPT >= n in
    exact arithmetic) and the instance is resampled on failure, up to
    ``retry_budget`` attempts.
    """
    rng = random.Random(cfg.seed)
    base = 1 + cfg.epsilon
    for _ in range(retry_budget):
        inst = uniform_frequency_instance(cfg.n, cfg.frequency, rng)
        if not require_opt_bound:
            return inst
        if not inst.coverable:
            continue
        opt_cost, _ = exact_setcover_opt(inst)
        k = int(opt_cost)  # unit costs: optimum cost is the number of sets
        if base**k >= cfg.n:
            return inst
    raise GenerationError(
        f"no instance with the optimum lower bound after {retry_budget} attempts"
    )
