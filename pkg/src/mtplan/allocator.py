"""Resource allocation for one MetaLevel.

The continuous relaxation (devices and layers divisible) is solved by
bisection on the common finish time; its fractional allocations are then
represented by at most two integer ASL-tuples per MetaOp.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .errors import EmptyLevel, NoValidAllocation
from .scaling import eval_time, solve_allocation

log = logging.getLogger(__name__)


@dataclass
class AslTuple:
    metaop_id: str
    n: int
    l: int
    s: float | None = None


@dataclass
class ContinuousAllocation:
    c_star: float
    alloc: dict
    lengths: dict = field(default_factory=dict)
    iterations: int = 0
    saturated: bool = False


@dataclass
class PlanEntry:
    upper: AslTuple | None
    lower: AslTuple | None = None
    # idle span of the n = 0 dummy tuple, zero when there is none
    dummy_time: float = 0.0

    @property
    def tuples(self):
        return [t for t in (self.upper, self.lower) if t is not None]


@dataclass
class AllocationPlan:
    level: int
    c_star: float
    tuples: dict

    def dump(self):
        lines = []
        for mid in sorted(self.tuples):
            for t in self.tuples[mid].tuples:
                lines.append(f"metaop {mid} tuple n={t.n} l={t.l}")
        return "\n".join(lines) + "\n"


def valid_allocations(m, N, n_max=None):
    """Allocations n <= N that are multiples of tp_degree and split the batch evenly."""
    if N < 1:
        raise ValueError("N must be >= 1")
    tp = m.tp_degree
    if tp > N:
        raise NoValidAllocation(f"{m.id}: tp_degree {tp} exceeds {N} devices")
    top = N if n_max is None else min(N, n_max)
    out = [n for n in range(tp, top + 1, tp) if m.global_batch % (n // tp) == 0]
    if not out:
        raise NoValidAllocation(f"{m.id}: no valid allocation within {top} devices")
    return out


def relaxed_allocation(curve, target, lo, hi):
    """Real-valued allocation reaching per-layer time ``target``.

    Below the smallest valid allocation ``lo`` the MetaOp time-shares a
    group of ``lo`` devices, so time scales as T(lo) * lo / n there.
    """
    t_lo = eval_time(curve, lo)
    if target >= t_lo:
        return lo * t_lo / target
    return solve_allocation(curve, target, lo, hi)


def relaxed_time(curve, n, lo, hi):
    if n < lo:
        return eval_time(curve, lo) * lo / n
    return eval_time(curve, min(n, hi))


def solve_continuous(level, N, eps=1e-7, valid_sets=None, max_iter=200):
    """Bisection on the common finish time C at which the per-MetaOp device counts sum to N.

    Each MetaOp needs the fractional count whose per-layer time is C divided
    by its layer count.

    ``level`` is a list of (MetaOp, ScalingCurve).  Returns the smallest C
    whose allocations fit in N devices.  If every MetaOp already saturates
    its largest valid allocation, the bracket's lower end is optimal and the
    allocations sum to less than N.
    """
    if not level:
        raise EmptyLevel("cannot allocate an empty MetaLevel")
    bounds = {}
    for m, curve in level:
        vs = valid_sets[m.id] if valid_sets else valid_allocations(m, N, curve.n_max)
        bounds[m.id] = (min(vs), max(vs))
    lengths = {m.id: m.length for m, _ in level}

    def allocs(c):
        return {m.id: relaxed_allocation(curve, c / m.length, *bounds[m.id]) for m, curve in level}

    c_low = max(eval_time(curve, bounds[m.id][1]) * m.length for m, curve in level)
    c_high = sum(eval_time(curve, bounds[m.id][0]) * m.length for m, curve in level)
    c_high = max(c_high, c_low)

    low_alloc = allocs(c_low)
    if sum(low_alloc.values()) <= N:
        return ContinuousAllocation(c_low, low_alloc, lengths, 0, saturated=True)

    it = 0
    alloc = allocs(c_high)
    while it < max_iter:
        total = sum(alloc.values())
        if N - total <= eps * N and c_high - c_low <= eps * c_high:
            break
        if c_high - c_low <= 4 * math.ulp(c_high):
            break
        mid = 0.5 * (c_low + c_high)
        mid_alloc = allocs(mid)
        if sum(mid_alloc.values()) < N:
            c_high, alloc = mid, mid_alloc
        else:
            c_low = mid
        it += 1
    return ContinuousAllocation(c_high, alloc, lengths, it)


def _round_half_up(x):
    return int(math.floor(x + 0.5 + 1e-9))


def discretize(cont, valid_sets, curves, level=0, share_floor=0.0):
    """Represent each fractional n* by two neighbouring valid allocations.

    Layer counts solve  l_hi + l_lo = L  and  T(n_hi) l_hi + T(n_lo) l_lo = C*
    and are rounded (ties towards the larger allocation) so the first
    equation holds exactly.
    """
    c_star = cont.c_star
    out = {}
    for mid, share in cont.alloc.items():
        L = cont.lengths[mid]
        vs = sorted(valid_sets[mid])
        curve = curves[mid]
        exact = [v for v in vs if abs(v - share) <= 1e-9 * max(1.0, share)]
        if exact:
            out[mid] = PlanEntry(AslTuple(mid, exact[0], L))
            continue
        if share < vs[0]:
            busy = eval_time(curve, vs[0]) * L
            out[mid] = PlanEntry(AslTuple(mid, vs[0], L), None, max(0.0, c_star - busy))
            continue
        n_lo = max(v for v in vs if v <= share)
        hi_cands = [v for v in vs if v >= share]
        if not hi_cands:
            out[mid] = PlanEntry(AslTuple(mid, vs[-1], L))
            continue
        n_hi = min(hi_cands)
        t_lo, t_hi = eval_time(curve, n_lo), eval_time(curve, n_hi)
        if t_lo - t_hi <= 0:
            l_hi = 0.0
        else:
            l_hi = (t_lo * L - c_star) / (t_lo - t_hi)
        l_hi = min(max(l_hi, 0.0), float(L))
        l_hi_int = min(L, _round_half_up(l_hi))
        l_lo_int = L - l_hi_int
        if share_floor > 0 and c_star > 0:
            if l_hi_int and t_hi * l_hi_int < share_floor * c_star:
                l_lo_int, l_hi_int = L, 0
            elif l_lo_int and t_lo * l_lo_int < share_floor * c_star:
                l_hi_int, l_lo_int = L, 0
        upper = AslTuple(mid, n_hi, l_hi_int) if l_hi_int > 0 else None
        lower = AslTuple(mid, n_lo, l_lo_int) if l_lo_int > 0 else None
        if upper is None:
            upper, lower = lower, None
        out[mid] = PlanEntry(upper, lower)
    return AllocationPlan(level, c_star, out)


def uniform_plan(plan, valid_sets, curves, N):
    """One tuple per MetaOp, all finishing as early as possible side by side.

    Minimises the longest span (layers x per-layer time) with at most N
    devices in total over valid allocations (exact: the optimum is one of the finitely many spans).
    Returns None when the level cannot run in a single wave.
    """
    lengths = {mid: sum(t.l for t in e.tuples) for mid, e in plan.tuples.items()}
    if sum(valid_sets[m][0] for m in lengths) > N:
        return None
    span = {m: {v: lengths[m] * eval_time(curves[m], v) for v in valid_sets[m]} for m in lengths}

    def need(limit):
        out = {}
        for m in lengths:
            ok = [v for v in valid_sets[m] if span[m][v] <= limit * (1 + 1e-12)]
            if not ok:
                return None
            out[m] = ok[0]
        return out if sum(out.values()) <= N else None

    targets = sorted({x for d in span.values() for x in d.values()})
    lo, hi = 0, len(targets) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if need(targets[mid]) is None:
            lo = mid + 1
        else:
            hi = mid
    n = need(targets[lo])
    if n is None:
        return None
    return AllocationPlan(plan.level, plan.c_star,
                          {m: PlanEntry(AslTuple(m, n[m], lengths[m])) for m in sorted(n)})


def widest_plan(plan, valid_sets):
    """Every MetaOp as one tuple at its largest valid allocation.

    Scheduled greedily this runs MetaOps mostly one after another at full
    width, which wins when layers are too few for a bi-point split to pay off.
    """
    tuples = {}
    for mid, e in plan.tuples.items():
        L = sum(t.l for t in e.tuples)
        tuples[mid] = PlanEntry(AslTuple(mid, valid_sets[mid][-1], L))
    return AllocationPlan(plan.level, plan.c_star, tuples)


def allocate_level(level_ops, curves, N, eps=1e-7, level=0, share_floor=0.0):
    """Solve and discretize one MetaLevel; returns (ContinuousAllocation, AllocationPlan, valid sets)."""
    valid = {m.id: valid_allocations(m, N, curves[m.id].n_max) for m in level_ops}
    cont = solve_continuous([(m, curves[m.id]) for m in level_ops], N, eps, valid)
    if cont.saturated:
        log.debug("level %d saturates every MetaOp's largest valid allocation", level)
    plan = discretize(cont, valid, curves, level, share_floor)
    return cont, plan, valid
