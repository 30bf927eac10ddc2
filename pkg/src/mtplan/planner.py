"""End-to-end planning pipeline.

build graph -> contract -> fit curves -> allocate each level -> schedule
waves -> merge levels -> place on devices.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .allocator import allocate_level, uniform_plan, widest_plan
from .errors import NoValidAllocation
from .graph import build_graph, contract
from .scaling import ScalingCurve, fit_curve, synth_profile
from .scheduler import merge_levels, schedule_level, search_level


@dataclass
class PlanResult:
    workload: object
    topology: object
    graph: object
    meta: object
    curves: dict
    valid: dict
    levels: list
    schedule: object
    placed: object = None
    strategy: str = "wavefront"
    planning_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def lower_bound(self):
        return sum(cont.c_star for cont, _ in self.levels)

    @property
    def makespan(self):
        return self.schedule.end_time

    @property
    def gap(self):
        lb = self.lower_bound
        return self.makespan / lb if lb > 0 else float("nan")


def _profile_ns(pieces, n_max):
    ns = {1, n_max}
    k = 1
    while k <= n_max:
        ns.add(k)
        k *= 2
    for p in pieces:
        lo, hi = int(p.n_lo), int(min(p.n_hi, n_max))
        ns.update((lo, hi, (lo + hi) // 2, min(hi, lo + 1)))
    return sorted(n for n in ns if 1 <= n <= n_max)


def module_curves(workload):
    """Fit one scaling curve per module from its profile points or truth curve."""
    out = {}
    for k, name in enumerate(sorted(workload.modules)):
        mod = workload.modules[name]
        bps = workload.breakpoints.get(name, [])
        if name in workload.profiles:
            pts = workload.profiles[name]
        else:
            pieces = tuple(workload.curves[name])
            truth = ScalingCurve(pieces, c_m=mod.comm, w_m=mod.flops, n_max=int(pieces[-1].n_hi))
            pts = synth_profile(truth, _profile_ns(pieces, truth.n_max), workload.noise,
                                seed=workload.seed * 1009 + k)
        n_max = max(p.n for p in pts)
        bps = [b for b in bps if 1 < b < n_max]
        out[name] = fit_curve(pts, bps, c_m=mod.comm, w_m=mod.flops, n_max=n_max)
    return out


def metaop_curves(meta, workload, by_module=None):
    by_module = module_curves(workload) if by_module is None else by_module
    return {mid: by_module[m.module] for mid, m in meta.metaops.items()}


SLACK = (1, 2)


def _alternatives(ops, plan, valid, curves, N, eps, level, share_floor):
    """Extra allocation plans for the level search.

    Besides the one-tuple-per-MetaOp plan and the full-width plan, the level is re-solved as if one or
    two devices were missing.  The slack lets short single-device MetaOps slot
    in without stretching a wave, which the rounding at full width cannot
    anticipate.
    """
    out = []
    alt = uniform_plan(plan, valid, curves, N)
    if alt is not None:
        out.append(alt)
    out.append(widest_plan(plan, valid))
    for d in SLACK:
        if N - d < 1:
            break
        try:
            out.append(allocate_level(ops, curves, N - d, eps, level, share_floor)[1])
        except NoValidAllocation:
            break
    return tuple(out)


def plan_levels(meta, curves, N, eps=1e-7, share_floor=0.0, search=True, beam_width=4):
    """Allocate and schedule every MetaLevel; returns (levels, schedule, valid sets).

    With ``search`` each level keeps the shortest of several wave schedules
    (see ``search_level``); otherwise the plain greedy loop is used.
    """
    levels, per_level, valid = [], [], {}
    labels = []
    t = 0.0
    offsets = {}
    first = 0
    for k, mids in enumerate(meta.levels):
        ops = [meta.metaops[m] for m in mids]
        cont, plan, vs = allocate_level(ops, curves, N, eps, k, share_floor)
        valid.update(vs)
        if search:
            waves, t_end, label = search_level(plan, N, t, curves, vs, k, first, offsets,
                                               _alternatives(ops, plan, vs, curves, N, eps, k,
                                                             share_floor), beam_width)
        else:
            waves, t_end = schedule_level(plan, N, t, curves, vs, k, first, offsets)
            label = "greedy/shortest"
        labels.append(label)
        levels.append((cont, plan))
        per_level.append((waves, t_end))
        first += len(waves)
        t = t_end
    sched = merge_levels(per_level, N)
    sched.labels = labels
    return levels, sched, valid


def plan(workload, topology, eps=1e-7, backtrack_depth=2, share_floor=0.0, place_plan=True,
         mem_model=None, search=True, beam_width=4):
    """Run the whole pipeline; ``place_plan=False`` stops after scheduling."""
    t0 = time.perf_counter()
    graph = build_graph(workload)
    meta = contract(graph)
    curves = metaop_curves(meta, workload)
    levels, schedule, valid = plan_levels(meta, curves, topology.N, eps, share_floor, search,
                                          beam_width)
    result = PlanResult(workload, topology, graph, meta, curves, valid, levels, schedule)
    if place_plan:
        from .placement import MemoryModel, place
        mm = mem_model or MemoryModel()
        result.placed = place(schedule, meta, topology, mm, curves, backtrack_depth=backtrack_depth)
    result.planning_time = time.perf_counter() - t0
    return result
