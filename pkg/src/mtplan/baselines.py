"""Reference planners the wavefront plan is compared against.

* ``decoupled-sequential``: every MetaOp alone on the whole cluster, tasks
  one after another.
* ``task-level-optimus``: tasks run side by side on disjoint device shares
  sized by marginal gain; each task runs its MetaOps one at a time.
* ``distmm-mt``: tasks one after another; inside a task, independent
  MetaOps split the cluster via the continuous allocator.

All three produce ordinary wave schedules and reuse the device placement
module, so the validator and simulator treat them exactly like the main plan.
A MetaOp used by several tasks runs once, with the first task by which all
of its inputs exist.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .allocator import allocate_level, valid_allocations
from .errors import NoValidAllocation, PlanError
from .graph import build_graph, contract, topological_order
from .placement import MemoryModel, place
from .planner import metaop_curves
from .scaling import eval_time
from .scheduler import Wave, WaveEntry, WavefrontSchedule, merge_levels, schedule_level

STRATEGIES = ("decoupled-sequential", "task-level-optimus", "distmm-mt")


@dataclass
class _Ctx:
    workload: object
    topology: object
    meta: object
    curves: dict
    owner: dict
    task_index: dict
    order: list

    @property
    def N(self):
        return self.topology.N

    def valid(self, mid):
        return valid_allocations(self.meta.metaops[mid], self.N, self.curves[mid].n_max)

    def owned(self, tid):
        """MetaOps first needed by task ``tid``, in dependency order."""
        mine = {m for m, t in self.owner.items() if t == tid}
        return [m for m in self.order if m in mine]


def _context(workload, topology):
    meta = contract(build_graph(workload))
    curves = metaop_curves(meta, workload)
    index = {t.id: k for k, t in enumerate(workload.tasks)}
    preds = meta.predecessors()
    rank = {}
    for m in meta.topological_order():
        first = min(index[t] for t in meta.metaops[m].task_ids)
        rank[m] = max([first] + [rank[p] for p in preds[m]])
    names = [t.id for t in workload.tasks]
    owner = {m: names[k] for m, k in rank.items()}
    order = topological_order(meta.metaops, meta.edges, key=lambda m: (index[owner[m]], m))
    return _Ctx(workload, topology, meta, curves, owner, index, order)


def _finish(ctx, waves, strategy, mem_model, backtrack_depth):
    end = max((w.start + w.duration for w in waves), default=0.0)
    sched = WavefrontSchedule(waves, end, [0] if waves else [], ctx.N)
    return place(sched, ctx.meta, ctx.topology, mem_model or MemoryModel(), ctx.curves,
                 backtrack_depth=backtrack_depth, strategy=strategy)


def plan_decoupled_sequential(workload, topology, mem_model=None, backtrack_depth=2):
    ctx = _context(workload, topology)
    waves, t = [], 0.0
    for m in ctx.order:
        n = ctx.valid(m)[-1]
        L = ctx.meta.metaops[m].length
        dur = L * eval_time(ctx.curves[m], n)
        waves.append(Wave(len(waves), t, dur, [WaveEntry(m, n, L, 0, dur)],
                          ctx.meta.metaops[m].level))
        t += dur
    return _finish(ctx, waves, "decoupled-sequential", mem_model, backtrack_depth)


def _largest_at_most(valid, n):
    best = None
    for v in valid:
        if v <= n:
            best = v
    return best


def task_time(ctx, ops, n):
    """Time for ``ops`` run one after another, each on its largest valid n within ``n``."""
    total = 0.0
    for m in ops:
        v = _largest_at_most(ctx.valid(m), n)
        if v is None:
            return math.inf
        total += ctx.meta.metaops[m].length * eval_time(ctx.curves[m], v)
    return total


def marginal_shares(ctx, tasks, budget):
    """Optimus-style grants: start at the minimum, give the next increment to the best gain."""
    steps, share = {}, {}
    for tid in tasks:
        ops = ctx.owned(tid)
        # sizes every MetaOp of the task can use; fall back to any size if none
        common = set.intersection(*(set(ctx.valid(m)) for m in ops))
        cands = sorted(common or {v for m in ops for v in ctx.valid(m)})
        lo = max(ctx.valid(m)[0] for m in ops)
        steps[tid] = [v for v in cands if v >= lo]
        share[tid] = lo
    free = budget - sum(share.values())
    if free < 0:
        raise NoValidAllocation(f"tasks {', '.join(tasks)} need more than {budget} devices")
    while True:
        best = None
        for tid in tasks:
            nxt = next((v for v in steps[tid] if v > share[tid]), None)
            if nxt is None or nxt - share[tid] > free:
                continue
            ops = ctx.owned(tid)
            gain = (task_time(ctx, ops, share[tid]) - task_time(ctx, ops, nxt)) / (nxt - share[tid])
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, tid, nxt)
        if best is None:
            return share
        _, tid, nxt = best
        free -= nxt - share[tid]
        share[tid] = nxt


def _rounds(ctx, tasks):
    """Consecutive groups of tasks whose minimum shares fit on the cluster together."""
    out, cur, used = [], [], 0
    for tid in tasks:
        need = max((ctx.valid(m)[0] for m in ctx.owned(tid)), default=0)
        if cur and used + need > ctx.N:
            out.append(cur)
            cur, used = [], 0
        cur.append(tid)
        used += need
    if cur:
        out.append(cur)
    return out


def _stream_waves(ctx, share, t, first, finished):
    """Run each task's MetaOps as a stream; a wave ends when the first stream slice ends."""
    preds = ctx.meta.predecessors()
    streams = {tid: [[m, ctx.meta.metaops[m].length, 0] for m in ctx.owned(tid)] for tid in share}
    waves = []
    while any(streams.values()):
        active = []
        for tid in sorted(streams, key=ctx.task_index.__getitem__):
            if not streams[tid]:
                continue
            m, left, off = streams[tid][0]
            if all(p in finished for p in preds[m]):
                n = _largest_at_most(ctx.valid(m), share[tid])
                active.append((tid, m, left, off, n, eval_time(ctx.curves[m], n)))
        if not active:
            raise PlanError("task streams deadlocked on unfinished dependencies")
        t_wave = min(left * tl for _, _, left, _, _, tl in active)
        entries, done_now = [], []
        for tid, m, left, off, n, tl in active:
            k = left if left * tl <= t_wave * (1 + 1e-12) else max(1, int(t_wave / tl + 1e-9))
            k = min(k, left)
            entries.append(WaveEntry(m, n, k, off, k * tl))
            streams[tid][0][1] -= k
            streams[tid][0][2] += k
            if streams[tid][0][1] == 0:
                streams[tid].pop(0)
                done_now.append(m)
        dur = max(e.span for e in entries)
        level = min(ctx.meta.metaops[e.metaop_id].level for e in entries)
        waves.append(Wave(first + len(waves), t, dur, entries, level))
        t += dur
        finished.update(done_now)
    return waves, t


def plan_task_level_optimus(workload, topology, mem_model=None, backtrack_depth=2):
    ctx = _context(workload, topology)
    tasks = [t.id for t in workload.tasks if ctx.owned(t.id)]
    waves, t, finished = [], 0.0, set()
    for group in _rounds(ctx, tasks):
        share = marginal_shares(ctx, group, ctx.N)
        more, t = _stream_waves(ctx, share, t, len(waves), finished)
        waves += more
    return _finish(ctx, waves, "task-level-optimus", mem_model, backtrack_depth)


def plan_distmm_mt(workload, topology, mem_model=None, backtrack_depth=2, eps=1e-7):
    ctx = _context(workload, topology)
    per_level, offsets, t = [], {}, 0.0
    for task in workload.tasks:
        ops = ctx.owned(task.id)
        for lvl in sorted({ctx.meta.metaops[m].level for m in ops}):
            group = [ctx.meta.metaops[m] for m in ops if ctx.meta.metaops[m].level == lvl]
            _, plan, valid = allocate_level(group, ctx.curves, ctx.N, eps, lvl)
            waves, t = schedule_level(plan, ctx.N, t, ctx.curves, valid, lvl, 0, offsets)
            per_level.append((waves, t))
    sched = merge_levels(per_level, ctx.N)
    return place(sched, ctx.meta, ctx.topology, mem_model or MemoryModel(), ctx.curves,
                 backtrack_depth=backtrack_depth, strategy="distmm-mt")


PLANNERS = {
    "decoupled-sequential": plan_decoupled_sequential,
    "task-level-optimus": plan_task_level_optimus,
    "distmm-mt": plan_distmm_mt,
}
