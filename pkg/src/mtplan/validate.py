"""Independent plan checker.

Replays a schedule (and optionally its placement) and collects every
violated constraint instead of stopping at the first one.  Nothing here
reuses planner internals beyond the curve evaluation and the memory model
parameters, so it doubles as a test oracle.
"""
from __future__ import annotations

from .errors import InvalidPlan
from .scaling import eval_time

REL = 1e-9


def _close_le(a, b, scale):
    return a <= b + REL * max(scale, 1e-30)


def schedule_violations(schedule, meta, curves, N):
    out = []
    waves = schedule.waves
    scale = max((w.start + w.duration for w in waves), default=1.0)
    done = {m: 0 for m in meta.metaops}
    first_start, last_end = {}, {}
    prev_end = 0.0
    for k, w in enumerate(waves):
        if w.index != k:
            out.append(f"wave {k}: index field is {w.index}")
        if w.duration < 0:
            out.append(f"wave {k}: negative duration")
        if not _close_le(prev_end, w.start, scale):
            out.append(f"wave {k}: starts at {w.start:.9g} before previous wave ends at {prev_end:.9g}")
        prev_end = max(prev_end, w.start + w.duration)
        used = sum(e.n for e in w.entries)
        if used > N:
            out.append(f"wave {k}: {used} devices in use, capacity {N}")
        seen = set()
        for e in w.entries:
            m = e.metaop_id
            if m not in meta.metaops:
                out.append(f"wave {k}: unknown metaop {m}")
                continue
            if m in seen:
                out.append(f"wave {k}: metaop {m} appears twice")
            seen.add(m)
            op = meta.metaops[m]
            if e.n < 1 or e.layers < 1:
                out.append(f"wave {k}: {m} has n={e.n} layers={e.layers}")
                continue
            if e.n % op.tp_degree or op.global_batch % (e.n // op.tp_degree):
                out.append(f"wave {k}: {m} uses invalid allocation n={e.n}")
            if e.n > curves[m].n_max:
                out.append(f"wave {k}: {m} uses n={e.n} beyond its curve range")
                continue
            if e.offset != done[m]:
                out.append(f"wave {k}: {m} resumes at layer {e.offset}, expected {done[m]}")
            span = e.layers * eval_time(curves[m], e.n)
            if not _close_le(span, w.duration, scale):
                out.append(f"wave {k}: {m} needs {span:.9g}s but the wave lasts {w.duration:.9g}s")
            done[m] += e.layers
            first_start.setdefault(m, w.start)
            last_end[m] = w.start + span
    for m, op in meta.metaops.items():
        if done[m] != op.length:
            out.append(f"metaop {m}: {done[m]} of {op.length} layers executed")
    for p, q in meta.edges:
        if p in last_end and q in first_start and not _close_le(last_end[p], first_start[q], scale):
            out.append(f"dependency {p}->{q}: {q} starts at {first_start[q]:.9g} "
                       f"before {p} ends at {last_end[p]:.9g}")
    if waves and not _close_le(prev_end, schedule.end_time, scale):
        out.append(f"end_time {schedule.end_time:.9g} precedes last wave end {prev_end:.9g}")
    return out


def resident_memory(plan):
    """Per-device resident bytes, recomputed from the placement."""
    mm = plan.mem_model
    keys, act = {}, {}
    for w in plan.schedule.waves:
        for e in w.entries:
            op = plan.meta.metaops[e.metaop_id]
            per_key = op.param_bytes * (1.0 + mm.grad_opt_multiplier) / op.tp_degree
            a = e.layers * mm.activation_scale * op.act_bytes * op.tp_degree / e.n
            for d in plan.placement.get((w.index, e.metaop_id), ()):
                for key in op.layer_keys[e.offset:e.offset + e.layers]:
                    keys.setdefault(d, {})[key] = max(keys.get(d, {}).get(key, 0.0), per_key)
                act[d] = act.get(d, 0.0) + a
    return {d: sum(keys.get(d, {}).values()) + act.get(d, 0.0) for d in plan.topology.devices}


def placement_violations(plan):
    out = []
    topo = plan.topology
    devices = set(topo.devices)
    for w in plan.schedule.waves:
        taken = {}
        for e in w.entries:
            devs = plan.placement.get((w.index, e.metaop_id))
            if devs is None:
                out.append(f"wave {w.index}: {e.metaop_id} has no placement")
                continue
            if len(devs) != e.n or len(set(devs)) != len(devs):
                out.append(f"wave {w.index}: {e.metaop_id} placed on {len(set(devs))} devices, needs {e.n}")
            for d in devs:
                if d not in devices:
                    out.append(f"wave {w.index}: {e.metaop_id} uses unknown device {d}")
                elif d in taken:
                    out.append(f"wave {w.index}: device {d} shared by {taken[d]} and {e.metaop_id}")
                else:
                    taken[d] = e.metaop_id
    for d, v in sorted(resident_memory(plan).items()):
        if v > topo.mem_capacity * (1 + REL):
            out.append(f"device {d}: {v:.6g} bytes resident exceeds {topo.mem_capacity:.6g}")
    return out


def violations(plan):
    """All violations of a placed plan (schedule and placement)."""
    out = schedule_violations(plan.schedule, plan.meta, plan.curves, plan.topology.N)
    return out + placement_violations(plan)


def check(plan):
    bad = violations(plan)
    if bad:
        raise InvalidPlan(bad)
    return plan
