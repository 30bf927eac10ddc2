"""Discrete-event replay of a placed plan.

One iteration is: forward waves in order, backward waves in reverse order
(each backward compute takes ``bwd_ratio`` times the forward time), then
group-wise gradient synchronisation.  Every wave is preceded by a
transmission phase carrying the data flows that enter it (forward) or the
gradients that flow back into it (backward).  Waves are global barriers, and
communication never overlaps compute.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .scaling import eval_time


@dataclass(frozen=True)
class Event:
    kind: str          # compute | transmit | sync
    label: str
    start: float
    end: float
    wave: int = -1
    metaop: str = ""
    layers: int = 0

    @property
    def duration(self):
        return self.end - self.start


@dataclass
class LocalPlan:
    device: int
    events: list = field(default_factory=list)

    def busy(self, kind=None):
        return sum(e.duration for e in self.events if kind is None or e.kind == kind)


@dataclass
class ParamGroupPool:
    """Device group -> parameter keys synchronised together."""
    groups: dict
    bytes: dict

    def sync_bytes(self, devices):
        return sum(self.bytes[k] for k in self.groups[devices])


@dataclass
class SimulationReport:
    makespan: float
    breakdown: dict
    local_plans: dict
    per_metaop_utilization: dict
    per_device_peak_memory: dict
    strategy: str = ""

    @property
    def fractions(self):
        if self.makespan <= 0:
            return {k: 0.0 for k in self.breakdown}
        return {k: v / self.makespan for k, v in self.breakdown.items()}

    def timeline_rows(self):
        """(device, start, end, state) covering [0, makespan] on every device."""
        rows = []
        for d in sorted(self.local_plans):
            t = 0.0
            for e in sorted(self.local_plans[d].events, key=lambda e: (e.start, e.end)):
                if e.end <= e.start:
                    continue
                if e.start > t:
                    rows.append((d, t, e.start, "idle"))
                rows.append((d, e.start, e.end, e.kind))
                t = max(t, e.end)
            if t < self.makespan:
                rows.append((d, t, self.makespan, "idle"))
        return rows

    def breakdown_text(self):
        fr = self.fractions
        lines = [f"strategy {self.strategy}", f"makespan {self.makespan:.12g}"]
        for k in ("fwd_bwd", "param_sync", "send_recv"):
            lines.append(f"{k} {self.breakdown[k]:.12g} {fr[k]:.6f}")
        idle = max(0.0, 1.0 - sum(fr.values()))
        lines.append(f"idle_fraction {idle:.6f}")
        return "\n".join(lines) + "\n"

    def timeline_csv(self):
        lines = ["device,t_start,t_end,state"]
        lines += [f"{d},{a:.12g},{b:.12g},{s}" for d, a, b, s in self.timeline_rows()]
        return "\n".join(lines) + "\n"

    def memory_csv(self):
        lines = ["device,peak_bytes"]
        lines += [f"{d},{int(round(v))}" for d, v in sorted(self.per_device_peak_memory.items())]
        return "\n".join(lines) + "\n"

    def utilization_csv(self):
        lines = ["metaop,utilization"]
        lines += [f"{m},{u:.9f}" for m, u in sorted(self.per_metaop_utilization.items())]
        return "\n".join(lines) + "\n"

    def svg(self, width=960, row=14):
        devices = sorted(self.local_plans)
        scale = (width - 60) / self.makespan if self.makespan > 0 else 0.0
        height = row * len(devices) + 30
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
               f'<rect width="{width}" height="{height}" fill="white"/>']
        for k, d in enumerate(devices):
            y = 10 + k * row
            out.append(f'<text x="2" y="{y + row - 4}" font-size="10">d{d}</text>')
            for e in self.local_plans[d].events:
                if e.end <= e.start:
                    continue
                x = 50 + e.start * scale
                w = max((e.end - e.start) * scale, 0.5)
                out.append(f'<rect x="{x:.3f}" y="{y}" width="{w:.3f}" height="{row - 2}" '
                           f'fill="{_colour(e)}"><title>{e.label}</title></rect>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _colour(e):
    if e.kind == "transmit":
        return "#d62728"
    if e.kind == "sync":
        return "#7f7f7f"
    h = hashlib.sha256(e.metaop.encode()).digest()
    return f"#{h[0] // 2 + 64:02x}{h[1] // 2 + 64:02x}{h[2] // 2 + 96:02x}"


def localize(plan):
    """Per-device forward compute events, timed as if transmissions were free."""
    local = {d: LocalPlan(d) for d in plan.topology.devices}
    for w in plan.schedule.waves:
        for e in w.entries:
            dur = e.layers * eval_time(plan.curves[e.metaop_id], e.n)
            for d in plan.placement[(w.index, e.metaop_id)]:
                local[d].events.append(Event("compute", f"fwd {e.metaop_id} w{w.index}", w.start,
                                             w.start + dur, w.index, e.metaop_id, e.layers))
    return local


def transfer_phase(transfers, topology):
    """Duration of one boundary phase and per-device busy time (full duplex)."""
    send, recv = {}, {}
    for s, d, v in transfers:
        t = v / topology.bandwidth(s, d)
        send[s] = send.get(s, 0.0) + t
        recv[d] = recv.get(d, 0.0) + t
    busy = {}
    for dev in set(send) | set(recv):
        busy[dev] = max(send.get(dev, 0.0), recv.get(dev, 0.0))
    return max(busy.values(), default=0.0), busy


def insert_transmissions(plan):
    """Forward and backward transfer lists per wave boundary.

    Returns (fwd, bwd): fwd[k] holds transfers entering wave k; bwd[k] holds
    the mirrored gradient transfers that must reach wave k before its
    backward compute.
    """
    W = len(plan.schedule.waves)
    fwd = [[] for _ in range(W)]
    bwd = [[] for _ in range(W)]
    for f in plan.flows:
        fwd[f.dst[0]].extend(f.transfers)
        bwd[f.src[0]].extend((d, s, v) for s, d, v in f.transfers)
    return fwd, bwd


def build_param_groups(plan):
    """Pool parameter keys by the exact set of devices that touch them."""
    where, size = {}, {}
    for w in plan.schedule.waves:
        for e in w.entries:
            op = plan.meta.metaops[e.metaop_id]
            devs = plan.placement[(w.index, e.metaop_id)]
            for key in op.layer_keys[e.offset:e.offset + e.layers]:
                where.setdefault(key, set()).update(devs)
                size[key] = max(size.get(key, 0.0), op.param_bytes / op.tp_degree)
    groups = {}
    for key in sorted(where, key=str):
        groups.setdefault(tuple(sorted(where[key])), []).append(key)
    return ParamGroupPool(groups, size)


def allreduce_time(devices, nbytes, topology):
    g = len(devices)
    if g <= 1 or nbytes <= 0:
        return 0.0
    bw = min(topology.bandwidth(a, b) for a in devices for b in devices if a != b)
    return 2.0 * (g - 1) / g * nbytes / bw


def simulate(plan, pool=None, bwd_ratio=2.0, transfers=True, sync=True, strategy=None):
    """Replay one training iteration of ``plan``; returns a SimulationReport."""
    topo = plan.topology
    pool = build_param_groups(plan) if pool is None else pool
    fwd_tx, bwd_tx = insert_transmissions(plan)
    local = {d: LocalPlan(d) for d in topo.devices}
    waves = plan.schedule.waves
    t = 0.0
    compute_wall = tx_wall = 0.0
    flops = {}

    def phase(tlist, label):
        nonlocal t, tx_wall
        if not transfers or not tlist:
            return
        dur, busy = transfer_phase(tlist, topo)
        for dev in sorted(busy):
            local[dev].events.append(Event("transmit", label, t, t + busy[dev]))
        t += dur
        tx_wall += dur

    def compute(w, ratio, tag):
        nonlocal t, compute_wall
        for e in w.entries:
            dur = ratio * e.layers * eval_time(plan.curves[e.metaop_id], e.n)
            for d in plan.placement[(w.index, e.metaop_id)]:
                local[d].events.append(Event("compute", f"{tag} {e.metaop_id} w{w.index}", t,
                                             t + dur, w.index, e.metaop_id, e.layers))
        t += ratio * w.duration
        compute_wall += ratio * w.duration

    for w in waves:
        phase(fwd_tx[w.index], f"fwd-recv w{w.index}")
        compute(w, 1.0, "fwd")
    for w in reversed(waves):
        phase(bwd_tx[w.index], f"bwd-recv w{w.index}")
        compute(w, bwd_ratio, "bwd")
    t_bwd = t
    end = t_bwd
    if sync:
        cursor = {d: t_bwd for d in topo.devices}
        for devs in sorted(pool.groups, key=lambda g: (-len(g), g)):
            dur = allreduce_time(devs, pool.sync_bytes(devs), topo)
            if dur <= 0:
                continue
            start = max(cursor[d] for d in devs)
            for d in devs:
                local[d].events.append(Event("sync", f"sync {len(pool.groups[devs])} keys",
                                             start, start + dur))
                cursor[d] = start + dur
            end = max(end, start + dur)
    for w in waves:
        for e in w.entries:
            op = plan.meta.metaops[e.metaop_id]
            done, area = flops.get(e.metaop_id, (0.0, 0.0))
            span = e.layers * eval_time(plan.curves[e.metaop_id], e.n)
            flops[e.metaop_id] = (done + op.flops * e.layers, area + span * e.n)
    util = {m: (f / a / topo.peak_flops if a > 0 else 0.0) for m, (f, a) in flops.items()}
    breakdown = {"fwd_bwd": compute_wall, "param_sync": end - t_bwd, "send_recv": tx_wall}
    return SimulationReport(end, breakdown, local, util, dict(plan.memory),
                            strategy or plan.strategy)
