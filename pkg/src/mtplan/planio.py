"""Self-contained plan files.

A plan file carries everything the simulator needs: topology, memory model,
MetaOps with their curves and edges, waves with device sets, and data
flows.  Floats are written with ``repr`` so a plan read back simulates
bit-identically.  The ``id`` line is a digest of every other line.

Grammar (one record per line, ``key=value`` tokens)::

    mtplan-plan 1
    id <16 hex digits>
    strategy <tag>
    predicted_makespan <s>
    lower_bound <s>
    island <k>: <device ids>
    bw intra=<B/s> inter=<B/s>
    mem <bytes>
    peak <flops/s>
    memory_model grad_opt=<x> act_scale=<x>
    metaop <id> kind= module= group= tasks= L= level= tp= B= seq= hidden= flops= comm=
           param_bytes= act_bytes= keys=<name:layer,...>
    curve <id> n_max= c_m= w_m= pieces=<lo:hi:alpha:beta_c:beta_w;...> anchors=<-|v,v,...>
    edge <src> <dst>
    wave <k> start= dur= level=
    entry metaop= n= l= offset= span= devices=<d,d,...>
    flow src=<wave>:<metaop> dst=<wave>:<metaop> volume=<bytes>
    end_time <s>
"""
from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ParseError
from .graph import MetaGraph, MetaOp
from .placement import MemoryModel, PlacedPlan, make_flow
from .scaling import Piece, ScalingCurve
from .scheduler import Wave, WaveEntry, WavefrontSchedule
from .validate import resident_memory
from .workload import ClusterTopology

MAGIC = "mtplan-plan 1"


def _f(x):
    return repr(float(x))


def plan_lines(plan: PlacedPlan, predicted=None, lower_bound=None):
    topo, meta = plan.topology, plan.meta
    out = [f"strategy {plan.strategy}",
           f"predicted_makespan {_f(plan.schedule.end_time if predicted is None else predicted)}",
           f"lower_bound {_f(lower_bound or 0.0)}"]
    out += [f"island {k}: {' '.join(map(str, isl))}" for k, isl in enumerate(topo.islands)]
    out += [f"bw intra={_f(topo.intra_bw)} inter={_f(topo.inter_bw)}",
            f"mem {_f(topo.mem_capacity)}", f"peak {_f(topo.peak_flops)}",
            f"memory_model grad_opt={_f(plan.mem_model.grad_opt_multiplier)} "
            f"act_scale={_f(plan.mem_model.activation_scale)}"]
    for mid in sorted(meta.metaops):
        m = meta.metaops[mid]
        b, seq, hidden = (tuple(m.input_size) + (1, 1, 1))[:3]
        keys = ",".join(f"{name}:{layer}" for name, layer in m.layer_keys)
        out.append(f"metaop {mid} kind={m.kind} module={m.module} group={m.param_group or '-'} "
                   f"tasks={','.join(sorted(m.task_ids))} L={m.length} level={m.level} "
                   f"tp={m.tp_degree} B={b} seq={seq} hidden={hidden} flops={_f(m.flops)} "
                   f"comm={_f(m.comm)} param_bytes={m.param_bytes} act_bytes={m.act_bytes} "
                   f"keys={keys}")
        c = plan.curves[mid]
        pieces = ";".join(":".join(_f(v) for v in (p.n_lo, p.n_hi, p.alpha, p.beta_c, p.beta_w))
                          for p in c.pieces)
        anchors = "-" if c.anchors is None else ",".join(_f(a) for a in c.anchors)
        out.append(f"curve {mid} n_max={c.n_max} c_m={_f(c.c_m)} w_m={_f(c.w_m)} "
                   f"pieces={pieces} anchors={anchors}")
    out += [f"edge {p} {q}" for p, q in meta.edges]
    for w in plan.schedule.waves:
        out.append(f"wave {w.index} start={_f(w.start)} dur={_f(w.duration)} level={w.level}")
        for e in w.entries:
            devs = ",".join(map(str, plan.placement[(w.index, e.metaop_id)]))
            out.append(f"entry metaop={e.metaop_id} n={e.n} l={e.layers} offset={e.offset} "
                       f"span={_f(e.span)} devices={devs}")
    for f in plan.flows:
        out.append(f"flow src={f.src[0]}:{f.src[1]} dst={f.dst[0]}:{f.dst[1]} volume={f.volume}")
    out.append(f"end_time {_f(plan.schedule.end_time)}")
    return out


def plan_id(lines):
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def dump_plan(plan, predicted=None, lower_bound=None) -> str:
    body = plan_lines(plan, predicted, lower_bound)
    return "\n".join([MAGIC, f"id {plan_id(body)}"] + body) + "\n"


def _kv(tokens, lineno, source):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", lineno, source)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


class LoadedPlan:
    """A plan read from disk: the PlacedPlan plus its header values."""

    def __init__(self, plan, plan_id, predicted, lower_bound):
        self.plan = plan
        self.id = plan_id
        self.predicted_makespan = predicted
        self.lower_bound = lower_bound


def parse_plan(text, source="<plan>") -> LoadedPlan:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ParseError("not a plan file (missing header)", 1, source)
    hdr = {"strategy": "unknown", "predicted_makespan": 0.0, "lower_bound": 0.0, "end_time": None}
    pid = None
    islands, bw, mem, peak, mm = [], None, None, 1.0, MemoryModel()
    metaops, curves, edges, waves, flows = {}, {}, [], [], []
    placement = {}
    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "id":
                pid = rest[0]
            elif head == "strategy":
                hdr["strategy"] = rest[0]
            elif head in ("predicted_makespan", "lower_bound", "end_time"):
                hdr[head] = float(rest[0])
            elif head == "island":
                islands.append([int(x) for x in line.split(":", 1)[1].split()])
            elif head == "bw":
                kv = _kv(rest, lineno, source)
                bw = (float(kv["intra"]), float(kv["inter"]))
            elif head == "mem":
                mem = float(rest[0])
            elif head == "peak":
                peak = float(rest[0])
            elif head == "memory_model":
                kv = _kv(rest, lineno, source)
                mm = MemoryModel(float(kv["grad_opt"]), float(kv["act_scale"]))
            elif head == "metaop":
                mid, kv = rest[0], _kv(rest[1:], lineno, source)
                L = int(kv["L"])
                keys = tuple((k.rsplit(":", 1)[0], int(k.rsplit(":", 1)[1]))
                             for k in kv["keys"].split(",") if k)
                metaops[mid] = MetaOp(
                    id=mid, member_ops=tuple(f"{mid}.{k}" for k in range(L)), kind=kv["kind"],
                    input_size=(int(kv["B"]), int(kv["seq"]), int(kv["hidden"])),
                    global_batch=int(kv["B"]), tp_degree=int(kv["tp"]), level=int(kv["level"]),
                    param_group=None if kv["group"] == "-" else kv["group"],
                    task_ids=frozenset(t for t in kv["tasks"].split(",") if t),
                    module=kv["module"], layer_keys=keys, flops=float(kv["flops"]),
                    comm=float(kv["comm"]), param_bytes=int(kv["param_bytes"]),
                    act_bytes=int(kv["act_bytes"]))
            elif head == "curve":
                mid, kv = rest[0], _kv(rest[1:], lineno, source)
                pieces = tuple(Piece(*(float(v) for v in p.split(":")))
                               for p in kv["pieces"].split(";"))
                anchors = None if kv["anchors"] == "-" else tuple(
                    float(a) for a in kv["anchors"].split(","))
                curves[mid] = ScalingCurve(pieces, float(kv["c_m"]), float(kv["w_m"]),
                                           int(kv["n_max"]), anchors)
            elif head == "edge":
                edges.append((rest[0], rest[1]))
            elif head == "wave":
                kv = _kv(rest[1:], lineno, source)
                if int(rest[0]) != len(waves):
                    raise ParseError(f"wave {rest[0]} out of order", lineno, source)
                waves.append(Wave(len(waves), float(kv["start"]), float(kv["dur"]), [],
                                  int(kv["level"])))
            elif head == "entry":
                if not waves:
                    raise ParseError("entry before any wave", lineno, source)
                kv = _kv(rest, lineno, source)
                e = WaveEntry(kv["metaop"], int(kv["n"]), int(kv["l"]), int(kv["offset"]),
                              float(kv["span"]))
                waves[-1].entries.append(e)
                placement[(waves[-1].index, e.metaop_id)] = tuple(
                    int(d) for d in kv["devices"].split(",") if d)
            elif head == "flow":
                kv = _kv(rest, lineno, source)
                sw, sm = kv["src"].split(":", 1)
                dw, dm = kv["dst"].split(":", 1)
                flows.append(((int(sw), sm), (int(dw), dm), int(kv["volume"])))
            else:
                raise ParseError(f"unknown record {head!r}", lineno, source)
        except ParseError:
            raise
        except (IndexError, KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"malformed record ({exc})", lineno, source) from None
    if not islands or bw is None or mem is None:
        raise ParseError("plan lacks topology records", None, source)
    if pid is None:
        raise ParseError("plan lacks an id line", None, source)
    missing = sorted(set(metaops) - set(curves))
    if missing:
        raise ParseError(f"no curve for {', '.join(missing)}", None, source)
    topo = ClusterTopology(sorted(d for isl in islands for d in isl), islands, bw[0], bw[1],
                           mem, peak)
    depth = max((m.level for m in metaops.values()), default=-1) + 1
    levels = tuple(tuple(sorted(m for m in metaops if metaops[m].level == k)) for k in range(depth))
    meta = MetaGraph(metaops, tuple(edges), levels)
    end = hdr["end_time"]
    if end is None:
        end = max((w.start + w.duration for w in waves), default=0.0)
    boundaries = [w.index for k, w in enumerate(waves) if k == 0 or w.level != waves[k - 1].level]
    sched = WavefrontSchedule(waves, end, boundaries, topo.N)
    for (sw, sm), (dw, dm), _ in flows:
        for key in ((sw, sm), (dw, dm)):
            if key not in placement:
                raise ParseError(f"flow references unplaced entry {key[0]}:{key[1]}", None, source)
    for w in waves:
        for e in w.entries:
            if e.metaop_id not in metaops:
                raise ParseError(f"wave {w.index} names unknown metaop {e.metaop_id}", None, source)
    plan = PlacedPlan(sched, placement,
                      [make_flow(s, d, v, placement[s], placement[d], topo) for s, d, v in flows],
                      topo, meta, curves, {}, hdr["strategy"], mm)
    plan.memory = resident_memory(plan)
    return LoadedPlan(plan, pid, hdr["predicted_makespan"], hdr["lower_bound"])


def load_plan(path) -> LoadedPlan:
    return parse_plan(Path(path).read_text(), str(path))
