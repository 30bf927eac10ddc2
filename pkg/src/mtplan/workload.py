"""Workload and topology files.

Both are line-oriented text with ``key=value`` tokens; ``#`` starts a comment.
A JSON object with the same fields is accepted interchangeably.

Workload grammar::

    module <name> kind=<k> layers=<L> B=<b> seq=<s> hidden=<h> [tp=<t>] [group=<g>]
           [param_bytes=<per layer>] [flops=<w>] [comm=<c>] [act_bytes=<bytes>]
    task <id> flow=<m1>><m2>,<m3>><m2>
    curve <module> n_lo=<a> n_hi=<b> alpha=<s> beta_c=<s> beta_w=<s>
    metaop <module> n=<n> config=<label> time=<seconds>
    breakpoints <module> <b1>,<b2>
    noise <relative stddev>
    seed <int>

Topology grammar::

    island <id>: <device ids>
    bw intra=<B/s> inter=<B/s>
    mem <bytes>
    peak <flops per second>
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, UnknownModule, WorkloadError, EmptyWorkload
from .scaling import Piece, ProfilePoint

ELEMENT_BYTES = 2


@dataclass(frozen=True)
class ModuleSpec:
    name: str
    kind: str
    layers: int
    batch: int
    seq: int = 1
    hidden: int = 1
    tp: int = 1
    group: str | None = None
    param_bytes: int = 0
    flops: float = 1.0
    comm: float = 0.0
    act_bytes: int = 0

    def __post_init__(self):
        if min(self.layers, self.batch, self.seq, self.hidden, self.tp) < 1:
            raise WorkloadError(f"module {self.name}: sizes must be positive")
        if self.act_bytes == 0:
            object.__setattr__(self, "act_bytes", self.batch * self.seq * self.hidden * ELEMENT_BYTES)

    @property
    def input_size(self):
        return (self.batch, self.seq, self.hidden)


@dataclass(frozen=True)
class TaskSpec:
    id: str
    flow: tuple


@dataclass
class WorkloadSpec:
    modules: dict
    tasks: list
    curves: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)
    breakpoints: dict = field(default_factory=dict)
    noise: float = 0.0
    seed: int = 0

    def validate(self):
        if not self.tasks:
            raise EmptyWorkload("workload declares no tasks")
        seen = set()
        for t in self.tasks:
            if t.id in seen:
                raise WorkloadError(f"duplicate task id {t.id}")
            seen.add(t.id)
            for chain in t.flow:
                for name in chain:
                    if name not in self.modules:
                        raise UnknownModule(f"task {t.id} references undeclared module {name!r}")
        for name in list(self.curves) + list(self.profiles):
            if name not in self.modules:
                raise UnknownModule(f"profile for undeclared module {name!r}")
        for name in self.modules:
            if name not in self.curves and name not in self.profiles:
                raise WorkloadError(f"module {name} has neither a curve nor profile points")
        return self

    def subset(self, task_ids):
        """Same modules and curves, restricted to the given tasks."""
        keep = [t for t in self.tasks if t.id in set(task_ids)]
        return WorkloadSpec(self.modules, keep, self.curves, self.profiles,
                            self.breakpoints, self.noise, self.seed)


@dataclass
class ClusterTopology:
    devices: list
    islands: list
    intra_bw: float
    inter_bw: float
    mem_capacity: float
    peak_flops: float = 1.0

    def __post_init__(self):
        flat = sorted(d for isl in self.islands for d in isl)
        if flat != sorted(self.devices) or len(set(flat)) != len(flat):
            raise ParseError("islands must partition the devices")
        if not self.intra_bw >= self.inter_bw > 0:
            raise ParseError("need intra_bw >= inter_bw > 0")
        self._island_of = {d: k for k, isl in enumerate(self.islands) for d in isl}

    @property
    def N(self):
        return len(self.devices)

    def island_of(self, d):
        return self._island_of[d]

    def bandwidth(self, a, b):
        return self.intra_bw if self._island_of[a] == self._island_of[b] else self.inter_bw

    @classmethod
    def uniform(cls, n_devices, island_size=8, intra_bw=200e9, inter_bw=25e9,
                mem_capacity=80e9, peak_flops=312e12):
        devices = list(range(n_devices))
        islands = [devices[k:k + island_size] for k in range(0, n_devices, island_size)]
        return cls(devices, islands, intra_bw, inter_bw, mem_capacity, peak_flops)


def _kv(tokens, lineno, source):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", lineno, source)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _num(kv, key, cast, lineno, source, default=None):
    if key not in kv:
        if default is None:
            raise ParseError(f"missing {key}=", lineno, source)
        return default
    try:
        return cast(float(kv[key])) if cast is int else cast(kv[key])
    except ValueError:
        raise ParseError(f"bad value for {key}: {kv[key]!r}", lineno, source) from None


def parse_workload(text, source="<workload>") -> WorkloadSpec:
    if text.lstrip().startswith("{"):
        return workload_from_dict(json.loads(text))
    modules, tasks, curves, profiles, bps = {}, [], {}, {}, {}
    noise, seed = 0.0, 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "module":
                name, kv = rest[0], _kv(rest[1:], lineno, source)
                modules[name] = ModuleSpec(
                    name=name, kind=kv.get("kind", name),
                    layers=_num(kv, "layers", int, lineno, source),
                    batch=_num(kv, "B", int, lineno, source),
                    seq=_num(kv, "seq", int, lineno, source, 1),
                    hidden=_num(kv, "hidden", int, lineno, source, 1),
                    tp=_num(kv, "tp", int, lineno, source, 1),
                    group=kv.get("group") if kv.get("group") not in (None, "-") else None,
                    param_bytes=_num(kv, "param_bytes", int, lineno, source, 0),
                    flops=_num(kv, "flops", float, lineno, source, 1.0),
                    comm=_num(kv, "comm", float, lineno, source, 0.0),
                    act_bytes=_num(kv, "act_bytes", int, lineno, source, 0),
                )
            elif head == "task":
                tid, kv = rest[0], _kv(rest[1:], lineno, source)
                if "flow" not in kv:
                    raise ParseError("task needs flow=", lineno, source)
                flow = tuple(tuple(part.split(">")) for part in kv["flow"].split(","))
                tasks.append(TaskSpec(tid, flow))
            elif head == "curve":
                name, kv = rest[0], _kv(rest[1:], lineno, source)
                piece = Piece(_num(kv, "n_lo", int, lineno, source), _num(kv, "n_hi", int, lineno, source),
                              _num(kv, "alpha", float, lineno, source),
                              _num(kv, "beta_c", float, lineno, source, 0.0),
                              _num(kv, "beta_w", float, lineno, source))
                curves.setdefault(name, []).append(piece)
            elif head == "metaop":
                name, kv = rest[0], _kv(rest[1:], lineno, source)
                profiles.setdefault(name, []).append(ProfilePoint(
                    _num(kv, "n", int, lineno, source), _num(kv, "time", float, lineno, source),
                    kv.get("config", "dp")))
            elif head == "breakpoints":
                bps[rest[0]] = [int(b) for b in rest[1].split(",") if b] if len(rest) > 1 else []
            elif head == "noise":
                noise = float(rest[0])
            elif head == "seed":
                seed = int(rest[0])
            else:
                raise ParseError(f"unknown directive {head!r}", lineno, source)
        except ParseError:
            raise
        except (IndexError, ValueError) as exc:
            raise ParseError(str(exc) or "malformed line", lineno, source) from None
    return WorkloadSpec(modules, tasks, curves, profiles, bps, noise, seed).validate()


def workload_from_dict(d) -> WorkloadSpec:
    try:
        modules = {m["name"]: ModuleSpec(**m) for m in d["modules"]}
        tasks = [TaskSpec(t["id"], tuple(tuple(c) for c in t["flow"])) for t in d["tasks"]]
        curves = {k: [Piece(**p) for p in v] for k, v in d.get("curves", {}).items()}
        profiles = {k: [ProfilePoint(**p) for p in v] for k, v in d.get("profiles", {}).items()}
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad workload object: {exc}") from None
    return WorkloadSpec(modules, tasks, curves, profiles, d.get("breakpoints", {}),
                        d.get("noise", 0.0), d.get("seed", 0)).validate()


def workload_to_dict(spec: WorkloadSpec):
    from dataclasses import asdict
    return {
        "modules": [asdict(m) for m in spec.modules.values()],
        "tasks": [{"id": t.id, "flow": [list(c) for c in t.flow]} for t in spec.tasks],
        "curves": {k: [asdict(p) for p in v] for k, v in spec.curves.items()},
        "profiles": {k: [asdict(p) for p in v] for k, v in spec.profiles.items()},
        "breakpoints": spec.breakpoints,
        "noise": spec.noise,
        "seed": spec.seed,
    }


def dump_workload(spec: WorkloadSpec) -> str:
    lines = [f"seed {spec.seed}", f"noise {spec.noise:.12g}"]
    for m in spec.modules.values():
        lines.append(
            f"module {m.name} kind={m.kind} layers={m.layers} B={m.batch} seq={m.seq} "
            f"hidden={m.hidden} tp={m.tp} group={m.group or '-'} param_bytes={m.param_bytes} "
            f"flops={m.flops:.12g} comm={m.comm:.12g} act_bytes={m.act_bytes}")
    for t in spec.tasks:
        lines.append(f"task {t.id} flow=" + ",".join(">".join(c) for c in t.flow))
    for name, pieces in spec.curves.items():
        for p in pieces:
            lines.append(f"curve {name} n_lo={p.n_lo:g} n_hi={p.n_hi:g} alpha={p.alpha:.12g} "
                         f"beta_c={p.beta_c:.12g} beta_w={p.beta_w:.12g}")
    for name, pts in spec.profiles.items():
        for p in pts:
            lines.append(f"metaop {name} n={p.n} config={p.parallel_config} time={p.time:.12g}")
    for name, b in spec.breakpoints.items():
        lines.append(f"breakpoints {name} {','.join(str(x) for x in b)}")
    return "\n".join(lines) + "\n"


def parse_topology(text, source="<topology>") -> ClusterTopology:
    if text.lstrip().startswith("{"):
        d = json.loads(text)
        islands = [list(map(int, isl)) for isl in d["islands"]]
        return ClusterTopology(sorted(x for isl in islands for x in isl), islands,
                               float(d["intra_bw"]), float(d["inter_bw"]),
                               float(d["mem_capacity"]), float(d.get("peak_flops", 1.0)))
    islands, intra, inter, mem, peak = [], None, None, None, 1.0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "island":
                ids = line.split(":", 1)[1].replace(",", " ").split()
                islands.append([int(x) for x in ids])
            elif head == "bw":
                kv = _kv(rest, lineno, source)
                intra, inter = float(kv["intra"]), float(kv["inter"])
            elif head == "mem":
                mem = float(rest[0])
            elif head == "peak":
                peak = float(rest[0])
            else:
                raise ParseError(f"unknown directive {head!r}", lineno, source)
        except ParseError:
            raise
        except (IndexError, KeyError, ValueError) as exc:
            raise ParseError(f"malformed line ({exc})", lineno, source) from None
    if not islands or intra is None or mem is None:
        raise ParseError("topology needs island, bw and mem lines", None, source)
    devices = sorted(d for isl in islands for d in isl)
    return ClusterTopology(devices, islands, intra, inter, mem, peak)


def dump_topology(topo: ClusterTopology) -> str:
    lines = [f"island {k}: {' '.join(str(d) for d in isl)}" for k, isl in enumerate(topo.islands)]
    lines.append(f"bw intra={topo.intra_bw:.12g} inter={topo.inter_bw:.12g}")
    lines.append(f"mem {topo.mem_capacity:.12g}")
    lines.append(f"peak {topo.peak_flops:.12g}")
    return "\n".join(lines) + "\n"


def load_workload(path) -> WorkloadSpec:
    return parse_workload(Path(path).read_text(), str(path))


def load_topology(path) -> ClusterTopology:
    return parse_topology(Path(path).read_text(), str(path))
