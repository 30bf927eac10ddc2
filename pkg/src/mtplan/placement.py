"""Wave-by-wave device placement.

Each wave entry gets an ordered device set.  Candidates are scored
lexicographically: memory feasibility, island containment, inter-island
bytes pulled from predecessor entries, intra-island bytes, newly resident
parameter bytes, and finally the fullest device after placement.  When an
entry fits nowhere the placer backtracks over a few earlier waves and
retries them under alternative orderings.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

from .errors import PlacementInfeasible

COPY, INTRA, INTER = "copy", "intra-island", "inter-island"


@dataclass(frozen=True)
class MemoryModel:
    """Resident bytes per device.

    Parameters stay resident for the whole iteration together with their
    gradients and optimizer state (``grad_opt_multiplier`` x parameters), split
    over the tensor-parallel degree.  Every executed layer also keeps its
    boundary activation for the backward pass, split over the data-parallel
    degree n / tp.
    """
    grad_opt_multiplier: float = 3.0
    activation_scale: float = 1.0

    def param_factor(self, op):
        return (1.0 + self.grad_opt_multiplier) / op.tp_degree

    def activation_per_layer(self, op, n):
        return self.activation_scale * op.act_bytes * op.tp_degree / n


def entry_keys(op, entry):
    return op.layer_keys[entry.offset:entry.offset + entry.layers]


def estimate_memory(op, entry, mem_model: MemoryModel):
    """Bytes one device of ``entry`` needs if it holds nothing else."""
    params = op.param_bytes * len(entry_keys(op, entry)) * mem_model.param_factor(op)
    return params + entry.layers * mem_model.activation_per_layer(op, entry.n)


def shard_transfers(volume, src, dst):
    """Split a batch-sharded tensor moving from ``src`` to ``dst`` device lists.

    Device ``src[i]`` holds batch slice [i/a, (i+1)/a), ``dst[j]`` needs
    [j/b, (j+1)/b).  Returns [(from, to, bytes)] including local pieces.
    """
    a, b = len(src), len(dst)
    out = []
    i = j = 0
    while i < a and j < b:
        lo = max(i * b, j * a)
        hi = min((i + 1) * b, (j + 1) * a)
        if hi > lo:
            out.append((src[i], dst[j], volume * (hi - lo) // (a * b)))
        if (i + 1) * b <= (j + 1) * a:
            i += 1
        else:
            j += 1
    return out


def estimate_flow_volume(volume, src, dst):
    """Bytes that actually cross devices when moving ``volume`` from src to dst."""
    return sum(v for s, d, v in shard_transfers(volume, src, dst) if s != d)


@dataclass(frozen=True)
class Flow:
    src: tuple
    dst: tuple
    volume: int
    moved: int
    mode: str
    transfers: tuple = ()


def make_flow(src_key, dst_key, volume, src_devs, dst_devs, topology):
    parts = shard_transfers(volume, list(src_devs), list(dst_devs))
    moves = tuple((s, d, v) for s, d, v in parts if s != d and v > 0)
    moved = sum(v for _, _, v in moves)
    if moved == 0:
        mode = COPY
    elif any(topology.island_of(s) != topology.island_of(d) for s, d, _ in moves):
        mode = INTER
    else:
        mode = INTRA
    return Flow(src_key, dst_key, int(volume), int(moved), mode, moves)


def flow_sources(schedule, meta):
    """(wave, metaop) -> [(src wave, src metaop, volume)] for every entry.

    An entry continuing a MetaOp pulls that MetaOp's output from its previous
    entry; the first entry of a MetaOp pulls each predecessor's output from
    the predecessor's last entry.
    """
    preds = meta.predecessors()
    last = {}
    out = {}
    for w in schedule.waves:
        for e in w.entries:
            key = (w.index, e.metaop_id)
            if e.metaop_id in last:
                src = last[e.metaop_id]
                out[key] = [(src, e.metaop_id, meta.metaops[e.metaop_id].act_bytes)]
            else:
                out[key] = [(last[p], p, meta.metaops[p].act_bytes)
                            for p in sorted(preds[e.metaop_id]) if p in last]
        for e in w.entries:
            last[e.metaop_id] = w.index
    return out


@dataclass
class PlacedPlan:
    schedule: object
    placement: dict
    flows: list
    topology: object
    meta: object
    curves: dict
    memory: dict = field(default_factory=dict)
    strategy: str = "wavefront"
    mem_model: MemoryModel = field(default_factory=MemoryModel)

    @property
    def max_memory(self):
        return max(self.memory.values(), default=0.0)

    @property
    def memory_balance(self):
        used = [v for v in self.memory.values() if v > 0]
        return max(used) / min(used) if used else 1.0

    def bytes_by_mode(self):
        out = {COPY: 0, INTRA: 0, INTER: 0}
        for f in self.flows:
            for s, d, v in f.transfers:
                out[INTER if self.topology.island_of(s) != self.topology.island_of(d) else INTRA] += v
        return out

    def dump(self):
        lines = []
        for w in self.schedule.waves:
            for e in w.entries:
                devs = ",".join(str(d) for d in self.placement[(w.index, e.metaop_id)])
                lines.append(f"wave {w.index} metaop {e.metaop_id} devices={devs}")
        return "\n".join(lines) + "\n"


class _Memory:
    """Resident-memory ledger: parameter keys and activation bytes per device."""

    def __init__(self, devices, mem_model):
        self.mm = mem_model
        self.keys = {d: {} for d in devices}
        self.act = {d: 0.0 for d in devices}

    def copy(self):
        m = _Memory([], self.mm)
        m.keys = {d: dict(k) for d, k in self.keys.items()}
        m.act = dict(self.act)
        return m

    def total(self, d):
        return sum(self.keys[d].values()) + self.act[d]

    def added(self, d, op, entry):
        per_key = op.param_bytes * self.mm.param_factor(op)
        fresh = sum(per_key for k in entry_keys(op, entry) if k not in self.keys[d])
        return fresh, entry.layers * self.mm.activation_per_layer(op, entry.n)

    def add(self, devices, op, entry):
        per_key = op.param_bytes * self.mm.param_factor(op)
        act = entry.layers * self.mm.activation_per_layer(op, entry.n)
        for d in devices:
            for k in entry_keys(op, entry):
                self.keys[d][k] = max(self.keys[d].get(k, 0.0), per_key)
            self.act[d] += act


def _runs(free, islands, n):
    """Contiguous runs of ``n`` free devices anchored at a segment edge."""
    free_set = set(free)
    cands = []
    for isl in islands:
        seg = []
        for d in list(isl) + [None]:
            if d is not None and d in free_set:
                seg.append(d)
                continue
            if len(seg) >= n:
                cands.append(tuple(seg[:n]))
                cands.append(tuple(seg[-n:]))
            seg = []
    if not cands:
        order = sorted(free)
        seg = []
        for d in order + [None]:
            if d is not None and (not seg or d == seg[-1] + 1):
                seg.append(d)
                continue
            if len(seg) >= n:
                cands.append(tuple(seg[:n]))
                cands.append(tuple(seg[-n:]))
            seg = [d] if d is not None else []
    return cands


def _candidates(free, topology, n, sources):
    cands = []
    free_set = set(free)
    for src_devs in sources:
        if len(src_devs) == n and all(d in free_set for d in src_devs):
            cands.append(tuple(src_devs))
        kept = [d for d in src_devs if d in free_set][:n]
        if kept and len(kept) < n:
            isl = {topology.island_of(d) for d in kept}
            extra = sorted((d for d in free if d not in kept),
                           key=lambda d: (topology.island_of(d) not in isl,
                                          min(abs(d - k) for k in kept), d))
            cands.append(tuple(kept + extra[:n - len(kept)]))
        elif len(kept) == n:
            cands.append(tuple(kept))
    cands += _runs(free, topology.islands, n)
    cands.append(tuple(sorted(free)[:n]))
    seen, out = set(), []
    for c in cands:
        if len(c) == n and len(set(c)) == n and c not in seen:
            seen.add(c)
            out.append(c)
    return out


def align_order(devices, src):
    return _align(tuple(devices), tuple(src))


@functools.lru_cache(maxsize=65536)
def _align(devices, src):
    """Order ``devices`` so that as much of ``src``'s sharded data as possible stays put.

    Destination position j holds batch slice [j/b, (j+1)/b); a device that
    already holds an overlapping source slice is given the position with the
    largest overlap.  Unmatched positions take the remaining devices,
    keeping devices of the same island as the source slice together.
    """
    devices = list(devices)
    a, b = len(src), len(devices)
    if not a:
        return tuple(sorted(devices))
    pos_of = {d: i for i, d in enumerate(src)}
    options = []
    for d in devices:
        if d not in pos_of:
            continue
        i = pos_of[d]
        for j in range(i * b // a, min(b, ((i + 1) * b + a - 1) // a)):
            ov = min((i + 1) * b, (j + 1) * a) - max(i * b, j * a)
            if ov > 0:
                options.append((-ov, j, d))
    options.sort()
    slot, used = {}, set()
    for _, j, d in options:
        if j in slot or d in used:
            continue
        slot[j] = d
        used.add(d)
    rest = sorted(d for d in devices if d not in used)
    for j in range(b):
        if j in slot:
            continue
        # the source device feeding most of slice j, to pick a nearby spare
        i = min(a - 1, (j * a) // b)
        anchor = src[i]
        k = min(range(len(rest)), key=lambda k: (abs(rest[k] - anchor), rest[k]))
        slot[j] = rest.pop(k)
    return tuple(slot[j] for j in range(b))


def _min_islands(topology, n):
    size = max(len(i) for i in topology.islands)
    return -(-n // size)


class _Placer:
    def __init__(self, schedule, meta, topology, mem_model, sources):
        self.schedule = schedule
        self.meta = meta
        self.topo = topology
        self.mm = mem_model
        self.sources = sources
        self.cap = topology.mem_capacity
        waves = schedule.waves
        self.next_wave = {w.index: n for w, n in zip(waves, waves[1:])}

    def _order(self, wave, variant, placement):
        def reusable(e):
            return any(smid == e.metaop_id and len(placement[(sw, smid)]) == e.n
                       for sw, smid, _ in self.sources[(wave.index, e.metaop_id)])

        def volume(e):
            return sum(v for _, _, v in self.sources[(wave.index, e.metaop_id)])

        def weight(e):
            op = self.meta.metaops[e.metaop_id]
            return estimate_memory(op, e, self.mm)

        if variant == 1:
            return sorted(wave.entries, key=lambda e: (-weight(e), -e.n, e.metaop_id))
        return sorted(wave.entries, key=lambda e: (not reusable(e), -volume(e), -e.n, e.metaop_id))

    def _score(self, devs, op, entry, srcs, placement, mem, variant):
        fresh_total, worst = 0.0, 0.0
        for d in devs:
            fresh, act = mem.added(d, op, entry)
            fresh_total += fresh
            worst = max(worst, mem.total(d) + fresh + act)
        infeasible = worst > self.cap * (1 + 1e-12)
        islands = len({self.topo.island_of(d) for d in devs}) - _min_islands(self.topo, len(devs))
        inter = intra = 0
        for sw, smid, vol in srcs:
            for s, d, v in shard_transfers(vol, list(placement[(sw, smid)]), list(devs)):
                if s == d:
                    continue
                if self.topo.island_of(s) != self.topo.island_of(d):
                    inter += v
                else:
                    intra += v
        if variant == 2:
            return (infeasible, worst, islands, inter, intra, fresh_total, devs)
        return (infeasible, islands, inter, intra, fresh_total, worst, devs)

    def _main_source(self, wave, e, placement):
        srcs = self.sources[(wave.index, e.metaop_id)]
        if not srcs:
            return ()
        sw, smid, _ = max(srcs, key=lambda s: (s[2], s[1] == e.metaop_id))
        return placement[(sw, smid)]

    def wave_cost(self, wave, assign, placement):
        """(boundary transfer time, inter-island bytes, intra-island bytes) into ``wave``."""
        send, recv = {}, {}
        inter = intra = 0
        for e in wave.entries:
            dst = list(assign[e.metaop_id])
            for sw, smid, vol in self.sources[(wave.index, e.metaop_id)]:
                for s, d, v in shard_transfers(vol, list(placement[(sw, smid)]), dst):
                    if s == d or v == 0:
                        continue
                    if self.topo.island_of(s) != self.topo.island_of(d):
                        inter += v
                        t = v / self.topo.inter_bw
                    else:
                        intra += v
                        t = v / self.topo.intra_bw
                    send[s] = send.get(s, 0.0) + t
                    recv[d] = recv.get(d, 0.0) + t
        phase = max(list(send.values()) + list(recv.values()) + [0.0])
        return phase, inter, intra

    def _fits(self, wave, assign, mem):
        trial = mem.copy()
        for e in wave.entries:
            trial.add(assign[e.metaop_id], self.meta.metaops[e.metaop_id], e)
        worst = max((trial.total(d) for devs in assign.values() for d in devs), default=0.0)
        return worst <= self.cap * (1 + 1e-12)

    def layout_search(self, wave, placement, starts=2):
        """Consecutive-id layout improved by one sweep of swap / insert moves."""
        devices = sorted(self.topo.devices)
        idle = len(devices) - sum(e.n for e in wave.entries)
        items = list(wave.entries) + ([None] if idle > 0 else [])
        mains = {e.metaop_id: self._main_source(wave, e, placement) for e in wave.entries}

        def start(item):
            if item is None:
                return (1, 0, "")
            m = mains[item.metaop_id]
            return (0, min(m), item.metaop_id) if m else (0, len(devices), item.metaop_id)

        def layout(order):
            assign, c = {}, 0
            for item in order:
                size = idle if item is None else item.n
                if item is not None:
                    assign[item.metaop_id] = align_order(devices[c:c + size], mains[item.metaop_id])
                c += size
            return assign

        def cost(order):
            return self.wave_cost(wave, layout(order), placement)

        def improve(order):
            best = cost(order)
            for _ in range(SWEEPS):
                changed = False
                for i in range(len(order)):
                    pick = None
                    for j in range(i + 1, len(order)):
                        swapped = order[:]
                        swapped[i], swapped[j] = swapped[j], swapped[i]
                        moved = order[:i] + order[i + 1:j + 1] + [order[i]] + order[j + 1:]
                        for cand in (swapped, moved):
                            c = cost(cand)
                            if c < best:
                                best, pick = c, cand
                    if pick is not None:
                        order, changed = pick, True
                if not changed:
                    break
            return best, order

        orders = [sorted(items, key=start),
                  sorted(items, key=lambda it: (it is None, "" if it is None else it.metaop_id))]
        best, order = min((improve(o) for o in orders[:starts]), key=lambda r: r[0])
        return layout(order), best

    def place_wave(self, wave, placement, mem, variant):
        greedy, failure = self._greedy_wave(wave, placement, mem.copy(), variant)
        options = []
        if greedy is not None:
            options.append((self.wave_cost(wave, greedy, placement), 0, greedy))
        if variant == 0:
            found, c = self.layout_search(wave, placement)
            if self._fits(wave, found, mem):
                options.append((c, 1, found))
            plain = consecutive_layout(wave, self.topo)
            if self._fits(wave, plain, mem):
                options.append((self.wave_cost(wave, plain, placement), 2, plain))
        if not options:
            return None, failure
        nxt = self.next_wave.get(wave.index)
        if variant == 0 and nxt is not None and len(options) > 1:
            scored = []
            for c, k, assign in options:
                trial = dict(placement)
                for e in wave.entries:
                    trial[(wave.index, e.metaop_id)] = assign[e.metaop_id]
                ahead = min(self.layout_search(nxt, trial, starts=1)[1],
                            self.wave_cost(nxt, consecutive_layout(nxt, self.topo), trial))
                scored.append(((c[0] + ahead[0], c[1] + ahead[1], c[2] + ahead[2]), k, assign))
            options = scored
        _, _, assign = min(options, key=lambda o: (o[0], o[1]))
        for e in wave.entries:
            devs = assign[e.metaop_id]
            placement[(wave.index, e.metaop_id)] = devs
            mem.add(devs, self.meta.metaops[e.metaop_id], e)
        return placement, None

    def _phase(self, flows, placement, override):
        send, recv = {}, {}
        for src, dst, vol in flows:
            a = override.get(src) or placement[src]
            b = override.get(dst) or placement[dst]
            key = (a, b, vol)
            parts = self._memo.get(key)
            if parts is None:
                parts = self._memo[key] = [
                    (s, d, v / self.topo.bandwidth(s, d))
                    for s, d, v in shard_transfers(vol, list(a), list(b)) if s != d and v > 0]
            for s, d, t in parts:
                send[s] = send.get(s, 0.0) + t
                recv[d] = recv.get(d, 0.0) + t
        return max(list(send.values()) + list(recv.values()) + [0.0])

    def refine(self, placement, sweeps=3):
        """Revisit every wave against the whole forward and backward transfer time.

        The per-wave pass only sees flows entering the wave being placed.  Here
        each wave is re-laid out (swap / insert moves over consecutive runs)
        while scoring every transmission phase the wave takes part in,
        including gradients flowing back and consumers several waves later.
        """
        self._memo = {}
        fwd, bwd = {}, {}
        for dst, srcs in self.sources.items():
            for sw, smid, vol in srcs:
                f = ((sw, smid), dst, vol)
                fwd.setdefault(dst[0], []).append(f)
                bwd.setdefault(sw, []).append(f)
        devices = sorted(self.topo.devices)
        for _ in range(sweeps):
            changed = False
            for wave in self.schedule.waves:
                k = wave.index
                touched = {("f", k), ("b", k)}
                for src, dst, _ in bwd.get(k, []):
                    touched.add(("f", dst[0]))
                for src, dst, _ in fwd.get(k, []):
                    touched.add(("b", src[0]))
                phases = [fwd.get(i, []) if t == "f" else bwd.get(i, []) for t, i in sorted(touched)]

                def total(assign):
                    over = {(k, m): d for m, d in assign.items()}
                    return sum(self._phase(fl, placement, over) for fl in phases)

                current = {e.metaop_id: placement[(k, e.metaop_id)] for e in wave.entries}
                best = total(current)
                found = self._reorder(wave, placement, total)
                if found is None:
                    continue
                cost, assign = found
                if cost < best * (1 - 1e-9) and self._fits_all(placement, k, assign):
                    for m, d in assign.items():
                        placement[(k, m)] = d
                    changed = True
            if not changed:
                break
        return placement

    def _reorder(self, wave, placement, total):
        devices = sorted(self.topo.devices)
        idle = len(devices) - sum(e.n for e in wave.entries)
        items = list(wave.entries) + ([None] if idle > 0 else [])
        if len(items) < 2 and idle == 0:
            return None
        mains = {e.metaop_id: self._main_source(wave, e, placement) for e in wave.entries}
        cache = {}

        def layout(order):
            assign, c = {}, 0
            for item in order:
                size = idle if item is None else item.n
                if item is not None:
                    assign[item.metaop_id] = align_order(devices[c:c + size], mains[item.metaop_id])
                c += size
            return assign

        def cost(order):
            key = tuple(None if it is None else it.metaop_id for it in order)
            if key not in cache:
                cache[key] = total(layout(order))
            return cache[key]

        def start(item):
            if item is None:
                return (1, 0, "")
            return (0, min(placement[(wave.index, item.metaop_id)]), item.metaop_id)

        order = sorted(items, key=start)
        best = cost(order)
        for _ in range(SWEEPS):
            changed = False
            for i in range(len(order)):
                pick = None
                for j in range(i + 1, len(order)):
                    swapped = order[:]
                    swapped[i], swapped[j] = swapped[j], swapped[i]
                    moved = order[:i] + order[i + 1:j + 1] + [order[i]] + order[j + 1:]
                    for cand in (swapped, moved):
                        c = cost(cand)
                        if c < best:
                            best, pick = c, cand
                if pick is not None:
                    order, changed = pick, True
            if not changed:
                break
        return best, layout(order)

    def _fits_all(self, placement, k, assign):
        trial = dict(placement)
        for m, d in assign.items():
            trial[(k, m)] = d
        mem = _Memory(self.topo.devices, self.mm)
        for w in self.schedule.waves:
            for e in w.entries:
                mem.add(trial[(w.index, e.metaop_id)], self.meta.metaops[e.metaop_id], e)
        return all(mem.total(d) <= self.cap * (1 + 1e-12) for d in self.topo.devices)

    def _greedy_wave(self, wave, placement, mem, variant):
        free = list(self.topo.devices)
        assign = {}
        for e in self._order(wave, variant, placement):
            op = self.meta.metaops[e.metaop_id]
            srcs = self.sources[(wave.index, e.metaop_id)]
            src_sets = [placement[(sw, smid)] for sw, smid, _ in sorted(srcs, key=lambda s: -s[2])]
            main = self._main_source(wave, e, placement)
            scored = [self._score(align_order(c, main), op, e, srcs, placement, mem, variant)
                      for c in _candidates(free, self.topo, e.n, src_sets)]
            if not scored:
                return None, (wave.index, None)
            best = min(scored)
            if best[0]:
                worst_dev = max(best[-1], key=lambda d: (mem.total(d), -d))
                return None, (wave.index, worst_dev)
            devs = best[-1]
            assign[e.metaop_id] = devs
            mem.add(devs, op, e)
            taken = set(devs)
            free = [d for d in free if d not in taken]
        return assign, None


def consecutive_layout(wave, topology):
    """Entries in MetaOp id order on consecutive device ids."""
    devices = sorted(topology.devices)
    assign, c = {}, 0
    for e in sorted(wave.entries, key=lambda e: e.metaop_id):
        assign[e.metaop_id] = tuple(devices[c:c + e.n])
        c += e.n
    return assign


def _finish(schedule, meta, topology, curves, placement, sources, mem, mem_model, strategy):
    flows = []
    for w in schedule.waves:
        for e in w.entries:
            dst = (w.index, e.metaop_id)
            for sw, smid, vol in sources[dst]:
                flows.append(make_flow((sw, smid), dst, vol, placement[(sw, smid)],
                                       placement[dst], topology))
    memory = {d: mem.total(d) for d in topology.devices}
    return PlacedPlan(schedule, dict(placement), flows, topology, meta, curves, memory, strategy,
                      mem_model)


VARIANTS = 3
SWEEPS = 2


def place(schedule, meta, topology, mem_model=None, curves=None, backtrack_depth=2,
          branching=VARIANTS, strategy="wavefront", refine=True):
    """Place every wave entry; raises PlacementInfeasible when memory cannot fit.

    Each wave can be placed under ``branching`` variants (volume-first order,
    memory-heavy-first order, memory-first scoring).  On failure the search
    revisits at most ``backtrack_depth`` earlier waves.
    """
    mem_model = mem_model or MemoryModel()
    sources = flow_sources(schedule, meta)
    placer = _Placer(schedule, meta, topology, mem_model, sources)
    waves = schedule.waves
    W = len(waves)
    branching = max(1, min(branching, VARIANTS))
    states = [({}, _Memory(topology.devices, mem_model))] + [None] * W
    variant = [0] * W
    floor = 0
    k = 0
    while k < W:
        placement, mem = states[k]
        placement, mem = dict(placement), mem.copy()
        ok, failure = placer.place_wave(waves[k], placement, mem, variant[k])
        if ok is not None:
            states[k + 1] = (placement, mem)
            k += 1
            continue
        floor = max(floor, k - backtrack_depth)
        j = k
        while j >= floor and variant[j] + 1 >= branching:
            j -= 1
        if j < floor:
            wave_idx, dev = failure
            msg = f"wave {wave_idx}: no memory-feasible device set"
            if dev is not None:
                msg += f" (device {dev} would exceed {topology.mem_capacity:.6g} bytes)"
            raise PlacementInfeasible(msg, wave=wave_idx, device=dev)
        variant[j] += 1
        for i in range(j + 1, k + 1):
            variant[i] = 0
        k = j
    placement, mem = states[W]
    if refine:
        placement = placer.refine(dict(placement))
        mem = _Memory(topology.devices, mem_model)
        for w in waves:
            for e in w.entries:
                mem.add(placement[(w.index, e.metaop_id)], meta.metaops[e.metaop_id], e)
    return _finish(schedule, meta, topology, curves, placement, sources, mem, mem_model, strategy)


def sequential_place(schedule, meta, topology, mem_model=None, curves=None, strategy="sequential"):
    """Consecutive device ids per wave in MetaOp id order, no locality scoring."""
    mem_model = mem_model or MemoryModel()
    sources = flow_sources(schedule, meta)
    mem = _Memory(topology.devices, mem_model)
    placement = {}
    for w in schedule.waves:
        for mid, devs in consecutive_layout(w, topology).items():
            placement[(w.index, mid)] = devs
            mem.add(devs, meta.metaops[mid], next(e for e in w.entries if e.metaop_id == mid))
    return _finish(schedule, meta, topology, curves, placement, sources, mem, mem_model, strategy)
