"""Wavefront scheduling of ASL-tuples.

A wave is a time interval in which a fixed set of MetaOp slices runs on
disjoint device groups.  Each MetaLevel is packed into waves greedily; the
per-level schedules are then concatenated so every level starts after the
previous one ends.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .scaling import eval_time

_EPS = 1e-9


@dataclass
class WaveEntry:
    metaop_id: str
    n: int
    layers: int
    offset: int = 0
    span: float = 0.0


@dataclass
class Wave:
    index: int
    start: float
    duration: float
    entries: list
    level: int = 0

    @property
    def end(self):
        return self.start + self.duration

    def devices_used(self):
        return sum(e.n for e in self.entries)


@dataclass
class WavefrontSchedule:
    waves: list
    end_time: float
    level_boundaries: list = field(default_factory=list)
    N: int = 0
    labels: list = field(default_factory=list)

    def dump(self):
        lines = []
        for w in self.waves:
            lines.append(f"wave {w.index} start={w.start:.12g} dur={w.duration:.12g}")
            for e in w.entries:
                lines.append(f"  entry metaop={e.metaop_id} n={e.n} l={e.layers}")
        return "\n".join(lines) + "\n"

    def gantt_rows(self):
        for w in self.waves:
            for e in w.entries:
                yield w.index, e.metaop_id, w.start, w.start + e.span, e.n


@dataclass
class _Tuple:
    metaop_id: str
    n: int
    layers: int
    orig_n: int = 0
    extended: bool = False
    src: object = None

    def __post_init__(self):
        self.orig_n = self.orig_n or self.n


def _time(curves, mid, n):
    return eval_time(curves[mid], n)


def propose_candidate_set(remaining, N, curves, shares=None):
    """Greedy largest-allocation-first packing, at most one tuple per MetaOp."""
    order = sorted(remaining, key=lambda t: (-t.n, -t.layers * _time(curves, t.metaop_id, t.n),
                                             t.metaop_id))
    chosen, seen, free = [], set(), N
    for t in order:
        if t.metaop_id in seen or t.n > free:
            continue
        chosen.append(_Tuple(t.metaop_id, t.n, t.layers, src=t))
        seen.add(t.metaop_id)
        free -= t.n
    return chosen


def _reserving(remaining, N, curves, need_of):
    by = {}
    for t in remaining:
        by.setdefault(t.metaop_id, []).append(t)
    rem = {m: sum(t.layers * _time(curves, m, t.n) for t in ts) for m, ts in by.items()}
    order = sorted(by, key=lambda m: (-max(t.n for t in by[m]), -rem[m], m))
    need = {m: need_of(m, by[m]) for m in by}
    chosen, free = [], N
    for i, m in enumerate(order):
        reserve = sum(need[o] for o in order[i + 1:])
        opts = sorted(by[m], key=lambda t: (-t.n, -t.layers))
        pick = next((t for t in opts if t.n <= free - reserve + _EPS), None)
        if pick is None:
            pick = next((t for t in opts if t.n <= free), None)
        if pick is None:
            continue
        chosen.append(_Tuple(m, pick.n, pick.layers, src=pick))
        free -= pick.n
    return chosen


def propose_reserving(remaining, N, curves, shares=None):
    """Largest first, but leave room for the smallest tuple of every later MetaOp."""
    return _reserving(remaining, N, curves, lambda m, ts: min(t.n for t in ts))


def propose_by_share(remaining, N, curves, shares=None):
    """Largest first, leaving each later MetaOp its average device share."""
    shares = shares or {}
    return _reserving(remaining, N, curves,
                      lambda m, ts: shares.get(m, min(t.n for t in ts)))


def propose_small_first(remaining, N, curves, shares=None):
    order = sorted(remaining, key=lambda t: (t.n, -t.layers * _time(curves, t.metaop_id, t.n),
                                             t.metaop_id))
    chosen, seen, free = [], set(), N
    for t in order:
        if t.metaop_id in seen or t.n > free:
            continue
        chosen.append(_Tuple(t.metaop_id, t.n, t.layers, src=t))
        seen.add(t.metaop_id)
        free -= t.n
    return chosen


def propose_with_spare(remaining, N, curves, shares=None):
    """Largest first on N-1 devices, the last one runs the shortest waiting 1-device tuple."""
    full = propose_candidate_set(remaining, N, curves)
    if sum(c.n for c in full) < N or N < 2:
        return full
    reduced = propose_candidate_set(remaining, N - 1, curves)
    ids = {c.metaop_id for c in full} | {c.metaop_id for c in reduced}
    waiting = [t for t in remaining if t.n == 1 and t.metaop_id not in ids]
    if not waiting:
        return full
    t = min(waiting, key=lambda t: (t.layers * _time(curves, t.metaop_id, 1), t.metaop_id))
    return reduced + [_Tuple(t.metaop_id, 1, t.layers, src=t)]


PROPOSERS = {
    "greedy": propose_candidate_set,
    "reserve": propose_reserving,
    "share": propose_by_share,
    "small": propose_small_first,
    "spare": propose_with_spare,
}


def extend_resources_if_needed(candidates, N, remaining, valid_sets, curves):
    """Grow candidates to their next valid allocation while devices sit idle.

    MetaOps with the most remaining execution time are grown first.
    """
    left = {}
    for t in remaining:
        left[t.metaop_id] = left.get(t.metaop_id, 0) + t.layers
    idle = N - sum(c.n for c in candidates)
    while idle > 0:
        best = None
        for c in candidates:
            nxt = [v for v in valid_sets[c.metaop_id] if v > c.n]
            if not nxt or nxt[0] - c.n > idle:
                continue
            key = (-left[c.metaop_id] * _time(curves, c.metaop_id, c.n), c.metaop_id)
            if best is None or key < best[0]:
                best = (key, c, nxt[0])
        if best is None:
            break
        _, c, n_new = best
        idle -= n_new - c.n
        c.n = n_new
        c.extended = True
    return candidates


def _wave_span(candidates, curves):
    return min(c.layers * _time(curves, c.metaop_id, c.orig_n) for c in candidates)


def align_time_span(candidates, curves, remaining, t_wave=None):
    """Cut candidates so the wave lasts as long as its shortest tuple.

    The wave length is fixed from the allocations proposed before extension.
    Extended candidates run faster and may take extra layers from sibling
    tuples of their MetaOp to fill that length.  Returns
    (duration, [(metaop_id, n, layers)], leftover tuples).
    """
    if t_wave is None:
        t_wave = _wave_span(candidates, curves)
    avail = {}
    for t in remaining:
        avail[t.metaop_id] = avail.get(t.metaop_id, 0) + t.layers

    def fit(c, span):
        per_layer = _time(curves, c.metaop_id, c.n)
        k = int(math.floor(span / per_layer * (1 + _EPS) + _EPS))
        cap = avail[c.metaop_id] if c.extended else c.layers
        return min(max(k, 1), cap)

    sched = [(c.metaop_id, c.n, fit(c, t_wave)) for c in candidates]
    duration = max(k * _time(curves, mid, n) for mid, n, k in sched)
    # A forced single layer can stretch the wave past t_wave; let the other
    # entries fill that stretch instead of idling.
    if duration > t_wave * (1 + _EPS):
        sched = [(c.metaop_id, c.n, fit(c, duration)) for c in candidates]

    left = {id(t): _Tuple(t.metaop_id, t.n, t.layers) for t in remaining}
    for c, (mid, n, k) in zip(candidates, sched):
        own = left[id(c.src)]
        siblings = sorted((left[id(t)] for t in remaining
                           if t.metaop_id == mid and t is not c.src), key=lambda t: -t.n)
        need = k
        for t in [own] + siblings:
            take = min(need, t.layers)
            t.layers -= take
            need -= take
        if c.extended:
            own.n = c.n
    merged = {}
    for t in (left[id(t)] for t in remaining):
        if t.layers <= 0:
            continue
        key = (t.metaop_id, t.n)
        if key in merged:
            merged[key].layers += t.layers
        else:
            merged[key] = _Tuple(t.metaop_id, t.n, t.layers)
    return duration, sched, list(merged.values())


def _fill(sched, duration, N, curves):
    busy = sum(n * k * _time(curves, mid, n) for mid, n, k in sched)
    return busy / (N * duration)


def _avail(remaining):
    out = {}
    for t in remaining:
        out[t.metaop_id] = out.get(t.metaop_id, 0) + t.layers
    return out


def _span_options(candidates, remaining, curves, mode):
    spans = {c.layers * _time(curves, c.metaop_id, c.orig_n) for c in candidates}
    if mode == "shortest":
        return [min(spans)]
    left = _avail(remaining)
    spans |= {left[c.metaop_id] * _time(curves, c.metaop_id, c.n) for c in candidates}
    return sorted(spans)


def _copy(cands):
    return [_Tuple(c.metaop_id, c.n, c.layers, c.orig_n, c.extended, c.src) for c in cands]


def wave_options(remaining, N, curves, valid_sets, propose=propose_candidate_set, span="shortest",
                 shares=None):
    """Every (duration, sched, leftover) the proposer admits under a span rule."""
    cands = propose(remaining, N, curves, shares)
    cands = extend_resources_if_needed(cands, N, remaining, valid_sets, curves)
    out = []
    for t_wave in _span_options(cands, remaining, curves, span):
        out.append(align_time_span(_copy(cands), curves, remaining, t_wave=t_wave))
    return out


def _best_fill(options, N, curves):
    best = None
    for opt in options:
        f = _fill(opt[1], opt[0], N, curves)
        if best is None or f > best[0] * (1 + 1e-12):
            best = (f, opt)
    return best[1]


def _finish_greedily(remaining, N, curves, valid_sets, propose, shares):
    t = 0.0
    while remaining:
        d, _, remaining = _best_fill(wave_options(remaining, N, curves, valid_sets, propose, "any",
                                                  shares), N, curves)
        t += d
    return t


def craft_wave(remaining, N, curves, valid_sets, propose=propose_candidate_set, span="shortest",
               shares=None):
    """Propose, extend and align one wave; returns (duration, sched, leftover).

    ``span="shortest"`` ends the wave with its shortest proposed tuple.
    ``span="fill"`` tries every candidate's span (and every candidate's
    remaining work) and keeps the busiest wave; ``span="lookahead"`` instead
    keeps the option whose greedy completion of the level ends first.
    """
    opts = wave_options(remaining, N, curves, valid_sets, propose,
                        "shortest" if span == "shortest" else "any", shares)
    if span == "shortest" or len(opts) == 1:
        return opts[0]
    if span == "fill":
        return _best_fill(opts, N, curves)
    scored = [(o[0] + _finish_greedily(o[2], N, curves, valid_sets, propose, shares), k)
              for k, o in enumerate(opts)]
    return opts[min(scored)[1]]


def _initial(plan):
    return [_Tuple(t.metaop_id, t.n, t.l) for mid in sorted(plan.tuples)
            for t in plan.tuples[mid].tuples]


def plan_shares(plan, curves):
    """Average devices each MetaOp keeps busy over the level's ideal span."""
    if plan.c_star <= 0:
        return {}
    return {mid: sum(t.n * t.l * _time(curves, mid, t.n) for t in e.tuples) / plan.c_star
            for mid, e in plan.tuples.items()}


def _emit(steps, t_start, level, first_index, offsets, curves):
    waves = []
    t = t_start
    for dur, sched in steps:
        entries = []
        for mid, n, k in sched:
            off = offsets.get(mid, 0)
            entries.append(WaveEntry(mid, n, k, off, k * _time(curves, mid, n)))
            offsets[mid] = off + k
        waves.append(Wave(first_index + len(waves), t, dur, entries, level))
        t += dur
    return waves, t


def schedule_level(plan, N, t_start, curves, valid_sets, level=0, first_index=0, offsets=None,
                   propose="greedy", span="shortest"):
    """Pack one level's ASL-tuples into waves; returns (waves, t_end).

    The defaults are the plain greedy wavefront loop.
    """
    offsets = {} if offsets is None else offsets
    proposer = PROPOSERS[propose]
    shares = plan_shares(plan, curves)
    remaining = _initial(plan)
    steps = []
    while remaining:
        dur, sched, remaining = craft_wave(remaining, N, curves, valid_sets, proposer, span, shares)
        steps.append((dur, sched))
    return _emit(steps, t_start, level, first_index, offsets, curves)


def beam_level(plan, N, t_start, curves, valid_sets, level=0, first_index=0, offsets=None,
               width=4, proposers=tuple(PROPOSERS)):
    """Beam search over wave choices (proposer x span option).

    Partial schedules are ranked by elapsed time plus remaining busy
    device-time spread over all N devices, which never overestimates.
    """
    offsets = {} if offsets is None else offsets
    shares = plan_shares(plan, curves)

    def bound(rem):
        return sum(t.n * t.layers * _time(curves, t.metaop_id, t.n) for t in rem) / N

    beam = [(0.0, _initial(plan), [])]
    done = None
    while beam:
        grown = []
        for t, rem, steps in beam:
            seen = set()
            for name in proposers:
                for d, sched, left in wave_options(rem, N, curves, valid_sets, PROPOSERS[name],
                                                   "any", shares):
                    key = tuple(sorted(sched))
                    if key in seen:
                        continue
                    seen.add(key)
                    state = (t + d, left, steps + [(d, sched)])
                    if not left:
                        if done is None or state[0] < done[0] - _EPS * state[0]:
                            done = state
                    else:
                        grown.append(state)
        grown.sort(key=lambda s: s[0] + bound(s[1]))
        beam = grown[:width]
        if done is not None and all(s[0] + bound(s[1]) >= done[0] for s in beam):
            break
    return _emit(done[2], t_start, level, first_index, offsets, curves)


def search_level(plan, N, t_start, curves, valid_sets, level=0, first_index=0, offsets=None,
                 alternatives=(), width=4):
    """Shortest of several wave schedules for one level; returns (waves, t_end, label).

    Candidates are the plain greedy loop, each proposer under the
    "shortest", "fill" and "lookahead" span rules, and a beam search over
    ``plan`` and every plan in ``alternatives``.  Ties keep the earlier
    candidate, so the plain loop wins whenever nothing beats it.
    """
    offsets = {} if offsets is None else offsets
    best = None

    def consider(label, fn):
        nonlocal best
        off = dict(offsets)
        waves, t_end = fn(off)
        if best is None or t_end < best[1] - _EPS * max(abs(t_end), 1e-30):
            best = (waves, t_end, off, label)

    args = (N, t_start, curves, valid_sets, level, first_index)
    consider("greedy/shortest", lambda off: schedule_level(plan, *args, off))
    for name in ("greedy", "reserve", "share"):
        for span in ("fill", "lookahead"):
            consider(f"{name}/{span}", lambda off, name=name, span=span:
                     schedule_level(plan, *args, off, propose=name, span=span))
        if name != "greedy":
            consider(f"{name}/shortest", lambda off, name=name:
                     schedule_level(plan, *args, off, propose=name))
    for k, p in enumerate(alternatives, 1):
        for span in ("shortest", "lookahead"):
            consider(f"alt{k}/{span}", lambda off, p=p, span=span:
                     schedule_level(p, *args, off, span=span))
    if width > 0:
        for k, p in enumerate((plan,) + tuple(alternatives)):
            consider(f"beam{k}", lambda off, p=p: beam_level(p, *args, off, width=width))
    waves, t_end, off, label = best
    offsets.clear()
    offsets.update(off)
    return waves, t_end, label


def merge_levels(per_level, N=0):
    """Concatenate per-level wave lists, shifting each after the previous level's end."""
    waves, boundaries = [], []
    cursor = 0.0
    for level_waves, t_end in per_level:
        base = level_waves[0].start if level_waves else cursor
        shift = cursor - base
        boundaries.append(len(waves))
        for w in level_waves:
            waves.append(Wave(len(waves), w.start + shift, w.duration, w.entries, w.level))
        cursor = t_end + shift
    return WavefrontSchedule(waves, cursor, boundaries, N)
