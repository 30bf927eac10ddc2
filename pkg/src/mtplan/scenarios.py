"""Synthetic multi-task multi-modal workloads.

Three families with different cross-modal modules:

* ``clip-like``: modality encoder towers paired per task, joined by a tiny
  contrastive loss.
* ``ofasys-like``: light modality adaptors feeding a shared encoder-decoder LM
  whose cost is comparable to the adaptors.
* ``qwen-val-like``: vision and audio encoders feeding a large decoder-only LM
  that dominates the iteration.

Sizes are loosely modelled on public transformer configurations; the
per-layer FLOPs, parameter bytes and activation bytes follow the usual dense
transformer estimates.  Everything is derived from the seed, so generating
the same scenario twice yields byte-identical files.
"""
from __future__ import annotations

import numpy as np

from .workload import ClusterTopology, ModuleSpec, TaskSpec, WorkloadSpec
from .scaling import Piece

SCENARIOS = ("clip-like", "ofasys-like", "qwen-val-like")

PEAK_FLOPS = 312e12
EFFICIENCY = 0.45
ISLAND = 4
INTRA_BW = 200e9
INTER_BW = 25e9
MEM = 80e9
# launch/synchronisation overhead per layer and per-byte cost of the
# non-scaling term (gradient bucket handling, all-gather of small tensors)
LAYER_OVERHEAD = 4e-4
BETA_C = 2.5e-12
# beyond one island, data-parallel collectives slow down the scalable term
CROSS_ISLAND_PENALTY = 0.15


def layer_flops(batch, seq, hidden):
    return 24.0 * batch * seq * hidden * hidden + 4.0 * batch * seq * seq * hidden


def layer_param_bytes(hidden):
    return 12 * hidden * hidden * 2


def truth_pieces(flops, comm, n_max=64):
    """Two-piece alpha-beta truth, continuous at the island boundary."""
    beta_w = 1.0 / (PEAK_FLOPS * EFFICIENCY)
    b1 = beta_w * flops
    delta = CROSS_ISLAND_PENALTY * b1 / ISLAND
    b2 = b1 - ISLAND * delta
    return [
        Piece(1, ISLAND, LAYER_OVERHEAD, BETA_C, beta_w),
        Piece(ISLAND, n_max, LAYER_OVERHEAD + delta, BETA_C, beta_w * b2 / b1),
    ]


class _Builder:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.modules = {}
        self.curves = {}
        self.breakpoints = {}

    def module(self, name, kind, layers, batch, seq, hidden, group=None, tp=1, flops=None):
        f = layer_flops(batch, seq, hidden) if flops is None else flops
        pb = layer_param_bytes(hidden)
        m = ModuleSpec(name=name, kind=kind, layers=layers, batch=batch, seq=seq, hidden=hidden,
                       tp=tp, group=group, param_bytes=pb, flops=f, comm=float(pb))
        self.modules[name] = m
        self.curves[name] = truth_pieces(f, float(pb))
        self.breakpoints[name] = [ISLAND]
        return name

    def batch(self, choices):
        return int(self.rng.choice(choices))


# (modality, layers, seq, hidden)
_CLIP_TOWERS = {
    "text": (12, 77, 1024),
    "vision": (32, 257, 1280),
    "audio": (12, 229, 768),
    "depth": (12, 197, 384),
    "thermal": (12, 197, 768),
    "imu": (6, 250, 512),
}
_CLIP_PAIRS = [("vision", "text"), ("audio", "text"), ("depth", "vision"), ("thermal", "vision"),
               ("audio", "vision"), ("imu", "text"), ("imu", "vision"), ("depth", "text"),
               ("thermal", "audio"), ("thermal", "text")]


def _clip_like(n_tasks, b):
    tasks = []
    for k in range(n_tasks):
        pair = _CLIP_PAIRS[k % len(_CLIP_PAIRS)]
        bsz = b.batch([96, 192, 384, 768])
        tid = f"t{k:02d}"
        tails = []
        for mod in pair:
            layers, seq, hidden = _CLIP_TOWERS[mod]
            tails.append(b.module(f"{tid}_{mod}", f"{mod}-enc-layer", layers, bsz, seq, hidden,
                                  group=f"{mod}_enc"))
        loss = b.module(f"{tid}_loss", "contrastive-loss", 1, bsz, 1, 1024,
                        flops=4.0 * bsz * bsz * 1024)
        tasks.append(TaskSpec(tid, tuple((t, loss) for t in tails)))
    return tasks


# adaptor name -> (layers, tokens, hidden)
_OFA_ADAPTORS = {
    "text": (1, 128, 768),
    "image": (12, 196, 768),
    "audio": (12, 250, 768),
    "video": (12, 392, 768),
    "motion": (2, 64, 512),
    "box": (1, 16, 768),
    "structure": (2, 96, 512),
}
_OFA_TASKS = [("image",), ("audio",), ("text",), ("video",), ("image", "box"), ("motion",),
              ("structure",), ("image",), ("audio",), ("video",)]


def _ofasys_like(n_tasks, b):
    tasks = []
    for k in range(n_tasks):
        tid = f"t{k:02d}"
        bsz = b.batch([192, 384, 768])
        mods = ("text",) + _OFA_TASKS[k % len(_OFA_TASKS)]
        mods = tuple(dict.fromkeys(mods))
        tokens = sum(_OFA_ADAPTORS[m][1] for m in mods)
        enc = b.module(f"{tid}_lm_enc", "lm-enc-layer", 12, bsz, tokens, 1024, group="lm_enc")
        dec = b.module(f"{tid}_lm_dec", "lm-dec-layer", 12, bsz, 64, 1024, group="lm_dec")
        chains = []
        for m in mods:
            layers, seq, hidden = _OFA_ADAPTORS[m]
            a = b.module(f"{tid}_{m}", f"{m}-adaptor", layers, bsz, seq, hidden, group=f"{m}_adaptor")
            chains.append((a, enc, dec))
        tasks.append(TaskSpec(tid, tuple(chains)))
    return tasks


_QWEN_TASKS = [("vision",), ("audio",), ("vision", "audio")]


def _qwen_val_like(n_tasks, b):
    tasks = []
    for k in range(n_tasks):
        tid = f"t{k:02d}"
        mods = _QWEN_TASKS[k % len(_QWEN_TASKS)]
        bsz = b.batch([96, 192, 384])
        tokens = 256
        chains = []
        for m in mods:
            if m == "vision":
                enc = b.module(f"{tid}_vision", "vision-enc-layer", 32, bsz, 256, 1664, group="vision_enc")
                tokens += 256
            else:
                enc = b.module(f"{tid}_audio", "audio-enc-layer", 32, bsz, 750, 1280, group="audio_enc")
                tokens += 375
            chains.append(enc)
        llm = b.module(f"{tid}_llm", "llm-dec-layer", 32, bsz, tokens, 4096, group="llm", tp=2)
        tasks.append(TaskSpec(tid, tuple((c, llm) for c in chains)))
    return tasks


_FAMILIES = {"clip-like": _clip_like, "ofasys-like": _ofasys_like, "qwen-val-like": _qwen_val_like}


def generate(name, n_tasks, n_devices, seed=0):
    """Return (WorkloadSpec, ClusterTopology) for a named scenario family."""
    if name not in _FAMILIES:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if n_tasks < 1 or n_devices < 1:
        raise ValueError("need at least one task and one device")
    b = _Builder(seed)
    tasks = _FAMILIES[name](n_tasks, b)
    used = {m for t in tasks for chain in t.flow for m in chain}
    modules = {k: v for k, v in b.modules.items() if k in used}
    spec = WorkloadSpec(modules, tasks, {k: b.curves[k] for k in modules}, {},
                        {k: b.breakpoints[k] for k in modules}, 0.0, seed).validate()
    topo = ClusterTopology.uniform(n_devices, ISLAND, INTRA_BW, INTER_BW, MEM, PEAK_FLOPS)
    return spec, topo


def bundled_suite():
    """(family, tasks, devices) triples of the bundled evaluation suite."""
    out = []
    for fam, counts in (("clip-like", (4, 7, 10)), ("ofasys-like", (4, 7, 10)), ("qwen-val-like", (3,))):
        for t in counts:
            for n in (8, 16, 32):
                out.append((fam, t, n))
    return out
