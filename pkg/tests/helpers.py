"""Small workload builders shared by the tests."""
import functools

from mtplan import scenarios
from mtplan.planner import plan
from mtplan.scaling import Piece
from mtplan.workload import ModuleSpec, TaskSpec, WorkloadSpec

SPEED = 1.4e14


def module(name, layers=4, batch=16, kind=None, tp=1, group=None, flops=1e12, comm=1e6,
           param_bytes=1 << 20, seq=128, hidden=256):
    return ModuleSpec(name, kind or name, layers, batch, seq, hidden, tp, group, param_bytes,
                      flops, comm)


def workload(mods, flows, n_max=32, seed=0, noise=0.0):
    """WorkloadSpec from ModuleSpecs and ``{task: [[module, ...], ...]}``."""
    modules = {m.name: m for m in mods}
    tasks = [TaskSpec(t, tuple(tuple(c) for c in chains)) for t, chains in flows.items()]
    curves = {m.name: [Piece(1, n_max, 2e-4, 1e-11, 1.0 / SPEED)] for m in mods}
    return WorkloadSpec(modules, tasks, curves, noise=noise, seed=seed).validate()


def small_workload():
    mods = [module("enc_a", 6, kind="enc", group="ga"),
            module("enc_b", 4, kind="enc2", batch=8, flops=4e11),
            module("head", 2, kind="head", flops=2e11)]
    return workload(mods, {"t0": [["enc_a", "head"]], "t1": [["enc_b", "head"]]})


@functools.lru_cache(maxsize=None)
def suite_result(family, tasks, devices, seed=0):
    spec, topo = scenarios.generate(family, tasks, devices, seed)
    return plan(spec, topo)


def random_workload(rng, max_devices=16):
    """Small random multi-task workload plus topology, drawn from a numpy Generator."""
    from mtplan.workload import ClusterTopology

    N = int(rng.integers(1, max_devices + 1))
    n_mods = int(rng.integers(1, 7))
    mods = []
    for k in range(n_mods):
        tp = 2 if N >= 2 and rng.random() < 0.15 else 1
        mods.append(module(f"m{k}", int(rng.integers(1, 13)),
                           batch=int(rng.choice([1, 2, 4, 6, 8, 12, 16, 32])) * tp, tp=tp,
                           kind=f"k{rng.integers(0, 3)}", flops=float(10 ** rng.uniform(10, 13)),
                           comm=float(10 ** rng.uniform(4, 8)),
                           group="shared" if rng.random() < 0.2 else None))
    ident = [(m.kind, m.group or m.name, m.batch, m.seq, m.hidden) for m in mods]
    canon = {k: ident.index(key) for k, key in enumerate(ident)}
    flows = {}
    for t in range(int(rng.integers(1, 5))):
        chains = []
        for _ in range(int(rng.integers(1, 3))):
            size = int(rng.integers(1, min(3, n_mods) + 1))
            picks = rng.choice(n_mods, size=size, replace=False)
            # modules with equal kind, shape and weights are one operator; ordering chains by
            # that identity keeps the merged graph acyclic
            chain = sorted({canon[p] for p in picks})
            chains.append([f"m{p}" for p in chain])
        flows[f"t{t}"] = chains
    used = {m for chains in flows.values() for c in chains for m in c}
    spec = workload([m for m in mods if m.name in used], flows, seed=int(rng.integers(0, 1 << 30)))
    island = int(rng.choice([1, 2, 4, 8]))
    return spec, ClusterTopology.uniform(N, island, 200e9, 25e9, 1e13, 312e12)
