"""From a synthetic multi-task workload to a simulated training iteration.

    python demos/walkthrough.py [family] [tasks] [devices]
"""
import sys

from mtplan import scenarios
from mtplan.cli import evaluate_all

family = sys.argv[1] if len(sys.argv) > 1 else "clip-like"
tasks = int(sys.argv[2]) if len(sys.argv) > 2 else 4
devices = int(sys.argv[3]) if len(sys.argv) > 3 else 16

spec, topo = scenarios.generate(family, tasks, devices, seed=0)
print(f"{family}: {len(spec.tasks)} tasks, {len(spec.modules)} modules on {topo.N} devices "
      f"({len(topo.islands)} islands)")

results, res = evaluate_all(spec, topo)
print(f"\n{len(res.graph.operators)} operators contracted into {len(res.meta.metaops)} MetaOps "
      f"over {len(res.meta.levels)} dependency levels")
for k, (cont, _) in enumerate(res.levels):
    ops = ", ".join(f"{m}:{n:.2f}" for m, n in sorted(cont.alloc.items()))
    print(f"  level {k}: continuous bound {cont.c_star * 1e3:8.2f} ms  devices {{{ops}}}")

print(f"\n{len(res.schedule.waves)} waves; first few:")
for w in res.schedule.waves[:6]:
    body = "  ".join(f"{e.metaop_id}(n={e.n},l={e.layers})" for e in w.entries)
    print(f"  wave {w.index:2d} {w.start * 1e3:8.2f} ms +{w.duration * 1e3:7.2f}  {body}")
print(f"\nplanned compute {res.makespan * 1e3:.2f} ms vs bound {res.lower_bound * 1e3:.2f} ms "
      f"(ratio {res.gap:.4f}), planned in {res.planning_time:.2f}s")

rep = results["wavefront"][1]
print("\none simulated iteration:")
print(rep.breakdown_text(), end="")

ref = results["decoupled-sequential"][1].makespan
print("\nstrategy               iteration (s)  speedup vs decoupled")
for name, (_, r) in results.items():
    print(f"  {name:22s} {r.makespan:10.4f}  {ref / r.makespan:6.3f}x")
