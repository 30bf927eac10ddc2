"""Re-planning as tasks join and leave a multi-task training job."""
from mtplan import scenarios
from mtplan.cli import default_phases, evaluate_all

spec, topo = scenarios.generate("ofasys-like", 7, 16)
ids = [t.id for t in spec.tasks]
total = {}
for k, (iters, tids) in enumerate(default_phases(ids)):
    results, res = evaluate_all(spec.subset(tids), topo)
    row = []
    for name, (_, rep) in results.items():
        total[name] = total.get(name, 0.0) + iters * rep.makespan
        row.append(f"{name}={rep.makespan:.3f}s")
    print(f"phase {k}: {len(tids)} tasks x {iters} iterations  " + "  ".join(row))
print("\ncumulative:")
best = total["wavefront"]
for name, t in sorted(total.items(), key=lambda kv: kv[1]):
    print(f"  {name:22s} {t:9.1f}s  ({t / best:.3f}x)")
