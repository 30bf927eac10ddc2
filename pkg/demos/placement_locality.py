"""How much the locality-aware placement saves over consecutive device ids.

Both placements run the same wave schedule; only the device sets differ.
"""
from mtplan import scenarios
from mtplan.placement import INTER, sequential_place
from mtplan.planner import plan
from mtplan.simulator import simulate

print(f"{'scenario':24s} {'inter GB':>9s} {'seq inter GB':>12s} {'send/recv':>9s} "
      f"{'seq send/recv':>13s} {'ratio':>6s}")
for fam, t, n in (("clip-like", 4, 16), ("clip-like", 10, 32), ("ofasys-like", 7, 16),
                  ("qwen-val-like", 3, 32)):
    spec, topo = scenarios.generate(fam, t, n)
    res = plan(spec, topo)
    ours = res.placed
    seq = sequential_place(ours.schedule, ours.meta, topo, ours.mem_model, ours.curves)
    a, b = simulate(ours), simulate(seq)
    ba, bb = ours.bytes_by_mode(), seq.bytes_by_mode()
    print(f"{fam + f' {t}x{n}':24s} {ba[INTER] / 1e9:9.2f} {bb[INTER] / 1e9:12.2f} "
          f"{a.breakdown['send_recv'] * 1e3:7.2f}ms {b.breakdown['send_recv'] * 1e3:11.2f}ms "
          f"{b.breakdown['send_recv'] / a.breakdown['send_recv']:6.2f}")
