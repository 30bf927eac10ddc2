"""Command-line entry point (``mtplan``).

Exit codes: 0 success, 2 unreadable or malformed input, 3 infeasible
(no valid allocation or no memory-feasible placement), 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import scenarios
from .baselines import PLANNERS
from .errors import InvalidPlan, ParseError, PlanError
from .placement import MemoryModel
from .planio import dump_plan, load_plan
from .planner import plan as run_planner
from .simulator import SimulationReport, localize, simulate
from .validate import check, violations
from .workload import dump_topology, dump_workload, load_topology, load_workload

log = logging.getLogger("mtplan")

REFERENCE = "decoupled-sequential"


def _write(out, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _inputs(args):
    workload = load_workload(args.workload)
    if args.seed is not None:
        workload.seed = args.seed
    return workload, load_topology(args.topology)


def plan_svg(placed):
    local = localize(placed)
    end = placed.schedule.end_time
    return SimulationReport(end, {}, local, {}, {}, placed.strategy).svg()


def gantt_csv(placed):
    lines = ["wave,metaop,start,end,devices"]
    for w, m, a, b, _ in placed.schedule.gantt_rows():
        devs = " ".join(map(str, placed.placement[(w, m)]))
        lines.append(f"{w},{m},{a:.12g},{b:.12g},{devs}")
    return "\n".join(lines) + "\n"


def summary_text(result, pid):
    lines = [f"plan_id {pid}",
             f"strategy {result.placed.strategy}",
             f"metaops {len(result.meta.metaops)}",
             f"levels {len(result.meta.levels)}",
             f"waves {len(result.schedule.waves)}",
             f"lower_bound {result.lower_bound:.12g}",
             f"predicted_makespan {result.makespan:.12g}",
             f"gap {result.gap:.9f}",
             f"max_memory {result.placed.max_memory:.12g}"]
    return "\n".join(lines) + "\n"


def cmd_plan(args):
    workload, topo = _inputs(args)
    t0 = time.perf_counter()
    result = run_planner(workload, topo, eps=args.eps, backtrack_depth=args.backtrack_depth)
    wall = time.perf_counter() - t0
    check(result.placed)
    text = dump_plan(result.placed, result.makespan, result.lower_bound)
    pid = text.splitlines()[1].split()[1]
    out = Path(args.out)
    _write(out, "plan.txt", text)
    _write(out, "schedule.txt", result.schedule.dump())
    _write(out, "placement.txt", result.placed.dump())
    _write(out, "gantt.csv", gantt_csv(result.placed))
    summary = summary_text(result, pid)
    _write(out, "summary.txt", summary)
    if args.svg:
        _write(out, "plan.svg", plan_svg(result.placed))
    sys.stdout.write(summary)
    print(f"planning_time {wall:.3f}s")
    return 0


def report_files(report, out, svg=False):
    _write(out, "breakdown.txt", report.breakdown_text())
    _write(out, "timeline.csv", report.timeline_csv())
    _write(out, "memory.csv", report.memory_csv())
    _write(out, "utilization.csv", report.utilization_csv())
    if svg:
        _write(out, "gantt.svg", report.svg())


def cmd_simulate(args):
    loaded = load_plan(args.plan)
    bad = violations(loaded.plan)
    if bad:
        raise InvalidPlan(bad)
    report = simulate(loaded.plan)
    report_files(report, Path(args.out), args.svg)
    sys.stdout.write(f"plan_id {loaded.id}\n" + report.breakdown_text())
    return 0


def evaluate_all(workload, topo, eps=1e-7, backtrack_depth=2):
    """Plan and simulate every strategy; returns {strategy: (PlacedPlan, report)}."""
    result = run_planner(workload, topo, eps=eps, backtrack_depth=backtrack_depth)
    plans = {result.placed.strategy: result.placed}
    for name, fn in PLANNERS.items():
        plans[name] = fn(workload, topo, MemoryModel(), backtrack_depth)
    out = {}
    for name, p in plans.items():
        check(p)
        out[name] = (p, simulate(p))
    return out, result


def compare_table(results):
    ref = results[REFERENCE][1].makespan
    lines = ["strategy,makespan,speedup_vs_decoupled,fwd_bwd,param_sync,send_recv"]
    for name, (_, rep) in results.items():
        fr = rep.fractions
        lines.append(f"{name},{rep.makespan:.12g},{ref / rep.makespan:.6f},"
                     f"{fr['fwd_bwd']:.6f},{fr['param_sync']:.6f},{fr['send_recv']:.6f}")
    return "\n".join(lines) + "\n"


def cmd_compare(args):
    workload, topo = _inputs(args)
    results, _ = evaluate_all(workload, topo, args.eps, args.backtrack_depth)
    table = compare_table(results)
    if args.out:
        _write(Path(args.out), "compare.csv", table)
    sys.stdout.write(table)
    return 0


def default_phases(task_ids, iterations=100):
    """A join-then-exit sequence: the last task joins late, then half the tasks leave."""
    ids = list(task_ids)
    phases = []
    if len(ids) > 1:
        phases.append((iterations, ids[:-1]))
    phases.append((iterations, ids))
    if len(ids) > 1:
        phases.append((iterations, ids[:max(1, len(ids) // 2)]))
    return phases


def dump_phases(phases):
    return "".join(f"phase iterations={k} tasks={','.join(ids)}\n" for k, ids in phases)


def parse_phases(text, source="<phases>", all_tasks=()):
    phases = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head != "phase":
            raise ParseError(f"unknown directive {head!r}", lineno, source)
        kv = dict(tok.split("=", 1) for tok in rest if "=" in tok)
        try:
            iters = int(kv["iterations"])
        except (KeyError, ValueError):
            raise ParseError("phase needs iterations=<int>", lineno, source) from None
        ids = list(all_tasks) if kv.get("tasks", "*") == "*" else kv["tasks"].split(",")
        unknown = [t for t in ids if t not in all_tasks]
        if unknown or iters < 0 or not ids:
            raise ParseError(f"bad phase (unknown tasks {unknown})" if unknown else "bad phase",
                             lineno, source)
        phases.append((iters, ids))
    if not phases:
        raise ParseError("no phases", None, source)
    return phases


def cmd_gen(args):
    spec, topo = scenarios.generate(args.scenario, args.tasks, args.devices,
                                    0 if args.seed is None else args.seed)
    out = Path(args.out)
    _write(out, "workload.txt", dump_workload(spec))
    _write(out, "topology.txt", dump_topology(topo))
    _write(out, "phases.txt", dump_phases(default_phases([t.id for t in spec.tasks])))
    print(f"wrote {out / 'workload.txt'}, {out / 'topology.txt'}, {out / 'phases.txt'}")
    return 0


def cmd_dynamic(args):
    workload, topo = _inputs(args)
    ids = [t.id for t in workload.tasks]
    if args.phases:
        phases = parse_phases(Path(args.phases).read_text(), args.phases, ids)
    else:
        phases = default_phases(ids)
    out = Path(args.out)
    total = {}
    lines = ["phase,iterations,tasks,strategy,plan_id,iteration_time,cumulative_time"]
    for k, (iters, tids) in enumerate(phases):
        results, result = evaluate_all(workload.subset(tids), topo, args.eps, args.backtrack_depth)
        for name, (p, rep) in results.items():
            text = dump_plan(p)
            pid = text.splitlines()[1].split()[1]
            if name == result.placed.strategy:
                _write(out / f"phase{k}", "plan.txt", text)
            total[name] = total.get(name, 0.0) + iters * rep.makespan
            lines.append(f"{k},{iters},{' '.join(tids)},{name},{pid},{rep.makespan:.12g},"
                         f"{total[name]:.12g}")
    table = "\n".join(lines) + "\n"
    _write(out, "dynamic.csv", table)
    for name, t in total.items():
        print(f"{name} cumulative_time {t:.6g}s")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mtplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--workload", required=True)
        sp.add_argument("--topology", required=True)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--seed", type=int, default=None, help="override the profile noise seed")
        sp.add_argument("--eps", type=float, default=1e-7, help="bisection tolerance")
        sp.add_argument("--backtrack-depth", type=int, default=2)

    sp = sub.add_parser("plan", help="plan a workload onto a cluster")
    common(sp)
    sp.add_argument("--svg", action="store_true", help="also write a Gantt chart of the plan")
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("simulate", help="replay a plan file")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("compare", help="simulate every strategy on one workload")
    common(sp, out_required=False)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("gen", help="write a synthetic scenario")
    sp.add_argument("--scenario", required=True, choices=scenarios.SCENARIOS)
    sp.add_argument("--tasks", type=int, required=True)
    sp.add_argument("--devices", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("dynamic", help="re-plan as tasks join and leave")
    common(sp)
    sp.add_argument("--phases", help="phase file (default: join-then-exit sequence)")
    sp.set_defaults(fn=cmd_dynamic)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, InvalidPlan):
            for v in exc.violations:
                print(f"  {v}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is an internal bug
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
