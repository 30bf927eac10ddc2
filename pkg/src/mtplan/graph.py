"""Operator DAG of a multi-task workload and its contraction into MetaOps.

A workload is first materialised as one operator node per layer.  Operators
that several tasks activate with identical inputs become a single shared
node.  Chains of identical operators are then contracted into MetaOps, and
MetaOps are layered into dependency-free MetaLevels.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

from .errors import CyclicWorkload, UnknownModule, EmptyWorkload


@dataclass(frozen=True)
class Operator:
    id: str
    kind: str
    task_ids: frozenset
    input_size: tuple
    param_group: str | None = None
    module: str = ""
    layer: int = 0
    tp_degree: int = 1
    flops: float = 0.0
    comm: float = 0.0
    param_bytes: int = 0
    act_bytes: int = 0

    def __post_init__(self):
        if any(int(s) <= 0 for s in self.input_size):
            raise ValueError(f"operator {self.id}: input_size must be positive, got {self.input_size}")

    @property
    def signature(self):
        # Two operators carry the same workload iff these match exactly.
        return (self.kind, tuple(self.input_size), self.param_group, self.tp_degree)


@dataclass(frozen=True)
class ComputationGraph:
    operators: dict
    edges: tuple

    def __post_init__(self):
        for i, j in self.edges:
            if i not in self.operators or j not in self.operators:
                raise ValueError(f"edge ({i}, {j}) names an unknown operator")
        topological_order(self.operators, self.edges)

    def successors(self):
        return _adjacency(self.operators, self.edges)

    def topological_order(self):
        return topological_order(self.operators, self.edges)


@dataclass(frozen=True)
class MetaOp:
    id: str
    member_ops: tuple
    kind: str
    input_size: tuple
    global_batch: int
    tp_degree: int = 1
    level: int = 0
    param_group: str | None = None
    task_ids: frozenset = frozenset()
    module: str = ""
    layer_keys: tuple = ()
    flops: float = 0.0
    comm: float = 0.0
    param_bytes: int = 0
    act_bytes: int = 0

    @property
    def length(self):
        return len(self.member_ops)

    L = length


@dataclass(frozen=True)
class MetaGraph:
    metaops: dict
    edges: tuple
    levels: tuple = ()

    def predecessors(self):
        preds = {m: [] for m in self.metaops}
        for p, q in self.edges:
            preds[q].append(p)
        return preds

    def successors(self):
        return _adjacency(self.metaops, self.edges)

    def level_of(self, mid):
        return self.metaops[mid].level

    def topological_order(self):
        return topological_order(self.metaops, self.edges)


def _adjacency(nodes, edges):
    succ = {n: [] for n in nodes}
    for i, j in edges:
        succ[i].append(j)
    for v in succ.values():
        v.sort()
    return succ


def topological_order(nodes, edges, key=None):
    """Kahn's algorithm; ties broken by ``key(node)`` (node id by default)."""
    key = key or (lambda n: n)
    indeg = {n: 0 for n in nodes}
    succ = {n: [] for n in nodes}
    for i, j in edges:
        succ[i].append(j)
        indeg[j] += 1
    heap = [(key(n), n) for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, n = heapq.heappop(heap)
        order.append(n)
        for j in succ[n]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, (key(j), j))
    if len(order) != len(indeg):
        stuck = sorted(n for n, d in indeg.items() if d > 0)
        raise CyclicWorkload(f"cycle through {', '.join(stuck[:6])}")
    return order


def build_graph(workload) -> ComputationGraph:
    """Materialise the per-task data flows of ``workload`` as one operator DAG.

    Operators are keyed by (kind, layer index, input size, parameter group);
    tasks that hit the same key share the node and its ``task_ids`` is the
    union of the activating tasks.
    """
    if not workload.tasks:
        raise EmptyWorkload("workload declares no tasks")
    key_to_id = {}
    ops = {}
    task_sets = {}
    edges = set()

    def node_ids(mod_name, task_id):
        if mod_name not in workload.modules:
            raise UnknownModule(f"task {task_id} references undeclared module {mod_name!r}")
        mod = workload.modules[mod_name]
        ids = []
        for layer in range(mod.layers):
            key = (mod.kind, layer, mod.input_size, mod.group or mod.name)
            if key not in key_to_id:
                oid = f"{mod.name}.{layer:03d}"
                key_to_id[key] = oid
                ops[oid] = (mod, layer)
                task_sets[oid] = set()
            oid = key_to_id[key]
            task_sets[oid].add(task_id)
            ids.append(oid)
        return ids

    for task in workload.tasks:
        for chain in task.flow:
            prev_tail = None
            for mod_name in chain:
                ids = node_ids(mod_name, task.id)
                edges.update(zip(ids, ids[1:]))
                if prev_tail is not None:
                    edges.add((prev_tail, ids[0]))
                prev_tail = ids[-1]

    operators = {}
    for oid in sorted(ops):
        mod, layer = ops[oid]
        operators[oid] = Operator(
            id=oid, kind=mod.kind, task_ids=frozenset(task_sets[oid]),
            input_size=mod.input_size, param_group=mod.group, module=mod.name,
            layer=layer, tp_degree=mod.tp, flops=mod.flops, comm=mod.comm,
            param_bytes=mod.param_bytes, act_bytes=mod.act_bytes,
        )
    for i, j in edges:
        if i == j:
            raise CyclicWorkload(f"self-loop on {i}")
    return ComputationGraph(operators, tuple(sorted(edges)))


def contract(graph: ComputationGraph) -> MetaGraph:
    """Contract chains of identical operators into MetaOps, then assign levels.

    Edge <i,j> is contracted iff out-degree(i) = 1, in-degree(j) = 1 and both
    operators carry the same workload signature.  Contraction never changes
    the degree of an unrelated edge's endpoints, so one topological sweep
    over the edges already reaches the fixpoint.
    """
    order = graph.topological_order()
    pos = {oid: k for k, oid in enumerate(order)}
    outdeg = {o: 0 for o in graph.operators}
    indeg = {o: 0 for o in graph.operators}
    for i, j in graph.edges:
        outdeg[i] += 1
        indeg[j] += 1

    head = {o: o for o in order}
    nxt = {}
    succ = graph.successors()
    ops = graph.operators
    for i in order:
        if outdeg[i] != 1:
            continue
        (j,) = succ[i]
        if indeg[j] == 1 and ops[i].signature == ops[j].signature:
            nxt[i] = j
            head[j] = head[i]

    chains = []
    for o in order:
        if head[o] == o:
            chain = [o]
            while chain[-1] in nxt:
                chain.append(nxt[chain[-1]])
            chains.append(chain)
    chains.sort(key=lambda c: pos[c[0]])

    owner = {}
    metaops = {}
    for k, chain in enumerate(chains):
        mid = f"m{k:03d}"
        first = graph.operators[chain[0]]
        tasks = frozenset().union(*(graph.operators[o].task_ids for o in chain))
        metaops[mid] = MetaOp(
            id=mid, member_ops=tuple(chain), kind=first.kind,
            input_size=tuple(first.input_size), global_batch=int(first.input_size[0]),
            tp_degree=first.tp_degree, param_group=first.param_group, task_ids=tasks,
            module=first.module,
            layer_keys=tuple((graph.operators[o].param_group or graph.operators[o].module,
                              graph.operators[o].layer) for o in chain),
            flops=first.flops, comm=first.comm, param_bytes=first.param_bytes,
            act_bytes=first.act_bytes,
        )
        for o in chain:
            owner[o] = mid
    medges = sorted({(owner[i], owner[j]) for i, j in graph.edges if owner[i] != owner[j]})
    return assign_levels(MetaGraph(metaops, tuple(medges)))


def assign_levels(meta: MetaGraph) -> MetaGraph:
    """Longest-path layering: sources get level 0, others 1 + max predecessor level.

    Plain BFS depth can put both ends of a skip edge on one level; longest-path
    layering cannot.
    """
    preds = meta.predecessors()
    level = {}
    for m in meta.topological_order():
        level[m] = 1 + max((level[p] for p in preds[m]), default=-1)
    depth = max(level.values(), default=-1) + 1
    levels = tuple(tuple(sorted(m for m in meta.metaops if level[m] == k)) for k in range(depth))
    metaops = {mid: replace(op, level=level[mid]) for mid, op in meta.metaops.items()}
    return MetaGraph(metaops, meta.edges, levels)


def metagraph_as_graph(meta: MetaGraph) -> ComputationGraph:
    """View each MetaOp as a single operator (used to check contraction idempotence)."""
    ops = {}
    for mid, m in meta.metaops.items():
        ops[mid] = Operator(id=mid, kind=m.kind, task_ids=m.task_ids, input_size=m.input_size,
                            param_group=m.param_group, module=m.module, tp_degree=m.tp_degree)
    return ComputationGraph(ops, tuple(meta.edges))


def dump_graph(graph: ComputationGraph) -> str:
    lines = []
    for oid in sorted(graph.operators):
        op = graph.operators[oid]
        b, seq, hidden = (tuple(op.input_size) + (1, 1, 1))[:3]
        tasks = ",".join(sorted(op.task_ids))
        lines.append(f"node {oid} kind={op.kind} B={b} seq={seq} hidden={hidden} "
                     f"tasks={tasks} group={op.param_group or '-'}")
    lines += [f"edge {i} {j}" for i, j in graph.edges]
    return "\n".join(lines) + "\n"


def dump_metagraph(meta: MetaGraph) -> str:
    lines = []
    for mid, m in meta.metaops.items():
        b, seq, hidden = (tuple(m.input_size) + (1, 1, 1))[:3]
        lines.append(f"node {mid} kind={m.kind} B={b} seq={seq} hidden={hidden} L={m.length} "
                     f"level={m.level} tasks={','.join(sorted(m.task_ids))} "
                     f"members={m.member_ops[0]}..{m.member_ops[-1]}")
    lines += [f"edge {i} {j}" for i, j in meta.edges]
    return "\n".join(lines) + "\n"
