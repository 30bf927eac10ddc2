import json

import pytest
from hypothesis import given, strategies as st

from mtplan import scenarios
from mtplan.errors import EmptyWorkload, ParseError, UnknownModule
from mtplan.workload import (ClusterTopology, dump_topology, dump_workload, parse_topology,
                             parse_workload, workload_to_dict)

from helpers import small_workload

TEXT = """\
# two tasks sharing a head
module vis kind=enc layers=4 B=16 seq=64 hidden=128 group=v flops=1e12
module head kind=head layers=2 B=16 seq=64 hidden=128
task t0 flow=vis>head
task t1 flow=head
curve vis n_lo=1 n_hi=8 alpha=1e-4 beta_c=0 beta_w=1e-14
curve head n_lo=1 n_hi=8 alpha=1e-4 beta_c=0 beta_w=1e-14
"""


def test_parse_basic_workload():
    w = parse_workload(TEXT)
    assert [t.id for t in w.tasks] == ["t0", "t1"]
    assert w.tasks[0].flow == (("vis", "head"),)
    assert w.modules["vis"].group == "v"
    assert w.modules["head"].group is None
    # activations default to B*seq*hidden fp16 elements
    assert w.modules["vis"].act_bytes == 16 * 64 * 128 * 2


def test_dump_parse_roundtrip():
    w = small_workload()
    again = parse_workload(dump_workload(w))
    assert dump_workload(again) == dump_workload(w)
    assert again.modules == w.modules


def test_json_is_accepted_interchangeably():
    w = small_workload()
    from_json = parse_workload(json.dumps(workload_to_dict(w)))
    assert dump_workload(from_json) == dump_workload(w)


def test_generated_scenarios_roundtrip():
    for fam in scenarios.SCENARIOS:
        spec, topo = scenarios.generate(fam, 3, 8, seed=1)
        assert dump_workload(parse_workload(dump_workload(spec))) == dump_workload(spec)
        assert dump_topology(parse_topology(dump_topology(topo))) == dump_topology(topo)


@pytest.mark.parametrize("text,lineno", [
    ("module a kind=x layers=2 B=4\nbogus line\n", 2),
    ("module a kind=x B=4\n", 1),
    ("module a kind=x layers=two B=4\n", 1),
    ("module a layers=2 B=4\ntask t\n", 2),
])
def test_parse_errors_carry_line_numbers(text, lineno):
    with pytest.raises(ParseError) as exc:
        parse_workload(text, "w.txt")
    assert exc.value.exit_code == 2
    assert f"w.txt:{lineno}" in str(exc.value)


def test_unknown_module_and_empty():
    with pytest.raises(UnknownModule):
        parse_workload("module a layers=1 B=1\ncurve a n_lo=1 n_hi=2 alpha=1 beta_w=1\n"
                       "task t flow=a>b\n")
    with pytest.raises(EmptyWorkload):
        parse_workload("module a layers=1 B=1\ncurve a n_lo=1 n_hi=2 alpha=1 beta_w=1\n")


def test_nonpositive_sizes_rejected():
    with pytest.raises(ParseError):
        parse_workload("module a layers=0 B=1\n")


def test_topology_parse_and_errors():
    t = parse_topology("island 0: 0 1 2 3\nisland 1: 4 5 6 7\nbw intra=2e11 inter=2.5e10\nmem 8e10\n")
    assert t.N == 8 and t.island_of(5) == 1
    assert t.bandwidth(0, 3) == 2e11 and t.bandwidth(0, 4) == 2.5e10
    with pytest.raises(ParseError):
        parse_topology("island 0: 0 1\nisland 1: 1 2\nbw intra=1 inter=1\nmem 1\n")
    with pytest.raises(ParseError):
        parse_topology("island 0: 0 1\nbw intra=1 inter=2\nmem 1\n")
    with pytest.raises(ParseError):
        parse_topology("island 0: 0 1\n")


@given(st.integers(1, 64), st.integers(1, 16))
def test_uniform_islands_partition_devices(n, k):
    t = ClusterTopology.uniform(n, k)
    assert sorted(d for isl in t.islands for d in isl) == list(range(n))
    assert all(len(isl) <= k for isl in t.islands)


def test_subset_keeps_modules():
    w = small_workload()
    sub = w.subset(["t1"])
    assert [t.id for t in sub.tasks] == ["t1"]
    assert sub.modules is w.modules
