"""Checks of the exhaustive oracle itself and of the planner against it."""
import pytest
from hypothesis import given, settings, strategies as st

from bruteforce import UNIT, optimum, tiny_instance, wave_optimum
from mtplan.planner import plan_levels

CURVES = [(0, 1), (2, 1), (6, 1), (3, 2)]


def test_single_metaop_uses_every_device():
    meta, curves = tiny_instance([(3, 0, 1)], (), 2)
    assert optimum(meta, curves, 2) == 3 * UNIT // 2
    assert wave_optimum(meta, curves, 2) == pytest.approx(18)


def test_perfectly_divisible_level_is_work_bound():
    meta, curves = tiny_instance([(2, 0, 1), (2, 0, 1)], (), 2)
    assert optimum(meta, curves, 2) == 24
    _, sched, _ = plan_levels(meta, curves, 2)
    assert sched.end_time == pytest.approx(24)


def test_barrier_free_beats_waves():
    # the third MetaOp's fixed cost makes it want one device; barrier-free execution
    # lets the other two slide around it, waves cannot
    meta, curves = tiny_instance([(1, 0, 1), (2, 0, 1), (2, 6, 1)], (), 2)
    assert optimum(meta, curves, 2) == 36
    assert wave_optimum(meta, curves, 2) == pytest.approx(42)


def test_dependencies_are_respected():
    meta, curves = tiny_instance([(1, 0, 1), (1, 0, 1)], [("m000", "m001")], 2)
    # the chain runs on both devices one after the other
    assert optimum(meta, curves, 2) == 12
    free, _ = tiny_instance([(1, 0, 1), (1, 0, 1)], (), 2)
    assert optimum(free, curves, 2) == 12


@st.composite
def tiny(draw):
    N = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    specs = [(draw(st.integers(1, 4)),) + draw(st.sampled_from(CURVES)) for _ in range(k)]
    return specs, N


@settings(max_examples=40)
@given(tiny())
def test_oracle_ordering(case):
    specs, N = case
    meta, curves = tiny_instance(specs, (), N)
    opt = optimum(meta, curves, N)
    waves = wave_optimum(meta, curves, N)
    _, sched, _ = plan_levels(meta, curves, N)
    assert opt <= waves * (1 + 1e-12)
    assert waves <= sched.end_time * (1 + 1e-12)
