import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mtplan.errors import DegenerateFit, InsufficientProfile, OutOfRange, ParseError
from mtplan.scaling import (Piece, ProfilePoint, ScalingCurve, eval_time, fit_curve, inverse_time,
                            parse_profile_table, scalability, single_piece, solve_allocation,
                            synth_profile)


def test_single_piece_values():
    c = single_piece(0.5, 8.0, 8)
    assert eval_time(c, 1) == 8.5
    assert eval_time(c, 4) == 2.5
    assert scalability(c, 4) == pytest.approx(8.5 / 2.5)
    with pytest.raises(OutOfRange):
        eval_time(c, 9)
    with pytest.raises(OutOfRange):
        eval_time(c, 0.5)


def test_fit_recovers_noise_free_truth():
    truth = ScalingCurve((Piece(1, 8, 1e-3, 0.0, 2e-12), Piece(8, 32, 3e-3, 0.0, 1.9e-12)),
                         c_m=0.0, w_m=1e10, n_max=32)
    # make the truth continuous at 8 so the fit's continuity shift is a no-op
    a2 = 1e-3 + 2e-12 * 1e10 / 8 - 1.9e-12 * 1e10 / 8
    truth = ScalingCurve((truth.pieces[0], Piece(8, 32, a2, 0.0, 1.9e-12)), 0.0, 1e10, 32)
    pts = synth_profile(truth, [1, 2, 4, 8, 12, 16, 32])
    fit = fit_curve(pts, [8], w_m=1e10)
    for n in range(1, 33):
        assert eval_time(fit, n) == pytest.approx(eval_time(truth, n), rel=1e-9)
    assert fit.anchors is None
    assert max(fit.residuals) < 1e-12


def test_fit_with_fixed_alpha_moves_rest_to_beta_c():
    pts = [ProfilePoint(n, 2.0 + 8.0 / n) for n in (1, 2, 4, 8)]
    fit = fit_curve(pts, c_m=4.0, alpha=1.0)
    p = fit.pieces[0]
    assert p.alpha == 1.0
    assert p.beta_c * 4.0 == pytest.approx(1.0)
    assert eval_time(fit, 2) == pytest.approx(6.0)


def test_increasing_points_flatten_instead_of_failing():
    fit = fit_curve([ProfilePoint(1, 1.0), ProfilePoint(2, 2.0)])
    assert eval_time(fit, 1) == pytest.approx(eval_time(fit, 2))


def test_isotonic_correction_on_noisy_points():
    pts = [ProfilePoint(1, 10.0), ProfilePoint(2, 4.0), ProfilePoint(3, 5.0), ProfilePoint(4, 4.5)]
    fit = fit_curve(pts, [2])
    vals = [eval_time(fit, n) for n in range(1, 5)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_fit_errors():
    with pytest.raises(InsufficientProfile):
        fit_curve([ProfilePoint(1, 1.0)])
    with pytest.raises(InsufficientProfile):
        fit_curve([ProfilePoint(n, 1.0 / n) for n in (1, 2, 8)], [4])
    with pytest.raises(DegenerateFit):
        fit_curve([ProfilePoint(1, 1.0), ProfilePoint(4, 1e-9), ProfilePoint(8, 1e-9)])
    with pytest.raises(ValueError):
        ProfilePoint(0, 1.0)


def test_inverse_time_interpolates_between_anchors():
    c = single_piece(0.0, 8.0, 8)
    # T(2)=4, T(3)=8/3: target 3 sits 3/4 of the way from 2 to 3
    assert inverse_time(c, 3.0) == pytest.approx(2.75)
    assert inverse_time(c, 100.0) == 1.0
    assert inverse_time(c, 0.1) == 8.0
    assert inverse_time(c, 2.0, valid=[1, 2, 4, 8]) == pytest.approx(4.0)


def test_solve_allocation_inverts_pieces_exactly():
    c = single_piece(0.0, 8.0, 8)
    assert solve_allocation(c, 3.0) == pytest.approx(8 / 3, rel=1e-12)


@given(st.floats(0.0, 5.0), st.floats(0.1, 100.0), st.integers(2, 64), st.floats(0.0, 1.0))
def test_solve_allocation_roundtrip(alpha, b, n_max, frac):
    c = single_piece(alpha, b, n_max)
    n = 1 + frac * (n_max - 1)
    t = eval_time(c, n)
    assume(eval_time(c, 1) - eval_time(c, n_max) > 1e-9)
    got = solve_allocation(c, t)
    assert eval_time(c, got) == pytest.approx(t, rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=12), st.integers(0, 10**6))
def test_fit_is_monotone_and_positive(times, seed):
    # arbitrary positive measurements, sorted to be roughly decreasing, plus noise
    rng = np.random.default_rng(seed)
    vals = sorted(times, reverse=True)
    pts = [ProfilePoint(k + 1, v * float(1 + 0.2 * rng.standard_normal()) if v > 1 else v)
           for k, v in enumerate(vals)]
    pts = [p if p.time > 0 else ProfilePoint(p.n, 0.1) for p in pts]
    try:
        fit = fit_curve(pts)
    except DegenerateFit:
        return
    ys = [eval_time(fit, n) for n in range(1, fit.n_max + 1)]
    assert all(y > 0 for y in ys)
    assert all(a >= b - 1e-12 * abs(a) for a, b in zip(ys, ys[1:]))


def test_synth_profile_is_seeded():
    c = single_piece(1.0, 10.0, 16)
    a = synth_profile(c, [1, 2, 4], noise=0.05, seed=3)
    b = synth_profile(c, [1, 2, 4], noise=0.05, seed=3)
    assert a == b
    assert a != synth_profile(c, [1, 2, 4], noise=0.05, seed=4)


def test_profile_table():
    tab = parse_profile_table("metaop m1 n=1 config=dp time=2.0\n# c\nmetaop m1 n=2 time=1.1\n")
    assert [p.n for p in tab["m1"]] == [1, 2]
    with pytest.raises(ParseError):
        parse_profile_table("junk\n")
    with pytest.raises(ParseError):
        parse_profile_table("metaop m1 n=1\n")


def test_curve_validation():
    with pytest.raises(ValueError):
        ScalingCurve((Piece(1, 4, 1, 0, 1), Piece(5, 8, 1, 0, 1)), n_max=8)
    with pytest.raises(ValueError):
        ScalingCurve((Piece(1, 4, 1, 0, 1),), n_max=8)
    assert math.isclose(single_piece(1.0, 1.0, 4)(2), 1.5)
