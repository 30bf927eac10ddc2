"""Piecewise alpha-beta execution-time curves.

Each piece models the per-operator time on ``n`` devices as

    T(n) = alpha + beta_c * c + beta_w * w / n        for n in [n_lo, n_hi]

where ``c`` is workload that does not shrink with more devices and ``w`` is
the workload that is split across them.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateFit, InsufficientProfile, OutOfRange, ParseError


@dataclass(frozen=True)
class ProfilePoint:
    n: int
    time: float
    parallel_config: str = "dp"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"profile point needs n >= 1, got {self.n}")
        if not self.time > 0:
            raise ValueError(f"profile point needs time > 0, got {self.time}")


@dataclass(frozen=True)
class Piece:
    n_lo: float
    n_hi: float
    alpha: float
    beta_c: float
    beta_w: float

    def fixed(self, c_m):
        return self.alpha + self.beta_c * c_m

    def scaled(self, w_m):
        return self.beta_w * w_m


@dataclass(frozen=True)
class ScalingCurve:
    pieces: tuple
    c_m: float = 0.0
    w_m: float = 1.0
    n_max: int = 1
    # Isotonic-corrected values at n = 1..n_max; only set when the raw fit
    # was not non-increasing, in which case evaluation interpolates them.
    anchors: tuple | None = None
    residuals: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("curve needs at least one piece")
        if self.pieces[0].n_lo > 1:
            raise ValueError("first piece must start at n = 1")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if a.n_hi != b.n_lo:
                raise ValueError(f"pieces not contiguous at {a.n_hi} / {b.n_lo}")
        if self.pieces[-1].n_hi < self.n_max:
            raise ValueError("pieces do not cover [1, n_max]")

    def piece_for(self, n):
        for p in self.pieces:
            if n <= p.n_hi:
                return p
        return self.pieces[-1]

    def formula(self, n):
        p = self.piece_for(n)
        return p.fixed(self.c_m) + p.scaled(self.w_m) / n

    def __call__(self, n):
        return eval_time(self, n)


def single_piece(alpha, b, n_max, c_m=0.0, beta_c=0.0):
    """Curve ``alpha + beta_c*c_m + b/n`` on [1, n_max] (``w_m`` folded into ``b``)."""
    return ScalingCurve((Piece(1, n_max, alpha, beta_c, b),), c_m=c_m, w_m=1.0, n_max=n_max)


def eval_time(curve: ScalingCurve, n) -> float:
    memo = curve.__dict__.get("_memo")
    if memo is None:
        memo = {}
        object.__setattr__(curve, "_memo", memo)
    t = memo.get(n)
    if t is None:
        t = memo[n] = _eval(curve, n)
    return t


def _eval(curve, n):
    if not 1 - 1e-12 <= n <= curve.n_max + 1e-12:
        raise OutOfRange(f"n={n} outside [1, {curve.n_max}]")
    n = min(max(n, 1.0), float(curve.n_max))
    if curve.anchors is not None:
        return _interp_anchor(curve.anchors, n)
    return curve.formula(n)


def _interp_anchor(anchors, n):
    lo = int(math.floor(n))
    if lo >= len(anchors):
        return anchors[-1]
    frac = n - lo
    if frac == 0:
        return anchors[lo - 1]
    return anchors[lo - 1] * (1 - frac) + anchors[lo] * frac


def scalability(curve: ScalingCurve, n) -> float:
    return eval_time(curve, 1) / eval_time(curve, n)


def inverse_time(curve: ScalingCurve, target, valid=None) -> float:
    """Fractional allocation whose interpolated time equals ``target``.

    Locates neighbouring valid allocations n_lo < n_hi with
    T(n_hi) <= target <= T(n_lo) and interpolates linearly between them.
    Targets beyond the curve clamp to the smallest / largest allocation; a
    flat stretch resolves to the cheaper allocation.
    """
    ns = sorted(valid) if valid is not None else range(1, curve.n_max + 1)
    ns = [n for n in ns if 1 <= n <= curve.n_max]
    if not ns:
        raise OutOfRange("no allocation inside the curve domain")
    times = [eval_time(curve, n) for n in ns]
    if target >= times[0]:
        return float(ns[0])
    if target < times[-1]:
        return float(ns[-1])
    for k in range(1, len(ns)):
        t_lo, t_hi = times[k - 1], times[k]
        if t_hi <= target <= t_lo:
            n_lo, n_hi = ns[k - 1], ns[k]
            if t_hi == t_lo:
                return float(n_lo)
            return ((target - t_lo) * n_hi + (t_hi - target) * n_lo) / (t_hi - t_lo)
    return float(ns[-1])


def solve_allocation(curve: ScalingCurve, target, lo=1.0, hi=None) -> float:
    """Smallest real n in [lo, hi] with T(n) <= target, inverting each piece exactly.

    Used by the continuous allocator, where T is treated as a function of a
    real device count rather than of integer anchors.
    """
    hi = curve.n_max if hi is None else hi
    if target >= eval_time(curve, lo):
        return float(lo)
    if target <= eval_time(curve, hi):
        return float(hi)
    if curve.anchors is not None:
        ns = list(range(max(1, int(math.floor(lo))), int(math.ceil(hi)) + 1))
        for a, b in zip(ns, ns[1:]):
            ta, tb = curve.anchors[a - 1], curve.anchors[b - 1]
            if tb <= target <= ta:
                n = float(a) if ta == tb else a + (ta - target) / (ta - tb)
                return min(max(n, lo), hi)
        return float(hi)
    for p in curve.pieces:
        if p.n_hi < lo:
            continue
        right = min(p.n_hi, hi)
        if curve.formula(right) <= target:
            a = p.fixed(curve.c_m)
            b = p.scaled(curve.w_m)
            n = b / (target - a) if target > a else right
            return min(max(n, max(p.n_lo, lo)), right)
    return float(hi)


def _pav_decreasing(values):
    """Pool-adjacent-violators projection onto non-increasing sequences."""
    blocks = []  # [mean, weight, count]
    for v in values:
        blocks.append([float(v), 1.0, 1])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks.pop()
            w = w1 + w2
            blocks.append([(m1 * w1 + m2 * w2) / w, w, c1 + c2])
    out = []
    for m, _, c in blocks:
        out.extend([m] * c)
    return out


def fit_curve(points, breakpoints=(), c_m=0.0, w_m=1.0, n_max=None, alpha=None) -> ScalingCurve:
    """Least-squares fit of a piecewise alpha-beta curve to profile points.

    The constant column (1) and the non-scaling column (c_m) are collinear
    within a piece, so only their sum is identifiable.  It is assigned to
    ``alpha`` unless a fixed ``alpha`` is supplied, in which case the rest
    goes to ``beta_c``.
    """
    pts = sorted(points, key=lambda p: p.n)
    if len({p.n for p in pts}) < 2:
        raise InsufficientProfile("need profile points at two or more device counts")
    if w_m <= 0:
        raise ValueError("w_m must be positive")
    n_max = int(n_max if n_max is not None else max(p.n for p in pts))
    bounds = [1] + sorted(int(b) for b in breakpoints) + [n_max]
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError(f"breakpoints {list(breakpoints)} must be strictly inside (1, {n_max})")

    raw = []
    residuals = []
    for k, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
        if k == 0:
            sel = [p for p in pts if lo <= p.n <= hi]
        else:
            sel = [p for p in pts if lo < p.n <= hi]
        if len({p.n for p in sel}) < 2:
            raise InsufficientProfile(f"piece [{lo}, {hi}] has fewer than 2 distinct profile points")
        x = np.array([1.0 / p.n for p in sel])
        y = np.array([p.time for p in sel])
        design = np.column_stack([np.ones_like(x), x])
        (const, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
        raw.append([lo, hi, float(const), float(slope)])
        res = y - design @ np.array([const, slope])
        residuals.append(float(np.sqrt(np.mean(res ** 2))))

    # continuity: shift the constant of each right-hand piece to meet its neighbour
    for left, right in zip(raw, raw[1:]):
        b = right[0]
        right[2] += (left[2] + left[3] / b) - (right[2] + right[3] / b)

    pieces = []
    for lo, hi, const, slope in raw:
        if alpha is not None and c_m:
            a, bc = float(alpha), (const - float(alpha)) / c_m
        else:
            a, bc = const, 0.0
        pieces.append(Piece(lo, hi, a, bc, slope / w_m))
    curve = ScalingCurve(tuple(pieces), c_m=c_m, w_m=w_m, n_max=n_max, residuals=tuple(residuals))

    anchors = [curve.formula(n) for n in range(1, n_max + 1)]
    iso = _pav_decreasing(anchors)
    if any(abs(a - b) > 1e-12 * max(1.0, abs(a)) for a, b in zip(anchors, iso)):
        curve = replace(curve, anchors=tuple(iso))
        anchors = iso
    # within a piece a + b/n with b >= 0 is bounded below by its right end
    if min(anchors) <= 0 or (curve.anchors is None
                             and any(curve.formula(p.n_hi) <= 0 for p in curve.pieces)):
        raise DegenerateFit(f"fitted time is non-positive (min anchor {min(anchors):.3g})")
    return curve


def synth_profile(truth: ScalingCurve, ns, noise=0.0, seed=0, config="dp"):
    """Profile points sampled from a known curve with multiplicative Gaussian noise."""
    rng = np.random.default_rng(seed)
    pts = []
    for n in ns:
        t = eval_time(truth, n)
        if noise > 0:
            t *= max(1e-3, 1.0 + noise * rng.standard_normal())
        pts.append(ProfilePoint(int(n), float(t), config))
    return pts


_PROFILE_RE = re.compile(r"^metaop\s+(\S+)\s+(.*)$")


def parse_profile_table(text, source="<profile>"):
    """Parse ``metaop <id> n=<n> config=<label> time=<seconds>`` lines."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _PROFILE_RE.match(line)
        if not m:
            raise ParseError(f"expected 'metaop <id> n=.. time=..', got {line!r}", lineno, source)
        kv = dict(tok.split("=", 1) for tok in m.group(2).split() if "=" in tok)
        try:
            pt = ProfilePoint(int(kv["n"]), float(kv["time"]), kv.get("config", "dp"))
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad profile point: {exc}", lineno, source) from None
        out.setdefault(m.group(1), []).append(pt)
    return out


def dump_curve(curve: ScalingCurve) -> str:
    lines = [f"piece {p.n_lo:g} {p.n_hi:g} {p.alpha:.12g} {p.beta_c:.12g} {p.beta_w:.12g}"
             for p in curve.pieces]
    return "\n".join(lines) + "\n"
