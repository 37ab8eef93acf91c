"""Compute-optimal exponents measured from families of loss curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import ConfigError, LossCurve

DEFAULT_WINDOW = (1e6, 1e8)
DEFAULT_SLICES = 15
SUBWINDOW_SLICES = 20


@dataclass
class FrontierFit:
    """Fit ``y = a x^b`` in log-log space."""

    a: float
    b: float
    window: tuple
    n_slices: int
    residual: float
    flags: list = field(default_factory=list)

    @property
    def eta(self) -> float:
        """Loss exponent under the convention ``P* = a f^-eta``."""
        return -self.b


@dataclass
class IsoFlopSlice:
    flops: float
    losses: list          # (d, interpolated risk)
    min_d: int
    min_risk: float


def fit_power_law(points, window=None) -> FrontierFit:
    """Least squares of ``log y`` on ``log x``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ConfigError("need at least 3 points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigError("power-law fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    b, loga = np.polyfit(lx, ly, 1)
    resid = ly - (loga + b * lx)
    win = tuple(window) if window is not None else (float(x.min()), float(x.max()))
    return FrontierFit(float(np.exp(loga)), float(b), win, len(x), float(np.sqrt(np.mean(resid**2))))


class _LogLogCurve:
    """Monotone cubic interpolant of log risk against log flops."""

    def __init__(self, curve: LossCurve):
        keep = (curve.flops > 0) & np.isfinite(curve.risk) & (curve.risk > 0)
        f, p = curve.flops[keep], curve.risk[keep]
        if f.size < 2:
            raise ConfigError(f"curve {curve.label} has fewer than 2 usable points")
        self.d = curve.d
        self.x = np.log(f)
        self.interp = PchipInterpolator(self.x, np.log(p), extrapolate=False)
        self.deriv = self.interp.derivative()
        self.lo, self.hi = float(f[0]), float(f[-1])

    def covers(self, f: float) -> bool:
        return self.lo * (1 - 1e-12) <= f <= self.hi * (1 + 1e-12)

    def __call__(self, f):
        return np.exp(self.interp(np.log(f)))


def _group_by_d(curves):
    by_d: dict[int, list[_LogLogCurve]] = {}
    for c in curves:
        by_d.setdefault(c.d, []).append(_LogLogCurve(c))
    return by_d


def isoflop_slices(curves, window=DEFAULT_WINDOW, n: int = DEFAULT_SLICES) -> list[IsoFlopSlice]:
    """Per-slice minimum over d at ``n`` geometrically spaced flops values.

    Curves sharing a d (replicates) are averaged. A curve contributes to a
    slice only if the slice lies inside its flops range.
    """
    if len({c.d for c in curves}) < 2:
        raise ConfigError("need curves for at least 2 distinct d")
    f_min, f_max = window
    if not 0 < f_min <= f_max:
        raise ConfigError("bad window")
    fs = np.geomspace(f_min, f_max, n) if n > 1 else np.array([float(f_min)])
    by_d = _group_by_d(curves)
    out = []
    for f in fs:
        losses = []
        for d in sorted(by_d):
            group = [g for g in by_d[d] if g.covers(f)]
            if len(group) == len(by_d[d]):
                losses.append((d, float(np.mean([g(f) for g in group]))))
        if len(losses) < 2:
            raise ConfigError(f"window outside data: only {len(losses)} curve(s) cover flops={f:.3g}")
        d_min, p_min = min(losses, key=lambda t: t[1])
        out.append(IsoFlopSlice(float(f), losses, int(d_min), p_min))
    return out


def approach1(slices) -> FrontierFit:
    """xi-hat from a power-law fit of the per-slice minimizing d."""
    if len(slices) < 3:
        raise ConfigError("need at least 3 slices")
    fit = fit_power_law([(s.flops, s.min_d) for s in slices], (slices[0].flops, slices[-1].flops))
    if len({s.min_d for s in slices}) == 1:
        fit.flags.append("low-information: identical min_d in every slice")
    return fit


def frontier_eta(slices) -> FrontierFit:
    """Fit ``P* = a f^b``; the loss exponent is ``fit.eta == -b``."""
    if len(slices) < 3:
        raise ConfigError("need at least 3 slices")
    return fit_power_law([(s.flops, s.min_risk) for s in slices], (slices[0].flops, slices[-1].flops))


def parabola_vertex(log_d, log_p):
    """Least-squares ``log P = a log^2 d + b log d + c``; returns ``(a, b, c)``."""
    a, b, c = np.polyfit(np.asarray(log_d), np.asarray(log_p), 2)
    return float(a), float(b), float(c)


def approach2(curves, slices) -> FrontierFit:
    """xi-hat from per-slice parabola vertices in (log d, log P)."""
    del curves  # slices already carry the interpolated per-d losses
    pts = []
    flags = []
    n_concave = 0
    for s in slices:
        if len(s.losses) < 4:
            raise ConfigError("approach2 needs >= 4 distinct d per slice")
        ld = np.log([d for d, _ in s.losses])
        lp = np.log([p for _, p in s.losses])
        a, b, _ = parabola_vertex(ld, lp)
        if a > 0:
            d_star = math.exp(-b / (2 * a))
        else:
            n_concave += 1
            d_star = float(s.min_d)
            flags.append(f"convexity failure at flops={s.flops:.3g}")
        pts.append((s.flops, d_star))
    if n_concave > len(slices) / 2:
        raise ConfigError("parabola opens downward on more than half the slices")
    fit = fit_power_law(pts, (slices[0].flops, slices[-1].flops))
    fit.flags.extend(flags)
    return fit


def _convex_branch(c: _LogLogCurve, n: int = 2000):
    xs = np.linspace(c.x[0], c.x[-1], n)
    ds = c.deriv(xs)
    k = int(np.nanargmin(ds))
    return xs[k], xs[-1]


def _solve_slope(c: _LogLogCurve, s: float, lo: float, hi: float) -> float:
    # y'(x) is increasing on the convex branch [lo, hi]
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if c.deriv(mid) < s:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def common_tangent(c1: LossCurve, c2: LossCurve):
    """Tangency flops ``(f1, f2)`` of the common log-log tangent, or None."""
    a, b = _LogLogCurve(c1), _LogLogCurve(c2)
    (la, ha), (lb, hb) = _convex_branch(a), _convex_branch(b)
    s_lo = max(float(a.deriv(la)), float(b.deriv(lb)))
    s_hi = min(float(a.deriv(ha)), float(b.deriv(hb)))
    if not s_lo < s_hi:
        return None

    def gap(s):
        xa = _solve_slope(a, s, la, ha)
        xb = _solve_slope(b, s, lb, hb)
        # difference of tangent-line intercepts
        return (a.interp(xa) - s * xa) - (b.interp(xb) - s * xb), xa, xb

    eps = 1e-9 * max(1.0, abs(s_lo))
    g_lo = gap(s_lo + eps)[0]
    g_hi = gap(s_hi - eps)[0]
    if not np.isfinite(g_lo) or not np.isfinite(g_hi) or np.sign(g_lo) == np.sign(g_hi):
        return None
    lo, hi = s_lo + eps, s_hi - eps
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        g = gap(mid)[0]
        if np.sign(g) == np.sign(g_lo):
            lo = mid
        else:
            hi = mid
    _, xa, xb = gap(0.5 * (lo + hi))
    if abs(xb - xa) < 1e-12:
        return None
    return math.exp(xa), math.exp(xb)


def approach0(curve_pairs) -> list[tuple[float, float]]:
    """Instantaneous xi from common tangents of adjacent-d curve pairs.

    Returns ``(flops, xi)`` with flops the geometric mean of the two
    tangency points; pairs without a tangent are skipped.
    """
    out = []
    for c1, c2 in curve_pairs:
        if c1.d == c2.d:
            continue
        t = common_tangent(c1, c2)
        if t is None:
            continue
        f1, f2 = t
        xi = (math.log(c2.d) - math.log(c1.d)) / (math.log(f2) - math.log(f1))
        out.append((math.sqrt(f1 * f2), xi))
    return out


def adjacent_pairs(curves):
    cs = sorted(curves, key=lambda c: c.d)
    return list(zip(cs[:-1], cs[1:]))


def sliding_fits(curves, window, n_total: int = 100, n_sub: int = SUBWINDOW_SLICES):
    """Approach-1 and eta fits on consecutive sub-windows of a dense slice set."""
    slices = isoflop_slices(curves, window, n_total)
    out = []
    for k in range(0, len(slices) - n_sub + 1):
        sub = slices[k:k + n_sub]
        out.append((frontier_eta(sub), approach1(sub)))
    return out
