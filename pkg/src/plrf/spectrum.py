"""Deterministic-equivalent spectral machinery.

The resolvent of the empirical covariance is summarized by the scalar m(z)
solving

    m + (1/d) sum_{j<=v} x_j m / (x_j m - z) = 1,    x_j = j^(-2 alpha),

with Im m < 0 whenever Im z > 0 and m -> 1 as |z| -> infinity.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import zeta

from .core import ConfigError, NumericalError

TOL = 1e-10
MAX_ITER = 200
EXPLICIT_TERMS = 10**6


@dataclass(frozen=True)
class SpectralSolution:
    z: complex
    m: complex
    residual: float
    iterations: int
    residuals: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class KappaValue:
    ratio: float
    alpha: float
    kappa: float


class _Sums:
    """Evaluates the j-sums of the fixed-point equation.

    Sums with ``v`` above ``EXPLICIT_TERMS`` (or ``v = inf``) are split into an
    explicit head and a tail expanded in powers of ``x_j m / z``, whose
    coefficients are differences of Hurwitz zeta values.
    """

    def __init__(self, alpha: float, d: int, v: float, explicit_terms: int = EXPLICIT_TERMS):
        if not alpha > 0:
            raise ConfigError("alpha must be positive")
        if not v > d:
            raise ConfigError("v must exceed d")
        if math.isinf(v) and not 2 * alpha > 1:
            raise ConfigError("v = inf requires 2*alpha > 1")
        self.alpha, self.d, self.v = float(alpha), int(d), v
        self.J = int(min(v, max(explicit_terms, 100 * d)))
        self.x = np.arange(1, self.J + 1, dtype=np.float64) ** (-2.0 * alpha)
        self.has_tail = self.J < v
        self._hz: dict[int, float] = {}

    def _tail_coef(self, k: int) -> float:
        # sum_{J < j <= v} j^(-2 alpha k)
        if k not in self._hz:
            s = 2.0 * self.alpha * k
            val = zeta(s, self.J + 1)
            if not math.isinf(self.v):
                val -= zeta(s, self.v + 1)
            self._hz[k] = float(val)
        return self._hz[k]

    def _tail(self, m: complex, z: complex) -> tuple[complex, complex]:
        # sum_{j>J} x m/(x m - z) = -sum_k (m/z)^k H_k, and its m-derivative
        q = (self.J + 1) ** (-2.0 * self.alpha) * abs(m / z)
        if q >= 0.5:
            raise NumericalError("tail expansion outside its convergence region")
        val = 0j
        dval = 0j
        ratio = m / z
        k = 1
        while True:
            hk = self._tail_coef(k)
            term = ratio**k * hk
            val -= term
            dval -= k * ratio ** (k - 1) * hk / z
            if abs(term) <= 1e-18 * max(abs(val), 1e-300) or k >= 400:
                break
            k += 1
        return val, dval

    def F(self, m: complex, z: complex) -> tuple[complex, complex]:
        """Return ``F(m; z)`` and ``dF/dm``."""
        xm = self.x * m
        den = xm - z
        s = np.sum(xm / den)
        ds = -np.sum(self.x * z / den**2)
        if self.has_tail:
            t, dt = self._tail(m, z)
            s += t
            ds += dt
        return m + s / self.d - 1.0, 1.0 + ds / self.d

    def G(self, m: complex, z: complex) -> complex:
        """Fixed-point map ``1 / (1 + (1/d) sum x/(x m - z))``."""
        s = np.sum(self.x / (self.x * m - z))
        if self.has_tail:
            t, _ = self._tail(m, z)
            s += t / m
        return 1.0 / (1.0 + s / self.d)

    def weighted(self, m: complex, z: complex, c: np.ndarray) -> complex:
        """``sum_j c_j / (x_j m - z)`` over the explicit head."""
        return complex(np.sum(c / (self.x[: c.size] * m - z)))


_SUMS_CACHE: dict = {}


def _sums(alpha, d, v) -> _Sums:
    key = (float(alpha), int(d), float(v))
    s = _SUMS_CACHE.get(key)
    if s is None:
        if len(_SUMS_CACHE) > 16:
            _SUMS_CACHE.clear()
        s = _SUMS_CACHE[key] = _Sums(alpha, d, v)
    return s


def _bad_half_plane(m: complex, z: complex) -> bool:
    return z.imag > 0 and m.imag >= 0


def _fixed_point(sums: _Sums, z: complex, m: complex, history: list, tol: float):
    # damped iteration of the contraction map; used only as a fallback
    omega = 0.5
    for it in range(MAX_ITER):
        m_new = (1 - omega) * m + omega * sums.G(m, z)
        if not np.isfinite(m_new):
            break
        m = m_new
        res = abs(sums.F(m, z)[0])
        history.append(res)
        if res <= tol:
            return m, it + 1
    return m, MAX_ITER


def solve_m(
    alpha: float,
    d: int,
    v: float,
    z: complex,
    init: complex = 1.0,
    tol: float = TOL,
) -> SpectralSolution:
    """Newton's method for m(z), with a damped fixed-point fallback."""
    z = complex(z)
    if z.imag < 0:
        raise ConfigError("need Im z >= 0")
    sums = _sums(alpha, d, v)
    m = complex(init)
    history: list[float] = []
    f, df = sums.F(m, z)
    res = abs(f)
    history.append(res)
    it = 0
    fallback = False
    target = min(tol, 1e-14)
    while it < MAX_ITER:
        if res <= target:
            break
        step = f / df
        m_new = m - step
        if not np.isfinite(m_new) or _bad_half_plane(m_new, z):
            fallback = True
            break
        f_new, df_new = sums.F(m_new, z)
        res_new = abs(f_new)
        it += 1
        if res_new >= res and res <= tol:
            # roundoff floor reached
            break
        m, f, df, res = m_new, f_new, df_new, res_new
        history.append(res)
    if fallback:
        m, extra = _fixed_point(sums, z, m, history, tol)
        it += extra
        f, df = sums.F(m, z)
        res = abs(f)
        # polish on the correct branch
        for _ in range(20):
            if res <= target:
                break
            m_new = m - f / df
            if _bad_half_plane(m_new, z):
                break
            f_new, df_new = sums.F(m_new, z)
            if abs(f_new) >= res:
                break
            m, f, df, res = m_new, f_new, df_new, abs(f_new)
            history.append(res)
            it += 1
    if not res <= tol:
        raise NumericalError(f"solve_m did not converge at z={z}: residual {res:.3g}")
    if z.imag > 0 and not m.imag < 0:
        raise NumericalError(f"solve_m landed on the wrong branch at z={z}")
    return SpectralSolution(z, m, float(res), it, tuple(history))


def solve_m_grid(alpha: float, d: int, v: float, grid, init: complex = 1.0) -> list[SpectralSolution]:
    """Solve along ``grid`` with continuation from the previous point."""
    out = []
    m0 = complex(init)
    for k, z in enumerate(grid):
        try:
            sol = solve_m(alpha, d, v, z, init=m0)
        except NumericalError as exc:
            raise NumericalError(f"grid index {k}: {exc}") from exc
        out.append(sol)
        m0 = sol.m
    return out


def fig6_grid(alpha: float, d: int, u_max: float = 1.5) -> np.ndarray:
    """Contour ``u + i d^-2a`` with u spaced at ``0.1 d^-2a`` up to ``u_max``."""
    h = d ** (-2.0 * alpha)
    u = 0.1 * h * np.arange(1, int(u_max / (0.1 * h)) + 1)
    return u + 1j * h


def adaptive_eta(alpha: float, d: int, u, eps: float = 1e-3, c: float = 1.0):
    """Contour height that tracks the local spectral scale."""
    u = np.asarray(u, dtype=np.float64)
    return (math.log(1 / eps) / c) * np.maximum(
        u ** (1 + 1 / (2 * alpha)), (math.pi / (2 * alpha)) * u ** (1 - 1 / (2 * alpha)) / d
    )


def _kappa_integral(kappa: float, alpha: float, ratio: float) -> float:
    f = lambda x: kappa / (kappa + x ** (2 * alpha))
    if math.isinf(ratio):
        a, _ = integrate.quad(f, 0, 1, epsabs=1e-13, epsrel=1e-13, limit=200)
        b, _ = integrate.quad(f, 1, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
        return a + b
    val, _ = integrate.quad(f, 0, ratio, epsabs=1e-13, epsrel=1e-13, limit=400,
                            points=[min(1.0, ratio / 2)])
    return val


def solve_kappa(alpha: float, ratio: float) -> KappaValue:
    """kappa > 0 solving ``int_0^ratio kappa / (kappa + x^(2 alpha)) dx = 1``."""
    if not ratio > 1:
        raise ConfigError("ratio must exceed 1")
    if math.isinf(ratio) and not 2 * alpha > 1:
        raise ConfigError("kappa requires 2*alpha > 1 at infinite aspect")
    g = lambda lk: _kappa_integral(math.exp(lk), alpha, ratio) - 1.0
    lo, hi = -1.0, 1.0
    while g(lo) > 0:
        lo *= 2
    while g(hi) < 0:
        hi *= 2
    # bisection in log kappa (the integral is increasing in kappa)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    kappa = math.exp(0.5 * (lo + hi))
    if abs(_kappa_integral(kappa, alpha, ratio) - 1.0) > 1e-10:
        raise NumericalError("kappa bisection did not reach 1e-10")
    return KappaValue(ratio, alpha, kappa)


@functools.lru_cache(maxsize=64)
def discrete_kappa(alpha: float, d: int, v: int) -> float:
    """``-m'(0)``: root of ``(1/d) sum k x_j / (k x_j + 1) = 1`` (finite v)."""
    x = np.arange(1, v + 1, dtype=np.float64) ** (-2.0 * alpha)
    g = lambda lk: np.sum(x / (x + math.exp(-lk))) / d - 1.0
    lo, hi = -5.0, 5.0
    while g(lo) > 0:
        lo -= 10
    while g(hi) < 0:
        hi += 10
    return math.exp(brentq(g, lo, hi, xtol=1e-14))


def exact_f(zeta_: float | complex) -> complex:
    """Closed form for alpha = 1, v/d = inf: m(zeta d^-2) -> f(zeta)."""
    a = math.pi / 4
    zc = complex(zeta_)
    root = np.sqrt(complex(a * a) - zc)
    return -(a - root) ** 2 / zc


@dataclass(frozen=True)
class DensityPoint:
    u: float
    eta: float
    trace_density: float
    target_density: float
    m: complex


def weighted_density(
    alpha: float,
    d: int,
    v: int,
    beta: float,
    u: float,
    eta: float | None = None,
    init: complex = 1.0,
    remove_point_mass: bool = False,
) -> DensityPoint:
    """Trace and target-weighted spectral densities at ``u + i eta``.

    With ``remove_point_mass`` the exact poles at zero are subtracted: weight
    ``v - d`` from the trace and the discrete limit risk from the target.
    """
    if math.isinf(v) or v > EXPLICIT_TERMS:
        raise ConfigError("densities need finite v <= 1e6")
    eta = d ** (-2.0 * alpha) if eta is None else float(eta)
    z = complex(u, eta)
    sol = solve_m(alpha, d, v, z, init=init)
    m = sol.m
    trace = (-v + (1.0 - m) * d) / z
    j = np.arange(1, v + 1, dtype=np.float64)
    c = j ** (-2.0 * alpha - 2.0 * beta)
    target = _sums(alpha, d, v).weighted(m, z, c)
    if remove_point_mass:
        trace += (v - d) / z
        kt = discrete_kappa(alpha, d, v)
        target += float(np.sum(c / (1.0 + kt * j ** (-2.0 * alpha)))) / z
    return DensityPoint(float(u), eta, trace.imag / math.pi, target.imag / math.pi, m)


def density_curve(alpha, d, v, beta, us, eta=None, remove_point_mass=False):
    """Densities along increasing ``us`` using continuation."""
    out = []
    m0 = 1.0
    for u in us:
        p = weighted_density(alpha, d, v, beta, u, eta, init=m0, remove_point_mass=remove_point_mass)
        out.append(p)
        m0 = p.m
    return out
