"""Closed-form theory: component functions, asymptotics, phases and exponents."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import zeta

from .core import ConfigError, NumericalError
from .spectrum import solve_kappa

BOUNDARY_TOL = 1e-9
WINDOW_M = 50.0
ALPHA_IVB = 1.0 - 1.0 / math.sqrt(2.0)
KINDS = ("F0", "Fpp", "Fac", "Kpp")


class TheoryWarning(UserWarning):
    pass


# ---------------------------------------------------------------- phases


@dataclass(frozen=True)
class Phase:
    label: str
    sides: tuple = ()

    @property
    def is_boundary(self) -> bool:
        return self.label.startswith("Boundary")

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class ExponentPair:
    eta: float
    xi: float
    tradeoff: str


def _near(a: float, b: float) -> bool:
    return abs(a - b) <= BOUNDARY_TOL


def _boundary(name: str, *sides: str) -> Phase:
    return Phase(f"Boundary({name})", sides)


def classify_phase(alpha: float, beta: float) -> Phase:
    """Phase label of ``(alpha, beta)``; critical lines get a Boundary label."""
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    if _near(alpha, 0.5) and _near(beta, 0.5):
        return _boundary("pentuple")
    if _near(alpha + beta, 0.5):
        return _boundary("alpha+beta=1/2", "NoPowerLaw", "Ib")
    if alpha + beta < 0.5:
        return Phase("NoPowerLaw")
    if _near(2 * beta, 1.0):
        if alpha > 0.5:
            return _boundary("2beta=1", "Ia", "II")
        return _boundary("2beta=1", "Ib", _below_line_phase(alpha))
    if 2 * beta < 1:
        if _near(2 * alpha, 1.0):
            return _boundary("2alpha=1", "Ib", "Ia")
        return Phase("Ia") if 2 * alpha > 1 else Phase("Ib")
    # 2 beta > 1
    if _near(2 * alpha, 1.0):
        return _boundary("2alpha=1", "IVa", "III")
    if 2 * alpha > 1:
        if _near(alpha, beta):
            return _boundary("alpha=beta", "II", "III")
        return Phase("II") if beta < alpha else Phase("III")
    if _near(alpha, ALPHA_IVB):
        return _boundary("alpha=1-1/sqrt2", "IVb", "IVa")
    if _near(alpha, 0.25):
        return _boundary("alpha=1/4", "Ic", "IVb")
    return Phase(_below_line_phase(alpha))


def _below_line_phase(alpha: float) -> str:
    if alpha > ALPHA_IVB:
        return "IVa"
    if alpha > 0.25:
        return "IVb"
    return "Ic"


def _exponents_for(label: str, a: float, b: float) -> ExponentPair:
    if label == "Ia":
        return ExponentPair((2 * a + 2 * b - 1) / (2 * a + 1), 1 / (2 * a + 1), "Fpp=F0")
    if label == "Ib":
        return ExponentPair(a + b - 0.5, 0.5, "Fpp=F0")
    if label == "Ic":
        den = a * (2 * b - 3) - 2 * b + 1
        return ExponentPair(-a * (2 * a + 2 * b - 1) / den, (1 - 2 * (a + b)) / (2 * den), "Fpp=F0")
    if label == "II":
        return ExponentPair((2 * a + 2 * b - 1) / (2 * (a + b)), b / (a + b), "Fpp=Fac")
    if label == "III":
        return ExponentPair((4 * a - 1) / (4 * a), 0.5, "Kpp=Fac")
    if label == "IVa":
        return ExponentPair(a, 0.5, "Kpp=F0")
    if label == "IVb":
        den = 2 * a * b + a - 2 * b
        return ExponentPair(-(1 - 2 * a) * (2 * a + 2 * b - 1) / (2 * den), (a - b) / den, "Kpp=Fpp")
    raise ConfigError(f"no power-law exponents for phase {label}")


def theory_exponents(alpha: float, beta: float) -> ExponentPair:
    """Compute-optimal exponents: loss ``f^-eta`` and parameters ``d* ~ f^xi``.

    On a critical line between two power-law phases the (continuous) loss
    exponent is returned; xi is returned only if both sides agree.
    """
    ph = classify_phase(alpha, beta)
    if not ph.is_boundary:
        return _exponents_for(ph.label, alpha, beta)
    if len(ph.sides) != 2 or "NoPowerLaw" in ph.sides:
        raise ConfigError(f"{ph.label} is not a power-law phase")
    left, right = (_exponents_for(s, alpha, beta) for s in ph.sides)
    if abs(left.xi - right.xi) > 1e-9:
        raise ConfigError(f"xi is discontinuous across {ph.label}")
    return ExponentPair(0.5 * (left.eta + right.eta), left.xi, f"{left.tradeoff}|{right.tradeoff}")


def phase_exponents(label: str, alpha: float, beta: float) -> ExponentPair:
    """Evaluate a named phase's formulas at any point (for one-sided limits)."""
    return _exponents_for(label, alpha, beta)


# ---------------------------------------------------------------- corner point


def corner_tradeoff(c0, g0, p0, c1, g1, p1, f):
    """Minimize ``max(C0 (f/d)^-g0 d^-p0, C1 (f/d)^-g1 d^-p1)`` over d.

    Returns ``(d_star, value)`` at the intersection of the two terms.
    """
    den = g1 - p1 - g0 + p0
    if abs(den) < 1e-14:
        raise ConfigError("degenerate tradeoff: equal effective slopes")
    d_star = (c0 / c1) ** (1.0 / den) * np.asarray(f, dtype=np.float64) ** ((g1 - g0) / den)
    value = c0 * np.asarray(f, dtype=np.float64) ** (-g0) * d_star ** (g0 - p0)
    return d_star, value


def corner_inputs(label: str, alpha: float, beta: float):
    """Exponent inputs ``(g0, p0, g1, p1)`` for the phase's tradeoff pair."""
    a, b = alpha, beta
    s = 1 + b / a - 1 / (2 * a)
    if label in ("Ia",):
        return (s, 0.0, 0.0, 2 * a - 1 + 2 * b)
    if label == "II":
        return (s, 0.0, 1 - 1 / (2 * a), 1.0)
    if label == "III":
        return (2 - 1 / (2 * a), 0.0, 1 - 1 / (2 * a), 1.0)
    # below the line, gamma ~ d^(2a-1) rescales the time-like terms
    q = 2 * a - 1
    kpp = (2 - 1 / (2 * a), -2 + 1 / (2 * a) + 2 * a)
    if label == "IVa":
        return (0.0, 2 * a) + kpp
    if label == "IVb":
        return (s, q * s) + kpp
    if label == "Ib":
        return (s, q * s, 0.0, 2 * a - 1 + 2 * b)
    if label == "Ic":
        return (s, q * s, 0.0, 2 * a)
    raise ConfigError(f"no corner inputs for {label}")


# ---------------------------------------------------------------- optimal lr


def optimal_lr_phase4(alpha: float, beta: float) -> tuple[float, float, float]:
    """Exponents of f in the optimal gamma, d* and the loss (Phase IV)."""
    if not (0.25 < alpha < 0.5 and 2 * beta > 1):
        raise ConfigError("optimal_lr_phase4 needs 1/4 < alpha < 1/2 and 2 beta > 1")
    a, b = alpha, beta
    den = 4 * a * b + 2 * a + 2 * b - 1
    return 4 * a * (a - b) / den, (2 * a + 2 * b - 1) / den, -2 * a * (2 * a + 2 * b - 1) / den


# ---------------------------------------------------------------- components


def _lower_gamma_quad(a: float, x: float) -> float:
    """``int_0^x w^a e^-w dw`` by adaptive quadrature (a > -1)."""
    if x <= 0:
        return 0.0
    head = min(x, 1.0)
    val, _ = integrate.quad(lambda w: math.exp(-w), 0.0, head, weight="alg", wvar=(a, 0.0),
                            epsabs=0.0, epsrel=1e-13, limit=200)
    if x > 1.0:
        hi = min(x, max(800.0, 4 * a + 800.0))
        pts = [p for p in (2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0) if p < hi]
        tail, _ = integrate.quad(lambda w: w**a * math.exp(-w), 1.0, hi, epsabs=0.0,
                                 epsrel=1e-13, limit=400, points=pts or None)
        val += tail
    return val


def pow_exp_integral(a: float, lo: float, hi: float, t: float) -> float:
    """``int_lo^hi u^a exp(-t u) du`` for ``0 <= lo < hi`` and ``t >= 0``."""
    if t == 0.0:
        if a == -1.0:
            return math.log(hi / lo)
        return (hi ** (a + 1) - lo ** (a + 1)) / (a + 1)
    if not a > -1:
        if lo == 0.0:
            return math.inf
        return t ** (-a - 1) * _segment_quad(a, t * lo, t * hi)
    scale = t ** (-a - 1)
    return scale * (_lower_gamma_quad(a, t * hi) - _lower_gamma_quad(a, t * lo))


def _segment_quad(a: float, x0: float, x1: float) -> float:
    """``int_x0^x1 w^a e^-w dw`` for ``x0 > 0``, split on a log grid."""
    x1 = min(x1, max(x0, 1.0) + 800.0)
    if x1 <= x0:
        return 0.0
    edges = np.geomspace(x0, x1, max(2, int(math.log10(x1 / x0) * 4) + 2))
    return float(sum(
        integrate.quad(lambda w: w**a * math.exp(-w), lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)[0]
        for lo, hi in zip(edges[:-1], edges[1:])
    ))


def c_beta(beta: float, v: float) -> float:
    """``sum_{j<=v} j^-2beta`` when ``2 beta > 1``, else 0."""
    if not 2 * beta > 1:
        return 0.0
    if math.isinf(v):
        return float(zeta(2 * beta, 1))
    return float(zeta(2 * beta, 1) - zeta(2 * beta, v + 1))


def _kappa(alpha, d, v) -> float:
    ratio = math.inf if math.isinf(v) else v / d
    return solve_kappa(alpha, ratio).kappa


def limit_risk_F0(alpha: float, beta: float, d: int, v: float) -> float:
    """``sum_{j<=v} j^(-2a-2b) / (1 + j^-2a d^2a kappa(v/d))``."""
    kap = _kappa(alpha, d, v)
    K = kap * d ** (2 * alpha)
    J = int(v) if not math.isinf(v) and v <= 10**7 else max(10**6, 100 * d)
    j = np.arange(1, J + 1, dtype=np.float64)
    head = float(np.sum(j ** (-2 * alpha - 2 * beta) / (1.0 + K * j ** (-2 * alpha))))
    if J >= v:
        return head
    # tail: expand 1/(1+eps) in eps = K j^-2a
    eps0 = K * (J + 1) ** (-2 * alpha)
    if eps0 >= 0.5:
        raise NumericalError("F0 tail expansion does not converge")
    tail = 0.0
    for k in range(200):
        s = 2 * alpha + 2 * beta + 2 * alpha * k
        hk = zeta(s, J + 1) - (0.0 if math.isinf(v) else zeta(s, v + 1))
        term = (-K) ** k * hk
        tail += term
        if abs(term) < 1e-17 * abs(tail):
            break
    return head + tail


def component_value(kind: str, alpha: float, beta: float, d: int, v: float,
                    gamma: float, B: int, r) -> float | np.ndarray:
    """Deterministic component ``kind`` at iteration(s) ``r`` by quadrature."""
    if kind not in KINDS:
        raise ConfigError(f"unknown component {kind!r}")
    if kind == "F0":
        val = limit_risk_F0(alpha, beta, d, v)
        return val if np.ndim(r) == 0 else np.full(np.shape(r), val)
    rs = np.atleast_1d(np.asarray(r, dtype=np.float64))
    out = np.empty(rs.shape)
    a2 = 2 * alpha
    if kind == "Fpp":
        ex = (2 * beta - 1) / a2
        if not ex > -1:
            raise ConfigError("Fpp needs alpha + beta > 1/2")
        for i, ri in enumerate(rs):
            out[i] = pow_exp_integral(ex, 0.0, 1.0, 2 * gamma * B * ri) / a2
    elif kind == "Fac":
        cb = c_beta(beta, v)
        if cb == 0.0:
            out[:] = 0.0
        else:
            lo = d ** (-a2)
            for i, ri in enumerate(rs):
                out[i] = cb / a2 / d * pow_exp_integral(-1 / a2, lo, 1.0, 2 * gamma * B * ri)
    else:  # Kpp
        if not alpha > 0.25:
            warnings.warn("Kpp requires alpha > 1/4", TheoryWarning)
        ex = 1 - 1 / a2
        for i, ri in enumerate(rs):
            out[i] = gamma**2 * B / a2 * pow_exp_integral(ex, 0.0, 1.0, 2 * gamma * B * ri)
    return float(out[0]) if np.ndim(r) == 0 else out


def noise_term(alpha, gamma, B, r):
    """``Kpp(r) / (gamma B)``, finite as gamma -> 0."""
    ex = 1 - 1 / (2 * alpha)
    rs = np.atleast_1d(np.asarray(r, dtype=np.float64))
    out = np.array([gamma / (2 * alpha) * pow_exp_integral(ex, 0.0, 1.0, 2 * gamma * B * ri) for ri in rs])
    return float(out[0]) if np.ndim(r) == 0 else out


@dataclass(frozen=True)
class AsymptoticValue:
    value: float
    in_window: bool


def in_window(alpha, d, gamma, B, r, M: float = WINDOW_M) -> bool:
    t = gamma * B * r
    return bool(M <= t <= d ** (2 * alpha) / M)


def component_asymptotic(kind: str, alpha: float, beta: float, gamma: float, B: int,
                         r: float, d: int, v: float, M: float = WINDOW_M) -> AsymptoticValue:
    """Large-d closed form of a component; flags r outside the window."""
    a2 = 2 * alpha
    t = 2 * gamma * B * r
    if kind == "F0":
        kap = _kappa(alpha, d, v)
        if 2 * beta > 1:
            val = d ** (-a2) / kap * c_beta(beta, v)
        else:
            ratio = math.inf if math.isinf(v) else v / d
            f = lambda u: 1.0 / (kap + u**a2)
            head, _ = integrate.quad(f, 0, min(1.0, ratio), weight="alg", wvar=(-2 * beta, 0.0),
                                     epsabs=0.0, epsrel=1e-12)
            tail = 0.0
            if ratio > 1:
                tail, _ = integrate.quad(lambda u: u ** (-2 * beta) * f(u), 1.0, ratio,
                                         epsabs=0.0, epsrel=1e-12, limit=400)
            val = d ** (1 - a2 - 2 * beta) * (head + tail)
        return AsymptoticValue(float(val), True)
    flag = in_window(alpha, d, gamma, B, r, M)
    if kind == "Fpp":
        s = beta / alpha - 1 / a2 + 1
        val = gamma_fn(s) * t ** (-s) / a2
    elif kind == "Fac":
        cb = c_beta(beta, v)
        s = 1 - 1 / a2
        val = 0.0 if cb == 0 else cb / a2 * gamma_fn(s) * t ** (-s) / d
    elif kind == "Kpp":
        s = 2 - 1 / a2
        val = gamma**2 * B / a2 * gamma_fn(s) * t ** (-s)
    else:
        raise ConfigError(f"unknown component {kind!r}")
    if not flag:
        warnings.warn(f"{kind} asymptotic evaluated outside its window", TheoryWarning)
    return AsymptoticValue(float(val), flag)


# ---------------------------------------------------------------- surrogate


PHASE_COMPONENTS = {
    "Ia": ("Fpp", "F0"),
    "Ib": ("Fpp", "F0"),
    "Ic": ("Fpp", "F0"),
    "II": ("Fpp", "Fac", "F0"),
    "III": ("Fac", "F0", "Kpp"),
    "IVa": ("Fpp", "F0", "Kpp"),
    "IVb": ("Fpp", "F0", "Kpp"),
}


def _components(alpha, beta, d, v, gamma, B, r, mode, active):
    vals = {}
    use_asym = mode == "hybrid" and in_window(alpha, d, gamma, B, r)
    for k in active:
        if k == "Kpp":
            if gamma == 0:
                vals[k] = 0.0
            elif use_asym:
                vals[k] = component_asymptotic("Kpp", alpha, beta, gamma, B, r, d, v).value / (gamma * B)
            else:
                vals[k] = noise_term(alpha, gamma, B, r)
        elif k == "Fac" and c_beta(beta, v) == 0:
            vals[k] = 0.0
        elif use_asym and k != "F0":
            vals[k] = component_asymptotic(k, alpha, beta, gamma, B, r, d, v).value
        else:
            vals[k] = component_value(k, alpha, beta, d, v, gamma, B, r)
    return vals


def _active(alpha, beta, components):
    if components is not None:
        return tuple(components)
    ph = classify_phase(alpha, beta)
    if ph.is_boundary:
        kinds = set()
        for s in ph.sides:
            kinds.update(PHASE_COMPONENTS.get(s, ()))
        return tuple(k for k in KINDS if k in kinds) or KINDS
    return PHASE_COMPONENTS.get(ph.label, KINDS)


def surrogate_loss(alpha: float, beta: float, d: int, v: float, gamma: float, B: int, r,
                   *, mode: str = "hybrid", components=None) -> tuple[float, str]:
    """``max{Fpp, Fac, F0, Kpp/(gamma B)}`` and the component attaining it.

    Components absent from the phase's loss description are omitted.
    ``mode="hybrid"`` uses asymptotic forms inside the window,
    ``mode="quadrature"`` uses quadrature everywhere.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TheoryWarning)
        vals = _components(alpha, beta, d, v, gamma, B, r, mode, _active(alpha, beta, components))
    kind = max(vals, key=vals.get)
    return vals[kind], kind


def surrogate_sum(alpha: float, beta: float, d: int, v: float, gamma: float, B: int, r,
                  *, mode: str = "quadrature", components=KINDS) -> float:
    """``Fpp + Fac + F0 + Kpp/(gamma B)`` (all components by default)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TheoryWarning)
        vals = _components(alpha, beta, d, v, gamma, B, r, mode, components)
    return float(sum(vals.values()))


def crossover_schedule(alpha: float, beta: float, d: int, v: float, gamma: float, B: int,
                       *, components=None, r_max: float | None = None, n_grid: int = 400):
    """Dominance intervals ``[(r_lo, r_hi), kind]`` of the surrogate in r.

    Change points of the argmax are located on a log grid, then refined by
    bisection in log r on the pairwise equality of the two components.
    """
    ph = classify_phase(alpha, beta)
    if ph.label == "NoPowerLaw" or "pentuple" in ph.label:
        raise ConfigError("crossover_schedule needs a power-law phase")
    active = _active(alpha, beta, components)
    if gamma == 0:
        active = tuple(k for k in active if k != "Kpp")
        gamma_eff = 0.0
    else:
        gamma_eff = gamma
    if r_max is None:
        r_max = 1e4 * d ** (2 * alpha) / max(gamma_eff * B, 1e-300) if gamma_eff else 1e12
    rs = np.logspace(0, math.log10(r_max), n_grid)

    def vals(r):
        return _components(alpha, beta, d, v, gamma_eff, B, r, "quadrature", active)

    arg = [max(vals(r).items(), key=lambda kv: kv[1])[0] for r in rs]
    intervals = []
    start = 0.0
    for i in range(1, len(rs)):
        if arg[i] != arg[i - 1]:
            k0, k1 = arg[i - 1], arg[i]
            lo, hi = math.log(rs[i - 1]), math.log(rs[i])
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                vm = vals(math.exp(mid))
                if vm[k0] >= vm[k1]:
                    lo = mid
                else:
                    hi = mid
            rc = math.exp(0.5 * (lo + hi))
            intervals.append(((start, rc), k0))
            start = rc
    intervals.append(((start, math.inf), arg[-1]))
    return intervals
