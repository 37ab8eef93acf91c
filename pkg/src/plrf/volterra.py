"""Exact expected-loss dynamics of SGD given a fixed embedding W.

The expected risk satisfies the discrete renewal equation

    P(r) = F(r) + sum_{s<r} K(r-1-s) P(s)

with F and K sums of geometric sequences in the spectral modes of
D^{1/2} W. Because the kernel is a sum of exponentials, the convolution can be
carried as a d-dimensional state, giving an O(T d) solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    LossCurve,
    NumericalError,
    ProblemInstance,
    ProblemSpec,
    iter_w_blocks,
    param_arrays,
)

RANK_CUTOFF = 1e-12
RATIO_FLOOR = 1e-300


@dataclass
class SpectralModes:
    """Eigenvalues ``lambdas`` (non-increasing) and weights of the covariance modes."""

    lambdas: np.ndarray
    weights: np.ndarray
    irreducible: float
    d: int
    seed: int = 0
    rank_deficient: bool = False

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.lambdas.shape != self.weights.shape:
            raise ValueError("lambdas and weights must have equal length")
        if np.any(self.lambdas <= 0):
            raise ValueError("lambdas must be positive")
        if self.irreducible < 0:
            raise ValueError("irreducible must be non-negative")

    @classmethod
    def single(cls, lam: float, weight: float = 1.0, irreducible: float = 0.0) -> "SpectralModes":
        return cls(np.array([lam]), np.array([weight]), irreducible, d=1)

    @property
    def lambda_max(self) -> float:
        return float(self.lambdas.max()) if self.lambdas.size else 0.0

    @property
    def total(self) -> float:
        """Initial risk, ``sum w_i + irreducible``."""
        return float(self.weights.sum() + self.irreducible)


def _finish_modes(lam, c2, total, d, seed) -> SpectralModes:
    # c2 are the squared projections of D^{1/2} b on the left singular vectors
    order = np.argsort(lam)[::-1]
    lam, c2 = lam[order], c2[order]
    keep = lam > (RANK_CUTOFF ** 2) * lam[0]
    deficient = not bool(np.all(keep))
    if deficient:
        warnings.warn("rank-deficient embedding; tiny modes folded into irreducible")
    lam, c2 = lam[keep], c2[keep]
    irreducible = max(total - float(c2.sum()), 0.0)
    return SpectralModes(lam, c2, irreducible, d=d, seed=seed, rank_deficient=deficient)


def empirical_modes(instance: ProblemInstance, method: str = "svd") -> SpectralModes:
    """Spectral modes of ``D^{1/2} W``.

    ``method="svd"`` takes a thin SVD of the v x d matrix. ``method="gram"``
    diagonalizes ``W^T D W`` instead, which is cheaper but squares the
    condition number; see :func:`streamed_modes` for the memory-light variant.
    """
    spec = instance.spec
    sqrt_d = np.sqrt(instance.D_diag)
    target = sqrt_d * instance.b
    total = float(target @ target)
    if method == "svd":
        A = sqrt_d[:, None] * instance.W
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        proj = U.T @ target
        return _finish_modes(s**2, proj**2, total, spec.d, spec.seed)
    if method == "gram":
        G = instance.W.T @ (instance.D_diag[:, None] * instance.W)
        c = instance.W.T @ (instance.D_diag * instance.b)
        return _modes_from_gram(G, c, total, spec.d, spec.seed)
    raise ValueError(f"unknown method {method!r}")


def _modes_from_gram(G, c, total, d, seed) -> SpectralModes:
    import scipy.linalg

    lam, V = scipy.linalg.eigh(G, overwrite_a=True, driver="evd")
    lam = np.maximum(lam, np.finfo(float).tiny)
    proj = V.T @ c
    # left singular vector q_i = D^{1/2} W v_i / sigma_i, so <q_i, D^{1/2} b> = v_i.c / sigma_i
    return _finish_modes(lam, proj**2 / lam, total, d, seed)


def streamed_modes(spec: ProblemSpec) -> SpectralModes:
    """Gram-route modes without materializing W (same W as ``make_problem``)."""
    D_diag, b = param_arrays(spec.alpha, spec.beta, spec.v)
    G = np.zeros((spec.d, spec.d))
    c = np.zeros(spec.d)
    for start, block in iter_w_blocks(spec):
        dd = D_diag[start:start + block.shape[0]]
        G += block.T @ (dd[:, None] * block)
        c += block.T @ (dd * b[start:start + block.shape[0]])
    total = float(np.sum(D_diag * b * b))
    return _modes_from_gram(G, c, total, spec.d, spec.seed)


def contraction(lambdas, gamma: float, B: int) -> np.ndarray:
    """``rho_i = 1 - 2 gamma B lambda_i + gamma^2 B (B+1) lambda_i^2``."""
    lam = np.asarray(lambdas, dtype=np.float64)
    return 1.0 - 2.0 * gamma * B * lam + gamma**2 * B * (B + 1) * lam**2


def _powers(rho: np.ndarray, r) -> np.ndarray:
    r = np.asarray(r)
    return rho[:, None] ** r.reshape(1, -1).astype(np.float64)


def forcing(modes: SpectralModes, gamma: float, B: int, r):
    """``F(r) = sum_i w_i rho_i^r + irreducible`` (scalar or array ``r``)."""
    rho = contraction(modes.lambdas, gamma, B)
    val = modes.weights @ _powers(rho, r) + modes.irreducible
    return float(val[0]) if np.ndim(r) == 0 else val


def kernel(modes: SpectralModes, gamma: float, B: int, r):
    """``K(r) = gamma^2 B sum_i lambda_i^2 rho_i^r``."""
    rho = contraction(modes.lambdas, gamma, B)
    val = gamma**2 * B * ((modes.lambdas**2) @ _powers(rho, r))
    return float(val[0]) if np.ndim(r) == 0 else val


def kernel_norm(modes: SpectralModes, gamma: float, B: int) -> float:
    """``sum_s K(s) = sum_i gamma lambda_i / (2 - gamma (B+1) lambda_i)``."""
    if gamma == 0:
        return 0.0
    lam = modes.lambdas
    denom = 2.0 - gamma * (B + 1) * lam
    if np.any(denom <= 0):
        raise NumericalError("kernel norm diverges: some |rho_i| >= 1")
    return float(np.sum(gamma * lam / denom))


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    gd_margin: float
    norm: float


def stability_check(modes: SpectralModes, gamma: float, B: int) -> StabilityReport:
    """Stable iff ``gamma (B+1) lambda_max < 2`` and the kernel norm is below 1."""
    margin = 2.0 - gamma * (B + 1) * modes.lambda_max
    if margin <= 0:
        return StabilityReport(False, margin, float("inf"))
    norm = kernel_norm(modes, gamma, B)
    return StabilityReport(bool(norm < 1.0), margin, norm)


def _require_stable(modes, gamma, B):
    rep = stability_check(modes, gamma, B)
    if not rep.stable:
        raise NumericalError(
            f"unstable (gamma={gamma}, B={B}): gd_margin={rep.gd_margin:.3g}, norm={rep.norm:.3g}"
        )


def volterra_trajectory(
    modes: SpectralModes, gamma: float, B: int, horizon: int, *, with_lower: bool = False
):
    """Solve for ``P(0..horizon)`` by the mode-state recursion.

    With ``with_lower`` also returns ``F`` and ``F + K*F`` on the same grid.
    """
    _require_stable(modes, gamma, B)
    lam, w = modes.lambdas, modes.weights
    n = lam.size
    rho = contraction(lam, gamma, B)
    kcoef = gamma**2 * B * lam**2
    T = int(horizon) + 1
    P = np.empty(T)
    # state = [w_i rho_i^r | S_i(r)]; S_i(r) = sum_{s<r} rho_i^{r-1-s} P(s)
    state = np.concatenate([w, np.zeros(n)])
    coef = np.concatenate([np.ones(n), kcoef])
    rho2 = np.concatenate([rho, rho])
    tail = state[n:]
    irr = modes.irreducible
    if not with_lower:
        for r in range(T):
            p = irr + coef @ state
            P[r] = p
            state *= rho2
            tail += p
        return P
    F = np.empty(T)
    L = np.empty(T)
    sf = np.zeros(n)
    for r in range(T):
        f = irr + state[:n].sum()
        kp = kcoef @ tail
        F[r] = f
        P[r] = f + kp
        L[r] = f + kcoef @ sf
        state *= rho2
        tail += P[r]
        sf *= rho
        sf += f
    return P, F, L


def renewal_solve(F, K) -> np.ndarray:
    """Direct O(T^2) solution of ``P(t) = F(t) + sum_{s<t} K(t-1-s) P(s)``."""
    F = np.asarray(F, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    P = np.empty_like(F)
    for t in range(F.size):
        P[t] = F[t] + np.dot(K[t - 1::-1], P[:t]) if t else F[0]
    return P


def naive_trajectory(modes: SpectralModes, gamma: float, B: int, horizon: int) -> np.ndarray:
    """O(T^2) direct evaluation of the convolution (reference solver)."""
    _require_stable(modes, gamma, B)
    r = np.arange(horizon + 1)
    return renewal_solve(forcing(modes, gamma, B, r), kernel(modes, gamma, B, r))


def solve_volterra(
    modes: SpectralModes, gamma: float, B: int, schedule, *, naive: bool = False
) -> LossCurve:
    """Expected SGD risk at the schedule's checkpoints (iteration 0 always included)."""
    iters = _checkpoint_iters(schedule)
    horizon = int(iters[-1])
    traj = naive_trajectory if naive else volterra_trajectory
    P = traj(modes, gamma, B, horizon)
    return LossCurve(
        "volterra",
        modes.d,
        modes.seed,
        iters,
        iters * float(B) * modes.d,
        P[iters],
        meta={"gamma": gamma, "batch": B, "lambda_max": modes.lambda_max},
    )


def _checkpoint_iters(schedule) -> np.ndarray:
    from .sgd_sim import CheckpointSchedule

    if isinstance(schedule, CheckpointSchedule):
        it = schedule.iterations()
    else:
        it = np.asarray(schedule, dtype=np.int64)
    it = np.unique(np.concatenate([[0], it]))
    return it.astype(np.int64)


@dataclass(frozen=True)
class SandwichGap:
    lower: float
    value: float
    upper_ratio: float


def sandwich_gap(modes: SpectralModes, gamma: float, B: int, r) -> SandwichGap | list[SandwichGap]:
    """Compare ``P(r)`` with the lower bound ``F + K*F``.

    ``upper_ratio = (P - F) / (K*F)``; its supremum over r is the constant of
    the upper sandwich bound.
    """
    rs = np.atleast_1d(np.asarray(r, dtype=np.int64))
    if np.any(rs < 1):
        raise ValueError("r must be >= 1")
    P, F, L = volterra_trajectory(modes, gamma, B, int(rs.max()), with_lower=True)
    out = [
        SandwichGap(float(L[t]), float(P[t]), float((P[t] - F[t]) / max(RATIO_FLOOR, L[t] - F[t])))
        for t in rs
    ]
    return out[0] if np.ndim(r) == 0 else out
