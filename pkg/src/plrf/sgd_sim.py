"""One-pass minibatch SGD with exact population-risk checkpoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import (
    ConfigError,
    LossCurve,
    ProblemInstance,
    ProblemSpec,
    population_risk_many,
    sgd_rng,
)
from .volterra import SpectralModes, empirical_modes, kernel_norm, stability_check

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class CheckpointSchedule:
    """Iterations at which the risk is recorded.

    ``kind="geometric"`` yields ``round(first * step**k)``; ``kind="linear"``
    yields ``first + k * step``. Both stop at ``max``, which is always included.
    """

    kind: str = "geometric"
    first: int = 1
    step: float = 1.1
    max: int = 1000

    def __post_init__(self):
        if self.kind not in ("geometric", "linear"):
            raise ConfigError("schedule kind must be geometric or linear")
        if self.first < 1 or self.max < 1:
            raise ConfigError("schedule first and max must be >= 1")
        if self.kind == "geometric" and not self.step > 1:
            raise ConfigError("geometric ratio must exceed 1")
        if self.kind == "linear" and (self.step < 1 or int(self.step) != self.step):
            raise ConfigError("linear step must be a positive integer")

    def iterations(self) -> np.ndarray:
        if self.first > self.max:
            return np.zeros(0, dtype=np.int64)
        if self.kind == "linear":
            raw = np.arange(self.first, self.max + 1, int(self.step), dtype=np.int64)
        else:
            n = int(np.ceil(np.log(self.max / self.first) / np.log(self.step))) + 2
            raw = np.round(self.first * self.step ** np.arange(n))
            raw = raw[raw <= self.max].astype(np.int64)
        return np.unique(np.append(raw, self.max))


def default_schedule(horizon: int) -> CheckpointSchedule:
    return CheckpointSchedule("geometric", 1, 1.1, horizon)


def sgd_step(instance: ProblemInstance, theta: np.ndarray, z: np.ndarray, gamma: float) -> np.ndarray:
    """One SGD update from standard-normal draws ``z`` of shape ``(B, v)``."""
    z = np.atleast_2d(z)
    x = z * instance.D_diag ** 0.5
    g = x @ instance.W
    resid = g @ theta - x @ instance.b
    return theta - gamma * (g.T @ resid)


def _check_stable(instance, gamma, modes):
    if gamma == 0:
        return
    if modes is None:
        modes = empirical_modes(instance)
    rep = stability_check(modes, gamma, instance.spec.batch)
    if not rep.stable:
        raise ConfigError(
            f"(gamma={gamma}, B={instance.spec.batch}) fails the stability check "
            f"(gd_margin={rep.gd_margin:.3g}, norm={rep.norm:.3g}); pass allow_unstable=True to override"
        )


def run_sgd_replicates(
    instance: ProblemInstance,
    schedule: CheckpointSchedule,
    replicates,
    *,
    gamma: float | None = None,
    modes: SpectralModes | None = None,
    allow_unstable: bool = False,
) -> list[LossCurve]:
    """Run independent SGD replicates sharing one instance.

    Each replicate draws from its own stream keyed on ``(seed, d, replicate)``;
    the replicates advance in lockstep so W is read once per step.
    """
    spec = instance.spec
    gamma = spec.gamma if gamma is None else float(gamma)
    if gamma < 0:
        raise ConfigError("gamma must be non-negative")
    if not allow_unstable:
        _check_stable(instance, gamma, modes)
    replicates = list(replicates)
    R, B, d = len(replicates), spec.batch, spec.d
    rngs = [sgd_rng(spec.seed, d, k) for k in replicates]
    sqrt_d = np.sqrt(instance.D_diag)
    W, b = instance.W, instance.b

    ckpts = schedule.iterations()
    ckpts = ckpts[ckpts <= spec.horizon]
    iters = np.unique(np.concatenate([[0], ckpts]))
    Theta = np.zeros((d, R))
    risks = np.empty((len(iters), R))
    risks[0] = population_risk_many(instance, Theta)
    limit = DIVERGENCE_FACTOR * risks[0]
    alive = np.ones(R, dtype=bool)
    stop = np.full(R, len(iters))
    Z = np.empty((R * B, spec.v))
    r = 0
    for k in range(1, len(iters)):
        for _ in range(int(iters[k] - r)):
            for i, rng in enumerate(rngs):
                Z[i * B:(i + 1) * B] = rng.standard_normal((B, spec.v))
            X = Z * sqrt_d
            G = X @ W                                      # (R*B, d)
            resid = np.einsum("nd,dn->n", G, np.repeat(Theta, B, axis=1)) - X @ b
            upd = (G * resid[:, None]).reshape(R, B, d).sum(axis=1)
            Theta -= gamma * upd.T
        r = int(iters[k])
        risks[k] = population_risk_many(instance, Theta)
        bad = alive & ~(np.isfinite(risks[k]) & (risks[k] <= limit))
        stop[bad] = k
        alive &= ~bad
        if not alive.any():
            break

    curves = []
    for i, rep in enumerate(replicates):
        n = stop[i]
        it = iters[:n]
        curves.append(
            LossCurve(
                "sgd",
                d,
                spec.seed,
                it,
                it * float(B) * d,
                risks[:n, i],
                diverged=bool(n < len(iters)),
                meta={"replicate": rep, "gamma": gamma, "batch": B},
            )
        )
    return curves


def run_sgd(
    instance: ProblemInstance,
    schedule: CheckpointSchedule,
    *,
    replicate: int = 0,
    gamma: float | None = None,
    modes: SpectralModes | None = None,
    allow_unstable: bool = False,
) -> LossCurve:
    """Single SGD run; see :func:`run_sgd_replicates`."""
    return run_sgd_replicates(
        instance, schedule, [replicate], gamma=gamma, modes=modes, allow_unstable=allow_unstable
    )[0]


def mean_curve(curves: list[LossCurve]) -> LossCurve:
    """Pointwise mean over replicates with identical checkpoints."""
    n = min(len(c) for c in curves)
    risk = np.mean([c.risk[:n] for c in curves], axis=0)
    c0 = curves[0]
    return LossCurve(c0.source, c0.d, c0.seed, c0.iters[:n], c0.flops[:n], risk,
                     diverged=any(c.diverged for c in curves))


def default_learning_rate(spec: ProblemSpec, modes: SpectralModes, safety: float = 0.5) -> float:
    """Largest gamma with ``gamma (B+1) <= 2 s / lambda_max`` and kernel norm ``<= s``."""
    if not safety > 0:
        raise ConfigError("safety factor must be positive")
    B = spec.batch
    hi = 2.0 * safety / ((B + 1) * modes.lambda_max)
    if hi * (B + 1) * modes.lambda_max >= 2.0:
        hi = np.nextafter(2.0 / ((B + 1) * modes.lambda_max), 0.0)
    if kernel_norm(modes, hi, B) <= safety:
        return float(hi)
    # kernel_norm is increasing in gamma and vanishes at 0
    return float(brentq(lambda g: kernel_norm(modes, g, B) - safety, 0.0, hi, xtol=1e-15, rtol=1e-13))
