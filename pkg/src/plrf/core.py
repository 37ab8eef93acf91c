"""Domain types, problem generation, flops accounting and exact population risk."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

# Rows of W are generated in fixed-size blocks, each with its own counter-based
# stream, so W can be streamed block by block without materializing it.
W_BLOCK_ROWS = 1024

_TAG_W = 0
_TAG_SGD = 1


class ConfigError(ValueError):
    """Invalid user-supplied configuration."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (divergence, non-convergence, instability)."""


@dataclass(frozen=True)
class ProblemSpec:
    """Model and optimizer parameters for one run.

    ``v`` defaults to ``4 * d``.
    """

    alpha: float
    beta: float
    d: int
    v: int | None = None
    gamma: float = 0.1
    batch: int = 1
    horizon: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.v is None:
            object.__setattr__(self, "v", 4 * int(self.d))
        if self.d < 1:
            raise ConfigError("d must be a positive integer")
        if self.v <= self.d:
            raise ConfigError("v must exceed d")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


@dataclass
class ProblemInstance:
    """A realized PLRF problem. Only ``theta`` is mutated after construction."""

    spec: ProblemSpec
    W: np.ndarray
    b: np.ndarray
    D_diag: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        v, d = self.spec.v, self.spec.d
        if self.W.shape != (v, d) or self.b.shape != (v,) or self.D_diag.shape != (v,):
            raise ConfigError("instance dimensions inconsistent with spec")
        if self.theta.shape != (d,):
            raise ConfigError("theta must have length d")


@dataclass
class LossCurve:
    """Checkpointed (iteration, flops, risk) triples."""

    source: str
    d: int
    seed: int
    iters: np.ndarray
    flops: np.ndarray
    risk: np.ndarray
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.iters = np.asarray(self.iters, dtype=np.int64)
        self.flops = np.asarray(self.flops, dtype=np.float64)
        self.risk = np.asarray(self.risk, dtype=np.float64)
        if not (len(self.iters) == len(self.flops) == len(self.risk)):
            raise ValueError("curve arrays must have equal length")
        if len(self.iters) > 1 and np.any(np.diff(self.iters) <= 0):
            raise ValueError("iterations must be strictly increasing")

    @property
    def label(self) -> str:
        return f"{self.source}-d{self.d}-s{self.seed}"

    def __len__(self) -> int:
        return len(self.iters)


def param_arrays(alpha: float, beta: float, v: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(D_diag, b)`` with entries ``j^-2alpha`` and ``j^-beta``."""
    j = np.arange(1, v + 1, dtype=np.float64)
    return j ** (-2.0 * alpha), j ** (-beta)


def _w_block_rng(seed: int, d: int, v: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_TAG_W, d, v, block))
    return np.random.Generator(np.random.Philox(ss))


def sgd_rng(seed: int, d: int, replicate: int) -> np.random.Generator:
    """Sampling stream for one SGD run, keyed on ``(seed, d, replicate)``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_TAG_SGD, d, replicate))
    return np.random.Generator(np.random.Philox(ss))


def iter_w_blocks(spec: ProblemSpec) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(row_offset, block)`` pieces of W with entries N(0, 1/d)."""
    d, v = spec.d, spec.v
    scale = 1.0 / np.sqrt(d)
    for k, start in enumerate(range(0, v, W_BLOCK_ROWS)):
        rows = min(W_BLOCK_ROWS, v - start)
        rng = _w_block_rng(spec.seed, d, v, k)
        yield start, rng.standard_normal((rows, d)) * scale


def make_problem(spec: ProblemSpec) -> ProblemInstance:
    """Build the instance for ``spec``; W is a deterministic function of (seed, v, d)."""
    W = np.empty((spec.v, spec.d))
    for start, block in iter_w_blocks(spec):
        W[start:start + block.shape[0]] = block
    D_diag, b = param_arrays(spec.alpha, spec.beta, spec.v)
    return ProblemInstance(spec=spec, W=W, b=b, D_diag=D_diag, theta=np.zeros(spec.d))


def population_risk(instance: ProblemInstance, theta: np.ndarray) -> float:
    """Exact risk ``<D(W theta - b), W theta - b>``."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (instance.spec.d,):
        raise ValueError("theta must have length d")
    resid = instance.W @ theta - instance.b
    return float(np.dot(instance.D_diag * resid, resid))


def population_risk_many(instance: ProblemInstance, thetas: np.ndarray) -> np.ndarray:
    """Risk for each column of a ``d x R`` matrix of iterates."""
    resid = instance.W @ thetas - instance.b[:, None]
    return np.einsum("j,jr,jr->r", instance.D_diag, resid, resid)


def initial_risk(alpha: float, beta: float, v: int) -> float:
    """``sum_{j<=v} j^(-2alpha-2beta)``, the risk at theta = 0."""
    j = np.arange(1, v + 1, dtype=np.float64)
    return float(np.sum(j ** (-2.0 * alpha - 2.0 * beta)))


def flops(r, spec: ProblemSpec | None = None, *, batch: int | None = None, d: int | None = None):
    """Compute cost ``r * B * d``."""
    if spec is not None:
        batch = spec.batch if batch is None else batch
        d = spec.d if d is None else d
    if batch is None or d is None:
        raise ValueError("need a spec or explicit batch and d")
    r_arr = np.asarray(r)
    if np.any(r_arr < 0):
        raise ValueError("r must be non-negative")
    out = r_arr * float(batch) * float(d)
    return float(out) if out.ndim == 0 else out


CSV_HEADER = ("source", "d", "seed", "iter", "flops", "risk")


def curves_to_csv(curves: Iterable[LossCurve], comment: str | None = None) -> str:
    """CSV text; an optional ``comment`` becomes a leading ``#`` line."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in curves:
        for r, f, p in zip(c.iters, c.flops, c.risk):
            w.writerow([c.source, c.d, c.seed, int(r), f"{f:.17g}", f"{p:.17g}"])
    return buf.getvalue()


def curves_from_csv(text: str) -> list[LossCurve]:
    """Parse CSV text into curves, grouping rows by ``(source, d, seed)``."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if rows and tuple(rows[0].keys()) != CSV_HEADER:
        raise ConfigError(f"unexpected CSV header {tuple(rows[0].keys())}")
    groups: dict[tuple[str, int, int], list] = {}
    for row in rows:
        key = (row["source"], int(row["d"]), int(row["seed"]))
        groups.setdefault(key, []).append(
            (int(row["iter"]), float(row["flops"]), float(row["risk"]))
        )
    out = []
    for (source, d, seed), pts in groups.items():
        pts.sort()
        it, fl, rk = zip(*pts)
        out.append(LossCurve(source, d, seed, np.array(it), np.array(fl), np.array(rk)))
    return out
