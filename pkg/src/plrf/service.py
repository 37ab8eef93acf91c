"""HTTP service exposing the simulation, theory and fitting operations.

Each operation is a plain function from a request model to a response model;
the FastAPI routes and the in-process CLI path both call these functions.
"""

from __future__ import annotations

import hashlib
import json
import math
from importlib.metadata import PackageNotFoundError, version

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import frontier as fr
from .core import ConfigError, LossCurve, NumericalError, ProblemSpec, make_problem
from .schemas import (
    CurveModel,
    CurvesResponse,
    ErrorResponse,
    FitModel,
    FrontierRequest,
    FrontierResponse,
    PhaseRequest,
    PhaseResponse,
    RunInfo,
    SimulateRequest,
    SliceModel,
    SpectrumRequest,
    SpectrumResponse,
    SpectrumRow,
    SweepConfig,
    TheoryRequest,
    TheoryResponse,
    TheoryRow,
    VolterraRequest,
)
from .scaling_theory import classify_phase, component_value, surrogate_loss, theory_exponents
from .sgd_sim import CheckpointSchedule, default_learning_rate, mean_curve, run_sgd_replicates
from .spectrum import density_curve, fig6_grid
from .volterra import empirical_modes, kernel_norm, solve_volterra, stability_check, streamed_modes

# above this d the Gram matrix is accumulated from streamed blocks of W
STREAM_THRESHOLD = 3200


def package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def manifest(kind: str, config: SweepConfig, **extra) -> dict:
    """Resolved parameters of a run; contains nothing time- or host-dependent."""
    body = {
        "command": kind,
        "version": package_version(),
        "config": config.model_dump(mode="json", exclude={"out_dir"}),  # location does not affect results
        "resolved": {str(d): {"v": config.v_for(d), "horizon": config.horizon_for(d)} for d in config.d_list},
        **extra,
    }
    return body


def manifest_hash(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _spec(config: SweepConfig, d: int) -> ProblemSpec:
    return ProblemSpec(
        config.alpha, config.beta, d, v=config.v_for(d), batch=config.batch,
        horizon=config.horizon_for(d), seed=config.seed,
    )


def _schedule(config: SweepConfig, horizon: int) -> CheckpointSchedule:
    s = config.schedule
    return CheckpointSchedule(s.kind, s.first, s.step, horizon)


def _gamma(config: SweepConfig, spec: ProblemSpec, modes) -> float:
    if config.gamma == "auto":
        return default_learning_rate(spec, modes, config.safety)
    rep = stability_check(modes, float(config.gamma), spec.batch)
    if not rep.stable:
        raise ConfigError(
            f"gamma={config.gamma} is unstable at d={spec.d} (gd_margin={rep.gd_margin:.3g}, norm={rep.norm:.3g})"
        )
    return float(config.gamma)


def _curve_model(c: LossCurve, seed: int | None = None) -> CurveModel:
    return CurveModel(
        source=c.source, d=c.d, seed=c.seed if seed is None else seed,
        iters=[int(i) for i in c.iters], flops=[float(f) for f in c.flops],
        risk=[float(p) for p in c.risk], diverged=c.diverged,
    )


def _run_info(spec, modes, gamma) -> RunInfo:
    return RunInfo(d=spec.d, v=spec.v, gamma=gamma, lambda_max=modes.lambda_max,
                   kernel_norm=kernel_norm(modes, gamma, spec.batch))


def volterra(req: VolterraRequest) -> CurvesResponse:
    cfg = req.config
    curves, runs = [], []
    for d in cfg.d_list:
        spec = _spec(cfg, d)
        modes = streamed_modes(spec) if d > STREAM_THRESHOLD else empirical_modes(make_problem(spec))
        gamma = _gamma(cfg, spec, modes)
        curve = solve_volterra(modes, gamma, spec.batch, _schedule(cfg, spec.horizon), naive=req.naive)
        if not np.all(np.isfinite(curve.risk)):
            raise NumericalError(f"non-finite risk in the Volterra solution at d={d}")
        curves.append(_curve_model(curve))
        runs.append(_run_info(spec, modes, gamma))
    h = manifest_hash(manifest("volterra", cfg, naive=req.naive))
    return CurvesResponse(curves=curves, runs=runs, manifest_hash=h)


def simulate(req: SimulateRequest) -> CurvesResponse:
    cfg = req.config
    curves, runs = [], []
    for d in cfg.d_list:
        spec = _spec(cfg, d)
        inst = make_problem(spec)
        modes = empirical_modes(inst)
        gamma = _gamma(cfg, spec, modes)
        reps = run_sgd_replicates(inst, _schedule(cfg, spec.horizon), range(cfg.seeds), gamma=gamma, modes=modes)
        # the CSV seed column identifies the SGD replicate
        curves.extend(_curve_model(c, seed=c.meta["replicate"]) for c in reps)
        runs.append(_run_info(spec, modes, gamma))
    h = manifest_hash(manifest("simulate", cfg))
    return CurvesResponse(curves=curves, runs=runs, manifest_hash=h)


def phase(req: PhaseRequest) -> PhaseResponse:
    ph = classify_phase(req.alpha, req.beta)
    out = PhaseResponse(alpha=req.alpha, beta=req.beta, phase=ph.label)
    if ph.label != "NoPowerLaw":
        try:
            ex = theory_exponents(req.alpha, req.beta)
        except ConfigError:
            return out
        out.eta, out.xi, out.tradeoff = ex.eta, ex.xi, ex.tradeoff
    return out


def theory(req: TheoryRequest) -> TheoryResponse:
    v = req.v if req.v is not None else 4 * req.d
    if any(not r >= 0 for r in req.r):
        raise ConfigError("iterations must be non-negative")
    rows = []
    args = (req.alpha, req.beta, req.d, v, req.gamma, req.batch)
    for r in req.r:
        vals = {}
        for kind in ("F0", "Fpp", "Fac"):
            try:
                vals[kind] = float(component_value(kind, *args, r))
            except ConfigError:
                vals[kind] = math.nan
        vals["Kpp"] = float(component_value("Kpp", *args, r)) if req.gamma > 0 else 0.0
        # without SGD noise every forcing component is kept, whatever the phase
        comps = ("F0", "Fpp", "Fac") if req.gamma == 0 else None
        sur, arg = surrogate_loss(*args, r, mode=req.mode, components=comps)
        rows.append(TheoryRow(r=r, surrogate=sur, argmax=arg, **vals))
    return TheoryResponse(rows=rows)


def spectrum(req: SpectrumRequest) -> SpectrumResponse:
    v = req.v if req.v is not None else 4 * req.d
    grid = fig6_grid(req.alpha, req.d, req.u_max)[:: req.stride]
    rows = []
    # continuation along each row of constant eta
    for eta in np.unique(grid.imag):
        us = np.sort(grid.real[grid.imag == eta])
        pts = density_curve(req.alpha, req.d, v, req.beta, us, eta=float(eta),
                            remove_point_mass=req.remove_point_mass)
        rows.extend(SpectrumRow(u=p.u, eta=p.eta, trace_density=p.trace_density,
                                target_density=p.target_density) for p in pts)
    return SpectrumResponse(rows=rows)


def _fit(f: fr.FrontierFit) -> FitModel:
    return FitModel(a=f.a, b=f.b, residual=f.residual, window=tuple(f.window),
                    n_slices=f.n_slices, flags=list(f.flags))


def frontier(req: FrontierRequest) -> FrontierResponse:
    curves = [
        LossCurve(c.source, c.d, c.seed, np.array(c.iters), np.array(c.flops), np.array(c.risk), c.diverged)
        for c in req.curves
    ]
    slices = fr.isoflop_slices(curves, req.window, req.slices)
    xi = {}
    if req.approach in ("1", "all"):
        xi["approach1"] = _fit(fr.approach1(slices)).model_dump()
    if req.approach in ("2", "all"):
        try:
            xi["approach2"] = _fit(fr.approach2(curves, slices)).model_dump()
        except ConfigError as e:
            xi["approach2"] = {"error": str(e)}
    if req.approach in ("0", "all"):
        per_d = {}
        for c in curves:
            per_d.setdefault(c.d, []).append(c)
        means = [_mean(cs) for _, cs in sorted(per_d.items())]
        xi["approach0"] = [{"flops": f, "xi": x} for f, x in fr.approach0(fr.adjacent_pairs(means))]
    return FrontierResponse(
        config={"window": list(req.window), "slices": req.slices, "approach": req.approach,
                "n_curves": len(curves)},
        eta=_fit(fr.frontier_eta(slices)),
        xi=xi,
        slices=[SliceModel(flops=s.flops, min_d=s.min_d, min_risk=s.min_risk, losses=s.losses) for s in slices],
    )


def _mean(cs):
    return cs[0] if len(cs) == 1 else mean_curve(cs)


HANDLERS = {
    "simulate": (SimulateRequest, simulate),
    "volterra": (VolterraRequest, volterra),
    "theory": (TheoryRequest, theory),
    "spectrum": (SpectrumRequest, spectrum),
    "phase": (PhaseRequest, phase),
    "frontier": (FrontierRequest, frontier),
}


def create_app() -> FastAPI:
    app = FastAPI(title="plrf", version=package_version())

    @app.exception_handler(ConfigError)
    async def _config(_: Request, exc: ConfigError):
        return JSONResponse(ErrorResponse(kind="config", detail=str(exc)).model_dump(), status_code=422)

    @app.exception_handler(RequestValidationError)
    async def _invalid(_: Request, exc: RequestValidationError):
        return JSONResponse(ErrorResponse(kind="config", detail=str(exc.errors())).model_dump(), status_code=422)

    @app.exception_handler(NumericalError)
    async def _numerical(_: Request, exc: NumericalError):
        return JSONResponse(ErrorResponse(kind="numerical", detail=str(exc)).model_dump(), status_code=500)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": package_version()}

    @app.post("/simulate", response_model=CurvesResponse)
    def simulate_route(req: SimulateRequest):
        return simulate(req)

    @app.post("/volterra", response_model=CurvesResponse)
    def volterra_route(req: VolterraRequest):
        return volterra(req)

    @app.post("/theory", response_model=TheoryResponse)
    def theory_route(req: TheoryRequest):
        return theory(req)

    @app.post("/spectrum", response_model=SpectrumResponse)
    def spectrum_route(req: SpectrumRequest):
        return spectrum(req)

    @app.post("/phase", response_model=PhaseResponse)
    def phase_route(req: PhaseRequest):
        return phase(req)

    @app.post("/frontier", response_model=FrontierResponse)
    def frontier_route(req: FrontierRequest):
        return frontier(req)

    return app


app = create_app()
