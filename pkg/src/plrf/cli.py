"""Command-line client for the plrf service.

Requests run in-process by default; ``--server URL`` sends them to a running
service instead. Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import sys
from pathlib import Path

import httpx
import numpy as np
from pydantic import BaseModel, ValidationError

from . import service
from .core import ConfigError, LossCurve, NumericalError, curves_from_csv, curves_to_csv
from .schemas import (
    CurveModel,
    FrontierRequest,
    PhaseRequest,
    SimulateRequest,
    SpectrumRequest,
    SweepConfig,
    TheoryRequest,
    VolterraRequest,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class Client:
    """Dispatches a request model to the service, locally or over HTTP."""

    def __init__(self, server: str | None = None, timeout: float = 3600.0):
        self.server = server.rstrip("/") if server else None
        self.timeout = timeout

    def call(self, name: str, req: BaseModel):
        if self.server is None:
            return service.HANDLERS[name][1](req)
        resp = httpx.post(f"{self.server}/{name}", json=req.model_dump(mode="json"), timeout=self.timeout)
        if resp.status_code != 200:
            body = resp.json()
            err = NumericalError if body.get("kind") == "numerical" else ConfigError
            raise err(body.get("detail", resp.text))
        return _RESPONSES[name].model_validate(resp.json())


_RESPONSES = {
    "simulate": service.CurvesResponse,
    "volterra": service.CurvesResponse,
    "theory": service.TheoryResponse,
    "spectrum": service.SpectrumResponse,
    "phase": service.PhaseResponse,
    "frontier": service.FrontierResponse,
}


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def load_config(args) -> SweepConfig:
    """TOML config file (optional) overlaid by command-line flags."""
    data: dict = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    overrides = {
        "alpha": args.alpha, "beta": args.beta, "seed": args.seed, "seeds": args.seeds,
        "batch": args.batch, "horizon": args.horizon, "flops_budget": args.flops_budget,
        "v_fixed": args.v, "out_dir": args.out, "slices": args.slices,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.d_list is not None:
        data["d_list"] = _ints(args.d_list)
    if args.gamma is not None:
        data["gamma"] = "auto" if args.gamma == "auto" else float(args.gamma)
    if args.window is not None:
        data["window"] = tuple(_floats(args.window))
    try:
        return SweepConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _to_loss_curve(c: CurveModel) -> LossCurve:
    return LossCurve(c.source, c.d, c.seed, np.array(c.iters, dtype=np.int64), np.array(c.flops),
                     np.array(c.risk), c.diverged)


def write_curves(resp, cfg: SweepConfig, kind: str, fmt: str, extra: dict | None = None) -> list[Path]:
    """One file per curve plus ``manifest.json``; every file names the manifest hash."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = service.manifest(kind, cfg, **(extra or {}))
    body["hash"] = resp.manifest_hash
    body["runs"] = [r.model_dump() for r in resp.runs]
    paths = []
    for c in resp.curves:
        stem = f"{c.source}_d{c.d}" + (f"_s{c.seed}" if c.source == "sgd" else "")
        if fmt == "csv":
            p = out / f"{stem}.csv"
            p.write_text(curves_to_csv([_to_loss_curve(c)], comment=f"manifest={resp.manifest_hash}"))
        else:
            p = out / f"{stem}.json"
            p.write_text(json.dumps({"manifest": resp.manifest_hash, **c.model_dump()}, indent=1))
        paths.append(p)
    body["files"] = [p.name for p in paths]
    (out / "manifest.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    return paths


def read_curves(patterns: list[str]) -> list[CurveModel]:
    files = sorted({f for pat in patterns for f in (glob.glob(pat) or [pat])})
    curves = []
    for f in files:
        path = Path(f)
        if path.name == "manifest.json":
            continue
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read {f}: {e}") from e
        if path.suffix == ".json":
            data = json.loads(text)
            data.pop("manifest", None)
            curves.append(CurveModel.model_validate(data))
        else:
            for c in curves_from_csv(text):
                curves.append(service._curve_model(c))
    if not curves:
        raise ConfigError("no curves found")
    return curves


def _emit_rows(rows: list[dict], fmt: str, dest: str | None):
    if fmt == "json":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    _emit_text(text, dest)


def _emit_text(text: str, dest: str | None):
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)


def _frontier_request(curves, cfg_window, slices, approach) -> FrontierRequest:
    return FrontierRequest(curves=curves, window=cfg_window, slices=slices, approach=approach)


def cmd_simulate(args, client):
    cfg = load_config(args)
    resp = client.call("simulate", SimulateRequest(config=cfg))
    for p in write_curves(resp, cfg, "simulate", args.format):
        print(p)


def cmd_volterra(args, client):
    cfg = load_config(args)
    resp = client.call("volterra", VolterraRequest(config=cfg, naive=args.naive))
    for p in write_curves(resp, cfg, "volterra", args.format, {"naive": args.naive}):
        print(p)


def cmd_sweep(args, client):
    cfg = load_config(args)
    if args.solver == "sgd":
        resp = client.call("simulate", SimulateRequest(config=cfg))
    else:
        resp = client.call("volterra", VolterraRequest(config=cfg))
    write_curves(resp, cfg, "sweep", args.format, {"solver": args.solver})
    fit = client.call("frontier", _frontier_request(resp.curves, cfg.window, cfg.slices, args.approach))
    report = {"manifest": resp.manifest_hash, **fit.model_dump()}
    path = Path(cfg.out_dir) / "frontier.json"
    path.write_text(json.dumps(report, indent=1) + "\n")
    print(json.dumps({"eta": fit.eta.model_dump() if fit.eta else None,
                      "xi": {k: v for k, v in fit.xi.items() if k != "approach0"}}, indent=1))


def cmd_frontier(args, client):
    curves = read_curves(args.inputs)
    window = tuple(_floats(args.window)) if args.window else (1e6, 1e8)
    fit = client.call("frontier", _frontier_request(curves, window, args.slices or 15, args.approach))
    _emit_text(json.dumps(fit.model_dump(), indent=1) + "\n", args.out)


def cmd_theory(args, client):
    if args.r:
        rs = _floats(args.r)
    else:
        rs = [float(x) for x in np.unique(np.round(np.geomspace(1, args.r_max, args.n)))]
    req = TheoryRequest(alpha=args.alpha, beta=args.beta, d=args.d, v=args.v, gamma=args.gamma,
                        batch=args.batch, r=rs, mode=args.mode)
    resp = client.call("theory", req)
    _emit_rows([r.model_dump() for r in resp.rows], args.format, args.out)


def cmd_spectrum(args, client):
    req = SpectrumRequest(alpha=args.alpha, beta=args.beta, d=args.d, v=args.v, u_max=args.u_max,
                          stride=args.stride, remove_point_mass=args.remove_point_mass)
    resp = client.call("spectrum", req)
    _emit_rows([r.model_dump() for r in resp.rows], args.format, args.out)


def cmd_phase(args, client):
    resp = client.call("phase", PhaseRequest(alpha=args.alpha, beta=args.beta))
    if args.format == "json":
        _emit_text(json.dumps(resp.model_dump(), indent=1) + "\n", args.out)
    else:
        _emit_rows([resp.model_dump()], args.format, args.out)


def _sweep_flags(p, solver_default: str | None = None):
    p.add_argument("--config", help="TOML file with sweep settings")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--d-list", help="comma-separated model sizes")
    p.add_argument("--v", type=int, help="fixed v (default 4 d)")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="SGD replicates per d")
    p.add_argument("--gamma", help="'auto' or a fixed learning rate")
    p.add_argument("--batch", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--flops-budget", type=float)
    p.add_argument("--window", help="fmin,fmax for the frontier fit")
    p.add_argument("--slices", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plrf", description=__doc__.splitlines()[0])
    ap.add_argument("--server", help="service URL; omit to run in-process")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="SGD loss curves")
    _sweep_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("volterra", help="deterministic expected-risk curves")
    _sweep_flags(p)
    p.add_argument("--naive", action="store_true", help="use the O(T^2) reference solver")
    p.set_defaults(func=cmd_volterra)

    p = sub.add_parser("sweep", help="curves over d_list followed by a frontier fit")
    _sweep_flags(p)
    p.add_argument("--solver", choices=("volterra", "sgd"), default="volterra")
    p.add_argument("--approach", choices=("0", "1", "2", "all"), default="all")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("frontier", help="fit exponents to existing curves")
    p.add_argument("inputs", nargs="+", help="CSV or JSON curve files (globs allowed)")
    p.add_argument("--window")
    p.add_argument("--slices", type=int)
    p.add_argument("--approach", choices=("0", "1", "2", "all"), default="all")
    p.add_argument("--out")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("theory", help="deterministic components and surrogate loss")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--v", type=int)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--r", help="comma-separated iterations")
    p.add_argument("--r-max", type=float, default=1e6)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--mode", choices=("hybrid", "quadrature"), default="hybrid")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("spectrum", help="spectral densities on the standard grid")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--v", type=int)
    p.add_argument("--u-max", type=float, default=1.5)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--remove-point-mass", action="store_true")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("phase", help="phase label and exponents at (alpha, beta)")
    p.add_argument("alpha", type=float)
    p.add_argument("beta", type=float)
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_phase)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    client = Client(args.server)
    try:
        args.func(args, client)
    except (ConfigError, ValidationError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except httpx.HTTPError as e:
        print(f"server error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
