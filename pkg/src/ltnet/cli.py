"""Command-line interface.

Subcommands map onto the library one-to-one: simulate, equilibrium,
certify, synthesize, recruit (epsilon sweeps), fit, timescale, rtest and
predict.  Exit codes: 0 on success (a failing stability certificate is
still a successful run and reports pass: false), 2 on validation errors
(malformed files or flags), 3 on numerical failures.  Every flag has an
environment-variable override with the LTNET_ prefix (e.g. LTNET_SEED);
explicit flags win.  Reports are deterministic for identical inputs and
seeds, and existing output files are never overwritten without --force.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as ltio
from .control import InfeasibleExact, NegativeControl, multilayer_controls
from .equilibria import (
    NoCoveringPiece,
    NotCertified,
    equilibrium_map,
    lipschitz_constant,
    max_gain_matrix,
)
from .hierarchy import epsilon_sweep, simulate_hierarchy
from .io import ValidationError, write_report
from .network import simulate
from .stability import certify_hierarchy
from . import sysid

__all__ = ["main", "run"]

_ENV_PREFIX = "LTNET_"

_NUMERICAL_ERRORS = (
    NotCertified,
    NoCoveringPiece,
    InfeasibleExact,
    NegativeControl,
    sysid.SimulationDiverged,
    sysid.AllStartsFailed,
    sysid.NonPositiveCorrelations,
    np.linalg.LinAlgError,
    FloatingPointError,
)


def _env(name, default=None):
    return os.environ.get(_ENV_PREFIX + name.upper().replace("-", "_"), default)


def _add(parser, flag, **kw):
    """Flag with an LTNET_* environment fallback."""
    name = flag.lstrip("-")
    env_val = _env(name)
    if env_val is not None:
        kw["default"] = env_val
        kw.pop("required", None)
    kw.setdefault("help", "")
    kw["help"] += f" [env {_ENV_PREFIX}{name.upper().replace('-', '_')}]"
    parser.add_argument(flag, **kw)


def _floats(text, count=None):
    vals = [float(v) for v in str(text).replace(",", " ").split()]
    if count is not None and len(vals) != count:
        raise ValidationError(f"expected {count} numbers, got {len(vals)} in {text!r}")
    return vals


def _parse_x0(text, n):
    if text is None:
        return np.zeros(n)
    if os.path.exists(str(text)):
        return np.loadtxt(text)
    return np.array(_floats(text, n))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ltnet",
        description="linear-threshold network hierarchies: simulation, "
        "equilibria, certification, recruitment control and identification",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a single network")
    _add(p, "--net", required=True, help="network JSON")
    _add(p, "--x0", help="initial state (comma list or file)")
    _add(p, "--tspan", default="0,10", help="t0,t1")
    _add(p, "--dt", help="fixed step (default tau/50)")
    _add(p, "--out", required=True, help="trajectory CSV path")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("equilibrium", help="equilibrium map of a network")
    _add(p, "--net", required=True)
    _add(p, "--at", help="evaluate at this input instead of dumping the map")
    _add(p, "--out", required=True, help="JSON output path")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("certify", help="layerwise stability certificates")
    _add(p, "--hierarchy", required=True, help="hierarchy JSON")
    _add(p, "--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("synthesize", help="inhibition/recruitment controls")
    _add(p, "--hierarchy", required=True)
    _add(p, "--out", required=True, help="controls JSON path")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("recruit", help="epsilon sweep with controls")
    _add(p, "--hierarchy", required=True)
    _add(p, "--controls", help="controls JSON (default: synthesize)")
    _add(p, "--eps", default="0.5,0.25,0.1", help="comma list of ratios")
    _add(p, "--x0", help="stacked initial state (comma list or file)")
    _add(p, "--window", help="t_lo,t_hi (default 2 tau1, 10 tau1)")
    _add(p, "--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("fit", help="fit a structured model to rate data")
    _add(p, "--problem", required=True, help="problem JSON")
    _add(p, "--data", help="directory with per-condition rate CSVs")
    _add(p, "--seed", required=True, help="RNG seed (stochastic step)")
    _add(p, "--starts", default="32")
    _add(p, "--maxiter", default="300")
    _add(p, "--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("timescale", help="autocorrelation timescale of trials")
    _add(p, "--data", required=True, help="CSV, one trial per row")
    _add(p, "--binwidth", default="0.2")
    _add(p, "--lags", default="1:10", help="lag range lo:hi")
    _add(p, "--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("rtest", help="two-sided permutation test")
    _add(p, "--a", required=True, help="first sample (CSV or comma list)")
    _add(p, "--b", required=True, help="second sample")
    _add(p, "--n-perm", default="1999")
    _add(p, "--seed", required=True)
    _add(p, "--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("predict", help="rates of a fitted parameter vector")
    _add(p, "--problem", required=True)
    _add(p, "--data", help="directory with per-condition rate CSVs")
    _add(p, "--params", required=True, help="fit report JSON (for its z)")
    _add(p, "--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--force", action="store_true")

    return ap


def _load_problem(path, data_dir):
    obj = ltio._load_json(path)
    try:
        structure = [
            sysid.WeightEntry(
                e["block"], int(e["row"]), int(e["col"]),
                e.get("sign", "free"), float(e.get("bound", 1.5)),
            )
            for e in obj["structure"]
        ]
        inputs = [
            sysid.InputSignal(s["name"], s["kind"], s.get("params", {}))
            for s in obj.get("inputs", [])
        ]
        problem = sysid.SysIdProblem(
            layer_sizes=obj["layer_sizes"],
            structure=structure,
            inputs=inputs,
            conditions=obj["conditions"],
            manifest=obj["manifest"],
            t0=obj.get("t0", -7.0),
            tf=obj.get("tf", 7.0),
            T=obj.get("T", 0.1),
            tau_bounds=obj.get("tau_bounds"),
            c_bounds=tuple(obj.get("c_bounds", (-3.0, 5.0))),
            gamma1=obj.get("gamma1", 250.0),
            gamma2=obj.get("gamma2", 150.0),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"{path}: bad problem definition: {e}")
    if data_dir is not None:
        data = {}
        for cond in problem.conditions:
            csv_path = os.path.join(data_dir, f"{cond}.csv")
            _, times, vals = ltio.rates_from_csv(csv_path)
            data[cond] = vals
        try:
            problem.attach_data(data)
        except ValueError as e:
            raise ValidationError(str(e))
    return problem


def _sample(text):
    if os.path.exists(str(text)):
        return np.loadtxt(text, delimiter=",").ravel()
    return np.array(_floats(text))


def _emit(args, payload, command):
    out = getattr(args, "out", None)
    text = write_report(payload, command, out, getattr(args, "force", False))
    if out is None:
        print(text)


def run(args) -> int:
    cmd = args.command
    if cmd == "simulate":
        net = ltio.load_network(args.net)
        t0, t1 = _floats(args.tspan, 2)
        dt = float(args.dt) if args.dt is not None else None
        traj = simulate(net, _parse_x0(args.x0, net.n), None, (t0, t1), dt)
        ltio.trajectory_to_csv(traj, args.out, args.force)
        return 0

    if cmd == "equilibrium":
        net = ltio.load_network(args.net)
        pa_map = equilibrium_map(net.W, net.m)
        if args.at is not None:
            d = np.array(_floats(args.at, net.n))
            payload = {
                "at": d.tolist(),
                "value": pa_map.eval(d).tolist(),
                "lipschitz": lipschitz_constant(pa_map),
            }
        else:
            payload = {
                "pieces": pa_map.to_jsonable(),
                "lipschitz": lipschitz_constant(pa_map),
                "max_gain": max_gain_matrix(pa_map).tolist(),
            }
        _emit(args, payload, cmd)
        return 0

    if cmd == "certify":
        h = ltio.load_hierarchy(args.hierarchy)
        cert = certify_hierarchy(h)
        layers = [
            {
                "layer": 1,
                "check": "boundedness",
                "pass": cert.layer1_bounded,
                **(
                    cert.layer1_certificate.to_dict()
                    if cert.layer1_certificate is not None
                    else {}
                ),
            }
        ]
        for i, c in enumerate(cert.certificates, start=2):
            layers.append({"layer": i, **c.to_dict()})
        _emit(args, {"layers": layers, "all_pass": cert.all_passed}, cmd)
        return 0

    if cmd == "synthesize":
        h = ltio.load_hierarchy(args.hierarchy)
        cert = certify_hierarchy(h)
        if not cert.all_passed:
            raise NotCertified("hierarchy failed certification; no controls")
        laws = multilayer_controls(h, cert)
        write_report(
            {"controls": ltio.controls_to_jsonable(laws)}, cmd, args.out, args.force
        )
        return 0

    if cmd == "recruit":
        h = ltio.load_hierarchy(args.hierarchy)
        cert = certify_hierarchy(h)
        if 2 not in cert.maps:
            # reference trajectories need certified-unique equilibrium maps
            raise NotCertified("lower layers failed certification; cannot sweep")
        if args.controls is not None:
            laws = ltio.load_controls(args.controls, h)
        else:
            laws = multilayer_controls(h, cert)
        eps_list = _floats(args.eps)
        window = tuple(_floats(args.window, 2)) if args.window else None
        x0 = None
        if args.x0 is not None:
            flat = _parse_x0(args.x0, sum(la.n for la in h.layers))
            x0, k = [], 0
            for la in h.layers:
                x0.append(flat[k : k + la.n])
                k += la.n
        report = epsilon_sweep(h, laws, eps_list, x0=x0, window=window, maps=cert.maps)
        _emit(args, report.to_dict(), cmd)
        return 0

    if cmd == "fit":
        problem = _load_problem(args.problem, args.data)
        report = sysid.fit(
            problem,
            n_starts=int(args.starts),
            seed=int(args.seed),
            maxiter=int(args.maxiter),
        )
        payload = {
            "z": report.z.tolist(),
            "names": problem.param_names(),
            "f": report.f,
            "f_sse": report.f_sse,
            "f_corr": report.f_corr,
            "f_var": report.f_var,
            "r2": report.r2,
            "n_starts": report.n_starts,
            "best_start": report.best_start,
            "seed": report.seed,
        }
        _emit(args, payload, cmd)
        return 0

    if cmd == "timescale":
        try:
            trials = np.loadtxt(args.data, delimiter=",", ndmin=2)
        except (OSError, ValueError) as e:
            raise ValidationError(f"{args.data}: {e}")
        lo, hi = (int(v) for v in str(args.lags).split(":"))
        A, tau = sysid.autocorr_timescale(
            trials, float(args.binwidth), range(lo, hi + 1)
        )
        _emit(args, {"amplitude": A, "tau": tau}, cmd)
        return 0

    if cmd == "rtest":
        a, b = _sample(args.a), _sample(args.b)
        p = sysid.randomization_test(
            a, b, n_perm=int(getattr(args, "n_perm")), seed=int(args.seed)
        )
        _emit(args, {"p_value": p, "n_perm": int(getattr(args, "n_perm"))}, cmd)
        return 0

    if cmd == "predict":
        problem = _load_problem(args.problem, args.data)
        params = ltio._load_json(args.params)
        z = np.array(params["z"] if isinstance(params, dict) else params, dtype=float)
        est = sysid.predict(z, problem)
        payload = {"estimates": {c: v.tolist() for c, v in est.items()}}
        if problem.data is not None:
            payload["r2"] = sysid.r_squared(problem.data, est)
        _emit(args, payload, cmd)
        return 0

    raise ValidationError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except _NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
