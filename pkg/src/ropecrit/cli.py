"""Command-line front end.

Every run writes a manifest (parameters, version and SHA-256 digests of the
outputs) next to its first output file, or embeds it in the stdout summary
when no output file is requested.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__

SIG = 12
EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class DomainError(Exception):
    """Infeasible or out-of-regime request (exit code 1)."""


class InputError(Exception):
    """Unreadable or malformed input (exit code 2)."""


def fmt(x) -> str:
    return format(float(x) + 0.0, f".{SIG}g")


def _clean(obj):
    """Round floats to 12 significant digits and map non-finite values to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj)) if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")
    return buf.getvalue()


class Outputs:
    """Collects written files for the manifest."""

    def __init__(self):
        self.files = []

    def write(self, path, text: str):
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as e:
            raise InputError(f"cannot write {path}: {e}") from e
        self.files.append((path, hashlib.sha256(text.encode()).hexdigest()))


# ---------------------------------------------------------------------------
# curve ingestion and emission


def load_curve(path):
    from .curves import curve_from_json

    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    try:
        if path.endswith(".csv"):
            return curve_from_csv(text)
        return curve_from_json(text)
    except (ValueError, KeyError, TypeError, IndexError) as e:
        raise InputError(f"cannot parse curve {path}: {e}") from e


GEOMETRY_HEADER = ["comp", "closed", "s", "x", "y", "z", "tx", "ty", "tz", "kx", "ky", "kz", "torsion"]


def geometry_csv(curve, samples: int) -> str:
    from .curves import component_grid

    rows = []
    for c, comp in enumerate(curve.components):
        s = component_grid(comp, samples)
        P, T, K = comp.frame(s)
        tor = comp.torsion(s)
        for i in range(len(s)):
            rows.append([str(c), str(int(comp.closed)), s[i], *P[i], *T[i], *K[i], tor[i]])
    return csv_text(GEOMETRY_HEADER, rows)


def curve_from_csv(text: str):
    """Geometry CSV (as written by ``--emit``) as Sampled components."""
    from .curves import Component, Curve, Sampled

    data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 9:
        raise ValueError("geometry CSV needs comp, closed, s, x, y, z, tx, ty, tz")
    comps = []
    for c in np.unique(data[:, 0]).astype(int):
        r = data[data[:, 0] == c]
        closed = bool(r[0, 1])
        s, P, T = r[:, 2], r[:, 3:6], r[:, 6:9]
        K = r[:, 9:12] if data.shape[1] >= 12 else None
        tor = r[:, 12] if data.shape[1] >= 13 else None
        if closed:
            L = s[-1] + np.linalg.norm(P[0] - P[-1])
            s = np.append(s, L)
            P, T = np.vstack([P, P[:1]]), np.vstack([T, T[:1]])
            K = None if K is None else np.vstack([K, K[:1]])
            tor = None if tor is None else np.append(tor, tor[0])
        comps.append(Component([Sampled(s, P, T, K, tor)], closed))
    return Curve(comps)


def struts_csv(report) -> str:
    rows = [[str(st.x[0]), st.x[1], str(st.y[0]), st.y[1], st.length, st.psi_x, st.psi_y,
             "" if st.family is None else str(st.family)] for st in report.struts]
    return csv_text(["x_comp", "x_s", "y_comp", "y_s", "length", "psi_x", "psi_y", "family"], rows)


# ---------------------------------------------------------------------------
# subcommands


def cmd_thickness(a, out: Outputs):
    from .thickness import compute_thickness

    if a.curve is None:
        raise InputError("thickness needs --curve")
    curve = load_curve(a.curve)
    if a.sigma is None:
        a.sigma = 0.5  # ordinary ropelength
    rep = compute_thickness(curve, a.sigma, a.samples, **({"refine_tol": a.tol} if a.tol else {}))
    summary = {"ts": rep.ts, "reach": rep.reach, "min_rho": rep.min_rho, "sigma": a.sigma,
               "struts": len(rep.struts), "kinks": len(rep.kinks),
               "families": len(rep.families), "samples": a.samples}
    body = dict(rep.to_json(), summary=summary)
    _emit_common(a, out, curve, rep, body)
    return summary


def _paths(*paths):
    return [p for i, p in enumerate(paths) if p is not None and p not in paths[:i]]


def _emit_common(a, out, curve, rep, body):
    for path in _paths(a.out, a.report):
        out.write(path, dumps(body))
    if a.emit:
        out.write(a.emit, geometry_csv(curve, a.samples))
    if a.emit_struts and rep is not None:
        out.write(a.emit_struts, struts_csv(rep))


def cmd_clasp(a, out: Outputs):
    from .clasp import build_clasp, clasp_certificate, clasp_thickness, excess_length, tip_gap

    if a.tau is None or a.sigma is None:
        raise InputError("clasp needs --tau and --sigma")
    sol = build_clasp(a.tau, a.sigma)
    th = clasp_thickness(sol, a.samples)
    summary = {"tau": a.tau, "sigma": a.sigma, "regime": sol.regime.value,
               "excess_length": excess_length(sol), "tip_gap": tip_gap(sol),
               "ts": th.ts, "modified_check": th.modified, "kink_angle": sol.kink_angle,
               "curved_length": sol.curved_length,
               "pieces": [{"kind": k, "length": p.length} for k, p in zip(sol.kinds, sol.pieces)]}
    if sol.params is not None:
        summary.update({k: getattr(sol.params, k) for k in ("alpha", "beta", "gamma", "a", "b")})
    body = dict(summary)
    if th.report is not None:
        body["thickness"] = th.report.to_json()
    _emit_common(a, out, sol.curve(1.0), th.report, body)
    if a.certificate:
        cert = clasp_certificate(sol, a.samples, a.grid)
        out.write(a.certificate, dumps(cert.to_json()))
        summary.update(feasible=cert.feasible, residual=cert.residual)
    return summary


def cmd_supercoil(a, out: Outputs):
    from .strutfree import equilibrium_phi, reconstruct_supercoil, supercoil_integrate

    c = 1.0 if a.c is None else a.c
    phi0 = equilibrium_phi(c) if a.phi0 is None else a.phi0
    traj = supercoil_integrate(c, phi0, a.dphi0, a.length, a.step)
    if traj.stopped:
        raise DomainError(f"phi reached 0 at s = {fmt(traj.s[-1])} (c = 0)")
    rec = reconstruct_supercoil(traj)
    rows = [[traj.s[i], traj.phi[i], traj.dphi[i], rec.tau[i], *rec.points[i], *rec.V[i]]
            for i in range(len(traj.s))]
    text = csv_text(["s", "phi", "dphi", "tau", "x", "y", "z", "Vx", "Vy", "Vz"], rows)
    try:
        period = traj.period()
    except ValueError:
        period = math.nan
    summary = {"c": c, "phi0": phi0, "dphi0": a.dphi0, "length": float(traj.s[-1]),
               "step": traj.step, "energy": float(traj.energy[0]),
               "energy_drift": traj.energy_drift(), "period": period,
               "v_spread": rec.v_spread()}
    if a.out:
        out.write(a.out, text)
    if a.report:
        out.write(a.report, dumps(summary))
    if a.emit:
        out.write(a.emit, geometry_csv(rec.curve, a.samples))
    return summary


def cmd_balance(a, out: Outputs):
    from .balance import solve_balance
    from .clasp import build_clasp, clasp_certificate
    from .thickness import compute_thickness

    if a.curve is not None:
        if a.sigma is None:
            raise InputError("balance needs --sigma")
        curve = load_curve(a.curve)
        rep = None if a.kink_only else compute_thickness(curve, a.sigma, a.samples)
        if rep is not None and abs(rep.ts - 1.0) > 1e-6:
            raise DomainError(f"curve has Ts = {fmt(rep.ts)}; rescale to unit thickness first")
        cert = solve_balance(curve, a.sigma, rep, a.grid, a.tol)
    elif a.tau is not None and a.sigma is not None:
        sol = build_clasp(a.tau, a.sigma)
        cert = clasp_certificate(sol, a.samples, a.grid)
    else:
        raise InputError("balance needs --curve and --sigma, or --tau and --sigma")
    body = cert.to_json()
    for path in _paths(a.out, a.report):
        out.write(path, dumps(body))
    summary = {"feasible": cert.feasible, "residual": cert.residual,
               "endpoint_residuals": list(cert.endpoint_residuals), "tol": cert.tol,
               "total_mass": cert.total_mass, "grid": a.grid}
    if not cert.feasible:
        raise DomainError("no certificate at this resolution: " + json.dumps(_clean(summary)))
    return summary


def _phase_point(args):
    from .clasp import build_clasp, excess_length, tip_gap

    tau, sigma = args
    sol = build_clasp(tau, sigma)
    return [tau, sigma, sol.regime.value, excess_length(sol), tip_gap(sol)]


def _grid(lo, hi, n, single):
    if lo is None and hi is None:
        if single is None:
            raise InputError("missing sweep range")
        return [single]
    if lo is None or hi is None:
        raise InputError("sweep ranges need both ends")
    return list(np.linspace(lo, hi, n)) if n > 1 else [lo]


def cmd_phase(a, out: Outputs):
    taus = _grid(a.tau_min, a.tau_max, a.steps, a.tau)
    sigmas = _grid(a.sigma_min, a.sigma_max, a.steps, a.sigma)
    pts = [(float(t), float(s)) for t in taus for s in sigmas]
    if a.jobs > 1:
        with ProcessPoolExecutor(a.jobs) as ex:
            rows = list(ex.map(_phase_point, pts))
    else:
        rows = [_phase_point(p) for p in pts]
    text = csv_text(["tau", "sigma", "regime", "excess_length", "tip_gap"], rows)
    if a.out:
        out.write(a.out, text)
    else:
        sys.stdout.write(text)
    return {"points": len(rows)}


def cmd_helix(a, out: Outputs):
    from .balance import StrutMeasure, balance_residual, solve_balance
    from .curves import double_helix
    from .strutfree import StrutFreeKind, build_strutfree, helix_tension
    from .thickness import compute_thickness

    if a.pitch is not None:
        curve = double_helix(a.pitch, a.turns)
        rep = compute_thickness(curve, 0.5, a.samples)
        cert = solve_balance(curve, 0.5, rep, a.grid, a.tol)
        summary = {"pitch": a.pitch, "ts": rep.ts, "feasible": cert.feasible,
                   "residual": cert.residual, "total_mass": cert.total_mass}
        body = dict(summary, certificate=cert.to_json())
    else:
        if a.tau is None:
            raise InputError("helix needs --tau (torsion) or --pitch (double helix)")
        kind = StrutFreeKind.helix(a.tau)
        curve, phi = build_strutfree(kind, a.length)
        cert = balance_residual(curve, StrutMeasure(), phi, 1.0, a.grid, a.tol)
        phic, c = helix_tension(a.tau)
        summary = {"tau_h": a.tau, "phi": phic, "c": c, "feasible": cert.feasible,
                   "residual": cert.residual}
        body = dict(summary, certificate=cert.to_json())
    _emit_common(a, out, curve, None, body)
    if not summary["feasible"]:
        raise DomainError("balance check failed")
    return summary


def cmd_wave(a, out: Outputs):
    from .balance import StrutMeasure, balance_residual
    from .strutfree import StrutFreeKind, build_strutfree

    if a.theta is not None:
        kind = StrutFreeKind.wave_from_theta(a.theta)
    else:
        kind = StrutFreeKind.wave(1.2 if a.v_norm is None else a.v_norm)
    curve, phi = build_strutfree(kind, a.arcs)
    cert = balance_residual(curve, StrutMeasure(), phi, 1.0, a.grid, a.tol)
    summary = {"v_norm": kind.v_norm, "theta": kind.theta, "embedded": kind.embedded,
               "arcs": a.arcs, "feasible": cert.feasible, "residual": cert.residual}
    _emit_common(a, out, curve, None, dict(summary, certificate=cert.to_json()))
    return summary


COMMANDS = {"thickness": cmd_thickness, "clasp": cmd_clasp, "supercoil": cmd_supercoil,
            "balance": cmd_balance, "phase": cmd_phase, "helix": cmd_helix, "wave": cmd_wave}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ropecrit", description="Thick-curve criticality tools")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        q = sub.add_parser(name)
        q.add_argument("--config", help="JSON file of defaults; flags override")
        q.add_argument("--curve")
        q.add_argument("--sigma", type=float)
        q.add_argument("--tau", type=float)
        q.add_argument("--samples", type=int, default=2048)
        q.add_argument("--tol", type=float)
        q.add_argument("--out")
        q.add_argument("--emit")
        q.add_argument("--emit-struts")
        q.add_argument("--report")
        q.add_argument("--grid", type=int, default=512, help="balance cells per component")
        if name == "supercoil":
            q.add_argument("--c", type=float)
            q.add_argument("--phi0", type=float)
            q.add_argument("--dphi0", type=float, default=0.0)
            q.add_argument("--length", type=float, default=20.0)
            q.add_argument("--step", type=float, default=1e-3)
        if name == "phase":
            for f in ("--sigma-min", "--sigma-max", "--tau-min", "--tau-max"):
                q.add_argument(f, type=float)
            q.add_argument("--steps", type=int, default=64)
            q.add_argument("--jobs", type=int, default=1)
        if name == "clasp":
            q.add_argument("--certificate", help="balance certificate JSON")
        if name == "balance":
            q.add_argument("--kink-only", action="store_true")
        if name == "helix":
            q.add_argument("--pitch", type=float, help="double helix of this pitch instead")
            q.add_argument("--turns", type=float, default=2.0)
            q.add_argument("--length", type=float)
        if name == "wave":
            q.add_argument("--v-norm", type=float)
            q.add_argument("--theta", type=float)
            q.add_argument("--arcs", type=int, default=4)
    return p


def _apply_config(parser, argv):
    """Parse argv, then fill every flag not given on the command line from --config."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read config {args.config}: {e}") from e
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    given = {tok.split("=", 1)[0][2:].replace("-", "_") for tok in argv if tok.startswith("--")}
    for k, v in cfg.items():
        key = k.replace("-", "_")
        if not hasattr(args, key):
            raise InputError(f"unknown config key {k!r}")
        if key not in given:
            setattr(args, key, v)
    return args


def _manifest(args, summary, outputs: Outputs):
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("command",)}
    return {"subcommand": args.command, "parameters": params, "version": __version__,
            "summary": summary,
            "outputs": [{"path": os.path.basename(p), "sha256": h} for p, h in outputs.files]}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as e:
        return EXIT_IO if e.code else EXIT_OK
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    out = Outputs()
    try:
        summary = COMMANDS[args.command](args, out)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    man = _manifest(args, summary, out)
    if out.files:
        first = out.files[0][0]
        path = first + ".manifest.json"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(man))
        if args.command != "phase" or args.out:
            sys.stdout.write(dumps(summary))
    else:
        if args.command != "phase":
            sys.stdout.write(dumps(dict(summary, manifest=man)))
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
