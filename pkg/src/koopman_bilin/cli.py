"""Command-line interface.

Every subcommand prints a short human-readable table and writes a JSON
report (``<command>.json``) plus any CSV series into ``--out``. Exit status
is 0 on success, 2 when a mathematical condition or certificate fails and 1
on any other error; failures also produce a JSON report with a reason code.
"""

from __future__ import annotations

import argparse
import math
import os
import sys as _sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import defaults
from .bilinearize import bilinearize, simulate_bilinear
from .conditions import check_conditions, scan_parameter_resonances
from .errors import ConfigError, KoopmanError
from .flow import DEFAULT_CONFIG, sample_box, trajectory
from .gedmd import Dictionary, eigenfunctions_from_generator, fit_generator
from .linearize import continuity_sweep, linearize_parameterized, verify_conjugacy, homological_residual
from .polyfield import ControlAffineSystem, example_system, linear_part, load_system, materialize
from .spectral import eigen_decompose

COMMANDS = ("check", "linearize", "verify", "sweep", "resonance-scan", "bilinearize",
            "simulate", "simulate-bilinear", "gedmd", "example-sec5")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats fixed to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return {None: "null", True: "true", False: "false"}[None if obj is None else bool(obj)]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return dumps([obj.real, obj.imag], indent, _level)
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number, bool, str)) or v is None for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt_float(float(v)).strip('"') for v in r))
    write_atomic(path, "\n".join(lines) + "\n")


def _table(rows, header) -> str:
    cells = [[str(h) for h in header]] + [[c if isinstance(c, str) else f"{c:.6g}" for c in r]
                                          for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}", field="u") from exc


def parse_grid(text: str) -> np.ndarray:
    """``LO:HI:STEP`` with both ends included."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"expected LO:HI:STEP, got {text!r}", field="u-grid") from exc
    if step <= 0 or hi < lo:
        raise ConfigError(f"empty grid {text!r}", field="u-grid")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


def parse_k(text: str):
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        k = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid order {text!r}") from exc
    if k < 1:
        raise argparse.ArgumentTypeError("order must be >= 1")
    return k


def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"{text} must be positive")
        return v
    return conv


def parse_schedule(text: str) -> list[tuple[float, list[float]]]:
    """``t0:u[,u..];t1:u..`` for piecewise-constant inputs."""
    out = []
    for piece in text.split(";"):
        if not piece.strip():
            continue
        try:
            t, u = piece.split(":")
            out.append((float(t), parse_floats(u)))
        except ValueError as exc:
            raise ConfigError(f"malformed schedule piece {piece!r}", field="schedule") from exc
    if not out:
        raise ConfigError("empty schedule", field="schedule")
    return out


def parse_monomials(text: str) -> list[tuple[int, ...]]:
    try:
        return [tuple(int(e) for e in m.split(",")) for m in text.split(";") if m.strip()]
    except ValueError as exc:
        raise ConfigError(f"malformed monomial list {text!r}", field="monomials") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopman-bilin",
                                description="Koopman linearization and bilinearization toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--system", type=Path, help="system definition (JSON)")
        s.add_argument("--a", type=float, default=1.0, help="parameter of the built-in example")
        s.add_argument("--k", type=parse_k, default=None)
        s.add_argument("--u", type=str, default=None, help="input value(s), comma separated")
        s.add_argument("--u-grid", type=str, default=None, help="LO:HI:STEP")
        s.add_argument("--depth", type=_positive(int), default=defaults.DEPTH)
        s.add_argument("--tol", type=_positive(float), default=defaults.RESONANCE_TOL)
        s.add_argument("--samples", type=_positive(int), default=64)
        s.add_argument("--horizon", type=_positive(float), default=5.0)
        s.add_argument("--out", type=Path, default=Path("koopman_out"))
        s.add_argument("--seed", type=int, default=defaults.SEED)
        if name in ("simulate", "simulate-bilinear"):
            s.add_argument("--x0", type=str, required=True)
        if name == "simulate-bilinear":
            s.add_argument("--schedule", type=str, default=None, help="t0:u;t1:u;...")
        if name == "sweep":
            s.add_argument("--deltas", type=str, default="0.1,0.05,0.025,0.0125")
        if name == "gedmd":
            s.add_argument("--monomials", type=str, default=None, help="e1,e2;e1,e2;...")
            s.add_argument("--dict-degree", type=_positive(int), default=2)
    return p


def _system(args) -> ControlAffineSystem:
    if args.system is not None:
        return load_system(args.system)
    return example_system(args.a)


def _u(args, sys: ControlAffineSystem) -> np.ndarray:
    if args.u is None:
        return np.zeros(sys.d)
    u = np.array(parse_floats(args.u))
    if u.size != sys.d:
        raise ConfigError(f"--u has {u.size} entries, system has {sys.d} inputs", field="u")
    return u


def _int_k(args, default=defaults.K) -> int:
    k = default if args.k is None else args.k
    if k == math.inf:
        raise ConfigError("this command needs a finite order --k", field="k")
    return int(k)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_check(args):
    sys = _system(args)
    u = _u(args, sys)
    lam = eigen_decompose(linear_part(materialize(sys, u))).eigenvalues
    k = defaults.K if args.k is None else args.k
    rep = check_conditions(lam, k, args.tol)
    rows = [[str(i), f"{z.real:.6g}{z.imag:+.6g}j", str(nr), str(sp), g]
            for i, (z, nr, sp, g) in enumerate(zip(lam, rep.nonresonant, rep.spread_ok, rep.min_gaps))]
    print(_table(rows, ["i", "lambda", "nonresonant", "spread", "min_gap"]))
    return (0 if rep.all_pass else 2), {"u": u, **rep.to_dict()}


def cmd_linearize(args):
    sys = _system(args)
    u = _u(args, sys)
    psi = linearize_parameterized(sys, u, _int_k(args), args.tol)
    f = materialize(sys, u)
    resid = homological_residual(f, psi)
    write_atomic(args.out / "psi.json", dumps(psi.to_dict()) + "\n")
    rows = [[str(i + 1), "x^" + str(list(m)), float(np.real(c))]
            for i, m, c in psi.psi_poly.terms()]
    print(_table(rows, ["component", "monomial", "coefficient"]))
    return 0, {"u": u, "k": psi.k, "min_denominator": psi.min_denominator,
               "imag_residue": psi.imag_residue,
               "homological_residual": {str(d): r for d, r in resid.items()},
               "psi_file": "psi.json"}


def cmd_verify(args):
    sys = _system(args)
    u = _u(args, sys)
    psi = linearize_parameterized(sys, u, _int_k(args), args.tol)
    X = sample_box(sys.domain, args.samples, args.seed)
    diag = verify_conjugacy(materialize(sys, u), psi, X, args.horizon)
    _write_csv(args.out / "verify.csv", ["t", "residual"], diag.residual_by_time)
    print(_table([[diag.conjugacy_residual, diag.instantaneous_residual, diag.pullback_T]],
                 ["conjugacy", "instantaneous", "pullback_T"]))
    return 0, {"u": u, **diag.to_dict()}


def cmd_sweep(args):
    sys = _system(args)
    u = _u(args, sys)
    deltas = parse_floats(args.deltas)
    grid = sample_box(sys.domain, args.samples, args.seed)
    rows = continuity_sweep(sys, u, deltas, _int_k(args), grid, args.tol)
    _write_csv(args.out / "sweep.csv", ["delta", "gap", "derivative_gap"],
               [[r.delta, r.gap, r.derivative_gap] for r in rows])
    print(_table([[r.delta, r.gap, r.derivative_gap, "-" if r.ratio is None else r.ratio]
                  for r in rows], ["delta", "gap", "derivative_gap", "ratio"]))
    return 0, {"u0": u, "rows": [r.to_dict() for r in rows]}


def cmd_resonance_scan(args):
    sys = _system(args)
    if sys.d != 1:
        raise ConfigError("resonance-scan needs a single-input system", field="system")
    if args.u_grid is None:
        raise ConfigError("resonance-scan needs --u-grid LO:HI:STEP", field="u-grid")
    grid = parse_grid(args.u_grid)
    k = defaults.K if args.k is None else args.k
    res = scan_parameter_resonances(sys, grid, k, args.tol)
    flagged = [p for p in res.points if p.flagged]
    rows = []
    for p in flagged:
        hit = min(p.localized, key=lambda h: h[1]) if p.localized else None
        rows.append([p.u[0], p.report.min_gap if p.report else float("nan"),
                     "-" if hit is None else f"{hit[0][0]:.6g}"])
    print(_table(rows, ["u", "grid_min_gap", "refined_u"]))
    return 0, res.to_dict()


def cmd_bilinearize(args):
    sys = _system(args)
    model = bilinearize(sys, _int_k(args), args.depth, args.tol, seed=args.seed)
    write_atomic(args.out / "model.json", dumps(model.to_dict()) + "\n")
    print(f"certificate: {model.certificate.verdict} "
          f"(dim {model.certificate.dim_vf}/{model.certificate.dim_mat}), "
          f"residual {model.residual:.3g}")
    return 0, {"certificate": model.certificate.to_dict(), "residual": model.residual,
               "model_file": "model.json"}


def cmd_simulate(args):
    sys = _system(args)
    u = _u(args, sys)
    x0 = np.array(parse_floats(args.x0))
    if x0.size != sys.n:
        raise ConfigError(f"--x0 has {x0.size} entries, system has {sys.n} states", field="x0")
    tr = trajectory(materialize(sys, u), x0, args.horizon, DEFAULT_CONFIG, tuple(u))
    tr.write_csv(args.out / "trajectory.csv")
    print(f"{len(tr.times)} steps, final state {tr.states[-1].tolist()}")
    return 0, {"u": u, "x0": x0, "steps": len(tr.times), "final": tr.states[-1],
               "csv": "trajectory.csv"}


def cmd_simulate_bilinear(args):
    sys = _system(args)
    x0 = np.array(parse_floats(args.x0))
    if x0.size != sys.n:
        raise ConfigError(f"--x0 has {x0.size} entries, system has {sys.n} states", field="x0")
    schedule = parse_schedule(args.schedule) if args.schedule else [(0.0, list(_u(args, sys)))]
    model = bilinearize(sys, _int_k(args), args.depth, args.tol, seed=args.seed)
    sim = simulate_bilinear(model, sys, x0, schedule, args.horizon)
    _write_csv(args.out / "bilinear_error.csv", ["t", "err"], zip(sim.times, sim.error))
    print(f"max |z - psi(x)| = {sim.max_error:.3g}")
    return 0, {"x0": x0, "schedule": [[t, u] for t, u in schedule],
               "max_error": sim.max_error, "csv": "bilinear_error.csv"}


def cmd_gedmd(args):
    sys = _system(args)
    u = _u(args, sys)
    f = materialize(sys, u)
    dic = (Dictionary(parse_monomials(args.monomials)) if args.monomials
           else Dictionary.up_to(sys.n, args.dict_degree))
    X = sample_box(sys.domain, max(args.samples, 2 * dic.size), args.seed)
    G = fit_generator(f, dic, X)
    matches = eigenfunctions_from_generator(G, eigen_decompose(linear_part(f)))
    rows = [[f"{m.jacobian_eigenvalue.real:.6g}", f"{m.generator_eigenvalue.real:.6g}",
             " ".join(f"{c.real:+.6g}x^{list(k)}" for k, c in m.coefficients.items())]
            for m in matches]
    print(_table(rows, ["jacobian", "generator", "eigenfunction"]))
    return 0, {"u": u, "generator": G.to_dict(), "eigenfunctions": [m.to_dict() for m in matches],
               "generator_spectrum": [[z.real, z.imag] for z in np.linalg.eigvals(G.L).astype(complex)]}


def _close(a, b, tol):
    return bool(abs(a - b) <= tol)


def cmd_example_sec5(args):
    """The two-state example end to end, asserting its closed-form values."""
    a = args.a
    sys = example_system(a)
    checks = []

    def check(name, ok, value=None):
        checks.append({"name": name, "pass": bool(ok), "value": value})

    for u in (0.0, 0.1, -0.5):
        psi = linearize_parameterized(sys, [u], 2)
        c = psi.coefficient(1, (2, 0))
        check(f"psi2 x1^2 coefficient at u={u}", _close(c, (a + u) / (1 + u), 1e-8), c)

    grid = parse_grid("-2.2:0.9:0.1")
    res = scan_parameter_resonances(sys, grid, 4, 1e-6)
    flagged = sorted(p.u[0] for p in res.points if p.flagged)
    targets = [u for u in (-2.0, -1.0, 0.0, 0.5, 2 / 3, 0.75) if grid[0] <= u <= grid[-1]]
    half = 0.05 + 1e-9
    ok = (all(any(abs(f - t) <= half for f in flagged) for t in targets)
          and all(any(abs(f - t) <= half for t in targets) for f in flagged))
    check("resonance flags", ok, flagged)

    try:
        linearize_parameterized(sys, [-1.0], 2)
        check("u=-1 denominator vanishes", a == 0)
    except KoopmanError as exc:
        check("u=-1 denominator vanishes", exc.code == "resonant_denominator" or a == 0, exc.code)

    if a == 1:
        model = bilinearize(sys, 5, args.depth, seed=args.seed)
        c = model.psi.psi_poly
        check("certificate isomorphic", model.certificate.isomorphic, model.certificate.verdict)
        check("psi = (x1, x2 + x1^2)",
              all(_close(model.psi.coefficient(i, m), v, 1e-10) for i, m, v in
                  [(0, (1, 0), 1), (1, (0, 1), 1), (1, (2, 0), 1), (0, (0, 1), 0),
                   (1, (1, 0), 0)]) and c.max_degree == 2)
        check("B = [[0,0],[0,1]]", np.array_equal(model.B[0], [[0.0, 0.0], [0.0, 1.0]]),
              model.B[0])
        sim = simulate_bilinear(model, sys, [0.5, 0.2], [(0.0, [0.4]), (1.0, [-0.3])], 3.0)
        check("paired simulation", sim.max_error < 1e-6, sim.max_error)
    else:
        from .liealg import check_isomorphism
        cert = check_isomorphism(sys, args.depth)
        check("certificate not isomorphic", not cert.isomorphic, cert.to_dict())

    for u in (-0.5, 0.0, 0.3):
        f = materialize(sys, [u])
        dic = Dictionary([(1, 0), (0, 1), (2, 0)])
        G = fit_generator(f, dic, sample_box(sys.domain, 64, args.seed))
        mu = np.sort(np.linalg.eigvals(G.L).real)
        check(f"generator spectrum at u={u}",
              np.allclose(mu, np.sort([-1.0, -1.0 + u, -2.0]), atol=1e-6), mu)

    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
    status = 0 if all(c["pass"] for c in checks) else 1
    return status, {"a": a, "checks": checks}


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


_VALUE_FLAGS = ("--u", "--u-grid", "--x0", "--schedule", "--deltas", "--a")


def _attach_values(argv: list[str]) -> list[str]:
    """Join ``--flag -0.5,1`` into ``--flag=-0.5,1`` so negative lists parse."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(_sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(_attach_values(argv))
    report_path = args.out / f"{args.command}.json"
    start = time.perf_counter()
    try:
        status, report = HANDLERS[args.command](args)
        report = {"command": args.command, "status": "ok" if status == 0 else "failed", **report}
    except KoopmanError as exc:
        status = exc.exit_status
        report = {"command": args.command, "status": "error", "error": exc.to_dict()}
        print(f"error [{exc.code}]: {exc}", file=_sys.stderr)
    except (OSError, ValueError) as exc:
        status = 1
        report = {"command": args.command, "status": "error",
                  "error": {"code": "runtime_error", "message": str(exc), "detail": {}}}
        print(f"error: {exc}", file=_sys.stderr)
    log_time = time.perf_counter() - start
    try:
        write_atomic(report_path, dumps(report) + "\n")
    except OSError as exc:
        print(f"error: cannot write {report_path}: {exc}", file=_sys.stderr)
        return 1
    if status == 0:
        print(f"report written to {report_path} ({log_time:.2f} s)")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
