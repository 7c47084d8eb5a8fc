"""Batch entry points and report files.

Subcommands::

    bousspatch run --config run.toml --out rundir
    bousspatch verify-kernels [--out dir]
    bousspatch diagnose --run rundir --probes probes.csv [--time t] [--gamma g] [--out dir]
    bousspatch bench [--n 128] [--repeat 5]

The exit status is 0 iff every check of the command passed.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time as _time
import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import kernels as kn
from . import sio
from . import solver as sv
from . import spectral as sp
from .config import ConfigError, emit_config, parse_config

KERNEL_COLUMNS = ("suite", "check", "value", "reference", "error", "tolerance", "passed")
SNAPSHOT_COLUMNS = ("index", "time", "epoch", "u_sup", "u_sup_running")
TRACE_COLUMNS = ("time", "max_curvature", "area", "u_sup")
AREA_DRIFT_TOL = 1e-3
SPLITTING_TOL = 1e-3


class ReportError(OSError):
    """I/O failure while writing or reading run files; the message names the path."""


# -- kernel suite ------------------------------------------------------------------

@dataclass(frozen=True)
class KernelCheck:
    suite: str
    check: str
    value: float
    reference: float
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error <= self.tolerance)

    def row(self):
        return (self.suite, self.check, self.value, self.reference, self.error,
                self.tolerance, self.passed)


def _nested_fd(idx, x, t, h=1e-3):
    """``d_j d_k`` of ``grad^perp_i`` applied to ``d_1 Delta^-1 (heat)`` by central differences."""
    i, j, k = kn.parse_index(idx)
    e = {1: np.array([h, 0.0]), 2: np.array([0.0, h])}

    def phi(p):
        q = p @ p
        return p[0] / q * (1 - math.exp(-q / (4 * t))) / (2 * math.pi)

    def d(axis, f):
        return lambda p: (f(p + e[axis]) - f(p - e[axis])) / (2 * h)

    inner = d(k, phi)
    grad_perp = (lambda p: -d(2, inner)(p)) if i == 1 else d(1, inner)
    return d(j, grad_perp)(np.asarray(x, dtype=float))


def kernel_suite(seed=0):
    """Closed forms against quadrature oracles, zero circle means, finite differences.

    Returns a list of :class:`KernelCheck`.
    """
    out = []
    pairs = [(R, t) for R in (0.5, 1.0, 2.0) for t in (0.5, 1.0, 2.0)]
    ball = [("d11", lambda x, t: kn.heat_kernel_second(x, t), kn.ball_integral_d11)]
    for idx in ("111", "112", "122", "211"):
        ball.append((f"K{idx}", lambda x, t, i=idx: kn.oseen_kernel(i, x, t),
                     lambda R, t, i=idx: kn.oseen_ball_integral(i, R, t)))
    for name, k, closed in ball:
        for R, t in pairs:
            q = kn.space_time_ball_quadrature(k, R, t)
            ref = float(closed(R, t))
            out.append(KernelCheck("ball_integral", f"{name} R={R} t={t}", q, ref, abs(q - ref), 1e-8))

    angles = 2 * np.pi * np.arange(512) / 512
    for r, t in ((0.1, 0.5), (1.0, 1.0), (2.0, 0.3)):
        for idx in ("111", "122"):
            m = kn.circle_mean(lambda p, s, i=idx: kn.oseen_kernel(i, p, s), r, t)
            out.append(KernelCheck("circle_mean", f"K{idx} r={r} t={t}", m, 0.0, abs(m), 1e-12))
        for idx in kn.OSEEN_INDICES:
            _, odd = kn.oseen_split(idx, r, angles, t)
            m = float(odd.mean())
            out.append(KernelCheck("circle_mean", f"K{idx}^o r={r} t={t}", m, 0.0, abs(m), 1e-12))

    rng = np.random.default_rng(seed)
    for n in range(20):
        idx = kn.OSEEN_INDICES[n % len(kn.OSEEN_INDICES)]
        rad, ang, t = rng.uniform(0.3, 2.0), rng.uniform(0, 2 * np.pi), rng.uniform(0.2, 2.0)
        x = rad * np.array([math.cos(ang), math.sin(ang)])
        v = float(kn.oseen_kernel(idx, x, t))
        ref = float(_nested_fd(idx, x, t))
        out.append(KernelCheck("finite_difference", f"K{idx} x=({x[0]:.6f},{x[1]:.6f}) t={t:.6f}",
                               v, ref, abs(v - ref) / abs(ref), 1e-3))

    r = np.logspace(-3, 1, 100)
    g = kn.g_function(r[:, None], r[None, :])
    gmin = float(g.min())
    out.append(KernelCheck("g_nonnegative", "min G on 100x100 log grid", gmin, 0.0, max(0.0, -gmin), 0.0))
    return out


# -- run directories ---------------------------------------------------------------

def _open(path, mode="w"):
    try:
        return open(path, mode, newline="" if "b" not in mode else None)
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror}") from None


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows):
    """Write ``rows`` under a header line; floats use ``repr`` so output is exact and stable."""
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"{path}: row of {len(row)} cells, expected {len(columns)}")
            w.writerow([_cell(v) for v in row])


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv` as ``(header, rows)`` of strings."""
    with _open(path, "r") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ReportError(f"{path}: empty file")
    return rows[0], rows[1:]


def save_run(h, out_dir):
    """Store a run so that :func:`load_run` rebuilds it.

    Layout: ``config.toml``, ``snapshots.csv``, ``trace.csv`` and per snapshot
    ``snapshots/omega_NNNNN.bin``, ``snapshots/theta_NNNNN.bin`` (the binary
    field layout of :mod:`bousspatch.spectral`) and ``snapshots/contour_NNNNN.csv``.
    """
    snap_dir = os.path.join(out_dir, "snapshots")
    try:
        os.makedirs(snap_dir, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"{snap_dir}: {exc.strerror}") from None
    if h.config is not None:
        with _open(os.path.join(out_dir, "config.toml")) as fh:
            fh.write(emit_config(h.config))
    rows = []
    for i, s in enumerate(h.snapshots):
        for name, f in (("omega", s.omega), ("theta", s.theta)):
            path = os.path.join(snap_dir, f"{name}_{i:05d}.bin")
            try:
                sp.write_snapshot(path, f, s.time)
            except OSError as exc:
                raise ReportError(f"{path}: {exc.strerror}") from None
        if s.contour is not None:
            write_csv(os.path.join(snap_dir, f"contour_{i:05d}.csv"), ("x1", "x2"), s.contour.nodes)
        rows.append((i, s.time, s.epoch, s.u_sup, s.u_sup_running))
    write_csv(os.path.join(out_dir, "snapshots.csv"), SNAPSHOT_COLUMNS, rows)
    write_csv(os.path.join(out_dir, "trace.csv"), TRACE_COLUMNS, h.trace)


def load_run(run_dir):
    """Rebuild the :class:`~bousspatch.solver.RunHistory` stored by :func:`save_run`."""
    cfg_path = os.path.join(run_dir, "config.toml")
    config = parse_config(cfg_path) if os.path.exists(cfg_path) else None
    _, rows = read_csv(os.path.join(run_dir, "snapshots.csv"))
    h = sv.RunHistory(config)
    snap_dir = os.path.join(run_dir, "snapshots")
    for row in rows:
        i, t, epoch, u_sup, u_run = int(row[0]), float(row[1]), int(row[2]), float(row[3]), float(row[4])
        fields = []
        for name in ("omega", "theta"):
            path = os.path.join(snap_dir, f"{name}_{i:05d}.bin")
            try:
                fields.append(sp.read_snapshot(path)[0])
            except OSError as exc:
                raise ReportError(f"{path}: {exc.strerror}") from None
        cpath = os.path.join(snap_dir, f"contour_{i:05d}.csv")
        contour = None
        if os.path.exists(cpath):
            _, nodes = read_csv(cpath)
            contour = geo.Contour(np.array(nodes, dtype=float))
        h.append(sv.Snapshot(t, fields[0], fields[1], sv.advection_term(fields[0]), contour,
                             epoch, u_sup, u_run))
    tpath = os.path.join(run_dir, "trace.csv")
    if os.path.exists(tpath):
        h.trace = [tuple(float(v) for v in r) for r in read_csv(tpath)[1]]
    return h


# -- reports -----------------------------------------------------------------------

def run_checks(h, diag_rows=None):
    """Energy and invariant checks of a run as ``{name: (passed, detail)}``."""
    if not h.snapshots:
        return {}
    out = {}
    rep = sv.energy_check(h)
    failed = [k for k, v in rep.flags.items() if not np.all(v)]
    out["energy"] = (rep.passed, "all inequalities hold" if not failed else "failed: " + ", ".join(failed))
    areas = [s.contour.area for s in h.snapshots if s.contour is not None]
    if areas:
        drift = max(abs(a - areas[0]) for a in areas) / areas[0]
        out["area_drift"] = (drift < AREA_DRIFT_TOL, f"max relative drift {drift:.3e}")
    if diag_rows is None:
        diag_rows = sv.diagnostics(h)
    k = sv.DIAG_COLUMNS.index("splitting_residual")
    res = max(r[k] for r in diag_rows)
    out["splitting"] = (bool(res < SPLITTING_TOL), f"max residual {res:.3e}")
    return out


def emit_reports(history, ledgers, out_dir, kernel_checks=None, diag_rows=None):
    """Write ``diag.csv``, ``ledger.csv``, ``kernel-report.csv`` and ``summary.txt``.

    Columns are ``solver.DIAG_COLUMNS``, ``sio.LEDGER_COLUMNS`` and
    ``KERNEL_COLUMNS``.  Inputs that are empty or ``None`` give header-only
    files.  The summary lists PASS, FAIL or SKIP per check suite.  Returns
    the dict of suite results ``{name: (passed or None, detail)}``.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"{out_dir}: {exc.strerror}") from None
    snaps = history.snapshots if history is not None else []
    if diag_rows is None:
        diag_rows = sv.diagnostics(history) if snaps else []
    ledgers = list(ledgers or [])
    kernel_checks = list(kernel_checks or [])
    write_csv(os.path.join(out_dir, "diag.csv"), sv.DIAG_COLUMNS, diag_rows)
    write_csv(os.path.join(out_dir, "ledger.csv"), sio.LEDGER_COLUMNS,
              [tuple(L.row()[c] for c in sio.LEDGER_COLUMNS) for L in ledgers])
    write_csv(os.path.join(out_dir, "kernel-report.csv"), KERNEL_COLUMNS,
              [c.row() for c in kernel_checks])

    suites = dict(run_checks(history, diag_rows)) if snaps else {}
    for name in ("energy", "area_drift", "splitting"):
        suites.setdefault(name, (None, "no snapshots"))
    if kernel_checks:
        bad = sum(not c.passed for c in kernel_checks)
        suites["kernels"] = (bad == 0, f"{len(kernel_checks) - bad}/{len(kernel_checks)} checks pass")
    else:
        suites["kernels"] = (None, "not run")
    if ledgers:
        bad = sum(not L.passed for L in ledgers)
        cases = sorted({L.case for L in ledgers})
        suites["ledger"] = (bad == 0, f"{len(ledgers) - bad}/{len(ledgers)} probes within bounds, "
                            f"cases {cases}")
    else:
        suites["ledger"] = (None, "no probes")
    with _open(os.path.join(out_dir, "summary.txt")) as fh:
        for name, (ok, detail) in suites.items():
            tag = "SKIP" if ok is None else "PASS" if ok else "FAIL"
            fh.write(f"{name}: {tag} ({detail})\n")
    return suites


def _all_pass(suites):
    return all(ok is not False for ok, _ in suites.values())


# -- subcommands -------------------------------------------------------------------

def cmd_run(args):
    config = parse_config(args.config)
    out = args.out or os.path.splitext(args.config)[0] + "-run"
    h = sv.run(config)
    save_run(h, out)
    suites = emit_reports(h, [], out)
    for name, (ok, detail) in suites.items():
        print(f"{name}: {'SKIP' if ok is None else 'PASS' if ok else 'FAIL'} ({detail})")
    print(f"wrote {out}")
    return 0 if _all_pass(suites) else 1


def cmd_verify_kernels(args):
    checks = kernel_suite()
    if args.out:
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as exc:
            raise ReportError(f"{args.out}: {exc.strerror}") from None
        write_csv(os.path.join(args.out, "kernel-report.csv"), KERNEL_COLUMNS, [c.row() for c in checks])
    by_suite = {}
    for c in checks:
        by_suite.setdefault(c.suite, []).append(c)
    for suite, cs in by_suite.items():
        bad = [c for c in cs if not c.passed]
        print(f"{suite}: {'PASS' if not bad else 'FAIL'} ({len(cs) - len(bad)}/{len(cs)}, "
              f"worst error {max(c.error for c in cs):.3e})")
        for c in bad:
            print(f"  failed {c.check}: value {c.value!r} reference {c.reference!r}")
    return 0 if all(c.passed for c in checks) else 1


def read_probes(path):
    """Probe points from a CSV with columns ``x1, x2``; a header line is optional."""
    with _open(path, "r") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    pts = []
    for n, r in enumerate(rows, start=1):
        try:
            pts.append((float(r[0]), float(r[1])))
        except (ValueError, IndexError):
            if n == 1:
                continue
            raise ReportError(f"{path}:{n}: expected two numbers, got {r!r}") from None
    return np.array(pts, dtype=float).reshape(-1, 2)


def cmd_diagnose(args):
    h = load_run(args.run)
    t = args.time if args.time is not None else h.snapshots[-1].time
    gamma = args.gamma if args.gamma is not None else (h.config.gamma if h.config else 0.5)
    probes = read_probes(args.probes)
    ledgers = []
    for x in probes:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sio.NearBoundaryWarning)
            L = sio.bound_ledger(x, t, h, gamma)
        ledgers.append(L)
        print(f"x = ({x[0]:.6f}, {x[1]:.6f}) case {L.case}: {'PASS' if L.passed else 'FAIL'}")
    out = args.out or args.run
    write_csv(os.path.join(out, "ledger.csv"), sio.LEDGER_COLUMNS,
              [tuple(L.row()[c] for c in sio.LEDGER_COLUMNS) for L in ledgers])
    ok = all(L.passed for L in ledgers)
    print(f"ledger: {'PASS' if ok else 'FAIL'} ({sum(L.passed for L in ledgers)}/{len(ledgers)})")
    return 0 if ok else 1


def _rate(fn, repeat):
    fn()
    t0 = _time.perf_counter()
    for _ in range(repeat):
        fn()
    return repeat / (_time.perf_counter() - t0)


def bench_config(n):
    """Small ellipse run used by ``bench``: 101 snapshots up to ``t = 0.5``."""
    return sv.SimConfig(grid=sp.Grid(n, 8.0), dt=0.005, T=0.5, contour_nodes=128)


def cmd_bench(args):
    g = sp.Grid(args.n, 8.0)
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(g.shape)
    fft = _rate(lambda: np.fft.irfft2(np.fft.rfft2(vals), s=g.shape), args.repeat)
    print(f"fft      {fft:12.2f} ops/s  ({args.n}^2 forward + inverse)")
    cfg = bench_config(args.n)
    state = sv.initial_state(cfg)
    step = _rate(lambda: sv.step(state, cfg.dt, cfg.cfl_safety, cfg.raster_width, cfg.gravity),
                 args.repeat)
    print(f"step     {step:12.2f} ops/s  ({args.n}^2, {cfg.contour_nodes} markers)")
    h = sv.run(cfg)
    x = np.array([4.0, 4.0])
    pv = _rate(lambda: sio.grad_omega3_pv(x, cfg.T, h, 1), max(1, args.repeat // 5))
    print(f"pv-probe {pv:12.2f} ops/s  (d1 omega_3 at the centre, {len(h.snapshots)} snapshots)")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bousspatch", description="Boussinesq temperature patch laboratory")
    sub = p.add_subparsers(dest="command", metavar="{run,verify-kernels,diagnose,bench}")
    r = sub.add_parser("run", help="integrate a configured run and write reports")
    r.add_argument("--config", required=True, help="TOML configuration file")
    r.add_argument("--out", help="output directory (default: <config>-run)")
    r.set_defaults(func=cmd_run)
    k = sub.add_parser("verify-kernels", help="kernel identity suite")
    k.add_argument("--out", help="directory for kernel-report.csv")
    k.set_defaults(func=cmd_verify_kernels)
    d = sub.add_parser("diagnose", help="bound ledger at probe points of a stored run")
    d.add_argument("--run", required=True, help="run directory written by 'run'")
    d.add_argument("--probes", required=True, help="CSV of probe points x1,x2")
    d.add_argument("--time", type=float, help="snapshot time (default: last)")
    d.add_argument("--gamma", type=float, help="Holder exponent (default: from the run config)")
    d.add_argument("--out", help="directory for ledger.csv (default: the run directory)")
    d.set_defaults(func=cmd_diagnose)
    b = sub.add_parser("bench", help="throughput of fft, step and pv probe")
    b.add_argument("--n", type=int, default=128, help="grid size (default 128)")
    b.add_argument("--repeat", type=int, default=5, help="timed repetitions (default 5)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, ReportError, sv.ConfigurationError, sv.HistoryError, ValueError) as exc:
        print(f"bousspatch {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
