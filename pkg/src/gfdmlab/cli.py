"""Command-line entry points: run, convergence, selftest.

Exit codes: 0 success, 1 configuration error, 2 solver or selftest failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .cases import make_case
from .cloud import CloudParams
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import convergence_rate
from .operators import WeightConfig
from .simulation import RunResult, TimeControls, run
from .solvers import SolverConfig, SolverFailure
from .tiwari import TiwariConfig
from .vtkio import write_vtk_snapshot

CSV_HEADER = ("step,t,dt,N,eps2,D,D_int,D_bnd,mass_err_running,"
              "lin_iters_1,lin_iters_2")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return "%.17g" % value
    return str(value)


def _csv_row(rec) -> str:
    cells = (rec.step, rec.t, rec.dt, rec.n, rec.eps2, rec.d, rec.d_int,
             rec.d_bnd, rec.mass_err, rec.iters1, rec.iters2)
    return ",".join(_cell(c) for c in cells)


def _solver_config(cfg: RunConfig, scheme: str) -> SolverConfig:
    weights = WeightConfig(alpha=cfg.alpha,
                           kronecker_delta_mode=cfg.kronecker_delta)
    return SolverConfig(scheme=scheme, penalty_a=cfg.penalty_a,
                        pressure_guess=cfg.pressure_guess, lin_tol=cfg.tol,
                        lin_maxiter=cfg.max_iter,
                        tiwari=TiwariConfig(w_pde=cfg.w_pde, weights=weights))


def _run_single(cfg: RunConfig, case, scheme: str, h: float, outdir: str):
    """One run writing diagnostics.csv, snapshots and summary.txt."""
    os.makedirs(outdir, exist_ok=True)
    solver = _solver_config(cfg, scheme)
    controls = TimeControls(t_end=case.t_end, c_dt=case.c_dt,
                            dt_max=cfg.dt_max, max_steps=cfg.max_steps)
    params = CloudParams(r_max=cfg.r_max, r_min=cfg.r_min, n_min=cfg.n_min)

    csv_path = os.path.join(outdir, "diagnostics.csv")
    fh = open(csv_path, "w", encoding="utf-8", newline="")
    fh.write(CSV_HEADER + "\n")
    last_snap = [-1]

    def observer(rec, cloud):
        fh.write(_csv_row(rec) + "\n")
        if cfg.snapshot_interval > 0 and rec.step % cfg.snapshot_interval == 0:
            write_vtk_snapshot(
                cloud, os.path.join(outdir, f"frame_{rec.step:06d}.vtk"))
            last_snap[0] = rec.step

    failure = None
    result = None
    try:
        result = run(case, h, solver, controls=controls, jitter=cfg.jitter,
                     seed=cfg.seed, cloud_params=params, manage=cfg.manage,
                     observer=observer)
    except SolverFailure as exc:
        failure = str(exc)
    finally:
        fh.close()

    if result is not None and cfg.snapshot_interval > 0 \
            and result.records[-1].step != last_snap[0]:
        write_vtk_snapshot(result.cloud, os.path.join(
            outdir, f"frame_{result.records[-1].step:06d}.vtk"))

    _write_summary(os.path.join(outdir, "summary.txt"), cfg, case, scheme, h,
                   result, failure)
    if failure is not None:
        raise SolverFailure(failure)
    return result


def _write_summary(path, cfg, case, scheme, h, result: RunResult | None,
                   failure):
    lines = [
        f"case = {case.name}",
        f"scheme = {scheme}",
        f"h = {h:g}",
        f"jitter = {cfg.jitter:g}",
        f"seed = {cfg.seed}",
    ]
    if failure is not None:
        lines.append("status = failed")
        lines.append(f"failure = {failure}")
    if result is not None:
        rec = result.records[-1]
        lines.append("status = completed" if failure is None else "")
        lines.append(f"steps = {rec.step}")
        lines.append(f"t_final = {rec.t:.17g}")
        lines.append(f"N_initial = {result.n_initial}")
        lines.append(f"N_final = {result.cloud.n}")
        if not math.isnan(rec.eps2):
            lines.append(f"eps2_final = {rec.eps2:.6g}")
        lines.append(f"D_mean = {result.d_mean:.6g}")
        lines.append(f"D_int_mean = {result.d_int_mean:.6g}")
        lines.append(f"D_bnd_mean = {result.d_bnd_mean:.6g}")
        if not math.isnan(result.eps_mass):
            lines.append(f"eps_mass = {result.eps_mass:.6g}")
        lines.append(f"eps_V = {result.eps_v:.6g}")
        lines.append(f"wall_seconds = {result.wall_time:.3f}")
        for step, kind, count in result.flags:
            lines.append(f"flag = step {step}: {kind} x{count}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(line for line in lines if line) + "\n")


def _load_config(path, overrides):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, overrides)


def _prepare(args):
    cfg = _load_config(args.config, args.set)
    if cfg.mode == "parallel":
        print("note: parallel mode is not implemented; running sequentially",
              file=sys.stderr)
    try:
        case = make_case(cfg.case_name, **cfg.case_kwargs)
    except TypeError as exc:
        raise ConfigError(f"case {cfg.case_name!r} rejected options: {exc}")
    return cfg, case


def cmd_run(args) -> int:
    try:
        cfg, case = _prepare(args)
        if len(cfg.h_list) != 1:
            raise ConfigError("run needs exactly one h value")
        if len(cfg.schemes) != 1:
            raise ConfigError("run needs exactly one scheme")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        result = _run_single(cfg, case, cfg.schemes[0], cfg.h_list[0],
                             cfg.directory)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    rec = result.records[-1]
    print(f"{case.name} {cfg.schemes[0]} h={cfg.h_list[0]:g}: "
          f"{rec.step} steps, N={result.cloud.n}, "
          f"wall={result.wall_time:.1f}s -> {cfg.directory}")
    return 0


def _case_metric(case, result: RunResult):
    """(name, value) of the headline error for convergence tables."""
    if case.analytic_velocity is not None:
        return "eps2", result.eps2_final
    if not math.isnan(result.eps_mass):
        return "eps_mass", result.eps_mass
    return "eps_V", result.eps_v


def cmd_convergence(args) -> int:
    try:
        cfg, case = _prepare(args)
        if len(cfg.h_list) < 2:
            raise ConfigError("convergence needs at least two h values")
        if any(b >= a for a, b in zip(cfg.h_list, cfg.h_list[1:])):
            raise ConfigError("h values must be strictly decreasing")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    os.makedirs(cfg.directory, exist_ok=True)
    rows = []
    any_failed = False
    metric_name = "error"
    for scheme in cfg.schemes:
        prev = None
        for h in cfg.h_list:
            sub = os.path.join(cfg.directory, f"{scheme}_h{h:g}")
            try:
                result = _run_single(cfg, case, scheme, h, sub)
            except SolverFailure:
                any_failed = True
                rows.append((scheme, h, "", "failed", "", ""))
                prev = None
                continue
            metric_name, err = _case_metric(case, result)
            rate = ""
            if prev is not None:
                rate = "%.3f" % convergence_rate(prev[1], err, prev[0], h)
            rows.append((scheme, h, result.n_initial, "%.6g" % err, rate,
                         "%.3f" % result.wall_time))
            prev = (h, err)

    table_path = os.path.join(cfg.directory, "convergence.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"scheme,h,N,{metric_name},r,seconds\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    for row in rows:
        print("  ".join(f"{c}" for c in row))
    print(f"table -> {table_path}")
    return 2 if any_failed else 0


# ------------------------------------------------------------------------
# selftest
# ------------------------------------------------------------------------


def _selftest_checks():
    import tempfile

    from . import cases as case_mod
    from .cloud import build_neighbors, compute_volumes, generate_rectangle_cloud
    from .operators import apply_operator, build_operator_set
    from .simulation import run as sim_run
    from .sparselin import assemble, bicgstab

    def check_consistency():
        cloud = generate_rectangle_cloud((6.0, 6.0), 1.0, jitter=0.1, seed=3)
        table = build_neighbors(cloud)
        opset = build_operator_set(cloud, table, WeightConfig())
        pos = cloud.positions
        linear = 2.0 * pos[:, 0] + 3.0 * pos[:, 1]
        for which, dexact in (("x", 2.0), ("y", 3.0)):
            approx = apply_operator(opset, linear, which)
            err = np.abs(approx - dexact).max()
            assert err < 1.0e-9, f"monomial {which} error {err:.2e}"
        quad = pos[:, 0] ** 2 + 3.0 * pos[:, 0] * pos[:, 1]
        lap = apply_operator(opset, quad, "lap")
        assert np.abs(lap - 2.0).max() < 1.0e-8, "laplacian of quadratic"

    def check_lap_identity():
        cloud = generate_rectangle_cloud((5.0, 5.0), 1.0, jitter=0.05, seed=1)
        table = build_neighbors(cloud)
        opset = build_operator_set(cloud, table, WeightConfig())
        for i in (0, cloud.n // 2, cloud.n - 1):
            lap = opset.coefficients("lap", i)
            xx = opset.coefficients("xx", i)
            yy = opset.coefficients("yy", i)
            assert np.array_equal(lap, xx + yy), "lap is xx + yy"

    def check_bicgstab():
        rng = np.random.default_rng(11)
        n = 60
        dense = rng.standard_normal((n, n)) * 0.1 + np.eye(n) * 4.0
        rows, cols = np.nonzero(dense)
        mat = assemble(rows, cols, dense[rows, cols], (n, n))
        b = rng.standard_normal(n)
        x1, s1 = bicgstab(mat, b, tol=1.0e-10)
        x2, s2 = bicgstab(mat, b, tol=1.0e-10)
        assert s1.converged and s2.converged, "bicgstab convergence"
        assert np.array_equal(x1, x2), "bicgstab determinism"
        resid = np.linalg.norm(mat @ x1 - b) / np.linalg.norm(b)
        assert resid <= 1.0e-9, f"true residual {resid:.2e}"

    def check_rest_state():
        case = case_mod.taylor_green_case()

        def build_rest(h, jitter=0.0, seed=0):
            cloud = case.build(h, jitter=jitter, seed=seed)
            cloud.velocity[:] = 0.0
            cloud.velocity_prev[:] = 0.0
            cloud.pressure[:] = 0.0
            return cloud

        def zero_vec(pos, t):
            pos = np.atleast_2d(pos)
            return np.zeros((len(pos), 2))

        rest = case_mod.CaseDefinition(
            name="rest", material=case.material, build=build_rest,
            velocity_bcs={1: case_mod.VelocityBC(
                "dirichlet", lambda x, t: np.zeros(2))},
            pressure_bcs={1: case_mod.PressureBC(
                "dirichlet", lambda x, t: 0.0)},
            t_end=1.0, c_dt=0.005, u_ref=1.0,
            known_area=case.known_area, inside=case.inside,
            analytic_velocity=zero_vec)
        for scheme in ("projection", "penalty", "coupled_new"):
            solver = SolverConfig(scheme=scheme)
            controls = TimeControls(t_end=1.0, c_dt=0.005, max_steps=2)
            result = sim_run(rest, 1.0, solver, controls=controls)
            vmax = np.abs(result.cloud.velocity).max()
            assert vmax < 1.0e-8, f"{scheme} rest drift {vmax:.2e}"

    def check_vtk_roundtrip():
        from .vtkio import read_vtk_snapshot
        cloud = generate_rectangle_cloud((4.0, 4.0), 1.0)
        table = build_neighbors(cloud)
        compute_volumes(cloud, table, known_area=16.0)
        cloud.pressure[:] = np.linspace(-1.0, 1.0, cloud.n)
        cloud.velocity[:, 0] = np.linspace(0.0, 2.0, cloud.n)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "snap.vtk")
            write_vtk_snapshot(cloud, path)
            back = read_vtk_snapshot(path)
        assert np.allclose(back["positions"], cloud.positions, atol=1e-8)
        assert np.allclose(back["p"], cloud.pressure, rtol=1e-8)
        assert np.array_equal(back["kind"], cloud.kind)

    def check_config():
        cfg = parse_config("[case]\nname = taylor_green\nh = 1.0\n"
                           "[solver]\nscheme = coupled_new\n")
        assert cfg.alpha == 6.25 and cfg.tol == 1.0e-9 and cfg.w_pde == 2.0
        try:
            parse_config("[case]\nname = taylor_green\nh = 1.0\n"
                         "[solver]\nscheme = penalty\npenalty_A = 0.5\n")
        except ConfigError:
            pass
        else:
            raise AssertionError("penalty_A = 0.5 accepted")

    return [
        ("stencil monomial consistency", check_consistency),
        ("laplacian equals xx + yy", check_lap_identity),
        ("bicgstab solve + determinism", check_bicgstab),
        ("rest state preserved by all schemes", check_rest_state),
        ("vtk snapshot round-trip", check_vtk_roundtrip),
        ("config defaults and validation", check_config),
    ]


def cmd_selftest(args) -> int:
    failed = 0
    for name, fn in _selftest_checks():
        try:
            fn()
        except Exception as exc:  # report and continue
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    if failed:
        print(f"{failed} selftest check(s) failed")
        return 2
    print("all selftest checks passed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gfdmlab",
        description="Meshfree incompressible flow solvers on moving point "
                    "clouds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one case/scheme/h")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_run.set_defaults(func=cmd_run)

    p_conv = sub.add_parser("convergence", help="sweep h and tabulate rates")
    p_conv.add_argument("--config", required=True)
    p_conv.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_conv.set_defaults(func=cmd_convergence)

    p_self = sub.add_parser("selftest", help="run built-in invariant checks")
    p_self.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
