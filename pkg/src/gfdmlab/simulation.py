"""Lagrangian time loop.

Each step: pick dt by the CFL-like rule, move the points with the explicit
second-order rule, repair the cloud (merges, hole fills, exit handling),
rebuild neighborhoods and operators on the new configuration, then solve one
implicit step of the chosen scheme.  Dry-wall handling for free-surface
cases works on an active subset of the canonical cloud; solved fields are
scattered back afterwards.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cases import CaseDefinition, detect_free_surface, update_active
from .cloud import (CloudParams, PointCloud, build_neighbors, compute_volumes,
                    manage_cloud)
from .diagnostics import (FluxLedger, divergence_field, divergence_measures,
                          epsilon2, total_volume, volume_error)
from .operators import build_operator_set
from .solvers import SolverConfig, advance

STEPS_MIN = 10


@dataclass
class TimeControls:
    t_end: float
    c_dt: float
    dt_max: float | None = None
    v_floor: float = 1.0e-8
    max_steps: int = 100000


@dataclass
class StepRecord:
    step: int
    t: float
    dt: float
    n: int
    eps2: float
    d: float
    d_int: float
    d_bnd: float
    mass_err: float
    iters1: int | None
    iters2: int | None


@dataclass
class RunResult:
    case_name: str
    scheme: str
    h: float
    cloud: PointCloud
    records: list
    flux: FluxLedger
    volume_ref: float
    volume_final: float
    eps_v: float
    n_initial: int
    wall_time: float
    flags: list = field(default_factory=list)

    @property
    def eps2_final(self) -> float:
        return self.records[-1].eps2

    @property
    def d_mean(self) -> float:
        vals = [r.d for r in self.records[1:]]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def d_int_mean(self) -> float:
        vals = [r.d_int for r in self.records[1:]]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def d_bnd_mean(self) -> float:
        vals = [r.d_bnd for r in self.records[1:]]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def eps_mass(self) -> float:
        return self.flux.epsilon_mass


def compute_dt(cloud: PointCloud, controls: TimeControls, u_ref: float) -> float:
    """dt = C_dt * min_i(h_i / max(|v_i|, v_floor)), clamped by dt_max.

    dt_max defaults to h_min/u_ref so a cloud at rest still advances; when no
    usable reference speed exists either, it falls back to 0.1*t_end/STEPS_MIN.
    """
    act = cloud.active
    speed = np.maximum(np.linalg.norm(cloud.velocity[act], axis=1),
                       controls.v_floor)
    dt = controls.c_dt * float(np.min(cloud.h[act] / speed))
    cap = controls.dt_max
    if cap is None:
        if u_ref > 0.0:
            cap = float(cloud.h[act].min()) / u_ref
        else:
            cap = 0.1 * controls.t_end / STEPS_MIN
    return min(dt, cap)


def move_points(cloud: PointCloud, dt: float):
    mask = cloud.fluid_mask & cloud.active
    step = (2.0 * cloud.velocity[mask] - cloud.velocity_prev[mask]) * dt
    cloud.positions[mask] += step


def _handle_exits(cloud: PointCloud, case: CaseDefinition) -> PointCloud:
    if case.exit_policy == "project":
        if case.project_inside is not None:
            cloud.positions[:] = case.project_inside(cloud.positions)
        return cloud
    if case.inside is None:
        return cloud
    gone = cloud.fluid_mask & ~case.inside(cloud.positions)
    if gone.any():
        cloud = cloud.take(np.flatnonzero(~gone))
    return cloud


def _active_view(cloud: PointCloud, table):
    if cloud.active.all():
        return cloud, None, table
    ids = np.flatnonzero(cloud.active)
    work = cloud.take(ids)
    return work, ids, build_neighbors(work)


def _sync_back(cloud: PointCloud, work: PointCloud, ids):
    if ids is None:
        return
    cloud.velocity[ids] = work.velocity
    cloud.velocity_prev[ids] = work.velocity_prev
    cloud.pressure[ids] = work.pressure
    cloud.kind[ids] = work.kind
    cloud.normal[ids] = work.normal
    cloud.volume[ids] = work.volume
    cloud.divergence[ids] = work.divergence
    cloud.volume_scale = work.volume_scale


def run(case: CaseDefinition, h: float, solver: SolverConfig,
        controls: TimeControls | None = None, jitter: float = 0.0,
        seed: int = 0, cloud_params: CloudParams | None = None,
        manage: bool = True, observer=None) -> RunResult:
    """Run one case to t_end; returns the final state plus per-step records."""
    t_start = time.perf_counter()
    controls = controls or TimeControls(t_end=case.t_end, c_dt=case.c_dt)
    params = cloud_params or CloudParams()
    flags = []

    cloud = case.build(h, jitter=jitter, seed=seed)
    n_initial = cloud.n
    table = build_neighbors(cloud)
    if case.has_free_surface:
        update_active(cloud, table)
    work, ids, wtable = _active_view(cloud, table)
    vol_mask = work.fluid_mask if case.volume_on_fluid else None
    compute_volumes(work, wtable, known_area=case.known_area, mask=vol_mask)
    opset = build_operator_set(work, wtable, solver.weights,
                               on_degenerate="collect")
    work.divergence[:] = divergence_field(work, opset)
    _sync_back(cloud, work, ids)
    volume_ref = total_volume(work, fluid_only=case.volume_on_fluid)

    flux = FluxLedger()
    records = []

    def _record(step, t, dt, wk, iters):
        eps = float("nan")
        if case.analytic_velocity is not None:
            eps = epsilon2(wk, case.analytic_velocity, t)
        d, d_int, d_bnd = divergence_measures(wk, div=wk.divergence)
        it1 = iters[0] if len(iters) > 0 else None
        it2 = iters[1] if len(iters) > 1 else None
        rec = StepRecord(step=step, t=t, dt=dt, n=wk.n, eps2=eps, d=d,
                         d_int=d_int, d_bnd=d_bnd,
                         mass_err=flux.epsilon_mass, iters1=it1, iters2=it2)
        records.append(rec)
        if observer is not None:
            observer(rec, cloud)

    _record(0, 0.0, 0.0, work, ())

    t = 0.0
    step = 0
    while t < controls.t_end - 1.0e-12 and step < controls.max_steps:
        dt = compute_dt(work, controls, case.u_ref)
        if controls.t_end - t - dt < 1.0e-9 * max(dt, 1.0):
            dt = controls.t_end - t
        flux.add(work, dt)

        move_points(cloud, dt)
        cloud = _handle_exits(cloud, case)
        if manage:
            cloud, report = manage_cloud(cloud, params, inside=case.inside,
                                         alpha=solver.weights.alpha)
            if report.skipped_insertions:
                flags.append((step + 1, "skipped_insertions",
                              report.skipped_insertions))
        table = build_neighbors(cloud)
        if case.has_free_surface:
            update_active(cloud, table)
        work, ids, wtable = _active_view(cloud, table)
        if case.has_free_surface:
            defects = detect_free_surface(work, wtable)
            if defects:
                flags.append((step + 1, "surface_defects", len(defects)))
        compute_volumes(work, wtable)
        # degenerate supports are tolerated for a step: the solvers tether
        # those points and management heals the zone on the next pass
        opset = build_operator_set(work, wtable, solver.weights,
                                   on_degenerate="collect")
        if len(opset.defect_ids):
            flags.append((step + 1, "stencil_defects", len(opset.defect_ids)))

        v_new, p_new, rep = advance(work, wtable, opset, dt, t,
                                    case.material, case, solver)
        work.velocity_prev[:] = work.velocity
        work.velocity[:] = v_new
        work.pressure[:] = p_new
        work.divergence[:] = divergence_field(work, opset)
        _sync_back(cloud, work, ids)

        t += dt
        step += 1
        _record(step, t, dt, work, rep.iterations)

    volume_final = total_volume(work, fluid_only=case.volume_on_fluid)
    return RunResult(
        case_name=case.name,
        scheme=solver.scheme,
        h=h,
        cloud=cloud,
        records=records,
        flux=flux,
        volume_ref=volume_ref,
        volume_final=volume_final,
        eps_v=volume_error(volume_final, volume_ref),
        n_initial=n_initial,
        wall_time=time.perf_counter() - t_start,
        flags=flags,
    )
