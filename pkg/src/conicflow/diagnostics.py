"""Monitors for the flow runs: a priori bounds and limit identities as numbers.

Every function here is a pure function of (state, geometry, params) plus
explicit options, with no hidden configuration: recomputing a monitor
from a saved checkpoint reproduces the original value bit for bit,
which is what lets run summaries be audited after the fact.

The curvature-based monitors read the evolving metric through its
density field and the geometry's second-order operator,

    K = -(ddbar log density) / density,

restricted to the compact set K_d away from the cone points.  On a
converged normalized run the residual |K + 1| on K_d decomposes into
the second-order Poincare-Lelong stencil residual of the section norm
(the dominant, O(h^2) part), the epsilon floor from the smoothed cone
term, and whatever stationarity slack the stopping tolerance left; the
first part shrinks by ~4x per grid doubling, and the calibration
defaults keep the other two well below it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from conicflow.errors import (
    DomainError,
    NonpositiveDensity,
    NotStationary,
)
from conicflow.smoothing import chi_field, ddbar_chi_density, omega_t_density
from conicflow.solver import (
    FlowResult,
    FlowState,
    SolverConfig,
    _class_area,
    flow_density,
    run_flow,
)

TAU = 2.0 * math.pi


# ---- per-state record --------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Snapshot of every monitored quantity at one state.

    Curvature entries are restricted to the compact set K_d; the KE
    residual column is only meaningful near a normalized stationary
    state but is well defined (and finite) for any accepted state.
    """

    t: float
    sup_phi: float
    inf_phi: float
    sup_phidot: float
    inf_phidot: float
    trace_lower: float
    trace_upper: float
    area: float
    class_area: float
    ke_residual_sup: float
    curvature_min: float
    curvature_max: float
    gauss_bonnet_defect: float

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in dataclasses.astuple(self))


def _positive_density(state, geometry, params) -> np.ndarray:
    dens = flow_density(state, geometry, params)
    if not np.all(dens > 0.0):
        i = int(np.argmin(dens))
        raise NonpositiveDensity(
            f"metric density {dens.flat[i]:.3e} at flat index {i} (t={state.t:.6f})"
        )
    return dens


def _background0(geometry, params, mode: str) -> np.ndarray:
    """Density of the regularized initial form omega_{0,eps}."""
    return omega_t_density(geometry, 0.0, mode) + params.k * ddbar_chi_density(
        params, geometry
    )


def _k_chi(geometry, params) -> np.ndarray:
    """The drag potential k * sum_i chi(eps^2 + ||S_i||^2)."""
    total = np.zeros(geometry.shape)
    for div in geometry.divisors:
        aux = dataclasses.replace(params, beta=div.beta)
        total = total + chi_field(aux, div.psi)
    return params.k * total


def gauss_bonnet_cone_check(state, geometry, params, d: float = 0.1) -> float:
    """Gauss-Bonnet defect of the evolving metric with cone atoms.

    Integrates the Gauss curvature over K_d only and books each cone
    point at its model contribution 2 pi (1 - beta); the defect

        | int_{K_d} K dA  +  sum_i 2 pi (1 - beta_i)  -  2 pi chi(M) |

    then measures the d-disk remainders plus discretization error, and
    shrinks with d as long as the disks stay resolved.
    """
    dens = _positive_density(state, geometry, params)
    K = geometry.curvature_of_density(dens)
    mask = geometry.kd_mask(d)
    total = geometry.integrate(np.where(mask, K * dens, 0.0))
    cones = sum(TAU * (1.0 - div.beta) for div in geometry.divisors)
    return abs(total + cones - TAU * geometry.euler_char)


def diagnostics_record(state, geometry, params, d: float = 0.2) -> DiagnosticsRecord:
    """All monitors evaluated at one accepted state."""
    dens = _positive_density(state, geometry, params)
    dens0 = _background0(geometry, params, state.mode)
    ratio = dens / dens0
    K = geometry.curvature_of_density(dens)
    mask = geometry.kd_mask(d)
    return DiagnosticsRecord(
        t=float(state.t),
        sup_phi=float(np.max(state.phi)),
        inf_phi=float(np.min(state.phi)),
        sup_phidot=float(np.max(state.phidot)),
        inf_phidot=float(np.min(state.phidot)),
        trace_lower=float(np.min(ratio)),
        trace_upper=float(np.max(ratio)),
        area=float(geometry.integrate(dens)),
        class_area=_class_area(geometry, state.t, state.mode),
        ke_residual_sup=float(np.max(np.abs(K[mask] + 1.0))),
        curvature_min=float(np.min(K[mask])),
        curvature_max=float(np.max(K[mask])),
        gauss_bonnet_defect=gauss_bonnet_cone_check(state, geometry, params, d),
    )


# ---- trace bounds ------------------------------------------------------------


class TraceBounds(NamedTuple):
    lower: float
    upper: float

    @property
    def a_emp(self) -> float:
        """Empirical two-sided equivalence constant max(upper, 1/lower)."""
        return max(self.upper, 1.0 / self.lower)


def trace_monitor(state, geometry, params) -> TraceBounds:
    """Extremes of the density ratio of the evolving metric to omega_{0,eps}."""
    dens = _positive_density(state, geometry, params)
    ratio = dens / _background0(geometry, params, state.mode)
    return TraceBounds(float(np.min(ratio)), float(np.max(ratio)))


# ---- KE residual -------------------------------------------------------------


def ke_residual(state, geometry, params, d: float = 0.2, tol: float = 1e-4) -> float:
    """sup over K_d of |K + 1| for a stationary normalized state.

    The limit metric has constant Gauss curvature -1 away from the
    divisor, so this is the direct defect of the Einstein equation.
    """
    if state.mode != "normalized":
        raise NotStationary(
            f"KE residual needs a normalized stationary state, got mode={state.mode!r}"
        )
    moving = float(np.max(np.abs(state.phidot)))
    if moving > tol:
        raise NotStationary(
            f"state still moving: sup|phidot| = {moving:.3e} > {tol:.1e}"
        )
    dens = _positive_density(state, geometry, params)
    K = geometry.curvature_of_density(dens)
    mask = geometry.kd_mask(d)
    return float(np.max(np.abs(K[mask] + 1.0)))


# ---- C0 / velocity ladder monitor --------------------------------------------


@dataclass(frozen=True)
class LadderEntryStats:
    epsilon: float
    c0_max: float  # max over accepted steps of sup|phi|
    velocity_max: float  # max over accepted steps of sup|phidot|
    c_upper: float  # fitted C in   phidot <= 1 + C/t   over t >= t_min
    c_delta: float  # fitted C in   phidot >= -C        over t >= t_min


@dataclass(frozen=True)
class C0PhidotReport:
    entries: tuple
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def _entry_stats(result: FlowResult, t_min: float) -> LadderEntryStats:
    eps = result.final.epsilon
    recs = result.records
    c0 = max((r.sup_phi for r in recs), default=0.0)
    vmax = max((r.sup_phidot for r in recs), default=0.0)
    late = [r for r in recs if r.t >= t_min]
    c_upper = max((r.t * (r.phidot_max - 1.0) for r in late), default=0.0)
    c_delta = max((-r.phidot_min for r in late), default=0.0)
    return LadderEntryStats(
        epsilon=eps,
        c0_max=c0,
        velocity_max=vmax,
        c_upper=max(0.0, c_upper),
        c_delta=max(0.0, c_delta),
    )


def c0_and_phidot_monitor(
    results: Sequence[FlowResult], t_min: float = 0.1
) -> C0PhidotReport:
    """Uniformity-in-epsilon report for the potential and velocity bounds.

    The ladder entries must come in decreasing epsilon; the coarsest
    run anchors the uniformity checks: the bounds for every finer
    epsilon may not exceed twice the coarsest value.  Violations are
    reported, not raised; callers that want a hard failure can wrap the
    report in UniformityViolation themselves.
    """
    if len(results) < 2:
        raise DomainError("uniformity monitor needs at least two ladder entries")
    entries = tuple(_entry_stats(res, t_min) for res in results)
    eps = [e.epsilon for e in entries]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise DomainError(f"ladder entries must have decreasing epsilon, got {eps}")
    slack = 1e-12
    violations = []
    coarse = entries[0]
    for e in entries[1:]:
        if e.c0_max > 2.0 * coarse.c0_max + slack:
            violations.append(
                f"sup|phi| at eps={e.epsilon} is {e.c0_max:.3e}, "
                f"more than twice the coarsest {coarse.c0_max:.3e}"
            )
        if e.velocity_max > 2.0 * coarse.velocity_max + slack:
            violations.append(
                f"sup|phidot| at eps={e.epsilon} is {e.velocity_max:.3e}, "
                f"more than twice the coarsest {coarse.velocity_max:.3e}"
            )
    return C0PhidotReport(entries=entries, violations=tuple(violations))


# ---- initial-data independence -----------------------------------------------


@dataclass(frozen=True)
class IndependencePlan:
    """What the paired independence experiments should run.

    The volume-form shift defaults to a multiple of the curvature bump
    (a smooth field with exact zero integral, so the shifted volume
    form stays admissible); an explicit field in ``f`` overrides it.
    """

    f_amplitude: float = 0.1
    f: object = None
    k_pair: tuple = (0.03, 0.06)
    t_end: float = 1.0
    checkpoints: tuple = (0.25, 0.5, 1.0)
    d: float = 0.2
    t_end_limit: float = 60.0
    shift_tol: float = 1e-5
    k_tol: float = 1e-3


@dataclass(frozen=True)
class IndependenceReport:
    omega_shift_sup: float
    shift_tol: float
    k_limit_sup: float
    k_tol: float
    k_outcomes: tuple

    @property
    def shift_ok(self) -> bool:
        return self.omega_shift_sup <= self.shift_tol

    @property
    def k_ok(self) -> bool:
        return self.k_limit_sup <= self.k_tol

    @property
    def ok(self) -> bool:
        return self.shift_ok and self.k_ok


def independence_tests(
    geometry, params, config: SolverConfig, plan: IndependencePlan = IndependencePlan()
) -> IndependenceReport:
    """Run the two paired experiments the flow is provably blind to.

    Volume-form shift: solving against e^f Omega and adding t*f back
    must reproduce the unshifted unnormalized run at every checkpoint.
    Initial-metric shift: the normalized stationary limit of phi + k*chi
    must not depend on k.
    """
    from conicflow.geometry import with_volume_shift

    f = plan.f
    if f is None:
        f = plan.f_amplitude * ddbar_chi_density(params, geometry)
    f = np.asarray(f, dtype=float)

    base = run_flow(
        geometry,
        params,
        config,
        mode="unnormalized",
        t_end=plan.t_end,
        checkpoints=plan.checkpoints,
    )
    shifted = run_flow(
        with_volume_shift(geometry, f),
        params,
        config,
        mode="unnormalized",
        t_end=plan.t_end,
        checkpoints=plan.checkpoints,
    )
    shift_sup = 0.0
    for s_base, s_shift in zip(base.states, shifted.states):
        diff = s_shift.phi + s_shift.t * f - s_base.phi
        shift_sup = max(shift_sup, float(np.max(np.abs(diff))))

    mask = geometry.kd_mask(plan.d)
    limits = []
    outcomes = []
    for k in plan.k_pair:
        pk = dataclasses.replace(params, k=float(k))
        res = run_flow(
            geometry, pk, config, mode="normalized", t_end=plan.t_end_limit
        )
        outcomes.append(res.outcome)
        limits.append(res.final.phi + _k_chi(geometry, pk))
    k_sup = float(np.max(np.abs((limits[0] - limits[1])[mask])))

    return IndependenceReport(
        omega_shift_sup=shift_sup,
        shift_tol=plan.shift_tol,
        k_limit_sup=k_sup,
        k_tol=plan.k_tol,
        k_outcomes=tuple(outcomes),
    )
