"""Time integration of the regularized potential flows.

The scalar flow is phi_t = log((background(t) + ddbar phi) / Omega) plus
cone and normalization terms.  Its linearization about a positive
density is a weighted discrete Laplacian, so the problem is stiff in
the grid: the spectral radius scales like 1/(h^2 * min density).  A
classical low-stage explicit pair would need steps of order h^2 and
cannot finish the stationary torus runs in reasonable time, so the
stepper here is a stabilized explicit Runge-Kutta-Chebyshev method of
order two with an adaptive stage count: stages grow like sqrt(dt *
stiffness), which buys stability along the real axis at a cost linear
in the stage number.  The embedded error estimate, step acceptance,
and the positivity-margin guard below follow the usual
reject-halve-retry discipline, and every decision is a deterministic
function of the configuration, so identical configs give bit-identical
trajectories.

Extinction of an unnormalized run announces itself through the step
size: as t approaches the maximal existence time the density margin
collapses, steps shrink below dt_min, and the run reports the last
stable time as the numerical extinction time.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from conicflow.classes import class_at
from conicflow.errors import (
    DomainError,
    NonpositiveDensity,
    StepSizeUnderflow,
)
from conicflow.smoothing import (
    SmoothingParams,
    chi_field,
    ddbar_chi_density,
    omega_t_density,
)

__all__ = [
    "FlowResult",
    "FlowState",
    "LadderResult",
    "SolverConfig",
    "epsilon_continuation",
    "rhs_normalized",
    "rhs_unnormalized",
    "run_flow",
    "step",
]

_DAMPING = 2.0 / 13.0
_STABILITY = 0.653  # damped Chebyshev stability boundary ~ 0.653 s^2


@dataclass(frozen=True)
class SolverConfig:
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 0.25
    safety: float = 0.2
    tol_step: float = 1e-7
    tol_stationary: float = 1e-4
    max_stages: int = 256
    epsilon_ladder: tuple = (0.2, 0.1, 0.05)

    def __post_init__(self):
        if not (self.dt_min < self.dt_init <= self.dt_max):
            raise DomainError("need dt_min < dt_init <= dt_max")
        if not (0.0 < self.safety < 1.0):
            raise DomainError("safety must be in (0, 1)")
        if self.tol_step <= 0 or self.tol_stationary <= 0:
            raise DomainError("tolerances must be positive")
        if self.max_stages < 2:
            raise DomainError("max_stages must be at least 2")
        lad = tuple(float(e) for e in self.epsilon_ladder)
        if any(e <= 0 for e in lad) or any(a <= b for a, b in zip(lad, lad[1:])):
            raise DomainError("epsilon ladder must be positive and strictly decreasing")
        object.__setattr__(self, "epsilon_ladder", lad)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    epsilon: float
    phi: np.ndarray
    phidot: np.ndarray
    mode: str
    positivity_margin: float


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: float
    dt: float
    area: float
    class_area: float
    sup_phi: float
    sup_phidot: float
    positivity_margin: float
    stages: int
    phidot_min: float = math.nan  # signed extremes, for the velocity-bound fits
    phidot_max: float = math.nan


@dataclass(frozen=True, eq=False)
class FlowResult:
    outcome: str  # completed | extinction | stationary
    states: tuple  # FlowState at t=0, the checkpoints, and the final time
    records: tuple  # StepRecord per accepted step
    t_final: float
    extinction_time: float
    max_volume_defect: float
    accepted_steps: int
    rejected_steps: int
    error_accum: float  # accumulated local error estimates

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    def state_at(self, t: float) -> FlowState:
        for st in self.states:
            if abs(st.t - t) <= 1e-12 * max(1.0, abs(t)):
                return st
        raise DomainError(f"no stored state at t={t}")


@dataclass(frozen=True, eq=False)
class LadderResult:
    results: tuple  # (epsilon, FlowResult) pairs, coarse to fine
    sup_diffs: dict  # d -> tuple of sup|phi_{i+1} - phi_i| on K_d
    ratios: dict  # d -> tuple of successive decrease factors
    non_cauchy: bool

    @property
    def final(self) -> FlowResult:
        return self.results[-1][1]


# ---- the right-hand side ----------------------------------------------------


class _Rhs:
    """Precomputed fields and the flow right-hand side for one run."""

    def __init__(self, geometry, params: SmoothingParams, mode: str):
        if mode not in ("unnormalized", "normalized"):
            raise DomainError(f"unknown mode {mode!r}")
        self.geometry = geometry
        self.params = params
        self.mode = mode
        self.omega = geometry.omega_dens
        self.log_omega = np.log(self.omega)
        self.bump = params.k * ddbar_chi_density(params, geometry)

        eps2 = params.epsilon**2
        cone = np.zeros(geometry.shape)
        kchi = np.zeros(geometry.shape)
        for div in geometry.divisors:
            cone += (1.0 - div.beta) * np.log(eps2 + div.psi)
            aux = dataclasses.replace(params, beta=div.beta)
            kchi += params.k * chi_field(aux, div.psi)
        self.cone_term = cone
        self.k_chi = kchi

    def background(self, t: float) -> np.ndarray:
        return omega_t_density(self.geometry, t, self.mode) + self.bump

    def density(self, t: float, phi: np.ndarray) -> np.ndarray:
        return self.background(t) + self.geometry.ddbar(phi)

    def __call__(self, t: float, phi: np.ndarray) -> np.ndarray:
        dens = self.density(t, phi)
        m = float(dens.min())
        if m <= 0.0:
            i = int(np.argmin(dens))
            raise NonpositiveDensity(
                f"evolving density nonpositive ({m:.3e}) at flat index {i}, t={t:.6f}"
            )
        out = np.log(dens) - self.log_omega + self.cone_term
        if self.mode == "normalized":
            out -= phi + self.k_chi
        return out

    def margin(self, t: float, phi: np.ndarray) -> float:
        return float(self.density(t, phi).min())

    def stiffness(self, dens_min: float) -> float:
        """Deterministic upper bound for the Jacobian spectral radius."""
        g = self.geometry
        if g.kind == "torus_cone":
            sig = (4.0 / (g.h * g.h)) / dens_min
        else:
            s = g._faces
            rows = math.pi * (s[1:] + s[:-1]) / (g.h * g.h)
            sig = float(np.max(rows)) / dens_min
        if self.mode == "normalized":
            sig += 1.0
        return sig


def flow_density(state: FlowState, geometry, params: SmoothingParams) -> np.ndarray:
    """Density of the evolving metric omega_{t,eps} + ddbar(phi) at a state."""
    return _Rhs(geometry, params, state.mode).density(state.t, state.phi)


def rhs_unnormalized(state: FlowState, geometry, params: SmoothingParams) -> np.ndarray:
    """Flow velocity log(density/Omega) + sum (1-b) log(||S||^2 + eps^2)."""
    return _Rhs(geometry, params, "unnormalized")(state.t, state.phi)


def rhs_normalized(state: FlowState, geometry, params: SmoothingParams) -> np.ndarray:
    """Normalized flow velocity; subtracts phi and the k chi drag term."""
    return _Rhs(geometry, params, "normalized")(state.t, state.phi)


# ---- Runge-Kutta-Chebyshev kernel -------------------------------------------

_coeff_cache: dict = {}


def _rkc_coefficients(s: int):
    """Stage coefficients for the order-2 scheme with damping 2/13."""
    got = _coeff_cache.get(s)
    if got is not None:
        return got
    w0 = 1.0 + _DAMPING / (s * s)
    T = np.empty(s + 1)
    dT = np.empty(s + 1)
    d2T = np.empty(s + 1)
    T[0], T[1] = 1.0, w0
    dT[0], dT[1] = 0.0, 1.0
    d2T[0], d2T[1] = 0.0, 0.0
    for j in range(2, s + 1):
        T[j] = 2.0 * w0 * T[j - 1] - T[j - 2]
        dT[j] = 2.0 * T[j - 1] + 2.0 * w0 * dT[j - 1] - dT[j - 2]
        d2T[j] = 4.0 * dT[j - 1] + 2.0 * w0 * d2T[j - 1] - d2T[j - 2]

    w1 = dT[s] / d2T[s]
    b = np.empty(s + 1)
    for j in range(2, s + 1):
        b[j] = d2T[j] / (dT[j] * dT[j])
    b[0] = b[1] = b[2]

    mu1 = b[1] * w1
    mu = np.zeros(s + 1)
    nu = np.zeros(s + 1)
    mut = np.zeros(s + 1)
    gt = np.zeros(s + 1)
    c = np.zeros(s + 1)
    c[1] = mu1
    for j in range(2, s + 1):
        mu[j] = 2.0 * b[j] * w0 / b[j - 1]
        nu[j] = -b[j] / b[j - 2]
        mut[j] = 2.0 * b[j] * w1 / b[j - 1]
        a_prev = 1.0 - b[j - 1] * T[j - 1]
        gt[j] = -a_prev * mut[j]
        c[j] = mu[j] * c[j - 1] + nu[j] * c[j - 2] + mut[j] + gt[j]
    out = (w0, w1, mu1, mu, nu, mut, gt, c)
    _coeff_cache[s] = out
    return out


def _rkc_step(F, t: float, y: np.ndarray, f0: np.ndarray, dt: float, s: int):
    """One s-stage step; returns the end-of-step solution."""
    _, _, mu1, mu, nu, mut, gt, c = _rkc_coefficients(s)
    y_jm2 = y
    y_jm1 = y + mu1 * dt * f0
    for j in range(2, s + 1):
        fj = F(t + c[j - 1] * dt, y_jm1)
        y_j = (
            (1.0 - mu[j] - nu[j]) * y
            + mu[j] * y_jm1
            + nu[j] * y_jm2
            + mut[j] * dt * fj
            + gt[j] * dt * f0
        )
        y_jm2, y_jm1 = y_jm1, y_j
    return y_jm1


def _stage_count(dt: float, sigma: float, max_stages: int) -> int:
    s = int(math.ceil(math.sqrt(1.05 * dt * sigma / _STABILITY))) + 1
    return max(2, min(s, max_stages))


# ---- stepping and runs ------------------------------------------------------


def _class_area(geometry, t: float, mode: str) -> float:
    return 2.0 * math.pi * float(class_at(geometry.class_path, t, mode=mode).degree)


class _Integrator:
    def __init__(self, rhs: _Rhs, config: SolverConfig):
        self.rhs = rhs
        self.config = config

    def try_advance(self, t, phi, f0, margin_prev, dt):
        """One attempted step; returns (accepted, payload)."""
        cfg = self.config
        sigma = self.rhs.stiffness(margin_prev)
        s = _stage_count(dt, sigma, cfg.max_stages)
        if s >= cfg.max_stages and dt * sigma > _STABILITY * s * s:
            dt = 0.9 * _STABILITY * s * s / sigma
        try:
            phi1 = _rkc_step(self.rhs, t, phi, f0, dt, s)
            dens1 = self.rhs.density(t + dt, phi1)
            m1 = float(dens1.min())
            if m1 <= 0.0:
                return False, (dt, 0.5, "margin")
            f1 = np.log(dens1) - self.rhs.log_omega + self.rhs.cone_term
            if self.rhs.mode == "normalized":
                f1 -= phi1 + self.rhs.k_chi
        except NonpositiveDensity:
            return False, (dt, 0.5, "margin")
        est = 0.8 * (phi - phi1) + 0.4 * dt * (f0 + f1)
        scale = self.config.tol_step * (1.0 + np.abs(phi1))
        err = float(np.sqrt(np.mean((est / scale) ** 2)))
        if err > 1.0:
            shrink = max(0.1, 0.8 * err ** (-1.0 / 3.0))
            return False, (dt, shrink, "error")
        if m1 < self.config.safety * margin_prev:
            return False, (dt, 0.5, "margin")
        grow = 5.0 if err == 0.0 else min(5.0, 0.8 * err ** (-1.0 / 3.0))
        est_abs = float(np.max(np.abs(est)))
        return True, (dt, phi1, f1, m1, s, grow, est_abs)


def step(state: FlowState, geometry, params: SmoothingParams, config: SolverConfig, dt=None) -> FlowState:
    """Advance one accepted step from the given state.

    Rejected attempts halve or shrink dt; dt below dt_min raises
    StepSizeUnderflow (for an unnormalized run near the maximal time
    this is the expected way extinction is detected).
    """
    if not state.positivity_margin > 0:
        raise DomainError("state has nonpositive positivity_margin")
    rhs = _Rhs(geometry, params, state.mode)
    intg = _Integrator(rhs, config)
    t, phi = state.t, state.phi
    f0 = state.phidot if state.phidot is not None else rhs(t, phi)
    margin = state.positivity_margin
    dt = float(dt if dt is not None else config.dt_init)
    while True:
        if dt < config.dt_min:
            raise StepSizeUnderflow(
                f"step size {dt:.3e} fell below dt_min at t={t:.8f}",
                t=t,
                reason="positivity margin collapse",
            )
        ok, payload = intg.try_advance(t, phi, f0, margin, dt)
        if not ok:
            dt_used, shrink, _ = payload
            dt = dt_used * shrink
            continue
        dt_used, phi1, f1, m1, _, _, _ = payload
        return FlowState(
            t=t + dt_used,
            epsilon=params.epsilon,
            phi=phi1,
            phidot=f1,
            mode=state.mode,
            positivity_margin=m1,
        )


def run_flow(
    geometry,
    params: SmoothingParams,
    config: SolverConfig,
    mode: str = "unnormalized",
    t_end: float = 1.0,
    checkpoints=(),
    phi0=None,
    stop_when_stationary=None,
) -> FlowResult:
    """Integrate the flow to t_end, stopping early at extinction or
    stationarity.

    States are recorded at t = 0, at every requested checkpoint time
    (hit exactly by clamping the step), and at the final time.
    Normalized runs stop once sup|phidot| < tol_stationary unless
    stop_when_stationary=False.
    """
    if t_end < 0:
        raise DomainError("t_end must be nonnegative")
    if stop_when_stationary is None:
        stop_when_stationary = mode == "normalized"

    rhs = _Rhs(geometry, params, mode)
    intg = _Integrator(rhs, config)

    phi = np.zeros(geometry.shape) if phi0 is None else np.array(phi0, dtype=float)
    t = 0.0
    f0 = rhs(t, phi)
    margin = rhs.margin(t, phi)

    targets = sorted({float(c) for c in checkpoints if 0.0 < float(c) < t_end})
    targets.append(float(t_end))

    def snapshot():
        return FlowState(t, params.epsilon, phi.copy(), f0.copy(), mode, margin)

    states = [snapshot()]

    def record():
        if abs(states[-1].t - t) > 1e-15:
            states.append(snapshot())
    records = []
    accepted = rejected = 0
    err_accum = 0.0
    max_defect = 0.0
    outcome = "completed"
    extinction_time = math.inf
    dt = config.dt_init

    area = geometry.integrate(rhs.density(t, phi))
    cls0 = _class_area(geometry, 0.0, mode)
    cls = _class_area(geometry, t, mode)
    # both sides of the identity vanish linearly at the extinction
    # time, so defects are measured against the fixed initial scale
    max_defect = abs(area - cls) / cls0

    ti = 0
    while ti < len(targets):
        target = targets[ti]
        if t >= target - 1e-14 * max(1.0, target):
            record()
            ti += 1
            continue
        dt_try = min(dt, config.dt_max, target - t)
        ok, payload = intg.try_advance(t, phi, f0, margin, dt_try)
        if not ok:
            dt_att, shrink, _ = payload
            rejected += 1
            dt = dt_att * shrink
            if dt < config.dt_min:
                if mode == "unnormalized":
                    outcome = "extinction"
                    extinction_time = t
                    record()
                    break
                raise StepSizeUnderflow(
                    f"step size {dt:.3e} below dt_min at t={t:.8f}",
                    t=t,
                    reason="positivity margin collapse",
                )
            continue
        dt_used, phi1, f1, m1, stages, grow, est_abs = payload
        t = t + dt_used
        phi, f0, margin = phi1, f1, m1
        accepted += 1
        err_accum += est_abs
        dt = min(config.dt_max, dt_used * grow)

        dens = rhs.density(t, phi)
        area = geometry.integrate(dens)
        cls = _class_area(geometry, t, mode)
        defect = abs(area - cls) / cls0
        max_defect = max(max_defect, defect)
        records.append(
            StepRecord(
                t=t,
                dt=dt_used,
                area=area,
                class_area=cls,
                sup_phi=float(np.max(np.abs(phi))),
                sup_phidot=float(np.max(np.abs(f0))),
                positivity_margin=margin,
                stages=stages,
                phidot_min=float(np.min(f0)),
                phidot_max=float(np.max(f0)),
            )
        )
        if stop_when_stationary and float(np.max(np.abs(f0))) < config.tol_stationary:
            outcome = "stationary"
            record()
            break

    return FlowResult(
        outcome=outcome,
        states=tuple(states),
        records=tuple(records),
        t_final=t,
        extinction_time=extinction_time,
        max_volume_defect=max_defect,
        accepted_steps=accepted,
        rejected_steps=rejected,
        error_accum=err_accum,
    )


def epsilon_continuation(
    geometry,
    params: SmoothingParams,
    config: SolverConfig,
    mode: str = "unnormalized",
    t_end: float = 0.5,
    warm: bool = True,
    compact_radii=(0.1, 0.2),
) -> LadderResult:
    """Run the flow for each epsilon in the ladder, coarse to fine.

    The returned per-epsilon results warm-start phi from the previous
    rung when warm=True (the default).  The Cauchy table, which is the
    convergence evidence for the epsilon -> 0 family, is always built
    from cold starts (phi(0) = 0): sup-differences of consecutive
    final potentials on the compact sets K_d = {distance to every cone
    point > d}, with the flag non_cauchy set when they fail to
    decrease.  A single-entry ladder is the same thing as run_flow and
    produces an empty table.
    """
    ladder = config.epsilon_ladder
    if len(ladder) < 1:
        raise DomainError("epsilon ladder is empty")

    def sweep(use_warm):
        out = []
        phi_prev = None
        for eps in ladder:
            p = params.with_epsilon(eps)
            res = run_flow(
                geometry,
                p,
                config,
                mode=mode,
                t_end=t_end,
                phi0=phi_prev if use_warm else None,
            )
            out.append((eps, res))
            phi_prev = res.final.phi
        return out

    cold = sweep(False)
    results = sweep(True) if (warm and len(ladder) > 1) else cold

    sup_diffs = {}
    ratios = {}
    non_cauchy = False
    for d in compact_radii:
        mask = geometry.kd_mask(d)
        diffs = []
        for (_, a), (_, b) in zip(cold, cold[1:]):
            diffs.append(float(np.max(np.abs(b.final.phi - a.final.phi)[mask])))
        sup_diffs[d] = tuple(diffs)
        rats = tuple(
            (a / b if b > 0 else math.inf) for a, b in zip(diffs, diffs[1:])
        )
        ratios[d] = rats
        if any(r <= 1.0 for r in rats):
            non_cauchy = True
    return LadderResult(
        results=tuple(results),
        sup_diffs=sup_diffs,
        ratios=ratios,
        non_cauchy=non_cauchy,
    )
