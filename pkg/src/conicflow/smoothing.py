"""Smoothing of the conical volume density and its curvature bump.

The cone metric degenerates like ||S||^(2b-2) at a cone point of angle
2*pi*b.  The regularization used throughout this package replaces the
offending power by

    chi(eps^2, s) = b * integral_0^s ((eps^2 + r)^b - eps^(2b)) / r dr,

which is smooth for eps > 0 and recovers s^b exactly at eps = 0.  This
module evaluates chi and its derivative, the second-order density of
chi(||S||^2) against a supplied geometry, and the regularized background
densities the flow solver starts from.

Numerics: with r = exp(u) the integrand becomes b * ((eps^2 + e^u)^b -
eps^(2b)), which decays like e^u as u -> -inf and is analytic in a strip
of half-width pi around the real axis.  Composite Gauss-Legendre panels
of unit width in u therefore converge at machine-precision rates; the
integral is accumulated once on a shared knot ladder and finished with a
partial panel per evaluation point, so a whole grid field costs a few
million integrand evaluations at most.  Running the same scheme at two
node orders gives a defensible error estimate instead of a hoped-for
one.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from conicflow.classes import class_at
from conicflow.errors import (
    DomainError,
    NotPositive,
    QuadratureFailure,
    SingularityAt,
)

__all__ = [
    "SmoothingParams",
    "chi",
    "chi_field",
    "chi_prime",
    "chi_rho",
    "ddbar_chi_density",
    "ddbar_chi_terms",
    "omega_t_density",
    "regularized_background_density",
]

_TOL = 1e-12  # absolute accuracy contract for chi
_TAIL_MARGIN = 45.0  # exp(-45) ~ 3e-20, far below _TOL relative to any term


@dataclass(frozen=True)
class SmoothingParams:
    """Cone parameter, regularization size, bump coefficient, aux exponent.

    beta is the cone parameter in (0, 1); epsilon >= 0 the smoothing
    scale; k > 0 the coefficient of the curvature bump added to the
    background metric; rho in (0, 1) the exponent of the auxiliary
    smoothing used by trace-bound monitors.
    """

    beta: float
    epsilon: float
    k: float = 0.05
    rho: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise DomainError(f"beta={self.beta} outside (0, 1)")
        if self.epsilon < 0.0:
            raise DomainError(f"epsilon={self.epsilon} must be >= 0")
        if not (self.k > 0.0):
            raise DomainError(f"k={self.k} must be > 0")
        if not (0.0 < self.rho < 1.0):
            raise DomainError(f"rho={self.rho} outside (0, 1)")

    def with_epsilon(self, epsilon: float) -> "SmoothingParams":
        return dataclasses.replace(self, epsilon=epsilon)


def _powm_eps(beta: float, eps2: float, s):
    """(eps^2 + s)^beta - eps^(2*beta), computed without cancellation."""
    return eps2**beta * np.expm1(beta * np.log1p(s / eps2))


def chi_prime(params: SmoothingParams, s):
    """d chi / d s in closed form; works on scalars and arrays.

    At s = 0 the limit beta^2 eps^(2 beta - 2) is used (eps > 0); with
    eps = 0 the closed form beta s^(beta - 1) needs s > 0.
    """
    b, eps = params.beta, params.epsilon
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise DomainError("chi_prime needs s >= 0")
    if eps == 0.0:
        if np.any(arr <= 0):
            raise DomainError("chi_prime at s <= 0 is singular when epsilon = 0")
        out = b * arr ** (b - 1.0)
        return float(out) if np.isscalar(s) else out

    eps2 = eps * eps
    safe = np.where(arr > 0, arr, 1.0)
    out = np.where(
        arr > 0,
        b * _powm_eps(b, eps2, safe) / safe,
        b * b * eps2 ** (b - 1.0),
    )
    return float(out) if np.isscalar(s) else out


def _panel_values(beta, eps2, lo, hi, nodes, wts):
    """Gauss-Legendre integrals of the log-substituted integrand.

    lo, hi are arrays of panel endpoints (broadcast together); returns
    the per-panel integral values.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[..., None] + half[..., None] * nodes
    vals = beta * _powm_eps(beta, eps2, np.exp(u))
    return half * (vals @ wts)


def _chi_positive_eps(beta, eps2, s, order):
    """chi on an array of s >= 0, for eps > 0, at a given GL order."""
    nodes, wts = np.polynomial.legendre.leggauss(order)
    out = np.zeros_like(s)
    u0 = math.log(eps2) - _TAIL_MARGIN
    tail_slope = beta * beta * eps2 ** (beta - 1.0)

    tiny = s <= math.exp(u0)
    out[tiny] = tail_slope * s[tiny]
    if np.all(tiny):
        return out

    big = ~tiny
    us = np.log(s[big])
    umax = float(us.max())
    npanels = max(1, math.ceil(umax - u0))
    knots = np.linspace(u0, umax, npanels + 1)

    cum = np.empty(npanels + 1)
    cum[0] = tail_slope * math.exp(u0)
    cum[1:] = cum[0] + np.cumsum(
        _panel_values(beta, eps2, knots[:-1], knots[1:], nodes, wts)
    )

    idx = np.clip(np.searchsorted(knots, us, side="right") - 1, 0, npanels - 1)
    partial = _panel_values(beta, eps2, knots[idx], us, nodes, wts)
    out[big] = cum[idx] + partial
    return out


def chi_field(params: SmoothingParams, s) -> np.ndarray:
    """chi evaluated over an array of nonnegative s values.

    Absolute accuracy 1e-12; raises QuadratureFailure if the two-order
    error estimate cannot be brought below that after one refinement.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise DomainError("chi needs s >= 0")
    shape = arr.shape
    flat = arr.ravel()

    b, eps = params.beta, params.epsilon
    if eps == 0.0:
        return (flat**b).reshape(shape)

    eps2 = eps * eps
    for lo_order, hi_order in ((16, 24), (32, 48)):
        lo_val = _chi_positive_eps(b, eps2, flat, lo_order)
        hi_val = _chi_positive_eps(b, eps2, flat, hi_order)
        err = float(np.max(np.abs(hi_val - lo_val))) if flat.size else 0.0
        scale = max(1.0, float(np.max(np.abs(hi_val)))) if flat.size else 1.0
        if err <= _TOL * scale:
            return hi_val.reshape(shape)
    raise QuadratureFailure(
        f"chi quadrature error estimate {err:.3e} above tolerance {_TOL:.0e}"
    )


def chi(params: SmoothingParams, s) -> float:
    """chi at a single nonnegative s."""
    return float(chi_field(params, np.array([float(s)]))[0])


def chi_rho(params: SmoothingParams, s):
    """The auxiliary smoothing with exponent rho in place of beta."""
    aux = dataclasses.replace(params, beta=params.rho)
    if np.isscalar(s):
        return chi(aux, s)
    return chi_field(aux, s)


def ddbar_chi_terms(beta, epsilon, psi, grad_density, curv_density):
    """Density of sqrt(-1) ddbar chi(eps^2 + ||S||^2) from raw fields.

    psi is ||S||^2, grad_density the squared-derivative density of S,
    curv_density the curvature density of the Hermitian norm; all three
    are evaluated on the same grid.  The identity used is

      ddbar chi = beta^2 grad / (eps^2 + psi)^(1-beta)
                  - beta ((eps^2 + psi)^beta - eps^(2 beta)) * curv.
    """
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < 0):
        i = int(np.argmin(psi))
        raise NotPositive("||S||^2 must be nonnegative", where=i, value=float(psi.flat[i]))
    if epsilon == 0.0:
        if np.any(psi == 0):
            where = int(np.argmin(psi))
            raise SingularityAt(
                "ddbar chi is singular at a cone point when epsilon = 0",
                where=where,
            )
        first = beta * beta * grad_density * psi ** (beta - 1.0)
        second = beta * psi**beta * curv_density
        return first - second
    eps2 = epsilon * epsilon
    first = beta * beta * grad_density / (eps2 + psi) ** (1.0 - beta)
    second = beta * _powm_eps(beta, eps2, psi) * curv_density
    return first - second


def ddbar_chi_density(params: SmoothingParams, geometry, where=None):
    """Curvature-bump density summed over the geometry's cone points.

    Built by applying the geometry's discrete second-order operator to
    the chi(||S||^2) fields, so the bump integrates to exactly zero and
    background areas are conserved to roundoff.  The pointwise
    derivative-and-curvature combination (ddbar_chi_terms) agrees with
    this to second order in the grid spacing and serves as its oracle.
    Each cone point carries its own cone parameter; the smoothing scale
    comes from params.  With ``where`` an index (flat index or tuple)
    only that grid point's value is returned.
    """
    total = None
    for div in geometry.divisors:
        aux = dataclasses.replace(params, beta=div.beta)
        term = geometry.ddbar(chi_field(aux, div.psi))
        total = term if total is None else total + term
    if total is None:
        total = np.zeros(geometry.shape)
    if where is None:
        return total
    return float(np.asarray(total)[where])


def omega_t_density(geometry, t, mode: str = "unnormalized") -> np.ndarray:
    """Grid density of the class-path representative at time t.

    The coefficients are exactly those of the cohomology path, so the
    grid integral of the result equals the class degree to roundoff.
    """
    if mode == "unnormalized":
        return geometry.a0 - float(t) * geometry.twist_density
    if mode == "normalized":
        w = math.exp(-float(t))
        return w * geometry.a0 - (1.0 - w) * geometry.twist_density
    raise DomainError(f"unknown mode {mode!r}")


def regularized_background_density(
    params: SmoothingParams,
    geometry,
    t=0.0,
    mode: str = "unnormalized",
    return_gamma: bool = False,
):
    """Density of the smoothed background ω_{t,ε} = ω_t + k ddbar chi.

    Checks the class-level validity window first (the degree of the
    class at time t must be positive), then pointwise positivity after
    assembly.  With return_gamma=True also returns the uniform lower
    bound gamma = min over the grid of density / (density of ω_0).
    """
    path = geometry.class_path
    deg = class_at(path, t, mode=mode).degree
    if deg <= 0:
        raise DomainError(
            f"time t={t} is outside the positivity window (class degree {deg})"
        )
    base = omega_t_density(geometry, t, mode)
    dens = base + params.k * ddbar_chi_density(params, geometry)
    if np.any(dens <= 0):
        i = int(np.argmin(dens))
        raise NotPositive(
            "regularized background density is not positive",
            where=i,
            value=float(dens.flat[i]),
        )
    if not return_gamma:
        return dens
    gamma = float(np.min(dens / geometry.a0))
    return dens, gamma
