"""Discrete model geometries: the cone sphere and the cone torus.

Two closed model surfaces are built here, each as a fixed grid with
precomputed background densities.

Football (sphere with two antipodal cone points).  The rotational
symmetry reduces everything to one dimension.  The grid lives on the
polar angle theta in (0, pi) at cell centers (j + 1/2) h, h = pi/N, and
all fields are densities per unit theta after integrating out the
angular circle.  The second-order operator is the flux form

    (D phi)_j = (pi/h^2) [ s_{j+1/2} (phi_{j+1} - phi_j)
                         - s_{j-1/2} (phi_j - phi_{j-1}) ],

with face weights s = sin(j h) and the two pole faces exactly zero, so
sum_j h (D phi)_j vanishes identically: integrals of second-order
densities are conserved to roundoff, not to truncation order.  Fields
with pole singularities (log of a section norm) are differentiated with
their analytic pole fluxes supplied, which makes every background
integral (areas, degrees, Gauss-Bonnet) exact by construction.

Torus with one cone point.  An N x N periodic grid carries a flat
background; the section norm comes from the continuum periodic Green
function, evaluated in closed form through the first Jacobi theta
function (a rapidly convergent series, exact to machine precision at
every off-node cell).  The discrete Poincare-Lelong identity

    (1/2) Delta_h log ||S||^2 = 2 pi delta_h - R

then holds with a second-order stencil residual away from the node:
the residual field is pure five-point truncation error of a smooth
function, so it shrinks by ~4x per grid doubling.  That matters
downstream: curvature diagnostics of converged metrics inherit exactly
this residual, which is what makes their refinement behavior a real
measurement instead of an identity.  (Building ||S||^2 from the
lattice-symbol Green function instead would make the identity exact
node for node and silence the diagnostics; the lattice solve is kept
only as a build-time cross-check of the theta evaluation.)  The node
cell, where log ||S||^2 diverges, carries the cell average of the
local quadratic model; it is only ever consumed through the
epsilon-regularized fields.  The overall scale of the Hermitian norm
is a recorded calibration knob (hermitian_scale): it fixes how large
||S||^2 is near the cone point relative to a cell, which controls how
far the epsilon-floor sits below the discretization error in curvature
diagnostics.

Units: class degrees are tracked in multiples of 2 pi and areas in
absolute units; builders accept the area either as a float (absolute)
or as an exact Fraction meaning multiples of 2 pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from conicflow.classes import ClassFlowPath
from conicflow.errors import (
    ConePointOffGrid,
    DomainError,
    NotPositive,
    ResolutionTooLow,
    SpectralSolveFailure,
    TruncationError,
)

__all__ = [
    "DiscreteGeometry",
    "DivisorData",
    "build_football",
    "build_torus_cone",
    "cone_model_density_ratio",
    "ddbar",
    "integrate",
    "prolong_field",
    "with_volume_shift",
]

TAU = 2.0 * math.pi

_CLOSURE_TOL = 1e-10  # roundoff budget for exact discrete identities


def _area_inputs(A0):
    """Return (absolute float area, Fraction in 2 pi units or None)."""
    if isinstance(A0, Fraction):
        return TAU * float(A0), A0
    if isinstance(A0, int):
        return TAU * float(A0), Fraction(A0)
    A0 = float(A0)
    if A0 <= 0:
        raise DomainError("area must be positive")
    return A0, None


def _beta_value(beta):
    b = float(beta)
    if not (0.0 < b < 1.0):
        raise DomainError(f"cone parameter beta={beta} outside (0, 1)")
    return b


@dataclass(frozen=True, eq=False)
class DivisorData:
    """Per-cone-point fields: norm squared, derivative and curvature densities."""

    beta: float
    beta_exact: object
    psi: np.ndarray
    grad_density: np.ndarray
    curv_density: np.ndarray
    location: object  # pole label (football) or grid index (torus)
    dist: np.ndarray  # background distance to this cone point


@dataclass(frozen=True, eq=False)
class DiscreteGeometry:
    """Immutable grid, operators, and background fields for one model."""

    kind: str
    N: int
    shape: tuple
    h: float
    weights: np.ndarray
    a0: np.ndarray
    omega_dens: np.ndarray
    ric_omega: np.ndarray
    twist_density: np.ndarray
    divisors: tuple
    class_path: ClassFlowPath
    euler_char: int
    area: float
    area_frac: object
    dist: np.ndarray
    meta: dict = field(default_factory=dict)
    _faces: np.ndarray = None  # football: sin at the N+1 cell faces

    # ---- operators --------------------------------------------------------

    def ddbar(self, phi: np.ndarray) -> np.ndarray:
        """Discrete sqrt(-1) ddbar of a potential, as a density field.

        Exactly integrates to zero by the flux construction.
        """
        phi = np.asarray(phi, dtype=float)
        if phi.shape != self.shape:
            raise DomainError(f"field shape {phi.shape} != grid shape {self.shape}")
        if self.kind == "football":
            return self._ddbar_football(phi, 0.0, 0.0)
        return self._ddbar_torus(phi)

    def _ddbar_football(self, phi, flux0, flux1):
        s = self._faces
        dphi = np.diff(phi)
        flux = np.empty(self.N + 1)
        flux[1:-1] = s[1:-1] * dphi / self.h
        flux[0] = flux0
        flux[-1] = flux1
        return (math.pi / self.h) * np.diff(flux)

    def _ddbar_torus(self, phi):
        lap = (
            np.roll(phi, 1, axis=0)
            + np.roll(phi, -1, axis=0)
            + np.roll(phi, 1, axis=1)
            + np.roll(phi, -1, axis=1)
            - 4.0 * phi
        )
        return lap / (2.0 * self.h * self.h)

    def integrate(self, dens: np.ndarray) -> float:
        dens = np.asarray(dens, dtype=float)
        return float(np.sum(self.weights * dens))

    def curvature_of_density(self, dens: np.ndarray) -> np.ndarray:
        """Gauss curvature of the metric with the given density.

        K = -(ddbar log density) / density; second-order accurate away
        from cone points and pole cells.
        """
        dens = np.asarray(dens, dtype=float)
        if np.any(dens <= 0):
            i = int(np.argmin(dens))
            raise NotPositive("density must be positive", where=i, value=float(dens.flat[i]))
        if self.kind == "football":
            # curvature needs ddbar of the local-chart density, which is
            # the theta-density times a sin(theta) Jacobian; the Jacobian
            # part carries the pole fluxes (2, -2) and is differentiated
            # analytically, so only the smooth ratio dens/sin goes
            # through the zero-flux operator
            rest = np.log(dens) - np.log(np.sin(self.theta))
            out = -(self._ddbar_football(rest, 0.0, 0.0) + self._ribbon)
            return out / dens
        return -self.ddbar(np.log(dens)) / dens

    def kd_mask(self, d: float) -> np.ndarray:
        """Grid cells at background distance greater than d from every cone point."""
        return self.dist > d

    # ---- convenience ------------------------------------------------------

    @property
    def theta(self):
        if self.kind != "football":
            raise DomainError("theta is a football-grid coordinate")
        return self.meta["theta"]

    @property
    def _ribbon(self):
        # exact-flux ddbar of 2 log sin(theta), cached at build time
        return self.meta["ddbar_two_log_sin"]

    def summary(self) -> dict:
        out = {
            "kind": self.kind,
            "N": self.N,
            "area": self.area,
            "euler_char": self.euler_char,
            "betas": [d.beta for d in self.divisors],
        }
        if self.area_frac is not None:
            out["area_over_2pi"] = str(self.area_frac)
        out.update({k: v for k, v in self.meta.items() if np.isscalar(v) or isinstance(v, str)})
        return out


def ddbar(geometry: DiscreteGeometry, phi) -> np.ndarray:
    return geometry.ddbar(phi)


def integrate(geometry: DiscreteGeometry, dens) -> float:
    return geometry.integrate(dens)


def _require_closure(value, target, what, budget=_CLOSURE_TOL):
    scale = max(1.0, abs(target))
    if abs(value - target) > budget * scale:
        raise TruncationError(
            f"{what}: got {value!r}, wanted {target!r} within {budget:g} relative"
        )


# ---- football ---------------------------------------------------------------


def build_football(beta0, beta_inf, A0, N) -> DiscreteGeometry:
    """Sphere of area A0 with cone points of parameters beta0, beta_inf
    at the two poles; N polar cells.
    """
    if N < 64:
        raise ResolutionTooLow(f"football needs N >= 64, got {N}")
    b0, b1 = _beta_value(beta0), _beta_value(beta_inf)
    area, area_frac = _area_inputs(A0)

    h = math.pi / N
    theta = (np.arange(N) + 0.5) * h
    faces = np.sin(np.arange(N + 1) * h)
    faces[0] = 0.0
    faces[-1] = 0.0

    sin_t = np.sin(theta)
    # discrete normalization makes the area exact, not just O(h^2) close
    c_norm = area / (h * float(np.sum(sin_t)))
    a0 = c_norm * sin_t
    weights = np.full(N, h)

    geom = DiscreteGeometry(
        kind="football",
        N=N,
        shape=(N,),
        h=h,
        weights=weights,
        a0=a0,
        omega_dens=a0.copy(),
        ric_omega=np.zeros(N),
        twist_density=np.zeros(N),
        divisors=(),
        class_path=None,
        euler_char=2,
        area=area,
        area_frac=area_frac,
        dist=np.zeros(N),
        meta={"theta": theta},
        _faces=faces,
    )

    half = 0.5 * theta
    psi0 = np.sin(half) ** 2
    psi1 = np.cos(half) ** 2

    # Background curvature densities are built from their analytic face
    # fluxes sin(theta) dF/dtheta, making each cell value the exact cell
    # average of the continuum density.  Finite differences of these
    # log-singular potentials would leave O(1/h) artifacts at the pole
    # cells; the analytic fluxes avoid that while keeping every integral
    # exactly the telescoped end-flux difference.
    face_t = np.arange(N + 1) * h
    flux0 = 2.0 * np.cos(face_t / 2.0) ** 2  # of log psi0: (2, 0)
    flux1 = -2.0 * np.sin(face_t / 2.0) ** 2  # of log psi1: (0, -2)
    flux_vol = 2.0 * np.cos(face_t)  # of log(a0 sin): (2, -2)
    r0 = -(math.pi / h) * np.diff(flux0)
    r1 = -(math.pi / h) * np.diff(flux1)
    ric = -(math.pi / h) * np.diff(flux_vol)
    geom.meta["ddbar_two_log_sin"] = (math.pi / h) * np.diff(flux_vol)

    _require_closure(geom.integrate(r0), TAU, "degree of the pole-0 section norm")
    _require_closure(geom.integrate(r1), TAU, "degree of the pole-pi section norm")
    _require_closure(geom.integrate(ric), 2 * TAU, "Gauss-Bonnet of the background")
    _require_closure(geom.integrate(a0), area, "background area normalization")
    _require_closure(geom.integrate(geom.ddbar(theta**2)), 0.0, "ddbar zero integral")

    # closed-form derivative densities (1/2)|grad psi|^2 / psi as
    # theta-densities; used by pointwise-formula monitors only
    grad0 = TAU * np.sin(half) * np.cos(half) ** 3
    grad1 = TAU * np.cos(half) * np.sin(half) ** 3

    radius = math.sqrt(area / (4.0 * math.pi))
    d0 = radius * theta
    d1 = radius * (math.pi - theta)

    exact0 = beta0 if isinstance(beta0, Fraction) else b0
    exact1 = beta_inf if isinstance(beta_inf, Fraction) else b1
    div0 = DivisorData(b0, exact0, psi0, grad0, r0, "pole0", d0)
    div1 = DivisorData(b1, exact1, psi1, grad1, r1, "polepi", d1)

    twist = ric - (1.0 - b0) * r0 - (1.0 - b1) * r1
    deg_area = area_frac if area_frac is not None else area / TAU
    path = ClassFlowPath.surface(2, deg_area, betas=(exact0, exact1))

    geom = replace(
        geom,
        ric_omega=ric,
        twist_density=twist,
        divisors=(div0, div1),
        class_path=path,
        dist=np.minimum(d0, d1),
    )
    geom.meta["truncation_U"] = abs(2.0 * math.log(math.tan(theta[0] / 2.0)))
    geom.meta["hermitian"] = "fubini-study"
    return geom


def cone_model_density_ratio(beta, A0, k, distance) -> float:
    """Ratio of the conical initial density to the model cone density.

    Evaluated analytically at the given arc-length distance from the
    pole (distance measured in the cone model k beta^2 omega_beta
    itself).  The ratio tends to 1 as distance -> 0; the background
    round metric only contributes at relative order distance^(2(1-beta)/beta).
    """
    b = _beta_value(beta)
    area, _ = _area_inputs(A0)
    if distance <= 0 or k <= 0:
        raise DomainError("need positive distance and k")
    rho = (distance / math.sqrt(2.0 * k)) ** (1.0 / b)
    theta = 2.0 * math.atan(rho)
    s, c = math.sin(theta / 2.0), math.cos(theta / 2.0)
    bump = TAU * b * s ** (2 * b - 1) * c * (b * c * c - s * s)
    model = TAU * s ** (2 * b - 1) * c ** (-2 * b - 1)
    a0 = 0.5 * area * math.sin(theta)
    return (a0 + k * bump) / (k * b * b * model)


# ---- torus ------------------------------------------------------------------


def _theta1(v):
    """First Jacobi theta function at nome q = exp(-pi) (square lattice)."""
    q = math.exp(-math.pi)
    out = np.zeros_like(v, dtype=complex)
    for n in range(6):
        out = out + 2.0 * (-1.0) ** n * q ** ((n + 0.5) ** 2) * np.sin((2 * n + 1) * v)
    return out


_THETA1_PRIME0 = 2.0 * sum(
    (-1.0) ** n * (2 * n + 1) * math.exp(-math.pi * (n + 0.5) ** 2) for n in range(6)
)


def _torus_green(N, L, ip, jp):
    """Continuum periodic Green function on the square torus, mean zero.

    Solves Delta G = delta_p - 1/L^2 in closed form:

        G(z) = (1/2pi) log|theta1(pi (z - p)/L | i)| - (Im(z - p)/L)^2 / 2 + C,

    sampled at cell centers with coordinates wrapped to the nearest
    image so the series converges to machine precision everywhere.  The
    node cell, where G is logarithmically singular, carries the cell
    average of the local model (1/2pi) log|z - p|: averaging |z|^2 over
    an h x h cell gives h^2/6, hence the log(h/sqrt(6)) value.
    """
    h = L / N
    dx = np.arange(N) * h - ip * h
    dy = np.arange(N) * h - jp * h
    dx -= L * np.round(dx / L)
    dy -= L * np.round(dy / L)
    z = (dx[:, None] + 1j * dy[None, :]) / L
    with np.errstate(divide="ignore"):
        G = np.log(np.abs(_theta1(math.pi * z))) / TAU - np.imag(z) ** 2 / 2.0
    reg = math.log(math.pi * _THETA1_PRIME0 / L) / TAU
    G[ip, jp] = reg + math.log(h / math.sqrt(6.0)) / TAU
    G -= G.mean()
    return G


def _torus_green_lattice(N, L, ip, jp):
    """Green function of the five-point Laplacian, for cross-checking.

    Solved with the discrete spectral symbol; agrees with the continuum
    Green function away from the node to O(h^2 / r^2).
    """
    h = L / N
    rhs = np.full((N, N), -1.0 / (L * L))
    rhs[ip, jp] += 1.0 / (h * h)
    k1 = np.arange(N)
    lam1 = -4.0 / (h * h) * np.sin(math.pi * k1 / N) ** 2
    lam = lam1[:, None] + lam1[None, :]
    rhat = np.fft.fft2(rhs)
    if abs(rhat[0, 0]) > 1e-8 * N * N:
        raise SpectralSolveFailure("source term has nonzero mean; Green solve unsolvable")
    ghat = np.zeros_like(rhat)
    nz = lam != 0.0
    ghat[nz] = rhat[nz] / lam[nz]
    G = np.real(np.fft.ifft2(ghat))
    G -= G.mean()
    if not np.all(np.isfinite(G)):
        raise SpectralSolveFailure("Green function is not finite")
    return G


def build_torus_cone(
    beta,
    A0,
    N,
    lattice=(1.0, 1.0),
    cone_point=(0.5, 0.5),
    hermitian_scale=600.0,
) -> DiscreteGeometry:
    """Flat torus of area A0 with one cone point at a grid node.

    The section norm is exp(4 pi G + c) with G the continuum periodic
    Green function (theta-function closed form); c is set so that
    ||S||^2 at the nodes adjacent to the cone point equals
    hermitian_scale * h^2 (a recorded calibration of the Hermitian
    metric, constant under grid refinement).  The theta evaluation is
    cross-checked against an independent lattice-symbol spectral solve
    at build time.
    """
    if N < 64:
        raise ResolutionTooLow(f"torus needs N >= 64, got {N}")
    b = _beta_value(beta)
    area, area_frac = _area_inputs(A0)
    L1, L2 = float(lattice[0]), float(lattice[1])
    if L1 <= 0 or L2 <= 0:
        raise DomainError("lattice periods must be positive")
    if not math.isclose(L1, L2):
        raise DomainError("only square-ish lattices with N x N cells are supported")
    if hermitian_scale <= 0:
        raise DomainError("hermitian_scale must be positive")

    h = L1 / N
    ip = cone_point[0] / h
    jp = cone_point[1] / h
    if abs(ip - round(ip)) > 1e-9 or abs(jp - round(jp)) > 1e-9:
        raise ConePointOffGrid(
            f"cone point {cone_point} is not on the {N}x{N} grid (h={h})"
        )
    ip, jp = int(round(ip)) % N, int(round(jp)) % N

    cell = h * h
    torus_area = L1 * L2

    G = _torus_green(N, L1, ip, jp)
    if not np.all(np.isfinite(G)):
        raise SpectralSolveFailure("Green function is not finite")

    # independent lattice-symbol solve; the two Green functions differ by
    # O(h^2/r^2), which plateaus near 2e-3 on the ring r >= 3h
    G_latt = _torus_green_lattice(N, L1, ip, jp)
    dxw = np.arange(N) * h - ip * h
    dyw = np.arange(N) * h - jp * h
    dxw -= L1 * np.round(dxw / L1)
    dyw -= L2 * np.round(dyw / L2)
    r_flat = np.hypot(dxw[:, None], dyw[None, :])
    ring = r_flat >= 3.0 * h
    cross = float(np.max(np.abs(G[ring] - G_latt[ring])))
    if cross > 5e-3:
        raise SpectralSolveFailure(
            f"theta-series Green function deviates from the spectral solve by {cross:.3e}"
        )

    weights = np.full((N, N), cell)
    a0 = np.full((N, N), area / torus_area)

    geom = DiscreteGeometry(
        kind="torus_cone",
        N=N,
        shape=(N, N),
        h=h,
        weights=weights,
        a0=a0,
        omega_dens=a0.copy(),
        ric_omega=np.zeros((N, N)),
        twist_density=np.zeros((N, N)),
        divisors=(),
        class_path=None,
        euler_char=0,
        area=area,
        area_frac=area_frac,
        dist=np.zeros((N, N)),
        meta={},
    )

    # Hermitian normalization: ||S||^2 = hermitian_scale * h^2 at the
    # four neighbors of the cone node
    g_nb = float(
        (G[(ip + 1) % N, jp] + G[(ip - 1) % N, jp] + G[ip, (jp + 1) % N] + G[ip, (jp - 1) % N])
        / 4.0
    )
    log_psi = 4.0 * math.pi * (G - g_nb) + math.log(hermitian_scale * cell)
    psi = np.exp(log_psi)

    R = np.full((N, N), TAU / torus_area)  # constant-curvature representative
    _require_closure(geom.integrate(R), TAU, "degree of the torus section norm")

    # discrete Poincare-Lelong: (1/2) Delta_h log psi = 2 pi delta_h - R with
    # a second-order stencil residual away from the node.  The total Lelong
    # mass is exact because the operator integrates to zero; at least 99% of
    # it must land within 3h of the node.
    pl = geom._ddbar_torus(log_psi) + R
    capture = (TAU - float(np.sum(pl[ring]) * cell)) / TAU
    if capture < 0.99:
        raise SpectralSolveFailure(
            f"Lelong mass capture within 3h of the node is {capture:.4f}"
        )

    # |DS|^2 density from the analytic identity  D psi = |DS|^2 - psi R
    # (away from the node; at the node psi vanishes to cell average and the
    # delta term is annihilated by the factor psi)
    grad = geom._ddbar_torus(psi) + psi * R

    scale = math.sqrt(area / torus_area)
    dist = scale * r_flat

    exact_b = beta if isinstance(beta, Fraction) else b
    div = DivisorData(b, exact_b, psi, grad, R, (ip, jp), dist)

    twist = geom.ric_omega - (1.0 - b) * R
    deg_area = area_frac if area_frac is not None else area / TAU
    path = ClassFlowPath.surface(0, deg_area, betas=(exact_b,))

    geom = replace(
        geom,
        twist_density=twist,
        divisors=(div,),
        class_path=path,
        dist=dist,
    )
    geom.meta.update(
        {
            "lattice": (L1, L2),
            "cone_index": (ip, jp),
            "hermitian_scale": float(hermitian_scale),
            "hermitian": "theta-green",
            "psi_max": float(psi.max()),
            "lelong_capture": float(capture),
            "green_cross_check": cross,
        }
    )
    return geom


# ---- shared helpers ---------------------------------------------------------


def with_volume_shift(geometry: DiscreteGeometry, f) -> DiscreteGeometry:
    """Geometry with the volume form replaced by e^f Omega.

    The Ricci density shifts by exactly -ddbar f at the discrete level,
    so the twist changes by a field of exact zero integral and the class
    path is untouched.
    """
    f = np.asarray(f, dtype=float)
    shift = geometry.ddbar(f)
    return replace(
        geometry,
        omega_dens=geometry.omega_dens * np.exp(f),
        ric_omega=geometry.ric_omega - shift,
        twist_density=geometry.twist_density - shift,
    )


def prolong_field(coarse: DiscreteGeometry, fine: DiscreteGeometry, phi) -> np.ndarray:
    """Transfer a potential from a coarse grid to a 2x-refined one.

    Torus fields move spectrally (zero-padded FFT, exact for resolved
    modes); football fields are interpolated in theta with a cubic fit.
    """
    if coarse.kind != fine.kind:
        raise DomainError("prolongation needs matching geometry kinds")
    if fine.N != 2 * coarse.N:
        raise DomainError("prolongation implemented for exact 2x refinement")
    phi = np.asarray(phi, dtype=float)

    if coarse.kind == "torus_cone":
        n = coarse.N
        spec = np.fft.fft2(phi)
        big = np.zeros((2 * n, 2 * n), dtype=complex)
        half = n // 2
        lo = half  # modes 0..half-1
        hi = half - 1  # modes -(half-1)..-1; the Nyquist mode is dropped
        big[:lo, :lo] = spec[:lo, :lo]
        big[:lo, -hi:] = spec[:lo, -hi:]
        big[-hi:, :lo] = spec[-hi:, :lo]
        big[-hi:, -hi:] = spec[-hi:, -hi:]
        return np.real(np.fft.ifft2(big)) * 4.0

    # football: cubic interpolation of cell-center samples, with even
    # reflection at the poles (rotationally symmetric potentials are
    # even in theta about 0 and pi)
    tc = coarse.theta
    tf = fine.theta
    t_ext = np.concatenate(([-tc[0]], tc, [2 * math.pi - tc[-1]]))
    p_ext = np.concatenate(([phi[0]], phi, [phi[-1]]))
    out = np.empty_like(tf)
    idx = np.clip(np.searchsorted(t_ext, tf) - 1, 1, len(t_ext) - 3)
    for m, (j, t) in enumerate(zip(idx, tf)):
        ts = t_ext[j - 1 : j + 3]
        ps = p_ext[j - 1 : j + 3]
        w = np.ones(4)
        for a in range(4):
            for bidx in range(4):
                if a != bidx:
                    w[a] *= (t - ts[bidx]) / (ts[a] - ts[bidx])
        out[m] = float(np.dot(w, ps))
    return out
