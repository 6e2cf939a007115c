"""Cohomology-level flow arithmetic.

The flow moves Kahler classes along straight lines, so everything here
is exact linear algebra.  On a surface (complex dimension 1) a class is
determined by its degree; degrees are stored in units of 2*pi, which
makes every geometric quantity of interest rational:

* a point divisor has degree 1,
* the canonical normalization gives deg c1(M) = euler characteristic,
* a sphere of area 4*pi has degree 2.

Rational inputs therefore stay rational all the way through
``max_existence_time``.  Irrational cone angles may be passed as floats
and simply demote the arithmetic to float64.

In dimension >= 2 a class is a coordinate vector over a user-declared
basis with an explicit intersection form; positivity is tested
Nakai-Moishezon style against a declared list of curve classes and the
top self-intersection.  Without curve data those tests refuse with
:class:`~conicflow.errors.AmbiguousPositivity` rather than guess.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

from conicflow.errors import AmbiguousPositivity, DomainError

__all__ = [
    "CohomClass",
    "ClassFlowPath",
    "DeltaInterval",
    "IntersectionForm",
    "class_at",
    "is_big",
    "is_nef",
    "kodaira_delta_range",
    "max_existence_time",
    "scaled_normalized_class_at",
]

Number = Union[int, float, Fraction]

TAU = 2.0 * math.pi  # degrees are stored as multiples of this


def _as_number(x) -> Number:
    """Coerce to Fraction when that is exact, keep floats as floats."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return x
    raise DomainError(f"not a usable number: {x!r}")


@dataclass(frozen=True)
class IntersectionForm:
    """Symmetric intersection pairing over a declared basis (dim >= 2).

    ``matrix[i][j]`` is the pairing of basis class i with basis class j.
    ``curves`` lists coordinate vectors of the curve classes positivity
    is tested against.
    """

    basis: tuple
    matrix: tuple
    curves: tuple = ()

    def __post_init__(self):
        m = len(self.basis)
        mat = tuple(tuple(_as_number(v) for v in row) for row in self.matrix)
        if len(mat) != m or any(len(row) != m for row in mat):
            raise DomainError("intersection matrix shape does not match basis")
        for i in range(m):
            for j in range(m):
                if mat[i][j] != mat[j][i]:
                    raise DomainError("intersection matrix must be symmetric")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(
            self, "curves", tuple(tuple(_as_number(v) for v in c) for c in self.curves)
        )

    def pair(self, v: Sequence[Number], w: Sequence[Number]) -> Number:
        total = Fraction(0)
        for i, vi in enumerate(v):
            if vi == 0:
                continue
            row = self.matrix[i]
            for j, wj in enumerate(w):
                if wj == 0:
                    continue
                total = total + vi * row[j] * wj
        return total


@dataclass(frozen=True)
class CohomClass:
    """A (1,1)-class: a degree (dim 1) or a basis vector (dim >= 2)."""

    dim: int
    rep: object
    form: Optional[IntersectionForm] = None

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dim must be >= 1")
        if self.dim == 1:
            object.__setattr__(self, "rep", _as_number(self.rep))
        else:
            if self.form is None:
                vec = tuple(_as_number(v) for v in self.rep)
            else:
                vec = tuple(_as_number(v) for v in self.rep)
                if len(vec) != len(self.form.basis):
                    raise DomainError("vector length does not match basis")
            object.__setattr__(self, "rep", vec)

    # -- exact linear algebra -------------------------------------------------

    def _check_compatible(self, other: "CohomClass"):
        if self.dim != other.dim:
            raise DomainError("classes live on different-dimensional manifolds")
        if self.dim >= 2 and self.form is not other.form and self.form != other.form:
            raise DomainError("classes use different intersection forms")

    def __add__(self, other: "CohomClass") -> "CohomClass":
        self._check_compatible(other)
        if self.dim == 1:
            return CohomClass(1, self.rep + other.rep)
        vec = tuple(a + b for a, b in zip(self.rep, other.rep))
        return CohomClass(self.dim, vec, self.form)

    def __sub__(self, other: "CohomClass") -> "CohomClass":
        return self + other.scale(-1)

    def scale(self, c: Number) -> "CohomClass":
        c = _as_number(c)
        if self.dim == 1:
            return CohomClass(1, c * self.rep)
        return CohomClass(self.dim, tuple(c * v for v in self.rep), self.form)

    # -- pairings -------------------------------------------------------------

    @property
    def degree(self) -> Number:
        """Degree in units of 2*pi (dim 1 only)."""
        if self.dim != 1:
            raise DomainError("degree is only defined in dimension 1")
        return self.rep

    @property
    def area(self) -> float:
        """Absolute degree/area, i.e. 2*pi times the stored rational."""
        return TAU * float(self.degree)

    def pair(self, other: "CohomClass") -> Number:
        if self.dim == 1:
            raise DomainError("pairings need dim >= 2; use degree instead")
        self._check_compatible(other)
        if self.form is None:
            raise AmbiguousPositivity("no intersection form declared")
        return self.form.pair(self.rep, other.rep)

    def top_self_intersection(self) -> Number:
        if self.dim != 2:
            raise DomainError("top self-intersection implemented for dim 2 only")
        if self.form is None:
            raise AmbiguousPositivity("no intersection form declared")
        return self.form.pair(self.rep, self.rep)


@dataclass(frozen=True)
class ClassFlowPath:
    """The straight-line class path of the flow.

    ``omega0`` is the initial Kahler class, ``canonical_dual`` is c1(M)
    (note: c1, not K_M), and ``divisors`` is a tuple of
    ``(CohomClass, beta)`` pairs with cone angles 2*pi*beta.
    """

    omega0: CohomClass
    canonical_dual: CohomClass
    divisors: tuple = ()

    def __post_init__(self):
        divs = []
        for cls, beta in self.divisors:
            beta = _as_number(beta)
            if not (0 < beta < 1):
                raise DomainError(f"cone parameter beta={beta} outside (0, 1)")
            divs.append((cls, beta))
        object.__setattr__(self, "divisors", tuple(divs))

    @property
    def dim(self) -> int:
        return self.omega0.dim

    @property
    def twist(self) -> CohomClass:
        """c1(M) - sum_i (1 - beta_i) [D_i]; the class the flow subtracts."""
        tw = self.canonical_dual
        for cls, beta in self.divisors:
            tw = tw - cls.scale(1 - beta)
        return tw

    @classmethod
    def surface(cls, euler_char: int, area_over_2pi, betas=()) -> "ClassFlowPath":
        """Model surface path: chi, initial area (in 2*pi units), cone betas."""
        omega0 = CohomClass(1, area_over_2pi)
        c1 = CohomClass(1, euler_char)
        divisors = tuple((CohomClass(1, 1), b) for b in betas)
        return cls(omega0, c1, divisors)


def class_at(path: ClassFlowPath, t, mode: str = "unnormalized") -> CohomClass:
    """Class of the evolving metric at time t, as an exact combination.

    unnormalized: [omega0] - t * twist
    normalized:   e^-t [omega0] + (1 - e^-t) * (-twist)
    """
    if mode == "unnormalized":
        t = _as_number(t)
        return path.omega0 - path.twist.scale(t)
    if mode == "normalized":
        w = math.exp(-float(t))
        return path.omega0.scale(w) - path.twist.scale(1.0 - w)
    raise DomainError(f"unknown mode {mode!r}")


def scaled_normalized_class_at(path: ClassFlowPath, s) -> CohomClass:
    """(1+s) times the normalized class at t = log(1+s), computed exactly.

    Substituting e^-t = 1/(1+s) keeps the arithmetic rational, so the
    scaling correspondence with the unnormalized path can be asserted to
    exactness rather than to float tolerance.
    """
    s = _as_number(s)
    if s <= -1:
        raise DomainError("need s > -1")
    w = 1 / (Fraction(1) + s) if isinstance(s, Fraction) else 1.0 / (1.0 + s)
    inner = path.omega0.scale(w) - path.twist.scale(1 - w)
    return inner.scale(1 + s)


def _positive(x) -> bool:
    return x > 0


def is_big(c: CohomClass, curves=None) -> bool:
    """Bigness at the intersection-number level.

    dim 1: degree > 0.  dim 2: top self-intersection > 0 together with a
    strictly positive pairing against at least one declared curve.
    """
    if c.dim == 1:
        return _positive(c.degree)
    curves = _curves_of(c, curves)
    top = c.top_self_intersection()
    pair_pos = any(_positive(c.form.pair(c.rep, cv)) for cv in curves)
    return _positive(top) and pair_pos


def is_nef(c: CohomClass, curves=None) -> bool:
    """Nefness: degree >= 0 (dim 1) or all declared curve pairings >= 0."""
    if c.dim == 1:
        return c.degree >= 0
    curves = _curves_of(c, curves)
    return all(c.form.pair(c.rep, cv) >= 0 for cv in curves)


def _curves_of(c: CohomClass, curves):
    if c.dim < 2:
        raise DomainError("curve pairings need dim >= 2")
    if c.form is None:
        raise AmbiguousPositivity("no intersection form declared for this class")
    got = tuple(curves) if curves is not None else c.form.curves
    if not got:
        raise AmbiguousPositivity(
            "positivity in dim >= 2 needs a declared basis of curve classes"
        )
    return got


def max_existence_time(path: ClassFlowPath, mode: str = "unnormalized"):
    """Sup of the window on which the class path stays positive.

    Returns an exact Fraction when the inputs are rational, float
    otherwise, and ``math.inf`` when no constraint ever binds.  The
    normalized window is the log-reparameterized unnormalized one.
    """
    T = _max_time_unnormalized(path)
    if mode == "unnormalized":
        return T
    if mode == "normalized":
        return math.inf if T == math.inf else math.log1p(float(T))
    raise DomainError(f"unknown mode {mode!r}")


def _max_time_unnormalized(path: ClassFlowPath):
    if path.dim == 1:
        d0 = path.omega0.degree
        if not _positive(d0):
            raise DomainError("initial class must be positive (degree > 0)")
        dtw = path.twist.degree
        if dtw <= 0:
            return math.inf
        return d0 / dtw

    if path.dim != 2:
        raise DomainError("dim >= 3 class positivity is out of scope")
    form = path.omega0.form
    if form is None or not form.curves:
        raise AmbiguousPositivity(
            "dim 2 maximal time needs an intersection form with declared curves"
        )
    a = path.omega0.rep
    b = path.twist.rep
    bounds = []
    # curve constraints are affine in t: (a - t b) . C > 0
    for cv in form.curves:
        pa, pb = form.pair(a, cv), form.pair(b, cv)
        if pa <= 0:
            raise DomainError("initial class not positive against declared curves")
        if pb > 0:
            bounds.append(pa / pb)
    # top self-intersection is quadratic in t
    qa = form.pair(a, a)
    qb = form.pair(a, b)
    qc = form.pair(b, b)
    if qa <= 0:
        raise DomainError("initial class has nonpositive top self-intersection")
    bounds.extend(_positive_roots(qc, -2 * qb, qa))
    return min(bounds) if bounds else math.inf


def _positive_roots(a, b, c):
    """Positive real roots of a t^2 + b t + c, exact where possible."""
    if a == 0:
        if b == 0:
            return []
        r = -c / b
        return [r] if r > 0 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    root = _exact_sqrt(disc)
    r1 = (-b - root) / (2 * a)
    r2 = (-b + root) / (2 * a)
    return sorted(r for r in (r1, r2) if r > 0)


def _exact_sqrt(x):
    """sqrt of a nonnegative Fraction, exact when it is a perfect square."""
    if isinstance(x, Fraction):
        pn, pd = x.numerator, x.denominator
        rn, rd = math.isqrt(pn), math.isqrt(pd)
        if rn * rn == pn and rd * rd == pd:
            return Fraction(rn, rd)
        return math.sqrt(pn / pd)
    return math.sqrt(x)


@dataclass(frozen=True)
class DeltaInterval:
    """An open interval of admissible perturbation sizes delta."""

    lo: object = None
    hi: object = None
    empty: bool = False

    def __contains__(self, x) -> bool:
        if self.empty:
            return False
        hi_ok = True if self.hi is None else x < self.hi
        return x > self.lo and hi_ok

    @property
    def upper(self):
        return math.inf if self.hi is None else self.hi


EMPTY_RANGE = DeltaInterval(empty=True)


def kodaira_delta_range(L: CohomClass, E: CohomClass, curves=None) -> DeltaInterval:
    """Admissible delta > 0 with L - delta E positive against the data.

    dim 1: positivity is a single degree inequality, so the interval is
    exact.  dim 2: linear curve inequalities are intersected with the
    top-self-intersection quadratic; a disconnected feasible set raises
    AmbiguousPositivity rather than silently picking a component.  A
    feasible set that excludes every delta > 0 comes back as the flagged
    ``EMPTY_RANGE`` value, not as an exception.
    """
    L._check_compatible(E)
    if L.dim == 1:
        if L.degree <= 0:
            return EMPTY_RANGE
        dE = E.degree
        if dE <= 0:
            return DeltaInterval(lo=Fraction(0), hi=None)
        return DeltaInterval(lo=Fraction(0), hi=L.degree / dE)

    if L.dim != 2:
        raise DomainError("kodaira_delta_range implemented for dim 1 and 2")
    curves = _curves_of(L, curves)
    lo, hi = Fraction(0), None

    def _cap(new_hi):
        nonlocal hi
        if hi is None or new_hi < hi:
            hi = new_hi

    def _raise_floor(new_lo):
        nonlocal lo
        if new_lo > lo:
            lo = new_lo

    form = L.form
    for cv in curves:
        pa, pb = form.pair(L.rep, cv), form.pair(E.rep, cv)
        # pa - delta pb > 0
        if pb > 0:
            if pa <= 0:
                return EMPTY_RANGE
            _cap(pa / pb)
        elif pb < 0:
            if pa <= 0:
                _raise_floor(pa / pb)
        else:
            if pa <= 0:
                return EMPTY_RANGE

    # quadratic: (L - dE)^2 = L.L - 2 d L.E + d^2 E.E > 0
    qa = form.pair(E.rep, E.rep)
    qb = -2 * form.pair(L.rep, E.rep)
    qc = form.pair(L.rep, L.rep)
    window = _quadratic_positive_window(qa, qb, qc, lo, hi)
    if window is None:
        return EMPTY_RANGE
    lo, hi = window
    if hi is not None and hi <= lo:
        return EMPTY_RANGE
    return DeltaInterval(lo=lo, hi=hi)


def _quadratic_positive_window(a, b, c, lo, hi):
    """Intersect {q(d) > 0} with the interval (lo, hi); None if empty.

    Raises AmbiguousPositivity when the intersection is disconnected.
    """
    if a == 0 and b == 0:
        return (lo, hi) if c > 0 else None
    if a == 0:
        r = -c / b
        if b > 0:
            return (max(lo, r), hi)
        new_hi = r if hi is None else min(hi, r)
        return (lo, new_hi) if new_hi > lo else None

    disc = b * b - 4 * a * c
    if disc <= 0:
        # definite sign everywhere: the sign of a decides
        return (lo, hi) if a > 0 else None
    root = _exact_sqrt(disc)
    r1 = (-b - root) / (2 * a)
    r2 = (-b + root) / (2 * a)
    r1, r2 = (r1, r2) if r1 <= r2 else (r2, r1)
    if a < 0:
        # positive strictly between the roots
        new_lo = max(lo, r1)
        new_hi = r2 if hi is None else min(hi, r2)
        return (new_lo, new_hi) if (new_hi is None or new_hi > new_lo) else None
    # a > 0: positive outside [r1, r2]; two candidate components
    left_hi = r1 if hi is None else min(hi, r1)
    left = (lo, left_hi) if left_hi > lo else None
    right_lo = max(lo, r2)
    right = (right_lo, hi) if (hi is None or hi > right_lo) else None
    if left is not None and right is not None:
        raise AmbiguousPositivity(
            "feasible delta set is disconnected; refusing to pick a component"
        )
    return left if left is not None else right
