"""Poincare sections of the level H = e, return maps and twist diagnostics.

A section is the surface theta_axis = theta0 inside an energy level, with the
transverse pair (theta_other, r_other) as coordinates.  All computations are
written for axis 1 (section theta1 = theta0, coordinates (theta2, r2), on-shell
lift r1 = R1(theta, r2) on the branch with dH/dr1 > 0); axis-2 sections are
obtained by relabeling the coordinate pairs, and the negative-frequency
domains by the reflection (theta, r) -> (-theta, -r), rather than by separate
code paths.

The return is the first crossing after one full unit revolution of the lifted
section angle, which normalizes the return time as int_0^tau thetadot = 1.
The default energy level is e = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstructionError,
    DomainExitError,
    InsufficientSamplingError,
    ShellSolveError,
)
from .flow import _midpoint_step, _refine_crossing
from .hamiltonians import (
    GeodesicHamiltonian,
    NearIntegrableHamiltonian,
    PhaseState,
    QuadraticForm,
    wrap_angle,
)


@dataclass(frozen=True)
class SectionPoint:
    """Coordinates (theta2, r2) on a section; theta2 is reduced mod 1."""

    theta2: float
    r2: float

    def __post_init__(self):
        object.__setattr__(self, "theta2", float(wrap_angle(self.theta2)))
        object.__setattr__(self, "r2", float(self.r2))


@dataclass(frozen=True)
class ReturnSample:
    """One application of the numeric return map; return_time > 0."""

    point: SectionPoint
    image: SectionPoint
    return_time: float
    angle_advance: float = 0.0  # unwrapped theta2 advance along the orbit


@dataclass(frozen=True)
class SectionDomain:
    """A section theta_axis = theta0 with a guarded transverse action window.

    ``alpha`` is the lower bound on the lifted angle velocity: the whole
    window must project into the region where dH/dr_axis > alpha, and the
    return-map integration aborts if the velocity ever falls below alpha/2.
    """

    theta0: float
    energy: float = 1.0
    alpha: float = 0.1
    window: tuple = (-0.5, 0.5)
    axis: int = 1

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ConstructionError("alpha must be positive")
        lo, hi = self.window
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConstructionError("window must be a finite interval")
        if self.axis not in (1, 2):
            raise ConstructionError("axis must be 1 or 2")

    def as_axis1(self):
        return SectionDomain(self.theta0, self.energy, self.alpha, self.window, 1)

    def validate(self, H, n_r=17, n_theta=8):
        """Check the window sits inside the positive-frequency domain of H."""
        Hx, _ = _axis1_view(H, self)
        lo, hi = self.window
        thetas = [(self.theta0, t2 / n_theta) for t2 in range(n_theta)]
        for r2 in np.linspace(lo, hi, n_r):
            for th in thetas:
                r1 = r1_on_shell(Hx, th, float(r2), self.energy)
                speed = Hx.field_scalar(th[0], th[1], r1, float(r2))[0]
                if not speed > self.alpha:
                    raise ConstructionError(
                        f"window point r2={r2} has angle speed {speed} <= alpha={self.alpha}"
                    )
        return self


def _axis1_view(H, dom: SectionDomain):
    """Return (H', dom') with the section axis relabeled to 1."""
    if dom.axis == 1:
        return H, dom
    return H.swapped(), dom.as_axis1()


# ---------------------------------------------------------------------------
# On-shell solve


def _quadratic_guess(H, th1, th2, r2, e):
    """Positive-branch root of the momentum-quadratic part of H."""
    if isinstance(H, NearIntegrableHamiltonian):
        a, b, c = H.h.a, H.h.b, H.h.c
    elif isinstance(H, GeodesicHamiltonian):
        a, c2, b = H._inv(th1, th2)
        a, b, c = float(a), float(b), 2.0 * float(c2)
    else:
        raise ShellSolveError(f"no on-shell guess for Hamiltonian type {type(H)!r}")
    disc = c * c * r2 * r2 - 4.0 * a * (b * r2 * r2 - e)
    if disc <= 0.0:
        raise ShellSolveError(f"no real root on the shell at r2={r2}, e={e}")
    return (-c * r2 + math.sqrt(disc)) / (2.0 * a)


def r1_on_shell(H, theta, r2, e=1.0, tol=1e-12, max_iter=50):
    """Solve H(theta, r1, r2) = e for r1 on the branch with dH/dr1 > 0.

    Newton from the quadratic-part root; residual <= 1e-12 on success.
    """
    th1, th2 = float(theta[0]), float(theta[1])
    r2 = float(r2)
    r1 = _quadratic_guess(H, th1, th2, r2, e)
    for _ in range(max_iter):
        res = H.value_scalar(th1, th2, r1, r2) - e
        if abs(res) <= tol:
            slope = H.field_scalar(th1, th2, r1, r2)[0]
            if slope <= 0.0:
                raise ShellSolveError("Newton converged on the wrong branch (dH/dr1 <= 0)")
            return r1
        slope = H.field_scalar(th1, th2, r1, r2)[0]
        if slope == 0.0:
            raise ShellSolveError("zero dH/dr1 during the on-shell solve")
        r1 = r1 - res / slope
    raise ShellSolveError(f"on-shell Newton did not reach residual {tol}")


# ---------------------------------------------------------------------------
# Analytic (unperturbed) return map


def _positive_root(h: QuadraticForm, r2, e):
    a, b, c = h.a, h.b, h.c
    disc = c * c * r2 * r2 - 4.0 * a * (b * r2 * r2 - e)
    if disc <= 0.0:
        raise ShellSolveError(f"level h = {e} has no point over r2 = {r2}")
    return (-c * r2 + math.sqrt(disc)) / (2.0 * a)


def analytic_angle_advance(h: QuadraticForm, r2, e=1.0):
    """Unwrapped theta2 advance of the unperturbed return map at action r2."""
    R = _positive_root(h, r2, e)
    return (h.c * R + 2.0 * h.b * r2) / (2.0 * h.a * R + h.c * r2)


def analytic_return_time(h: QuadraticForm, r2, e=1.0):
    """Time of one unit revolution of theta1: 1 / thetadot1 on the shell."""
    R = _positive_root(h, r2, e)
    return 1.0 / (2.0 * h.a * R + h.c * r2)


def analytic_return_map(h: QuadraticForm, p: SectionPoint, e=1.0) -> SectionPoint:
    """Closed form of the unperturbed return map: r2 is frozen, theta2 shears."""
    return SectionPoint(p.theta2 + analytic_angle_advance(h, p.r2, e), p.r2)


def twist_derivative_closed(h: QuadraticForm, r2, e=1.0):
    """Exact d(angle advance)/d r2 of the unperturbed return map.

    Equals (4ab - c^2)(R - R' r2) / (2aR + c r2)^2 with
    R' = -(2b r2 + c R)/(2aR + c r2), which simplifies to the manifestly
    positive 2 e (4ab - c^2) / (2aR + c r2)^3.
    """
    R = _positive_root(h, r2, e)
    den = 2.0 * h.a * R + h.c * r2
    Rp = -(2.0 * h.b * r2 + h.c * R) / den
    return h.det4 * (R - Rp * r2) / (den * den)


# ---------------------------------------------------------------------------
# Numeric return map


def numeric_return_map(H, dom: SectionDomain, p: SectionPoint, step=1e-3) -> ReturnSample:
    """Lift p onto the shell, flow until theta_axis has advanced one unit, project back.

    Aborts with DomainExitError when the lifted angle velocity drops to
    alpha/2 (the orbit left the covered domain).
    """
    Hx, dx = _axis1_view(H, dom)
    r1 = r1_on_shell(Hx, (dx.theta0, p.theta2), p.r2, dx.energy)
    y = (float(dx.theta0), float(p.theta2), float(r1), float(p.r2))
    target = y[0] + 1.0
    guard = 0.5 * dx.alpha * step

    t = 0.0
    # generous horizon: the guard bounds the revolution time by 2/alpha
    max_steps = int(math.ceil(2.0 / (dx.alpha * step))) + 2
    for _ in range(max_steps):
        ynew = _midpoint_step(Hx, y, step, t=t)
        if ynew[0] - y[0] < guard:
            raise DomainExitError(
                f"theta1 speed fell below alpha/2 = {0.5 * dx.alpha} near t={t}"
            )
        if ynew[0] >= target:
            delta, z = _refine_crossing(Hx, y, step, target, 0)
            tau = t + delta
            image = SectionPoint(z[1], z[3])
            return ReturnSample(p, image, tau, angle_advance=z[1] - float(p.theta2))
        y = ynew
        t += step
    raise DomainExitError("no return within the 2/alpha horizon")


# ---------------------------------------------------------------------------
# Twist diagnostics


@dataclass
class TwistReport:
    """Finite-difference twist of the return-map angle over a section grid."""

    grid: list  # entries (SectionPoint, twist_fd, twist_closed or None)
    min_twist: float
    max_richardson_err: float
    delta: float

    def to_json_dict(self):
        return {
            "delta": self.delta,
            "min_twist": self.min_twist,
            "max_richardson_err": self.max_richardson_err,
            "grid": [
                {
                    "theta2": p.theta2,
                    "r2": p.r2,
                    "twist_fd": fd,
                    "twist_closed": closed,
                }
                for p, fd, closed in self.grid
            ],
        }


def _wrapped_diff(b, a):
    d = b - a
    return d - math.floor(d + 0.5)


def _fd_twist(H, dom, p, delta, step):
    up = numeric_return_map(H, dom, SectionPoint(p.theta2, p.r2 + delta), step)
    dn = numeric_return_map(H, dom, SectionPoint(p.theta2, p.r2 - delta), step)
    return _wrapped_diff(up.image.theta2, dn.image.theta2) / (2.0 * delta)


def twist_report(H, dom: SectionDomain, grid, delta=1e-4, step=1e-3) -> TwistReport:
    """Central-difference twist on a grid, with a Richardson check at delta/2.

    ``grid`` is a list of SectionPoints or an (n_theta2, n_r2) pair; the grid
    is then uniform over [0,1) x window (shrunk by delta so the stencils stay
    inside).  The closed-form column is filled for unperturbed systems.
    """
    if isinstance(grid, tuple):
        n_t, n_r = grid
        lo, hi = dom.window
        lo, hi = lo + 2.0 * delta, hi - 2.0 * delta
        grid = [
            SectionPoint(i / n_t, lo + (hi - lo) * j / (n_r - 1) if n_r > 1 else 0.5 * (lo + hi))
            for i in range(n_t)
            for j in range(n_r)
        ]

    closed_h = None
    if isinstance(H, NearIntegrableHamiltonian) and H.epsilon == 0.0:
        closed_h = H.h if dom.axis == 1 else H.h.swapped()

    entries = []
    max_rich = 0.0
    for p in grid:
        fd = _fd_twist(H, dom, p, delta, step)
        fd_half = _fd_twist(H, dom, p, 0.5 * delta, step)
        max_rich = max(max_rich, abs(fd - fd_half))
        closed = twist_derivative_closed(closed_h, p.r2, dom.energy) if closed_h else None
        entries.append((p, fd, closed))
    min_twist = min(fd for _, fd, _ in entries)
    return TwistReport(entries, min_twist, max_rich, delta)


# ---------------------------------------------------------------------------
# Birkhoff graph test for invariant circles


@dataclass
class BirkhoffVerdict:
    essential: bool
    graph: bool
    lipschitz: float
    max_residual: float
    winding: int
    coverage: float


def _tour_order(th, r):
    """Greedy nearest-neighbour tour through the points (curve reconstruction)."""
    n = len(th)
    scale = max(float(np.max(r) - np.min(r)), 1e-9)
    rs = r / scale
    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=int)
    cur = 0
    visited[0] = True
    order[0] = 0
    for i in range(1, n):
        dth = np.abs(th - th[cur])
        dth = np.minimum(dth, 1.0 - dth)
        dr = rs - rs[cur]
        d2 = dth * dth + dr * dr
        d2[visited] = np.inf
        cur = int(np.argmin(d2))
        visited[cur] = True
        order[i] = cur
    return order


def birkhoff_graph_test(circle, bins=128, window=None, spread_tol=None, min_coverage=0.9):
    """Essentialness, graph property and Lipschitz bound of an invariant circle.

    ``circle`` is a sequence of SectionPoints (or an (N, 2) array of
    (theta2, r2)), e.g. return-map iterates.  Needs >= 256 points.

    * essential: the winding number of theta2 along the reconstructed curve
      is +-1;
    * graph: >= ``min_coverage`` of the theta2 bins are occupied and every
      occupied bin has r2 spread strictly below the tolerance
      (default 1e-3 * window);
    * lipschitz: max slope between medians of adjacent occupied bins.

    A winding +-1 circle with insufficient bin coverage cannot be certified
    either way and raises InsufficientSamplingError; a winding-0 point set is
    conclusively not an essential graph and is reported as such.
    """
    if len(circle) and isinstance(circle[0], SectionPoint):
        pts = np.array([[p.theta2, p.r2] for p in circle])
    else:
        pts = np.asarray(circle, dtype=float)
    n = pts.shape[0]
    if n < 256:
        raise InsufficientSamplingError(f"need >= 256 circle points, got {n}")
    th = np.mod(pts[:, 0], 1.0)
    r = pts[:, 1]

    order = _tour_order(th, r)
    tho = th[order]
    steps = np.diff(np.concatenate([tho, tho[:1]]))
    steps -= np.floor(steps + 0.5)
    winding = int(round(float(np.sum(steps))))
    essential = abs(winding) == 1

    idx = np.minimum((th * bins).astype(int), bins - 1)
    occupied = np.unique(idx)
    coverage = len(occupied) / bins

    if spread_tol is None:
        w = window if window is not None else max(float(r.max() - r.min()), 0.0)
        spread_tol = 1e-3 * w + 1e-12

    spreads = np.array([r[idx == b].max() - r[idx == b].min() for b in occupied])
    medians = np.array([np.median(r[idx == b]) for b in occupied])
    max_residual = float(spreads.max()) if len(spreads) else 0.0

    if not essential and coverage < min_coverage:
        return BirkhoffVerdict(False, False, float("nan"), max_residual, winding, coverage)
    if coverage < min_coverage:
        raise InsufficientSamplingError(
            f"only {coverage:.0%} of theta2 bins occupied; cannot certify the circle"
        )

    # slope between medians of consecutive occupied bins (wrapped)
    lip = 0.0
    m = len(occupied)
    for i in range(m):
        j = (i + 1) % m
        dth = (occupied[j] - occupied[i]) % bins / bins
        if dth == 0.0:
            continue
        dth = min(dth, 1.0 - dth) if dth > 0.5 else dth
        lip = max(lip, abs(medians[j] - medians[i]) / dth)

    graph = coverage >= min_coverage and max_residual < spread_tol
    return BirkhoffVerdict(essential, graph, lip, max_residual, winding, coverage)


def section_dataset_to_csv(samples, path):
    """Write return samples as CSV: theta2, r2, theta2', r2', return_time."""
    with open(path, "w", newline="") as fh:
        fh.write("theta2,r2,theta2_image,r2_image,return_time\n")
        for s in samples:
            fh.write(
                f"{s.point.theta2!r},{s.point.r2!r},"
                f"{s.image.theta2!r},{s.image.r2!r},{s.return_time!r}\n"
            )
