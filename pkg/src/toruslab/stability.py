"""Periodic orbits, Floquet multipliers, and Jacobi-field conjugate points.

The nontrivial multiplier pair of a closed orbit is extracted by reducing the
4x4 monodromy to the 2-plane inside the energy level that is transverse to the
flow direction (raw 4x4 eigensolves mix the trivial and nontrivial pairs near
parabolic orbits).  Volume conservation forces the pair to multiply to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMonodromyError, DomainError, NoOrbitError, ToruslabError
from .flow import Trajectory, _midpoint_step, integrate, tangent_flow
from .hamiltonians import GeodesicHamiltonian, MetricField, PhaseState, gaussian_curvature
from .sections import SectionDomain, SectionPoint, _axis1_view, numeric_return_map, r1_on_shell

CLASS_TOL = 1e-4


@dataclass(frozen=True)
class PeriodicOrbit:
    """A refined closed orbit: residual = |phi_T(x0) - x0| in phase distance."""

    x0: PhaseState
    period: float
    residual: float


@dataclass(frozen=True)
class FloquetReport:
    """Nontrivial multiplier pair of a closed orbit and its classification.

    ``bott_index_label`` is bookkeeping only (no integral Hessian is computed):
    elliptic orbits sit on index-0/2 critical circles, hyperbolic on index-1.
    """

    multipliers: tuple
    trivial_pair_error: float
    orbit_class: str  # elliptic | hyperbolic | parabolic
    product_error: float
    bott_index_label: str

    @property
    def rotation_angle(self):
        """|arg| of the leading multiplier (meaningful for elliptic orbits)."""
        lam = self.multipliers[0]
        return abs(math.atan2(lam.imag, lam.real))


def _wrap_periodic_residual(y_T, y_0):
    """phi_T(x)-x with angle components wrapped to the nearest integer shift."""
    d = np.asarray(y_T) - np.asarray(y_0)
    d[0] -= np.floor(d[0] + 0.5)
    d[1] -= np.floor(d[1] + 0.5)
    return d


def _grad_H(H, y):
    f = H.field_scalar(*y)
    return np.array([-f[2], -f[3], f[0], f[1]])


def refine_periodic(H, guess_x0: PhaseState, guess_T, step=1e-3, tol=1e-9, max_iter=50):
    """Newton refinement of a closed orbit of the (numerical) flow.

    Gauss-Newton on (x, T) -> phi_T(x) - x, augmented with a phase condition
    anchored at the initial guess and the energy constraint H(x) = H(guess).
    """
    if guess_T <= 0:
        raise NoOrbitError("period guess must be positive")
    x = np.array(guess_x0.as_array(), dtype=float)
    T = float(guess_T)
    X0 = np.array(H.field_scalar(*x))
    e0 = H.value_scalar(*x)
    x_anchor = x.copy()

    res0 = None
    for it in range(max_iter):
        tf = tangent_flow(H, PhaseState.from_array(x), T, step)
        d = _wrap_periodic_residual(tf.final_lifted, x)
        rnorm = float(np.linalg.norm(d))
        if res0 is None:
            res0 = rnorm
            if res0 > 0.1:
                raise NoOrbitError(f"initial residual {res0:.3g} > 0.1: guess out of basin")
        if rnorm <= tol:
            return PeriodicOrbit(PhaseState.from_array(x), T, rnorm)
        XT = np.array(H.field_scalar(*tf.final_lifted))
        gH = _grad_H(H, x)
        J = np.zeros((6, 5))
        J[0:4, 0:4] = tf.M - np.eye(4)
        J[0:4, 4] = XT
        J[4, 0:4] = X0
        J[5, 0:4] = gH
        F = np.concatenate([d, [X0 @ (x - x_anchor)], [H.value_scalar(*x) - e0]])
        delta, *_ = np.linalg.lstsq(J, -F, rcond=None)
        x = x + delta[0:4]
        T = T + float(delta[4])
        if T <= 0 or not np.all(np.isfinite(x)):
            raise NoOrbitError("Newton left the admissible region (T <= 0 or non-finite)")
    raise NoOrbitError(f"no convergence to residual {tol} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# Floquet analysis


def _reduced_monodromy(H, M, y0):
    """Restrict M to a 2-plane in ker(dH) transverse to the flow direction."""
    u1 = np.array(H.field_scalar(*y0))
    nu = np.linalg.norm(u1)
    g = _grad_H(H, y0)
    ng = np.linalg.norm(g)
    if nu == 0.0 or ng == 0.0:
        raise DegenerateMonodromyError("flow direction or energy gradient vanishes on the orbit")
    u1 = u1 / nu
    g = g / ng

    # orthonormal basis of ker(g . ) orthogonal to u1
    _, _, Vt = np.linalg.svd(np.vstack([g, u1]))
    w1, w2 = Vt[2], Vt[3]
    B = np.column_stack([u1, w1, w2, g])
    coords = np.linalg.solve(B, M @ np.column_stack([w1, w2]))
    A = coords[1:3, :]
    return A, u1, g


def floquet(H, orbit: PeriodicOrbit, step=1e-3, tol=CLASS_TOL) -> FloquetReport:
    """Multipliers of the monodromy over one period, trivial pair discarded."""
    y0 = tuple(float(v) for v in orbit.x0.as_array())
    tf = tangent_flow(H, orbit.x0, orbit.period, step)
    M = tf.M
    A, _, _ = _reduced_monodromy(H, M, y0)

    tr = float(A[0, 0] + A[1, 1])
    det = float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    disc = tr * tr - 4.0 * det
    if disc >= 0.0:
        s = math.sqrt(disc)
        lam = (complex((tr + s) / 2.0), complex((tr - s) / 2.0))
    else:
        s = math.sqrt(-disc)
        lam = (complex(tr / 2.0, s / 2.0), complex(tr / 2.0, -s / 2.0))
    # order by modulus, largest first
    if abs(lam[1]) > abs(lam[0]):
        lam = (lam[1], lam[0])

    # trivial pair: the two full-spectrum eigenvalues left after matching
    full = list(np.linalg.eigvals(M))
    for target in lam:
        j = int(np.argmin([abs(mu - target) for mu in full]))
        full.pop(j)
    trivial_err = max(abs(mu - 1.0) for mu in full)
    if trivial_err > 1e-2:
        raise DegenerateMonodromyError(
            f"trivial eigenvalue pair not identifiable (error {trivial_err:.3g})"
        )

    if disc >= 0.0:
        if max(abs(lam[0]), abs(lam[1])) > 1.0 + tol:
            cls, label = "hyperbolic", "1"
        else:
            cls, label = "parabolic", "n/a"
    else:
        mod = math.sqrt(abs(det))
        nonreal = abs(lam[0].imag) > tol * abs(lam[0])
        if nonreal and abs(mod - 1.0) <= tol:
            cls, label = "elliptic", "0 or 2"
        else:
            cls, label = "parabolic", "n/a"

    return FloquetReport(
        multipliers=lam,
        trivial_pair_error=float(trivial_err),
        orbit_class=cls,
        product_error=abs(lam[0] * lam[1] - 1.0),
        bott_index_label=label,
    )


# ---------------------------------------------------------------------------
# Jacobi fields along geodesics


def jacobi_conjugate_scan(g: MetricField, geodesic: Trajectory, L, step=1e-3):
    """Zeros in (0, L] of the Jacobi field y'' + K(gamma(s)) y = 0, y(0)=0, y'(0)=1.

    ``geodesic`` must be an orbit of the geodesic Hamiltonian of g (energy
    constant along the samples); it is re-integrated jointly with the Jacobi
    equation, with arclength s = 2 sqrt(e) t.
    """
    if geodesic.energy_drift > 1e-6:
        raise DomainError(
            f"input orbit is not a geodesic of g (energy drift {geodesic.energy_drift:.3g})"
        )
    H = GeodesicHamiltonian(g)
    e = H.value_scalar(*geodesic.states[0])
    if e <= 0:
        raise DomainError("geodesic has non-positive energy")
    speed = 2.0 * math.sqrt(e)
    T = L / speed

    y = tuple(float(v) for v in geodesic.states[0])
    jac = np.array([0.0, speed])  # (y, dy/dt); dy/ds = 1 at s=0
    I2 = np.eye(2)
    zeros = []
    t = 0.0
    n_full = int(math.floor(T / step + 1e-9))
    rem = T - n_full * step
    plan = [step] * n_full + ([rem] if rem > 1e-12 * max(1.0, T) else [])

    def propagate(state, jj, h):
        znew = _midpoint_step(H, state, h)
        mid = tuple(0.5 * (a + b) for a, b in zip(state, znew))
        K = gaussian_curvature(g, (mid[0], mid[1]))
        B = np.array([[0.0, 1.0], [-K * speed * speed, 0.0]])
        jnew = np.linalg.solve(I2 - 0.5 * h * B, (I2 + 0.5 * h * B) @ jj)
        return znew, jnew

    for h in plan:
        ynew, jac_new = propagate(y, jac, h)
        if t > 0.0 or jac[0] != 0.0:
            crossed = jac[0] * jac_new[0] < 0.0 or (jac_new[0] == 0.0 and jac[0] != 0.0)
        else:
            crossed = False
        if crossed:
            lo, hi = 0.0, h
            ylo = jac[0]
            for _ in range(60):
                mid_h = 0.5 * (lo + hi)
                _, jm = propagate(y, jac, mid_h)
                if jm[0] * ylo <= 0.0:
                    hi = mid_h
                else:
                    lo = mid_h
                if hi - lo < 1e-13:
                    break
            zeros.append(speed * (t + 0.5 * (lo + hi)))
        y, jac = ynew, jac_new
        t += h
    return zeros


# ---------------------------------------------------------------------------
# Hyperbolic-orbit search from section-map fixed points


def _section_map_iterate(H, dom, p, q, step):
    pt = p
    tau = 0.0
    adv = 0.0
    for _ in range(q):
        s = numeric_return_map(H, dom, pt, step)
        tau += s.return_time
        adv += s.angle_advance
        pt = s.image
    return pt, tau, adv


def _section_newton(H, dom, p0, q, step, tol=1e-10, max_iter=15, fd=1e-7):
    p = np.array([p0.theta2, p0.r2])
    lo, hi = dom.window
    for _ in range(max_iter):
        img, tau, _ = _section_map_iterate(H, dom, SectionPoint(p[0], p[1]), q, step)
        F = np.array(
            [
                (img.theta2 - p[0]) - math.floor((img.theta2 - p[0]) + 0.5),
                img.r2 - p[1],
            ]
        )
        if np.linalg.norm(F) <= tol:
            return SectionPoint(p[0], p[1]), tau
        J = np.zeros((2, 2))
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = fd
            a, _, _ = _section_map_iterate(H, dom, SectionPoint(*(p + dp)), q, step)
            b, _, _ = _section_map_iterate(H, dom, SectionPoint(*(p - dp)), q, step)
            J[0, j] = ((a.theta2 - b.theta2) - math.floor((a.theta2 - b.theta2) + 0.5)) / (2 * fd)
            J[1, j] = (a.r2 - b.r2) / (2 * fd)
        J -= np.eye(2)
        delta, *_ = np.linalg.lstsq(J, -F, rcond=None)
        if not np.all(np.isfinite(delta)):
            raise NoOrbitError("section Newton produced non-finite step")
        step_cap = 0.25 * (hi - lo)
        nrm = float(np.linalg.norm(delta))
        if nrm > step_cap:
            delta *= step_cap / nrm
        p = p + delta
        if not (lo - 0.05 * (hi - lo) <= p[1] <= hi + 0.05 * (hi - lo)):
            raise NoOrbitError("section Newton left the window")
    raise NoOrbitError("section Newton did not converge")


def hyperbolic_search(H, dom: SectionDomain, seeds, periods=(1, 2, 3, 4), step=1e-3, dedup_tol=1e-6):
    """Classify closed orbits found from fixed points of the iterated return map.

    ``seeds`` is a list of SectionPoints or an (n_theta, n_r) grid shape over
    [0,1) x window.  Orbits are deduplicated by phase distance between their
    section points; the list may legitimately be empty.
    """
    Hx, dx = _axis1_view(H, dom)
    if isinstance(seeds, tuple):
        n_t, n_r = seeds
        lo, hi = dx.window
        pad = 0.02 * (hi - lo)
        seeds = [
            SectionPoint(i / n_t, lo + pad + (hi - lo - 2 * pad) * j / max(n_r - 1, 1))
            for i in range(n_t)
            for j in range(n_r)
        ]

    found = []  # (orbit, report, section_pts)
    for q in periods:
        for seed in seeds:
            try:
                fix, tau = _section_newton(Hx, dx, seed, q, step)
                pts = [fix]
                pt = fix
                for _ in range(q - 1):
                    s = numeric_return_map(Hx, dx, pt, step)
                    pt = s.image
                    pts.append(pt)
                dup = False
                for _, _, prev in found:
                    for a in pts:
                        for b in prev:
                            dth = abs(a.theta2 - b.theta2)
                            dth = min(dth, 1.0 - dth)
                            if math.hypot(dth, a.r2 - b.r2) <= dedup_tol:
                                dup = True
                                break
                        if dup:
                            break
                    if dup:
                        break
                if dup:
                    continue
                r1 = r1_on_shell(Hx, (dx.theta0, fix.theta2), fix.r2, dx.energy)
                x0 = PhaseState((dx.theta0, fix.theta2), (r1, fix.r2))
                orbit = refine_periodic(Hx, x0, tau, step=step)
                rep = floquet(Hx, orbit, step=step)
                found.append((orbit, rep, pts))
            except ToruslabError:
                continue

    def sort_key(item):
        o = item[0]
        return (round(o.period, 9), round(o.x0.theta[1], 9), round(o.x0.r[1], 9))

    found.sort(key=sort_key)
    out = []
    for orbit, rep, _ in found:
        if dom.axis == 2:
            th = orbit.x0.theta
            r = orbit.x0.r
            orbit = PeriodicOrbit(
                PhaseState((th[1], th[0]), (r[1], r[0])), orbit.period, orbit.residual
            )
        out.append((orbit, rep))
    return out


def orbit_catalog_json(results):
    """JSON-ready list: x0, period, multipliers (re/im), class."""
    out = []
    for orbit, rep in results:
        out.append(
            {
                "theta": list(map(float, orbit.x0.theta)),
                "r": list(map(float, orbit.x0.r)),
                "period": orbit.period,
                "residual": orbit.residual,
                "multipliers": [[m.real, m.imag] for m in rep.multipliers],
                "class": rep.orbit_class,
                "trivial_pair_error": rep.trivial_pair_error,
                "bott_index": rep.bott_index_label,
            }
        )
    return out
