"""Frequency arithmetic, domain tagging, and invariant-torus graph fitting.

Diophantine margins are measured by exhaustive scan (the scan is its own
oracle); invariant tori are certified as graphs by binning long orbits over
the angle torus and checking that every cell pins the actions to within a
tolerance.  KAM constants are fitted empirically from epsilon ladders, with
no claim about their theoretical values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShellSolveError
from .flow import Trajectory, integrate
from .hamiltonians import NearIntegrableHamiltonian, PhaseState, QuadraticForm, frequency


# ---------------------------------------------------------------------------
# Diophantine arithmetic


@dataclass(frozen=True)
class DiophantineReport:
    """gamma_est = min over 0 < |k|_inf <= K of |<k, omega>| * |k|_2^tau."""

    tau: float
    K: int
    gamma_est: float
    argmin_k: tuple


def diophantine_margin(omega, tau, K, block=256) -> DiophantineReport:
    """Exhaustive small-divisor scan over integer vectors with |k|_inf <= K.

    By k -> -k symmetry only half of the lattice is scanned.
    """
    w1, w2 = float(omega[0]), float(omega[1])
    if w1 == 0.0 and w2 == 0.0:
        raise DomainError("omega must be nonzero")
    if K < 1:
        raise DomainError("K must be >= 1")
    K = int(K)
    k2 = np.arange(-K, K + 1, dtype=float)
    k2sq = k2 * k2
    k2w = k2 * w2
    best = math.inf
    argmin = (0, 0)
    for start in range(0, K + 1, block):
        k1 = np.arange(start, min(start + block, K + 1), dtype=float)
        dot = np.abs(k1[:, None] * w1 + k2w[None, :])
        n2 = k1[:, None] ** 2 + k2sq[None, :]
        if tau == 1.0:
            vals = dot * np.sqrt(n2)
        else:
            vals = dot * n2 ** (0.5 * tau)
        if start == 0:
            # representatives of the k -> -k symmetry: k1 > 0, or k1 = 0, k2 > 0
            vals[0, : K + 1] = np.inf
        j = int(np.argmin(vals))
        if float(vals.flat[j]) < best:
            best = float(vals.flat[j])
            argmin = (int(start + j // len(k2)), int(k2[j % len(k2)]))
    return DiophantineReport(float(tau), K, best, argmin)


def resonance_module(omega, K, tol=1e-12):
    """All k with |<k, omega>| <= tol and 0 < |k|_inf <= K, both signs."""
    w1, w2 = float(omega[0]), float(omega[1])
    K = int(K)
    out = []
    rng = np.arange(-K, K + 1, dtype=float)
    for k1 in range(-K, K + 1):
        vals = np.abs(k1 * w1 + rng * w2)
        hits = np.nonzero(vals <= tol)[0]
        for j in hits:
            k2 = int(rng[j])
            if k1 == 0 and k2 == 0:
                continue
            out.append((k1, k2))
    out.sort(key=lambda k: (max(abs(k[0]), abs(k[1])), k[0], k[1]))
    return out


# ---------------------------------------------------------------------------
# Level curves and isoenergetic nondegeneracy


def level_curve(h: QuadraticForm, e=1.0, n=256):
    """Points and unit tangents of the level ellipse h(r) = e, parametrized
    by s in [0, 1) via r(s) = sqrt(e) A^{-1/2} (cos 2 pi s, sin 2 pi s)."""
    if e <= 0.0:
        raise DomainError("level_curve needs e > 0")
    A = 0.5 * h.hessian()  # h(r) = r . A . r
    evals, evecs = np.linalg.eigh(A)
    Ainv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    s = np.arange(n) / n
    u = np.stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)], axis=-1)
    du = np.stack([-np.sin(2 * np.pi * s), np.cos(2 * np.pi * s)], axis=-1) * 2 * np.pi
    pts = math.sqrt(e) * u @ Ainv_sqrt.T
    tans = math.sqrt(e) * du @ Ainv_sqrt.T
    return s, pts, tans


@dataclass(frozen=True)
class IsoenergeticReport:
    ok: bool
    min_transversality: float


def isoenergetic_check(h: QuadraticForm, e=1.0, n=512) -> IsoenergeticReport:
    """Radial transversality of the frequency curve omega(h^{-1}(e))."""
    _, pts, tans = level_curve(h, e, n)
    om = h.gradient(pts)
    dom = h.gradient(tans) - 0.0  # gradient is linear, so d omega/ds = 2 A r'(s)
    det = np.abs(om[:, 0] * dom[:, 1] - om[:, 1] * dom[:, 0])
    speeds = np.linalg.norm(om, axis=1)
    ok = bool(det.min() > 1e-8 and speeds.min() > 0.0)
    return IsoenergeticReport(ok, float(det.min()))


# ---------------------------------------------------------------------------
# Domain tagging


class DomainTag(enum.Enum):
    """Sign quadrant of the frequency map (2a r1 + c r2, c r1 + 2b r2).

    The splitting lines are taken from the gradient components (the ones
    driving the angle velocities); components within 1e-10 of zero tag as
    BOUNDARY.
    """

    PP = "++"
    PM = "+-"
    MP = "-+"
    MM = "--"
    BOUNDARY = "boundary"


def domain_tag(h: QuadraticForm, r, tol=1e-10) -> DomainTag:
    om = h.gradient(np.asarray(r, dtype=float))
    s1, s2 = float(om[0]), float(om[1])
    if abs(s1) < tol or abs(s2) < tol:
        return DomainTag.BOUNDARY
    if s1 > 0:
        return DomainTag.PP if s2 > 0 else DomainTag.PM
    return DomainTag.MP if s2 > 0 else DomainTag.MM


# ---------------------------------------------------------------------------
# Invariant-torus graph fitting


@dataclass
class TorusFit:
    """Binned graph fit of an orbit over the angle torus.

    verdict is "graph" iff coverage >= 0.9 and the in-cell action spread stays
    strictly below the tolerance (ties count as not-graph); "insufficient"
    reports low coverage without deciding.
    """

    medians: np.ndarray  # (bins, bins, 2), NaN on empty cells
    coverage: float
    max_residual: float
    lipschitz: float
    verdict: str
    bins: int
    tolerance: float

    def max_deviation_from(self, r_ref):
        r_ref = np.asarray(r_ref, dtype=float)
        dev = np.nanmax(np.abs(self.medians - r_ref))
        return float(dev)

    def r_range_halfwidth(self, r_ref):
        """Half-width of the smallest box around r_ref containing all medians."""
        return self.max_deviation_from(r_ref)


def fit_invariant_torus(orbit, bins=64, tolerance=1e-8, min_coverage=0.9) -> TorusFit:
    """Bin the orbit's theta samples and test the single-valuedness of r(theta).

    ``orbit`` is a Trajectory or an (N, 4) array of (theta1, theta2, r1, r2)
    samples.  Tolerance should be scaled to the expected graph deviation
    (survival scans use 10 sqrt(eps) + 1e-8).
    """
    if isinstance(orbit, Trajectory):
        th = orbit.theta_wrapped()
        r = orbit.states[:, 2:4]
    else:
        arr = np.asarray(orbit, dtype=float)
        th = np.mod(arr[:, 0:2], 1.0)
        r = arr[:, 2:4]

    ix = np.minimum((th[:, 0] * bins).astype(int), bins - 1)
    iy = np.minimum((th[:, 1] * bins).astype(int), bins - 1)
    cell = ix * bins + iy
    order = np.argsort(cell, kind="stable")
    cell_sorted = cell[order]
    r_sorted = r[order]
    starts = np.nonzero(np.diff(cell_sorted, prepend=-1))[0]

    medians = np.full((bins, bins, 2), np.nan)
    max_spread = 0.0
    for i, s0 in enumerate(starts):
        s1 = starts[i + 1] if i + 1 < len(starts) else len(cell_sorted)
        cid = int(cell_sorted[s0])
        block = r_sorted[s0:s1]
        medians[cid // bins, cid % bins] = np.median(block, axis=0)
        spread = float(np.max(block.max(axis=0) - block.min(axis=0)))
        max_spread = max(max_spread, spread)

    coverage = len(starts) / (bins * bins)

    # max slope of the cell-median field between adjacent occupied cells
    lip = 0.0
    w = 1.0 / bins
    for axis in (0, 1):
        shifted = np.roll(medians, -1, axis=axis)
        diff = np.abs(shifted - medians)
        if not np.all(np.isnan(diff)):
            lip = max(lip, float(np.nanmax(diff)) / w)

    if coverage < min_coverage:
        verdict = "insufficient"
    elif max_spread < tolerance:
        verdict = "graph"
    else:
        verdict = "not-graph"
    return TorusFit(medians, float(coverage), max_spread, lip, verdict, bins, tolerance)


# ---------------------------------------------------------------------------
# Survival scans over (frequency target, epsilon) ladders


@dataclass
class ScanRow:
    omega: tuple
    eps: float
    verdict: str
    coverage: float
    max_residual: float
    lipschitz: float
    deviation: float  # max |cell median - r*| over the fitted torus
    energy_drift: float


def shell_seed(H: NearIntegrableHamiltonian, theta0, r_direction, e=1.0):
    """Lift theta0 onto H = e along the ray through r_direction (radial Newton)."""
    d = np.asarray(r_direction, dtype=float)
    t = 1.0
    for _ in range(60):
        r = t * d
        res = H.value_scalar(theta0[0], theta0[1], r[0], r[1]) - e
        if abs(res) <= 1e-13:
            return PhaseState(theta0, r)
        fld = H.field_scalar(theta0[0], theta0[1], r[0], r[1])
        slope = fld[0] * d[0] + fld[1] * d[1]
        if slope == 0.0:
            break
        t -= res / slope
    raise ShellSolveError("radial seed Newton did not converge")


def kam_survival_scan(
    h: QuadraticForm,
    f,
    targets,
    eps_ladder,
    e=1.0,
    T=200.0,
    step=1e-3,
    bins=64,
    sample_stride=10,
    tau=2.0,
    K=50,
    gamma_min=1e-3,
    tol_scale=10.0,
    theta0=(0.0, 0.0),
):
    """Fit invariant-torus graphs for Diophantine frequency targets over an
    epsilon ladder.

    Each target direction is scaled onto the energy ellipse (homogeneity
    preserves the Diophantine property); rationally resonant targets fail the
    margin precondition and are reported as skipped.  Orbits are seeded on the
    perturbed shell, so the energy-pinning column reports integrator drift.
    """
    A = 0.5 * h.hessian()
    rows = []
    for target in targets:
        d = np.asarray(target, dtype=float)
        r_star = h.level_point(np.linalg.solve(A, d), e)
        omega = frequency(h, r_star)
        margin = diophantine_margin(omega, tau, K)
        certified = margin.gamma_est >= gamma_min
        for eps in eps_ladder:
            if not certified:
                rows.append(
                    ScanRow(tuple(omega), float(eps), "skipped", 0.0, math.nan, math.nan, math.nan, math.nan)
                )
                continue
            H = NearIntegrableHamiltonian(h, f, eps) if eps > 0 else NearIntegrableHamiltonian(h)
            x0 = shell_seed(H, tuple(theta0), r_star, e)
            traj = integrate(H, x0, T, step, sample_every=sample_stride)
            tol = tol_scale * math.sqrt(eps) + 1e-8
            fit = fit_invariant_torus(traj, bins=bins, tolerance=tol)
            rows.append(
                ScanRow(
                    tuple(omega),
                    float(eps),
                    fit.verdict,
                    fit.coverage,
                    fit.max_residual,
                    fit.lipschitz,
                    fit.max_deviation_from(r_star),
                    traj.energy_drift,
                )
            )
    return rows


def fit_confinement_delta(rows):
    """Least-squares single delta with deviation ~ delta sqrt(eps) across a ladder.

    Returns (delta, per-rung ratios deviation / sqrt(eps)).
    """
    pts = [(r.eps, r.deviation) for r in rows if r.verdict == "graph" and r.eps > 0]
    if not pts:
        return 0.0, []
    num = sum(dev * math.sqrt(e) for e, dev in pts)
    den = sum(e for e, _ in pts)
    delta = num / den
    ratios = [dev / math.sqrt(e) for e, dev in pts]
    return delta, ratios


def scan_rows_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("omega1,omega2,eps,coverage,max_residual,lipschitz,deviation,energy_drift,verdict\n")
        for r in rows:
            fh.write(
                f"{r.omega[0]!r},{r.omega[1]!r},{r.eps!r},{r.coverage!r},"
                f"{r.max_residual!r},{r.lipschitz!r},{r.deviation!r},{r.energy_drift!r},{r.verdict}\n"
            )
