"""Dynamical metrics, covering-number tables and polynomial-entropy slopes.

The dynamical distance between two initial points is the max over sampled
times s in {0, Delta, 2 Delta, ..., t} of the phase distance
max(flat-torus distance in theta, Euclidean distance in r) between their
orbits.  Covering counts are produced by a deterministic greedy sweep:
repeatedly pick the yet-uncovered net point of smallest index and mark
everything within eps (in dynamical distance) as covered.

The greedy sweep exploits d_t >= d_0: a static-distance prefilter (exact,
grid-structured) selects the only candidates a center can possibly cover,
and the time maximization prunes candidates as soon as they separate.
Results are bit-identical regardless of chunking or worker counts because
the sweep itself is sequential with a fixed ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InstabilityError, ResourceError
from .flow import integrate_batch
from .hamiltonians import NearIntegrableHamiltonian, PhaseState, QuadraticForm
from .kam import level_curve


def _phase_dist(dth, dr):
    """max(torus l2 in theta, euclidean l2 in r) for arrays (..., 2)."""
    u = dth - np.round(dth)
    t = np.sqrt(u[..., 0] ** 2 + u[..., 1] ** 2)
    e = np.sqrt(dr[..., 0] ** 2 + dr[..., 1] ** 2)
    return np.maximum(t, e)


def dyn_dist(H, x: PhaseState, y: PhaseState, t, delta, step=1e-2):
    """Dynamical distance d_t(x, y) sampled on the delta-grid of [0, t].

    The endpoint t is always included in the sample set.
    """
    if delta <= 0.0:
        raise DomainError("delta must be positive")
    times = list(np.arange(0.0, t + 1e-12, delta))
    if not times or times[-1] < t - 1e-12:
        times.append(t)
    times = np.asarray(times)

    if isinstance(H, NearIntegrableHamiltonian) and H.epsilon == 0.0:
        om_x = H.h.gradient(x.r)
        om_y = H.h.gradient(y.r)
        dth = (x.theta - y.theta)[None, :] + times[:, None] * (om_x - om_y)[None, :]
        dr = np.broadcast_to((x.r - y.r)[None, :], dth.shape)
        return float(np.max(_phase_dist(dth, dr)))

    # numeric flows: integrate both points jointly, recording on the delta grid
    n = int(round(delta / step))
    if abs(n * step - delta) > 1e-12:
        raise DomainError("delta must be a multiple of step for numeric flows")
    t_grid = math.floor(t / delta + 1e-12) * delta
    Y0 = np.vstack([x.as_array(), y.as_array()])
    _, snaps = integrate_batch(H, Y0, t_grid, step, record_every=n)
    best = 0.0
    for Y in snaps:
        d = float(_phase_dist((Y[0, 0:2] - Y[1, 0:2])[None, :], (Y[0, 2:4] - Y[1, 2:4])[None, :])[0])
        best = max(best, d)
    if t > t_grid + 1e-12:
        Yf, _ = integrate_batch(H, snaps[-1], t - t_grid, step)
        d = float(_phase_dist((Yf[0, 0:2] - Yf[1, 0:2])[None, :], (Yf[0, 2:4] - Yf[1, 2:4])[None, :])[0])
        best = max(best, d)
    return best


# ---------------------------------------------------------------------------
# Nets on an energy shell


@dataclass(frozen=True)
class NetSpec:
    """A product net theta1 x theta2 x (arc of the action level curve).

    ``arc_window`` is (s_center, s_width) in the level-curve parameter (full
    circle when None).  ``jitter`` displaces every node by at most that
    fraction of a cell, driven by ``seed``; 0 keeps the plain grid.
    The net cardinality must stay within ``budget``.
    """

    n_theta1: int = 32
    n_theta2: int = 32
    n_arc: int = 20
    arc_window: tuple | None = None
    budget: int = 20000
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_theta1 * self.n_theta2 * self.n_arc > self.budget:
            raise ResourceError(
                f"net cardinality {self.n_theta1 * self.n_theta2 * self.n_arc} "
                f"exceeds budget {self.budget}"
            )
        if not 0.0 <= self.jitter <= 0.5:
            raise ResourceError("jitter must be in [0, 0.5] cells")


class ShellNet:
    """Realized net points on the level curve h = e, ordered lexicographically."""

    def __init__(self, spec: NetSpec, h: QuadraticForm, e=1.0):
        self.spec = spec
        n1, n2, ns = spec.n_theta1, spec.n_theta2, spec.n_arc
        rng = np.random.default_rng(spec.seed)

        th1 = np.arange(n1) / n1
        th2 = np.arange(n2) / n2
        if spec.arc_window is None:
            s = np.arange(ns) / ns
        else:
            c, w = spec.arc_window
            s = np.linspace(c - 0.5 * w, c + 0.5 * w, ns)
        if spec.jitter > 0.0:
            th1 = th1 + rng.uniform(-spec.jitter / n1, spec.jitter / n1, n1)
            th2 = th2 + rng.uniform(-spec.jitter / n2, spec.jitter / n2, n2)
            ds = (s[1] - s[0]) if ns > 1 else 0.0
            s = s + rng.uniform(-spec.jitter, spec.jitter, ns) * ds

        # arc positions on the level curve via its trigonometric parametrization
        A = 0.5 * h.hessian()
        evals, evecs = np.linalg.eigh(A)
        Ainv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
        u = np.stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)], axis=-1)
        self.r_arc = math.sqrt(e) * u @ Ainv_sqrt.T

        self.n1, self.n2, self.ns = n1, n2, ns
        self.th1, self.th2 = th1, th2
        self.h, self.e = h, e

        I1, I2, J = np.meshgrid(np.arange(n1), np.arange(n2), np.arange(ns), indexing="ij")
        pts = np.empty((n1 * n2 * ns, 4))
        pts[:, 0] = th1[I1.ravel()]
        pts[:, 1] = th2[I2.ravel()]
        pts[:, 2:4] = self.r_arc[J.ravel()]
        self.points = pts
        self.jidx = J.ravel()

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# Greedy covering


class CoveringLab:
    """Reusable covering-count engine for one (H, net, delta) combination.

    For unperturbed Hamiltonians orbit snapshots are closed-form; otherwise
    the whole net is integrated once (batched implicit midpoint, fixed step)
    and snapshots on the delta grid are cached.
    """

    def __init__(self, H, net: ShellNet, delta, t_max, step=1e-2):
        if delta <= 0.0 or t_max < 0.0:
            raise DomainError("delta > 0 and t_max >= 0 required")
        self.H, self.net, self.delta = H, net, float(delta)
        self.linear = isinstance(H, NearIntegrableHamiltonian) and H.epsilon == 0.0
        self.t_max = float(t_max)
        pts = net.points
        if self.linear:
            self.omega = H.h.gradient(pts[:, 2:4])
            self.snaps = None
        else:
            n = int(round(delta / step))
            if abs(n * step - delta) > 1e-12:
                raise DomainError("delta must be a multiple of step for numeric flows")
            n_rec = int(math.floor(t_max / delta + 1e-9))
            _, snaps = integrate_batch(H, pts, n_rec * delta, step, record_every=n)
            # layout (N, n_rec+1, 4) so candidate gathering is contiguous
            self.snaps = np.ascontiguousarray(np.transpose(snaps, (1, 0, 2)))
            self.times_grid = np.arange(n_rec + 1) * delta

    # -- candidate gathering (exact superset via the product structure) ----

    def _window_ids(self, c, eps):
        net = self.net
        n1, n2, ns = net.n1, net.n2, net.ns
        i1 = c // (n2 * ns)
        i2 = (c // ns) % n2
        j = c % ns
        pad = 1 if net.spec.jitter > 0.0 else 0

        w1 = min(int(eps * n1) + 1 + pad, n1 // 2)
        w2 = min(int(eps * n2) + 1 + pad, n2 // 2)
        d1 = (np.arange(-w1, w1 + 1) + i1) % n1 if 2 * w1 + 1 < n1 else np.arange(n1)
        d2 = (np.arange(-w2, w2 + 1) + i2) % n2 if 2 * w2 + 1 < n2 else np.arange(n2)
        dv = net.r_arc - net.r_arc[j]
        slack = 1e-9 + (2.0 * net.spec.jitter * (1.0 / max(ns, 1)))
        jmask = np.nonzero(dv[:, 0] ** 2 + dv[:, 1] ** 2 <= (eps + slack) ** 2)[0]
        ids = ((d1[:, None] * n2 + d2[None, :])[:, :, None] * ns + jmask[None, None, :]).ravel()
        return ids

    def _static_dist(self, c, ids):
        pts = self.net.points
        dth = pts[ids, 0:2] - pts[c, 0:2]
        dr = pts[ids, 2:4] - pts[c, 2:4]
        return _phase_dist(dth, dr)

    def _times_upto(self, t):
        k = int(math.floor(t / self.delta + 1e-9))
        times = np.arange(k + 1) * self.delta
        if t - times[-1] > 1e-9:
            if self.linear:
                times = np.append(times, t)
            else:
                raise DomainError("t must lie on the delta grid for numeric flows")
        return times

    def _covered(self, c, cands, times, eps, chunk=32):
        """Boolean mask: which candidates stay within eps at all sampled times."""
        if self.linear:
            pts = self.net.points
            dth0 = pts[cands, 0:2] - pts[c, 0:2]
            dom = self.omega[cands] - self.omega[c]
        else:
            idx = np.searchsorted(self.times_grid, times)
        maxd = np.asarray(self._static_dist(c, cands), dtype=float).copy()
        alive = np.nonzero(maxd <= eps)[0]
        maxd[maxd > eps] = np.inf
        for s0 in range(1, len(times), chunk):
            if len(alive) == 0:
                break
            ts = times[s0 : s0 + chunk]
            if self.linear:
                u = dth0[alive, None, :] + ts[None, :, None] * dom[alive, None, :]
                u -= np.round(u)
                d = np.sqrt(u[..., 0] ** 2 + u[..., 1] ** 2).max(axis=1)
            else:
                rows = self.snaps[cands[alive]][:, idx[s0 : s0 + chunk], :]
                ctr = self.snaps[c, idx[s0 : s0 + chunk], :]
                d = _phase_dist(rows[..., 0:2] - ctr[None, :, 0:2], rows[..., 2:4] - ctr[None, :, 2:4]).max(axis=1)
            maxd[alive] = np.maximum(maxd[alive], d)
            alive = alive[maxd[alive] <= eps]
        return maxd <= eps

    def count(self, t, eps):
        """Greedy covering count of the net at horizon t and radius eps."""
        if t < 0 or t > self.t_max + 1e-9:
            raise DomainError(f"t={t} outside the prepared horizon {self.t_max}")
        times = self._times_upto(t)
        N = len(self.net)
        uncovered = np.ones(N, dtype=bool)
        ptr = 0
        count = 0
        while True:
            while ptr < N and not uncovered[ptr]:
                ptr += 1
            if ptr >= N:
                return count
            count += 1
            ids = self._window_ids(ptr, eps)
            ids = ids[uncovered[ids]]
            covered = self._covered(ptr, ids, times, eps)
            uncovered[ids[covered]] = False
            uncovered[ptr] = False


def covering_count(H, net, t, eps, delta, step=1e-2):
    """One-shot greedy covering count G_t(eps); see CoveringLab for reuse."""
    if isinstance(net, NetSpec):
        if not isinstance(H, NearIntegrableHamiltonian):
            raise DomainError("NetSpec nets require a NearIntegrableHamiltonian")
        net = ShellNet(net, H.h)
    lab = CoveringLab(H, net, delta, t_max=t, step=step)
    return lab.count(t, eps)


# ---------------------------------------------------------------------------
# Cover tables and slope estimation


@dataclass
class CoverTable:
    """G[i, j] = covering count at times[i], epsilons[j]."""

    epsilons: list
    times: list
    G: np.ndarray

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=int)
        if self.G.shape != (len(self.times), len(self.epsilons)):
            raise DomainError("G must have shape (len(times), len(epsilons))")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("t," + ",".join(repr(float(e)) for e in self.epsilons) + "\n")
            for i, t in enumerate(self.times):
                fh.write(repr(float(t)) + "," + ",".join(str(int(v)) for v in self.G[i]) + "\n")


def cover_table(H, net, times, epsilons, delta, step=1e-2) -> CoverTable:
    """Covering counts on a (times x epsilons) grid, reusing one snapshot set."""
    if isinstance(net, NetSpec):
        net = ShellNet(net, H.h)
    lab = CoveringLab(H, net, delta, t_max=max(times), step=step)
    G = np.zeros((len(times), len(epsilons)), dtype=int)
    for j, eps in enumerate(epsilons):
        for i, t in enumerate(times):
            G[i, j] = lab.count(t, eps)
    return CoverTable(list(epsilons), list(times), G)


@dataclass
class HpolEstimate:
    """Fitted polynomial-entropy slope at the stably-resolved epsilon."""

    slope: float
    window: tuple
    epsilon_used: float
    r2_fit: float
    ladder: list  # (eps, slope, r2) for every epsilon in the table

    def to_json_dict(self):
        return {
            "slope": self.slope,
            "window": list(self.window),
            "epsilon_used": self.epsilon_used,
            "r2_fit": self.r2_fit,
            "ladder": [
                {"epsilon": e, "slope": s, "r2": r} for e, s, r in self.ladder
            ],
        }


def _fit_slope(ts, gs):
    x = np.log(np.asarray(ts, dtype=float))
    y = np.log(np.asarray(gs, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(coef[0]), r2


def hpol_estimate(table: CoverTable, window=None, stability_tol=0.1) -> HpolEstimate:
    """Least-squares slope of log G vs log t at the smallest stable epsilon.

    An epsilon rung is stable when its slope differs from the next-larger
    rung's slope by less than ``stability_tol``; with no stable rung an
    InstabilityError carrying the per-epsilon slopes is raised.
    """
    times = np.asarray(table.times, dtype=float)
    if window is None:
        window = (float(times.min()), float(times.max()))
    sel = (times >= window[0]) & (times <= window[1])
    if int(sel.sum()) < 5:
        raise DomainError("need >= 5 time samples inside the window")

    order = np.argsort(table.epsilons)
    ladder = []
    for j in order:
        s, r2 = _fit_slope(times[sel], np.maximum(table.G[sel, j], 1))
        ladder.append((float(table.epsilons[j]), s, r2))

    chosen = None
    for i in range(len(ladder) - 1):
        if abs(ladder[i][1] - ladder[i + 1][1]) < stability_tol:
            chosen = i
            break
    if chosen is None and len(ladder) == 1:
        chosen = 0
    if chosen is None:
        raise InstabilityError(
            "no epsilon rung with a stable slope",
            slopes={e: s for e, s, _ in ladder},
        )
    eps, slope, r2 = ladder[chosen]
    return HpolEstimate(slope, window, eps, r2, ladder)


def hpol_action_angle(h, e=1.0, n=256, tol=1e-12):
    """Polynomial-entropy value of an action-angle system on the level h = e.

    Returns the max over the level curve of the rank of its second
    fundamental form: 1 for a positive definite quadratic on T^2 (the level
    curve is strictly convex).  A single-action system, passed as a plain
    positive coefficient a (h(r) = a r^2), has a zero-dimensional level set
    and returns 0 by convention.
    """
    if isinstance(h, (int, float)):
        if e <= 0.0:
            raise DomainError("e must be positive")
        return 0
    if e <= 0.0:
        raise DomainError("e must be a regular (positive) value")
    s, pts, tans = level_curve(h, e, n)
    # curvature of r(s) = sqrt(e) A^{-1/2} (cos, sin): second derivative is
    # -(2 pi)^2 r(s), so kappa = |x' y'' - y' x''| / |r'|^3 with exact terms
    sec = -(2 * np.pi) ** 2 * pts
    num = np.abs(tans[:, 0] * sec[:, 1] - tans[:, 1] * sec[:, 0])
    den = (tans[:, 0] ** 2 + tans[:, 1] ** 2) ** 1.5
    kappa = num / den
    return int(np.max(kappa > tol))


# ---------------------------------------------------------------------------
# Generic greedy cover on arbitrary point sets (used by oracles and tests)


def greedy_cover_linear(points, velocities, wrap_mask, times, eps):
    """Greedy covering count for a linear flow x(t) = x0 + t v on a mixed
    torus/Euclidean state space; brute-force distances, no grid structure.

    ``wrap_mask`` marks the torus coordinates.  Distance is
    max(l2 over wrapped coords, l2 over the rest).
    """
    X = np.asarray(points, dtype=float)
    V = np.asarray(velocities, dtype=float)
    wrap = np.asarray(wrap_mask, dtype=bool)
    times = np.asarray(times, dtype=float)
    N = X.shape[0]
    uncovered = np.ones(N, dtype=bool)
    ptr = 0
    count = 0

    def dist(dx):
        u = dx.copy()
        u[..., wrap] -= np.round(u[..., wrap])
        dw = np.sqrt(np.sum(u[..., wrap] ** 2, axis=-1))
        de = np.sqrt(np.sum(u[..., ~wrap] ** 2, axis=-1))
        return np.maximum(dw, de)

    while True:
        while ptr < N and not uncovered[ptr]:
            ptr += 1
        if ptr >= N:
            return count
        count += 1
        idx = np.nonzero(uncovered)[0]
        # d_t >= d_0: only statically eps-close points can be covered
        cands = idx[dist(X[idx] - X[ptr]) <= eps]
        dX = X[cands] - X[ptr]
        dV = V[cands] - V[ptr]
        maxd = dist(dX)
        alive = np.nonzero(maxd <= eps)[0]
        for s0 in range(1, len(times), 32):
            if len(alive) == 0:
                break
            ts = times[s0 : s0 + 32]
            u = dX[alive, None, :] + ts[None, :, None] * dV[alive, None, :]
            maxd[alive] = np.maximum(maxd[alive], dist(u).max(axis=1))
            alive = alive[maxd[alive] <= eps]
        uncovered[cands[maxd <= eps]] = False
        uncovered[ptr] = False
