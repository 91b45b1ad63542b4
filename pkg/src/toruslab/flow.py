"""Time integration of Hamiltonian flows and their variational (tangent) flows.

A single integrator is used everywhere: the implicit midpoint rule, solved by
fixed-point iteration to 1e-13.  It is symplectic, second order, handles the
non-separable geodesic Hamiltonians, and integrates linear action-angle flows
exactly.  Steps are fixed (no adaptivity) so that covering-number computations
and CLI outputs are deterministic.

Angles are integrated on the universal cover (never wrapped); wrapping happens
only when states are exported as PhaseState.  Crossing detection therefore
works on the lifted angle and has no mod-1 branch issues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, DomainExitError, IntegrationError
from .hamiltonians import PhaseState

_FP_TOL = 1e-13
_FP_MAX_ITER = 200


def _midpoint_step(H, y, h, t=0.0):
    """One implicit midpoint step from the lifted 4-tuple y; returns a 4-tuple."""
    y1, y2, y3, y4 = y
    f1, f2, f3, f4 = H.field_scalar(y1, y2, y3, y4)
    # explicit Euler predictor
    z1 = y1 + h * f1
    z2 = y2 + h * f2
    z3 = y3 + h * f3
    z4 = y4 + h * f4
    for _ in range(_FP_MAX_ITER):
        m1 = 0.5 * (y1 + z1)
        m2 = 0.5 * (y2 + z2)
        m3 = 0.5 * (y3 + z3)
        m4 = 0.5 * (y4 + z4)
        f1, f2, f3, f4 = H.field_scalar(m1, m2, m3, m4)
        n1 = y1 + h * f1
        n2 = y2 + h * f2
        n3 = y3 + h * f3
        n4 = y4 + h * f4
        d = abs(n1 - z1) + abs(n2 - z2) + abs(n3 - z3) + abs(n4 - z4)
        z1, z2, z3, z4 = n1, n2, n3, n4
        if d <= _FP_TOL:
            return z1, z2, z3, z4
    raise IntegrationError(f"implicit midpoint fixed point did not converge at t={t}", t=t)


def _midpoint_step_batch(H, Y, h, t=0.0):
    """Implicit midpoint step on an (N, 4) array of lifted states."""
    F = H.field_batch(Y)
    Z = Y + h * F
    for _ in range(_FP_MAX_ITER):
        Znew = Y + h * H.field_batch(0.5 * (Y + Z))
        d = float(np.max(np.abs(Znew - Z)))
        Z = Znew
        if d <= _FP_TOL:
            return Z
    raise IntegrationError(f"batched implicit midpoint did not converge at t={t}", t=t)


def _plan_steps(T, step):
    """Split |T| into n_full steps of size `step` plus an optional remainder."""
    if step <= 0.0:
        raise DomainError("step must be positive")
    aT = abs(T)
    n_full = int(np.floor(aT / step + 1e-9))
    rem = aT - n_full * step
    if rem < 1e-12 * max(1.0, aT):
        rem = 0.0
    return n_full, rem


@dataclass
class Trajectory:
    """A time-sampled orbit.

    ``states`` holds lifted coordinates (theta on R^2); ``samples`` exposes the
    wrapped (t, PhaseState) view.  ``energy_drift`` is the max deviation of H
    from its initial value over the recorded samples.
    """

    ts: np.ndarray
    states: np.ndarray
    step: float
    energy_drift: float

    @property
    def samples(self):
        return [(float(t), PhaseState.from_array(y)) for t, y in zip(self.ts, self.states)]

    @property
    def x0(self) -> PhaseState:
        return PhaseState.from_array(self.states[0])

    @property
    def final(self) -> PhaseState:
        return PhaseState.from_array(self.states[-1])

    def theta_wrapped(self):
        return np.mod(self.states[:, 0:2], 1.0)

    def to_csv(self, path, H):
        """Write t, theta1, theta2, r1, r2, H columns (RFC 4180, LF endings)."""
        th = self.theta_wrapped()
        with open(path, "w", newline="") as fh:
            fh.write("t,theta1,theta2,r1,r2,H\n")
            for i, t in enumerate(self.ts):
                e = H.value_scalar(
                    self.states[i, 0], self.states[i, 1], self.states[i, 2], self.states[i, 3]
                )
                fh.write(
                    f"{t!r},{th[i, 0]!r},{th[i, 1]!r},"
                    f"{self.states[i, 2]!r},{self.states[i, 3]!r},{e!r}\n"
                )


def integrate(H, x0: PhaseState, T, step, sample_every=1) -> Trajectory:
    """Integrate the flow of H from x0 over time T with fixed step size.

    Negative T integrates backwards.  ``sample_every`` thins the recorded
    samples (the dynamics itself always advances by ``step``).
    """

    y = tuple(float(v) for v in x0.as_array())
    n_full, rem = _plan_steps(T, step)
    sgn = 1.0 if T >= 0 else -1.0
    h = sgn * step

    ts = [0.0]
    states = [y]
    t = 0.0
    for i in range(n_full):
        y = _midpoint_step(H, y, h, t=t)
        t = (i + 1) * h
        if (i + 1) % sample_every == 0:
            ts.append(t)
            states.append(y)
    if rem > 0.0:
        y = _midpoint_step(H, y, sgn * rem, t=t)
        t = sgn * (n_full * step + rem)
        ts.append(t)
        states.append(y)
    if ts[-1] != t:
        ts.append(t)
        states.append(y)

    states = np.asarray(states)
    e = np.array([H.value_scalar(*s) for s in states])
    drift = float(np.max(np.abs(e - e[0])))
    return Trajectory(np.asarray(ts), states, step, drift)


def integrate_batch(H, Y0, T, step, record_every=None):
    """Integrate an (N, 4) batch of lifted states; optionally record snapshots.

    Returns (Yfinal, snaps) where snaps is None or an (n_rec, N, 4) array of
    the states every ``record_every`` steps (including t=0 and the final
    time).  T must be a nonnegative multiple of step for snapshot recording.
    """
    Y = np.array(Y0, dtype=float)
    n_full, rem = _plan_steps(T, step)
    snaps = None
    if record_every is not None:
        if rem != 0.0:
            raise DomainError("snapshot recording requires T to be a multiple of step")
        snaps = [Y.copy()]
    t = 0.0
    for i in range(n_full):
        Y = _midpoint_step_batch(H, Y, step, t=t)
        t = (i + 1) * step
        if snaps is not None and (i + 1) % record_every == 0:
            snaps.append(Y.copy())
    if rem > 0.0:
        Y = _midpoint_step_batch(H, Y, rem, t=t)
    return Y, (np.asarray(snaps) if snaps is not None else None)


# ---------------------------------------------------------------------------
# Variational flow


@dataclass
class TangentFlowResult:
    """Fundamental solution M of the variational equations over [0, T]."""

    M: np.ndarray
    final: PhaseState
    final_lifted: np.ndarray

    @property
    def det_error(self):
        return abs(float(np.linalg.det(self.M)) - 1.0)


def tangent_flow(H, x0: PhaseState, T, step) -> TangentFlowResult:
    """Integrate xdot = X(x), Mdot = DX(x) M jointly, M(0) = I.

    The matrix update is the Cayley transform (I - h/2 A)^-1 (I + h/2 A) with
    A = DX evaluated at the midpoint of the accepted x-step, which keeps M
    symplectic up to roundoff.
    """
    y = tuple(float(v) for v in x0.as_array())
    M = np.eye(4)
    I = np.eye(4)
    n_full, rem = _plan_steps(T, step)
    sgn = 1.0 if T >= 0 else -1.0
    plan = [sgn * step] * n_full + ([sgn * rem] if rem > 0.0 else [])
    t = 0.0
    for h in plan:
        ynew = _midpoint_step(H, y, h, t=t)
        m = tuple(0.5 * (a + b) for a, b in zip(y, ynew))
        A = H.jacobian_scalar(*m)
        M = np.linalg.solve(I - 0.5 * h * A, (I + 0.5 * h * A) @ M)
        y = ynew
        t += h
    yarr = np.asarray(y)
    return TangentFlowResult(M, PhaseState.from_array(yarr), yarr)


# ---------------------------------------------------------------------------
# Section-crossing detection


def _refine_crossing(H, y, h, target, angle_index, tol=1e-12):
    """Find delta in [0, h] with theta_ai(one step of size delta from y) = target.

    Newton on the partial-step map with bisection safeguarding; the crossing
    state is the partial implicit-midpoint step itself, so crossings are
    consistent with the integrator.
    """
    lo, hi = 0.0, h
    g_lo = y[angle_index] - target
    delta = 0.5 * h
    z = y
    for _ in range(80):
        z = _midpoint_step(H, y, delta)
        g = z[angle_index] - target
        dot = H.field_scalar(*z)[angle_index]
        if g * g_lo <= 0.0:
            hi = delta
        else:
            lo = delta
        if dot != 0.0:
            new = delta - g / dot
        else:
            new = 0.5 * (lo + hi)
        if not (lo <= new <= hi):
            new = 0.5 * (lo + hi)
        if abs(new - delta) <= tol:
            delta = new
            z = _midpoint_step(H, y, delta)
            return delta, z
        delta = new
    return delta, z


def section_crossings(H, x0: PhaseState, theta0, T, direction=1, step=1e-3, angle_index=0):
    """Times and states at which the lifted angle crosses theta0 (mod 1).

    Only crossings traversed with sign(thetadot) == direction are admissible;
    if the angle velocity ever opposes ``direction`` along the orbit a
    DomainExitError is raised (the orbit left the monotone domain).
    """
    if direction not in (1, -1):
        raise DomainError("direction must be +1 or -1")
    y = tuple(float(v) for v in x0.as_array())
    n_full, rem = _plan_steps(T, step)
    plan = [step] * n_full + ([rem] if rem > 0.0 else [])

    rel = y[angle_index] - theta0
    if direction == 1:
        k = math.floor(rel + 1e-12) + 1.0
    else:
        k = math.ceil(rel - 1e-12) - 1.0

    out = []
    t = 0.0
    for h in plan:
        ynew = _midpoint_step(H, y, h, t=t)
        dth = ynew[angle_index] - y[angle_index]
        if dth * direction <= 0.0:
            raise DomainExitError(
                f"angle velocity left the direction={direction} domain near t={t}"
            )
        while direction * (ynew[angle_index] - (theta0 + k)) >= 0.0:
            delta, z = _refine_crossing(H, y, h, theta0 + k, angle_index)
            out.append((t + delta, PhaseState.from_array(np.asarray(z))))
            k += direction
        y = ynew
        t += h
    return out
