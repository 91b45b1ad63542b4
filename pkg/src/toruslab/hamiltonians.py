"""Phase-space types: quadratic forms, Fourier perturbations, metrics, Hamiltonians.

Conventions used throughout the package:

* the torus is T^2 = R^2/Z^2 (period 1 in each angle), so every trigonometric
  term carries an explicit 2*pi factor;
* a phase point is (theta, r) with theta in T^2 and r in R^2;
* geodesic Hamiltonians are H(theta, p) = p . G(theta)^-1 . p with no 1/2
  factor, so the unit cotangent bundle is the level H = 1 and geodesics on it
  run at speed 2 with respect to arclength.

All types are immutable after construction and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, DomainError

TWO_PI = 2.0 * math.pi


def wrap_angle(x):
    """Reduce an angle (scalar or array) to [0, 1)."""
    return np.mod(x, 1.0)


def _as_pair(x, name):
    arr = np.asarray(x, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return arr


# ---------------------------------------------------------------------------
# Polynomials in (r1, r2)


class Poly2:
    """Polynomial in two action variables, coefficients c[i, j] for r1^i r2^j."""

    def __init__(self, coeffs):
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if c.ndim != 2:
            raise ConstructionError("Poly2 coefficients must be a 2-d array")
        self.coeffs = c
        self.coeffs.setflags(write=False)
        # flat monomial list for the scalar fast path
        self._monos = tuple(
            (i, j, c[i, j])
            for i in range(c.shape[0])
            for j in range(c.shape[1])
            if c[i, j] != 0.0
        )
        # `const` short-circuits the hot loops for degree-0 radials
        self.const = float(c[0, 0]) if c.shape == (1, 1) else None

    @classmethod
    def constant(cls, value=1.0):
        return cls([[float(value)]])

    @property
    def is_constant(self):
        return self.coeffs.shape == (1, 1)

    def __call__(self, r1, r2):
        return np.polynomial.polynomial.polyval2d(r1, r2, self.coeffs)

    def eval_scalar(self, r1, r2):
        if self.is_constant:
            return self.coeffs[0, 0]
        acc = 0.0
        for i, j, c in self._monos:
            acc += c * r1**i * r2**j
        return acc

    def deriv(self, m1, m2):
        """Return the polynomial d^(m1+m2) / dr1^m1 dr2^m2."""
        c = self.coeffs
        for _ in range(m1):
            n = c.shape[0]
            c = c[1:] * np.arange(1, n).reshape(-1, 1) if n > 1 else np.zeros((1, 1))
        for _ in range(m2):
            n = c.shape[1]
            c = c[:, 1:] * np.arange(1, n).reshape(1, -1) if n > 1 else np.zeros((1, 1))
        return Poly2(c)

    def to_list(self):
        return self.coeffs.tolist()


# ---------------------------------------------------------------------------
# Quadratic integrable core


@dataclass(frozen=True)
class QuadraticForm:
    """Positive definite quadratic form h(r) = a r1^2 + b r2^2 + c r1 r2."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and math.isfinite(self.c)):
            raise ConstructionError("quadratic form coefficients must be finite")
        if not (self.a > 0.0 and 4.0 * self.a * self.b - self.c * self.c > 0.0):
            raise ConstructionError(
                f"quadratic form must be positive definite: a={self.a}, 4ab-c^2="
                f"{4.0 * self.a * self.b - self.c * self.c}"
            )

    def value(self, r):
        r = np.asarray(r, dtype=float)
        r1, r2 = r[..., 0], r[..., 1]
        return self.a * r1 * r1 + self.b * r2 * r2 + self.c * r1 * r2

    def gradient(self, r):
        """Frequency map omega(r) = grad h(r) = (2a r1 + c r2, c r1 + 2b r2)."""
        r = np.asarray(r, dtype=float)
        r1, r2 = r[..., 0], r[..., 1]
        return np.stack(
            [2.0 * self.a * r1 + self.c * r2, self.c * r1 + 2.0 * self.b * r2], axis=-1
        )

    def hessian(self):
        return np.array([[2.0 * self.a, self.c], [self.c, 2.0 * self.b]])

    @property
    def det4(self):
        """The combination 4ab - c^2 = 4 det(h) entering the twist formulas."""
        return 4.0 * self.a * self.b - self.c * self.c

    def swapped(self):
        """The form with the roles of r1 and r2 exchanged."""
        return QuadraticForm(self.b, self.a, self.c)

    def level_point(self, direction, e=1.0):
        """Scale ``direction`` onto the level set h = e."""
        d = _as_pair(direction, "direction")
        hd = float(self.value(d))
        if hd <= 0.0 or e <= 0.0:
            raise DomainError("level_point needs a nonzero direction and e > 0")
        return d * math.sqrt(e / hd)

    def to_dict(self):
        return {"a": self.a, "b": self.b, "c": self.c}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["a"]), float(d["b"]), float(d["c"]))


def frequency(h: QuadraticForm, r):
    """Frequency vector of the integrable flow at action r."""
    return h.gradient(r)


# ---------------------------------------------------------------------------
# Fourier perturbations


@dataclass(frozen=True)
class FourierTerm:
    """One perturbation term amplitude * radial(r) * cos(2 pi k.theta + phase)."""

    k: tuple
    phase: float
    amplitude: float
    radial: Poly2 = field(default_factory=Poly2.constant)

    def __post_init__(self):
        object.__setattr__(self, "k", (int(self.k[0]), int(self.k[1])))

    def to_dict(self):
        return {
            "k": list(self.k),
            "phase": self.phase,
            "amplitude": self.amplitude,
            "radial": self.radial.to_list(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            k=tuple(d["k"]),
            phase=float(d.get("phase", 0.0)),
            amplitude=float(d["amplitude"]),
            radial=Poly2(d.get("radial", [[1.0]])),
        )


class FourierPerturbation:
    """Finite Fourier sum with polynomial radial coefficients.

    f(theta, r) = sum_i amp_i * radial_i(r1, r2) * cos(2 pi k_i . theta + phase_i)

    The closed-form class gives exact derivatives of every order, which the
    vector field, the variational equations and the C^5-norm estimate rely on.
    """

    def __init__(self, terms, normalization=None):
        self.terms = tuple(terms)
        if not self.terms:
            raise ConstructionError("perturbation needs at least one term")
        self.normalization = normalization
        # scalar fast-path table: (k1, k2, phase, amp, radial, d1, d2, d11, d12, d22)
        tab = []
        for t in self.terms:
            p = t.radial
            tab.append(
                (
                    float(t.k[0]),
                    float(t.k[1]),
                    t.phase,
                    t.amplitude,
                    p,
                    p.deriv(1, 0),
                    p.deriv(0, 1),
                    p.deriv(2, 0),
                    p.deriv(1, 1),
                    p.deriv(0, 2),
                )
            )
        self._tab = tuple(tab)

    @classmethod
    def single(cls, k, amplitude=1.0, phase=0.0, radial=None):
        return cls([FourierTerm(k, phase, amplitude, radial or Poly2.constant())])

    def scaled(self, factor):
        return FourierPerturbation(
            [FourierTerm(t.k, t.phase, t.amplitude * factor, t.radial) for t in self.terms],
            normalization=None,
        )

    def reflected(self):
        """The perturbation f(-theta, -r), used to map D- section domains to D+."""
        terms = []
        for t in self.terms:
            c = t.radial.coeffs.copy()
            for i in range(c.shape[0]):
                for j in range(c.shape[1]):
                    if (i + j) % 2:
                        c[i, j] = -c[i, j]
            terms.append(FourierTerm(t.k, -t.phase, t.amplitude, Poly2(c)))
        return FourierPerturbation(terms, normalization=self.normalization)

    def swapped(self):
        """The perturbation with (theta1, r1) and (theta2, r2) exchanged."""
        terms = [
            FourierTerm((t.k[1], t.k[0]), t.phase, t.amplitude, Poly2(t.radial.coeffs.T))
            for t in self.terms
        ]
        return FourierPerturbation(terms, normalization=self.normalization)

    def value(self, theta, r):
        theta = np.asarray(theta, dtype=float)
        r = np.asarray(r, dtype=float)
        acc = 0.0
        for t in self.terms:
            arg = TWO_PI * (t.k[0] * theta[..., 0] + t.k[1] * theta[..., 1]) + t.phase
            acc = acc + t.amplitude * t.radial(r[..., 0], r[..., 1]) * np.cos(arg)
        return acc

    def deriv(self, theta, r, mtheta=(0, 0), mr=(0, 0)):
        """Exact partial derivative d^(mtheta) / d theta * d^(mr) / d r of f."""
        theta = np.asarray(theta, dtype=float)
        r = np.asarray(r, dtype=float)
        mt = mtheta[0] + mtheta[1]
        acc = 0.0
        for t in self.terms:
            arg = (
                TWO_PI * (t.k[0] * theta[..., 0] + t.k[1] * theta[..., 1])
                + t.phase
                + mt * 0.5 * math.pi
            )
            fac = (TWO_PI * t.k[0]) ** mtheta[0] * (TWO_PI * t.k[1]) ** mtheta[1]
            rad = t.radial.deriv(mr[0], mr[1])(r[..., 0], r[..., 1])
            acc = acc + t.amplitude * fac * rad * np.cos(arg)
        return acc

    def c5_grid_norm(self, r_box=((-2.0, 2.0), (-2.0, 2.0)), n_theta=64, n_r=33):
        """Grid estimate of the C^5 sup-norm: max over all partials of order <= 5.

        The sup runs over a n_theta^2 grid on T^2 times an n_r^2 grid on the
        given action box.  Exact norms are unnecessary; only the epsilon
        scaling of the perturbation matters, so a grid sup is enough.
        """
        th = np.arange(n_theta) / n_theta
        th1, th2 = np.meshgrid(th, th, indexing="ij")
        theta_grid = np.stack([th1.ravel(), th2.ravel()], axis=-1)
        r1 = np.linspace(r_box[0][0], r_box[0][1], n_r)
        r2 = np.linspace(r_box[1][0], r_box[1][1], n_r)
        rr1, rr2 = np.meshgrid(r1, r2, indexing="ij")

        best = 0.0
        for order in range(6):
            for mt1 in range(order + 1):
                for mt2 in range(order - mt1 + 1):
                    for mr1 in range(order - mt1 - mt2 + 1):
                        mr2 = order - mt1 - mt2 - mr1
                        # separable evaluation: theta factor (Ntheta, nterms)
                        # times radial factor (nterms, Nr)
                        tcols = []
                        rrows = []
                        for t in self.terms:
                            arg = (
                                TWO_PI
                                * (t.k[0] * theta_grid[:, 0] + t.k[1] * theta_grid[:, 1])
                                + t.phase
                                + (mt1 + mt2) * 0.5 * math.pi
                            )
                            fac = (TWO_PI * t.k[0]) ** mt1 * (TWO_PI * t.k[1]) ** mt2
                            tcols.append(t.amplitude * fac * np.cos(arg))
                            rrows.append(t.radial.deriv(mr1, mr2)(rr1, rr2).ravel())
                        prod = np.column_stack(tcols) @ np.vstack(rrows)
                        best = max(best, float(np.abs(prod).max()))
        return best

    def to_dict(self):
        return {
            "terms": [t.to_dict() for t in self.terms],
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [FourierTerm.from_dict(t) for t in d["terms"]],
            normalization=d.get("normalization"),
        )


def c5_normalize(f: FourierPerturbation, r_box=((-2.0, 2.0), (-2.0, 2.0))):
    """Rescale f so its grid-estimated C^5 sup-norm is 1 (within 1%)."""
    norm = f.c5_grid_norm(r_box=r_box)
    if norm == 0.0:
        raise DomainError("cannot normalize the zero perturbation")
    g = f.scaled(1.0 / norm)
    g.normalization = g.c5_grid_norm(r_box=r_box)
    return g


# ---------------------------------------------------------------------------
# Phase states and tangent vectors


@dataclass(frozen=True)
class PhaseState:
    """A point (theta, r) of T^2 x R^2; theta is stored reduced mod 1."""

    theta: np.ndarray
    r: np.ndarray

    def __init__(self, theta, r):
        th = wrap_angle(_as_pair(theta, "theta"))
        rr = _as_pair(r, "r")
        th.setflags(write=False)
        rr.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "r", rr)

    def as_array(self):
        return np.concatenate([self.theta, self.r])

    @classmethod
    def from_array(cls, y):
        y = np.asarray(y, dtype=float).reshape(4)
        return cls(y[:2], y[2:])

    def distance(self, other):
        """max(flat torus distance in theta, Euclidean distance in r)."""
        dth = np.abs(self.theta - other.theta)
        dth = np.minimum(dth, 1.0 - dth)
        return max(float(np.hypot(dth[0], dth[1])), float(np.linalg.norm(self.r - other.r)))


@dataclass(frozen=True)
class Tangent:
    """A tangent vector (dtheta, dr) at a phase point."""

    dtheta: np.ndarray
    dr: np.ndarray

    def __init__(self, dtheta, dr):
        dt = _as_pair(dtheta, "dtheta")
        dd = _as_pair(dr, "dr")
        dt.setflags(write=False)
        dd.setflags(write=False)
        object.__setattr__(self, "dtheta", dt)
        object.__setattr__(self, "dr", dd)

    def as_array(self):
        return np.concatenate([self.dtheta, self.dr])


# ---------------------------------------------------------------------------
# Near-integrable Hamiltonians H_eps = h(r) + eps * f(theta, r)


class NearIntegrableHamiltonian:
    """H(theta, r) = h(r) + epsilon * f(theta, r) on T^2 x R^2.

    For epsilon = 0 evaluation reproduces h bitwise (the perturbation branch is
    skipped entirely).
    """

    def __init__(self, h: QuadraticForm, f: FourierPerturbation | None = None, epsilon=0.0):
        if epsilon < 0.0 or not math.isfinite(epsilon):
            raise ConstructionError("epsilon must be finite and >= 0")
        if epsilon > 0.0 and f is None:
            raise ConstructionError("epsilon > 0 requires a perturbation")
        self.h = h
        self.f = f
        self.epsilon = float(epsilon)

    # -- scalar fast paths (plain floats, used by the integrator) ----------

    def value_scalar(self, th1, th2, r1, r2):
        a, b, c = self.h.a, self.h.b, self.h.c
        v = a * r1 * r1 + b * r2 * r2 + c * r1 * r2
        if self.epsilon == 0.0:
            return v
        eps = self.epsilon
        for k1, k2, ph, amp, p, d1, d2, d11, d12, d22 in self.f._tab:
            rv = p.const
            if rv is None:
                rv = p.eval_scalar(r1, r2)
            v += eps * amp * rv * math.cos(TWO_PI * (k1 * th1 + k2 * th2) + ph)
        return v

    def field_scalar(self, th1, th2, r1, r2):
        a, b, c = self.h.a, self.h.b, self.h.c
        om1 = 2.0 * a * r1 + c * r2
        om2 = c * r1 + 2.0 * b * r2
        f1 = 0.0
        f2 = 0.0
        if self.epsilon != 0.0:
            eps = self.epsilon
            for k1, k2, ph, amp, p, d1, d2, d11, d12, d22 in self.f._tab:
                arg = TWO_PI * (k1 * th1 + k2 * th2) + ph
                sn = math.sin(arg)
                ea = eps * amp
                rv = p.const
                if rv is None:
                    rv = p.eval_scalar(r1, r2)
                    cs = math.cos(arg)
                    g1 = d1.const
                    if g1 is None:
                        g1 = d1.eval_scalar(r1, r2)
                    g2 = d2.const
                    if g2 is None:
                        g2 = d2.eval_scalar(r1, r2)
                    om1 += ea * g1 * cs
                    om2 += ea * g2 * cs
                easn = ea * rv * sn * TWO_PI
                f1 += easn * k1
                f2 += easn * k2
        return om1, om2, f1, f2

    def jacobian_scalar(self, th1, th2, r1, r2):
        """d(vector field)/d(theta, r) as a 4x4 array (variational matrix)."""
        a, b, c = self.h.a, self.h.b, self.h.c
        J = np.zeros((4, 4))
        J[0, 2] = 2.0 * a
        J[0, 3] = c
        J[1, 2] = c
        J[1, 3] = 2.0 * b
        if self.epsilon != 0.0:
            eps = self.epsilon
            for k1, k2, ph, amp, p, d1, d2, d11, d12, d22 in self.f._tab:
                arg = TWO_PI * (k1 * th1 + k2 * th2) + ph
                cs = math.cos(arg)
                sn = math.sin(arg)
                ea = eps * amp
                rv = p.eval_scalar(r1, r2)
                g1 = d1.eval_scalar(r1, r2)
                g2 = d2.eval_scalar(r1, r2)
                # d thetadot_i / d theta_j = -eps amp d_i(radial) sin(arg) 2pi k_j
                J[0, 0] += -ea * g1 * sn * TWO_PI * k1
                J[0, 1] += -ea * g1 * sn * TWO_PI * k2
                J[1, 0] += -ea * g2 * sn * TWO_PI * k1
                J[1, 1] += -ea * g2 * sn * TWO_PI * k2
                # d thetadot_i / d r_j += eps amp d_ij(radial) cos(arg)
                J[0, 2] += ea * d11.eval_scalar(r1, r2) * cs
                J[0, 3] += ea * d12.eval_scalar(r1, r2) * cs
                J[1, 2] += ea * d12.eval_scalar(r1, r2) * cs
                J[1, 3] += ea * d22.eval_scalar(r1, r2) * cs
                # d rdot_i / d theta_j = eps amp radial cos(arg) (2pi)^2 k_i k_j
                w = ea * rv * cs * TWO_PI * TWO_PI
                J[2, 0] += w * k1 * k1
                J[2, 1] += w * k1 * k2
                J[3, 0] += w * k2 * k1
                J[3, 1] += w * k2 * k2
                # d rdot_i / d r_j = eps amp d_j(radial) sin(arg) 2pi k_i
                J[2, 2] += ea * g1 * sn * TWO_PI * k1
                J[2, 3] += ea * g2 * sn * TWO_PI * k1
                J[3, 2] += ea * g1 * sn * TWO_PI * k2
                J[3, 3] += ea * g2 * sn * TWO_PI * k2
        return J

    # -- batched paths (arrays of shape (..., 4)) ---------------------------

    def value_batch(self, Y):
        Y = np.asarray(Y, dtype=float)
        v = self.h.value(Y[..., 2:4])
        if self.epsilon != 0.0:
            v = v + self.epsilon * self.f.value(Y[..., 0:2], Y[..., 2:4])
        return v

    def field_batch(self, Y):
        Y = np.asarray(Y, dtype=float)
        th, r = Y[..., 0:2], Y[..., 2:4]
        out = np.empty_like(Y)
        om = self.h.gradient(r)
        out[..., 0:2] = om
        out[..., 2:4] = 0.0
        if self.epsilon != 0.0:
            eps = self.epsilon
            out[..., 0] += eps * self.f.deriv(th, r, mr=(1, 0))
            out[..., 1] += eps * self.f.deriv(th, r, mr=(0, 1))
            out[..., 2] = -eps * self.f.deriv(th, r, mtheta=(1, 0))
            out[..., 3] = -eps * self.f.deriv(th, r, mtheta=(0, 1))
        return out

    # -- symmetry views -----------------------------------------------------

    def swapped(self):
        """Coordinates relabeled (theta1, r1) <-> (theta2, r2)."""
        return NearIntegrableHamiltonian(
            self.h.swapped(), self.f.swapped() if self.f else None, self.epsilon
        )

    def reflected(self):
        """The Hamiltonian H(-theta, -r) whose flow conjugates D- domains to D+."""
        return NearIntegrableHamiltonian(
            self.h, self.f.reflected() if self.f else None, self.epsilon
        )

    def to_dict(self):
        d = {"type": "near_integrable", "h": self.h.to_dict(), "epsilon": self.epsilon}
        if self.f is not None:
            d["f"] = self.f.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            QuadraticForm.from_dict(d["h"]),
            FourierPerturbation.from_dict(d["f"]) if "f" in d else None,
            float(d.get("epsilon", 0.0)),
        )


# ---------------------------------------------------------------------------
# Scalar fields on T^2 (metric coefficients)


class FourierScalar:
    """Finite Fourier series u(theta) = const + sum amp cos(2 pi k.theta + phase)."""

    def __init__(self, constant=0.0, terms=()):
        self.constant = float(constant)
        self.terms = tuple((int(k[0]), int(k[1]), float(ph), float(am)) for k, ph, am in terms)

    def value(self, th1, th2):
        acc = self.constant + np.zeros_like(np.asarray(th1, dtype=float))
        for k1, k2, ph, am in self.terms:
            acc = acc + am * np.cos(TWO_PI * (k1 * th1 + k2 * th2) + ph)
        return acc

    def d(self, th1, th2, m1, m2):
        """Exact partial derivative of order (m1, m2) in the two angles."""
        if m1 == 0 and m2 == 0:
            return self.value(th1, th2)
        acc = np.zeros_like(np.asarray(th1, dtype=float))
        m = m1 + m2
        for k1, k2, ph, am in self.terms:
            fac = (TWO_PI * k1) ** m1 * (TWO_PI * k2) ** m2
            acc = acc + am * fac * np.cos(TWO_PI * (k1 * th1 + k2 * th2) + ph + m * 0.5 * math.pi)
        return acc

    # plain-float fast paths for the integrator
    def val_s(self, th1, th2):
        acc = self.constant
        for k1, k2, ph, am in self.terms:
            acc += am * math.cos(TWO_PI * (k1 * th1 + k2 * th2) + ph)
        return acc

    def d_s(self, th1, th2, m1, m2):
        if m1 == 0 and m2 == 0:
            return self.val_s(th1, th2)
        acc = 0.0
        shift = (m1 + m2) * 0.5 * math.pi
        for k1, k2, ph, am in self.terms:
            fac = (TWO_PI * k1) ** m1 * (TWO_PI * k2) ** m2
            acc += am * fac * math.cos(TWO_PI * (k1 * th1 + k2 * th2) + ph + shift)
        return acc

    def swapped(self):
        return FourierScalar(self.constant, [((k2, k1), ph, am) for k1, k2, ph, am in self.terms])

    def to_dict(self):
        return {
            "constant": self.constant,
            "terms": [{"k": [k1, k2], "phase": ph, "amplitude": am} for k1, k2, ph, am in self.terms],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d.get("constant", 0.0),
            [(tuple(t["k"]), t.get("phase", 0.0), t["amplitude"]) for t in d.get("terms", [])],
        )


class ConformalFactor:
    """The field exp(2 s u(theta)) for a Fourier scalar u; derivatives by chain rule."""

    def __init__(self, u: FourierScalar, scale=1.0):
        self.u = u
        self.scale = float(scale)

    def value(self, th1, th2):
        return np.exp(2.0 * self.scale * self.u.value(th1, th2))

    def d(self, th1, th2, m1, m2):
        if m1 + m2 == 0:
            return self.value(th1, th2)
        s2 = 2.0 * self.scale
        v = self.value(th1, th2)
        if m1 + m2 == 1:
            return s2 * self.u.d(th1, th2, m1, m2) * v
        if (m1, m2) == (2, 0):
            u1 = self.u.d(th1, th2, 1, 0)
            return (s2 * self.u.d(th1, th2, 2, 0) + (s2 * u1) ** 2) * v
        if (m1, m2) == (0, 2):
            u2 = self.u.d(th1, th2, 0, 1)
            return (s2 * self.u.d(th1, th2, 0, 2) + (s2 * u2) ** 2) * v
        if (m1, m2) == (1, 1):
            u1 = self.u.d(th1, th2, 1, 0)
            u2 = self.u.d(th1, th2, 0, 1)
            return (s2 * self.u.d(th1, th2, 1, 1) + s2 * s2 * u1 * u2) * v
        raise DomainError("ConformalFactor supports derivatives up to order 2")

    def val_s(self, th1, th2):
        return math.exp(2.0 * self.scale * self.u.val_s(th1, th2))

    def d_s(self, th1, th2, m1, m2):
        if m1 + m2 == 0:
            return self.val_s(th1, th2)
        s2 = 2.0 * self.scale
        v = self.val_s(th1, th2)
        if m1 + m2 == 1:
            return s2 * self.u.d_s(th1, th2, m1, m2) * v
        u1 = self.u.d_s(th1, th2, 1, 0)
        u2 = self.u.d_s(th1, th2, 0, 1)
        if (m1, m2) == (2, 0):
            return (s2 * self.u.d_s(th1, th2, 2, 0) + (s2 * u1) ** 2) * v
        if (m1, m2) == (0, 2):
            return (s2 * self.u.d_s(th1, th2, 0, 2) + (s2 * u2) ** 2) * v
        return (s2 * self.u.d_s(th1, th2, 1, 1) + s2 * s2 * u1 * u2) * v

    def swapped(self):
        return ConformalFactor(self.u.swapped(), self.scale)

    def to_dict(self):
        return {"kind": "conformal_factor", "u": self.u.to_dict(), "scale": self.scale}


def _field_from_dict(d):
    if isinstance(d, dict) and d.get("kind") == "conformal_factor":
        return ConformalFactor(FourierScalar.from_dict(d["u"]), d.get("scale", 1.0))
    return FourierScalar.from_dict(d)


# ---------------------------------------------------------------------------
# Metrics on T^2 and geodesic Hamiltonians


class MetricField:
    """Riemannian metric on T^2 with closed-form, twice differentiable coefficients.

    Coefficients g11, g12, g22 are FourierScalar or ConformalFactor fields.
    Pointwise positive definiteness is verified on a grid at construction.
    """

    def __init__(self, g11, g12, g22, check_grid=64):
        self.g11, self.g12, self.g22 = g11, g12, g22
        th = np.arange(check_grid) / check_grid
        t1, t2 = np.meshgrid(th, th, indexing="ij")
        e = np.broadcast_to(np.asarray(g11.value(t1, t2), dtype=float), t1.shape)
        f = np.broadcast_to(np.asarray(g12.value(t1, t2), dtype=float), t1.shape)
        g = np.broadcast_to(np.asarray(g22.value(t1, t2), dtype=float), t1.shape)
        det = e * g - f * f
        if not (np.all(e > 0.0) and np.all(det > 0.0)):
            raise ConstructionError("metric is not positive definite on the verification grid")

    @classmethod
    def constant(cls, a=1.0, b=1.0, c=0.0):
        return cls(FourierScalar(a), FourierScalar(c), FourierScalar(b))

    def coeffs(self, th1, th2):
        return (
            self.g11.value(th1, th2),
            self.g12.value(th1, th2),
            self.g22.value(th1, th2),
        )

    def dcoeffs(self, th1, th2, m1, m2):
        return (
            self.g11.d(th1, th2, m1, m2),
            self.g12.d(th1, th2, m1, m2),
            self.g22.d(th1, th2, m1, m2),
        )

    def swapped(self):
        return MetricField(self.g22.swapped(), self.g12.swapped(), self.g11.swapped())

    def to_dict(self):
        def enc(s):
            return s.to_dict()

        return {"type": "metric_field", "g11": enc(self.g11), "g12": enc(self.g12), "g22": enc(self.g22)}

    @classmethod
    def from_dict(cls, d):
        return cls(
            _field_from_dict(d["g11"]), _field_from_dict(d["g12"]), _field_from_dict(d["g22"])
        )


def gaussian_curvature(g: MetricField, theta):
    """Gaussian curvature at theta via the Brioschi formula (exact derivatives)."""
    th = _as_pair(theta, "theta")
    t1, t2 = th[0], th[1]
    E, F, G = (float(x) for x in g.coeffs(t1, t2))
    E1, F1, G1 = (float(x) for x in g.dcoeffs(t1, t2, 1, 0))
    E2, F2, G2 = (float(x) for x in g.dcoeffs(t1, t2, 0, 1))
    E22, _, _ = (float(x) for x in g.dcoeffs(t1, t2, 0, 2))
    _, F12, _ = (float(x) for x in g.dcoeffs(t1, t2, 1, 1))
    _, _, G11 = (float(x) for x in g.dcoeffs(t1, t2, 2, 0))

    m1 = np.array(
        [
            [-0.5 * E22 + F12 - 0.5 * G11, 0.5 * E1, F1 - 0.5 * E2],
            [F2 - 0.5 * G1, E, F],
            [0.5 * G2, F, G],
        ]
    )
    m2 = np.array(
        [
            [0.0, 0.5 * E2, 0.5 * G1],
            [0.5 * E2, E, F],
            [0.5 * G1, F, G],
        ]
    )
    det = E * G - F * F
    return float((np.linalg.det(m1) - np.linalg.det(m2)) / (det * det))


class GeodesicHamiltonian:
    """H(theta, p) = p . G(theta)^-1 . p for a metric G on T^2."""

    def __init__(self, metric: MetricField):
        self.metric = metric
        self.epsilon = None  # marker: not a near-integrable system

    # helpers -----------------------------------------------------------

    def _inv(self, th1, th2):
        E, F, G = self.metric.coeffs(th1, th2)
        det = E * G - F * F
        return G / det, -F / det, E / det

    def value_scalar(self, th1, th2, p1, p2):
        E = self.metric.g11.val_s(th1, th2)
        F = self.metric.g12.val_s(th1, th2)
        G = self.metric.g22.val_s(th1, th2)
        det = E * G - F * F
        return (G * p1 * p1 - 2.0 * F * p1 * p2 + E * p2 * p2) / det

    def field_scalar(self, th1, th2, p1, p2):
        m = self.metric
        E = m.g11.val_s(th1, th2)
        F = m.g12.val_s(th1, th2)
        G = m.g22.val_s(th1, th2)
        det = E * G - F * F
        w1 = (G * p1 - F * p2) / det
        w2 = (-F * p1 + E * p2) / det
        # pdot_i = + w . (dG/dtheta_i) . w
        dp1 = (
            m.g11.d_s(th1, th2, 1, 0) * w1 * w1
            + 2.0 * m.g12.d_s(th1, th2, 1, 0) * w1 * w2
            + m.g22.d_s(th1, th2, 1, 0) * w2 * w2
        )
        dp2 = (
            m.g11.d_s(th1, th2, 0, 1) * w1 * w1
            + 2.0 * m.g12.d_s(th1, th2, 0, 1) * w1 * w2
            + m.g22.d_s(th1, th2, 0, 1) * w2 * w2
        )
        return 2.0 * w1, 2.0 * w2, dp1, dp2

    def jacobian_scalar(self, th1, th2, p1, p2):
        E = float(self.metric.g11.value(th1, th2))
        F = float(self.metric.g12.value(th1, th2))
        G = float(self.metric.g22.value(th1, th2))
        Gm = np.array([[E, F], [F, G]])
        Gi = np.linalg.inv(Gm)
        p = np.array([p1, p2])
        w = Gi @ p
        dG = []
        for m in ((1, 0), (0, 1)):
            dE, dF, dG_ = (float(x) for x in self.metric.dcoeffs(th1, th2, *m))
            dG.append(np.array([[dE, dF], [dF, dG_]]))
        d2G = {}
        for m in ((2, 0), (1, 1), (0, 2)):
            dE, dF, dG_ = (float(x) for x in self.metric.dcoeffs(th1, th2, *m))
            d2G[m] = np.array([[dE, dF], [dF, dG_]])
        idx2 = {(0, 0): (2, 0), (0, 1): (1, 1), (1, 0): (1, 1), (1, 1): (0, 2)}

        J = np.zeros((4, 4))
        v = [Gi @ dG[j] @ w for j in range(2)]
        for j in range(2):
            J[0:2, j] = -2.0 * v[j]  # d thetadot / d theta_j
        J[0:2, 2:4] = 2.0 * Gi  # d thetadot / d p
        for i in range(2):
            for j in range(2):
                # pdot_i = w . dG_i . w ;  dw/dtheta_j = -v_j, dw/dp = Gi
                J[2 + i, j] = float(w @ d2G[idx2[(i, j)]] @ w - 2.0 * (v[j] @ dG[i] @ w))
            J[2 + i, 2:4] = 2.0 * (Gi @ dG[i] @ w)
        return J

    def value_batch(self, Y):
        Y = np.asarray(Y, dtype=float)
        th1, th2 = Y[..., 0], Y[..., 1]
        p1, p2 = Y[..., 2], Y[..., 3]
        i11, i12, i22 = self._inv(th1, th2)
        return i11 * p1 * p1 + 2.0 * i12 * p1 * p2 + i22 * p2 * p2

    def field_batch(self, Y):
        Y = np.asarray(Y, dtype=float)
        th1, th2 = Y[..., 0], Y[..., 1]
        p1, p2 = Y[..., 2], Y[..., 3]
        E, F, G = (np.asarray(x, dtype=float) for x in self.metric.coeffs(th1, th2))
        det = E * G - F * F
        w1 = (G * p1 - F * p2) / det
        w2 = (-F * p1 + E * p2) / det
        out = np.empty_like(Y)
        out[..., 0] = 2.0 * w1
        out[..., 1] = 2.0 * w2
        for i, m in enumerate(((1, 0), (0, 1))):
            dE, dF, dG = (np.asarray(x, dtype=float) for x in self.metric.dcoeffs(th1, th2, *m))
            out[..., 2 + i] = dE * w1 * w1 + 2.0 * dF * w1 * w2 + dG * w2 * w2
        return out

    def swapped(self):
        return GeodesicHamiltonian(self.metric.swapped())

    def to_dict(self):
        return {"type": "geodesic", "metric": self.metric.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(MetricField.from_dict(d["metric"]))


def geodesic_hamiltonian(g: MetricField) -> GeodesicHamiltonian:
    """The geodesic Hamiltonian of g; positivity was checked when g was built."""
    return GeodesicHamiltonian(g)


# ---------------------------------------------------------------------------
# Module-level operations on whole phase states


def energy(H, x: PhaseState):
    """Evaluate H at a phase point."""
    y = x.as_array()
    if not np.all(np.isfinite(y)):
        raise DomainError("energy: non-finite phase point")
    return float(H.value_scalar(y[0], y[1], y[2], y[3]))


def vector_field(H, x: PhaseState) -> Tangent:
    """Exact Hamilton equations of H at x."""
    y = x.as_array()
    if not np.all(np.isfinite(y)):
        raise DomainError("vector_field: non-finite phase point")
    d1, d2, d3, d4 = H.field_scalar(y[0], y[1], y[2], y[3])
    return Tangent((d1, d2), (d3, d4))


def hamiltonian_from_dict(d):
    """Dispatch a JSON-style dict to the matching Hamiltonian class."""
    kind = d.get("type")
    if kind == "near_integrable":
        return NearIntegrableHamiltonian.from_dict(d)
    if kind == "geodesic":
        return GeodesicHamiltonian.from_dict(d)
    raise ConstructionError(f"unknown Hamiltonian type {kind!r}")
