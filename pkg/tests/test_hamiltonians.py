import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruslab import (
    ConformalFactor,
    FourierPerturbation,
    FourierScalar,
    FourierTerm,
    MetricField,
    NearIntegrableHamiltonian,
    PhaseState,
    Poly2,
    QuadraticForm,
    c5_normalize,
    energy,
    frequency,
    gaussian_curvature,
    geodesic_hamiltonian,
    hamiltonian_from_dict,
    vector_field,
)
from toruslab.errors import ConstructionError, DomainError

TWO_PI = 2 * math.pi
KAPPA = TWO_PI**-5


def product_cosine(amplitude):
    # amplitude * cos(2pi th1) cos(2pi th2) as a two-term Fourier sum
    return FourierPerturbation(
        [
            FourierTerm((1, 1), 0.0, 0.5 * amplitude),
            FourierTerm((1, -1), 0.0, 0.5 * amplitude),
        ]
    )


def revolution_metric(R0=2.0, rho=1.0):
    g22 = FourierScalar(
        TWO_PI**2 * (R0**2 + 0.5 * rho**2),
        [((1, 0), 0.0, TWO_PI**2 * 2 * R0 * rho), ((2, 0), 0.0, TWO_PI**2 * 0.5 * rho**2)],
    )
    return MetricField(FourierScalar(TWO_PI**2 * rho**2), FourierScalar(0.0), g22)


# ---------------------------------------------------------------------------
# construction invariants


def test_quadratic_form_rejects_indefinite():
    with pytest.raises(ConstructionError):
        QuadraticForm(1.0, 0.0, 0.0)
    with pytest.raises(ConstructionError):
        QuadraticForm(-1.0, -1.0, 0.0)
    with pytest.raises(ConstructionError):
        QuadraticForm(1.0, 1.0, 2.5)


def test_phase_state_wraps_angles():
    x = PhaseState((1.25, -0.3), (0.5, 0.5))
    assert np.allclose(x.theta, [0.25, 0.7])
    with pytest.raises(DomainError):
        PhaseState((np.nan, 0.0), (0.0, 0.0))


def test_metric_field_rejects_indefinite():
    with pytest.raises(ConstructionError):
        MetricField(FourierScalar(-1.0), FourierScalar(0.0), FourierScalar(1.0))


# ---------------------------------------------------------------------------
# energy


def test_energy_flat():
    H = NearIntegrableHamiltonian(QuadraticForm(1, 1, 0))
    assert energy(H, PhaseState((0, 0), (1, 0))) == 1.0


def test_energy_perturbed_product_cosine():
    H = NearIntegrableHamiltonian(QuadraticForm(1, 1, 0), product_cosine(KAPPA), 0.01)
    val = energy(H, PhaseState((0, 0), (1, 0)))
    assert val == pytest.approx(1 + 0.01 * KAPPA, rel=1e-14)


def test_energy_cross_term():
    H = NearIntegrableHamiltonian(QuadraticForm(1, 2, 1))
    assert energy(H, PhaseState((0.7, 0.2), (1, 1))) == pytest.approx(4.0, abs=0)


def test_energy_epsilon_zero_is_bitwise_h():
    h = QuadraticForm(1.3, 0.9, 0.4)
    H0 = NearIntegrableHamiltonian(h, product_cosine(1.0), 0.0)
    for r in [(0.3, -1.2), (0.77, 0.1)]:
        assert H0.value_scalar(0.123, 0.456, *r) == h.value(np.array(r))


def test_energy_rejects_nonfinite():
    H = NearIntegrableHamiltonian(QuadraticForm(1, 1, 0))
    x = PhaseState((0, 0), (1, 0))
    object.__setattr__(x, "r", np.array([np.inf, 0.0]))
    with pytest.raises(DomainError):
        energy(H, x)


# ---------------------------------------------------------------------------
# vector field


def test_vector_field_flat():
    H = NearIntegrableHamiltonian(QuadraticForm(1, 1, 0))
    t = vector_field(H, PhaseState((0, 0), (1, 0)))
    assert np.allclose(t.dtheta, [2, 0]) and np.all(t.dr == 0.0)


def test_vector_field_single_cosine_hand_derivative():
    # f = kappa cos(2pi th1): at th1 = 1/4, rdot1 = -eps df/dth1 = +0.2 pi kappa
    f = FourierPerturbation.single((1, 0), amplitude=KAPPA)
    H = NearIntegrableHamiltonian(QuadraticForm(1, 1, 0), f, 0.1)
    t = vector_field(H, PhaseState((0.25, 0.0), (1, 0)))
    assert t.dr[0] == pytest.approx(0.2 * math.pi * KAPPA, rel=1e-12)
    assert t.dr[1] == 0.0
    assert np.allclose(t.dtheta, [2, 0])  # df/dr = 0 for this term


def test_energy_invariant_along_field():
    # directional derivative of H along its own field vanishes
    rng = np.random.default_rng(7)
    f = FourierPerturbation(
        [
            FourierTerm((1, 1), 0.3, 0.2, Poly2([[0.0, 1.0], [0.5, 0.0]])),
            FourierTerm((2, -1), 1.1, 0.1),
        ]
    )
    H = NearIntegrableHamiltonian(QuadraticForm(1, 2, 1), f, 0.05)
    worst = 0.0
    for _ in range(1000):
        y = rng.uniform(-1, 1, 4)
        fld = H.field_scalar(*y)
        # grad H = (-rdot, thetadot)
        g = np.array([-fld[2], -fld[3], fld[0], fld[1]])
        worst = max(worst, abs(g @ np.asarray(fld)))
    assert worst <= 1e-10


# ---------------------------------------------------------------------------
# frequency map


def test_frequency_examples():
    assert np.allclose(frequency(QuadraticForm(1, 1, 0), np.array([1.0, 0.0])), [2, 0])
    r = np.array([0.3, -0.8])
    assert np.allclose(frequency(QuadraticForm(1, 1, 0), r), 2 * r)
    assert np.allclose(frequency(QuadraticForm(1, 2, 1), np.array([1.0, 1.0])), [3, 5])


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(0.2, 3.0),
    b=st.floats(0.2, 3.0),
    cfrac=st.floats(-0.9, 0.9),
    r1=st.floats(-2, 2),
    r2=st.floats(-2, 2),
)
def test_frequency_matches_fd_gradient(a, b, cfrac, r1, r2):
    c = cfrac * 2 * math.sqrt(a * b)
    h = QuadraticForm(a, b, c)
    om = h.gradient(np.array([r1, r2]))
    d = 1e-6
    fd = [
        (h.value(np.array([r1 + d, r2])) - h.value(np.array([r1 - d, r2]))) / (2 * d),
        (h.value(np.array([r1, r2 + d])) - h.value(np.array([r1, r2 - d]))) / (2 * d),
    ]
    assert np.allclose(om, fd, atol=1e-8)


# ---------------------------------------------------------------------------
# geodesic Hamiltonians


def test_flat_geodesic_theta_independent():
    H = geodesic_hamiltonian(MetricField.constant(1, 1, 0))
    p = (0.7, -0.4)
    base = H.value_scalar(0.0, 0.0, *p)
    assert base == pytest.approx(p[0] ** 2 + p[1] ** 2, rel=1e-15)
    grid = np.arange(16) / 16
    worst = max(
        abs(H.value_scalar(t1, t2, *p) - base) for t1 in grid for t2 in grid
    )
    assert worst == 0.0


def test_revolution_geodesic_closed_form():
    R0, rho = 2.0, 1.0
    H = geodesic_hamiltonian(revolution_metric(R0, rho))
    for th1 in (0.0, 0.2, 0.5, 0.83):
        w = R0 + rho * math.cos(TWO_PI * th1)
        p = (0.3, -1.1)
        expect = p[0] ** 2 / (TWO_PI * rho) ** 2 + p[1] ** 2 / (TWO_PI * w) ** 2
        assert H.value_scalar(th1, 0.37, *p) == pytest.approx(expect, rel=1e-12)


def test_conformal_zero_amplitude_is_flat_bitwise():
    u = FourierScalar(0.0, [((1, 0), 0.0, 1.0)])
    g = MetricField(ConformalFactor(u, 0.0), FourierScalar(0.0), ConformalFactor(u, 0.0))
    Hc = geodesic_hamiltonian(g)
    Hf = geodesic_hamiltonian(MetricField.constant(1, 1, 0))
    rng = np.random.default_rng(3)
    for _ in range(25):
        y = rng.uniform(-1, 1, 4)
        assert Hc.value_scalar(*y) == Hf.value_scalar(*y)


def test_gaussian_curvature_flat_zero():
    g = MetricField.constant(1, 1, 0)
    for th in [(0.0, 0.0), (0.3, 0.9)]:
        assert gaussian_curvature(g, th) == pytest.approx(0.0, abs=1e-14)


def test_gaussian_curvature_revolution_equators():
    g = revolution_metric(2.0, 1.0)
    assert gaussian_curvature(g, (0.5, 0.0)) == pytest.approx(-1.0, rel=1e-10)
    assert gaussian_curvature(g, (0.0, 0.0)) == pytest.approx(1.0 / 3.0, rel=1e-10)


# ---------------------------------------------------------------------------
# C^5 normalization


def test_c5_normalize_single_cosine():
    f = FourierPerturbation.single((1, 0), amplitude=0.37)
    g = c5_normalize(f)
    # dominant derivative is order 5 in theta1, so the amplitude is (2 pi)^-5
    assert g.terms[0].amplitude == pytest.approx(KAPPA, rel=1e-12)
    assert 0.99 <= g.normalization <= 1.01


def test_c5_normalize_idempotent():
    f = c5_normalize(FourierPerturbation.single((1, 1), amplitude=2.2))
    g = c5_normalize(f)
    assert g.terms[0].amplitude == pytest.approx(f.terms[0].amplitude, rel=1e-2)


def test_c5_normalize_constant():
    f = FourierPerturbation([FourierTerm((0, 0), 0.0, 5.5)])
    g = c5_normalize(f)
    assert g.terms[0].amplitude == pytest.approx(1.0, rel=1e-12)


def test_c5_normalize_rejects_zero():
    with pytest.raises(DomainError):
        c5_normalize(FourierPerturbation([FourierTerm((1, 0), 0.0, 0.0)]))


# ---------------------------------------------------------------------------
# serialization round trip


def test_hamiltonian_json_round_trip():
    f = FourierPerturbation(
        [FourierTerm((1, -2), 0.4, 0.25, Poly2([[1.0, 0.2], [0.0, 0.3]]))],
        normalization=1.0,
    )
    H = NearIntegrableHamiltonian(QuadraticForm(1.1, 0.9, -0.5), f, 0.02)
    H2 = hamiltonian_from_dict(H.to_dict())
    y = (0.12, 0.93, 0.4, -0.2)
    assert H2.value_scalar(*y) == H.value_scalar(*y)
    assert H2.field_scalar(*y) == H.field_scalar(*y)


def test_metric_json_round_trip():
    g = revolution_metric()
    g2 = MetricField.from_dict(g.to_dict())
    assert g2.coeffs(0.3, 0.1) == g.coeffs(0.3, 0.1)
