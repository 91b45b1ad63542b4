import math

import numpy as np
import pytest

from toruslab import (
    FourierPerturbation,
    MetricField,
    NearIntegrableHamiltonian,
    PhaseState,
    QuadraticForm,
    geodesic_hamiltonian,
    integrate,
)
from toruslab.errors import DomainError, NoOrbitError
from toruslab.metrics import build_metric
from toruslab.sections import SectionDomain
from toruslab.stability import (
    floquet,
    hyperbolic_search,
    jacobi_conjugate_scan,
    orbit_catalog_json,
    refine_periodic,
)

TWO_PI = 2 * math.pi
KAPPA = TWO_PI**-5


def revolution(R0=2.0, rho=1.0):
    return build_metric({"kind": "revolution", "R0": R0, "rho": rho}).realized


def pendulum_system(eps=1e-2):
    f = FourierPerturbation.single((1, 0), amplitude=KAPPA)
    return NearIntegrableHamiltonian(QuadraticForm(1, 1, 0), f, eps)


def test_refine_flat_closed_geodesic():
    H = geodesic_hamiltonian(MetricField.constant(1, 1, 0))
    orb = refine_periodic(H, PhaseState((0, 0), (1, 0)), 0.5)
    assert orb.residual <= 1e-9
    assert orb.period == pytest.approx(0.5, abs=1e-9)
    rep = floquet(H, orb)
    assert rep.orbit_class == "parabolic"


def test_refine_rejects_random_guess():
    H = geodesic_hamiltonian(MetricField.constant(1, 1, 0))
    with pytest.raises(NoOrbitError):
        refine_periodic(H, PhaseState((0.21, 0.88), (0.8, 0.6)), 0.77)


def test_revolution_inner_equator_hyperbolic():
    g = revolution()
    H = geodesic_hamiltonian(g)
    orb = refine_periodic(H, PhaseState((0.5, 0.0), (0.0, TWO_PI)), math.pi, step=2e-3)
    assert orb.residual <= 1e-10
    rep = floquet(H, orb, step=2e-3)
    assert rep.orbit_class == "hyperbolic"
    assert rep.multipliers[0].real == pytest.approx(math.exp(TWO_PI), rel=1e-3)
    assert rep.product_error <= 1e-6
    assert rep.trivial_pair_error <= 1e-4
    assert rep.bott_index_label == "1"


def test_revolution_outer_equator_elliptic():
    g = revolution()
    H = geodesic_hamiltonian(g)
    orb = refine_periodic(H, PhaseState((0.0, 0.0), (0.0, 3 * TWO_PI)), 3 * math.pi, step=2e-3)
    rep = floquet(H, orb, step=2e-3)
    assert rep.orbit_class == "elliptic"
    assert abs(abs(rep.multipliers[0]) - 1.0) <= 1e-4
    expected = 2 * math.pi * math.sqrt(3)
    wrapped = expected % (2 * math.pi)
    expected_arg = min(wrapped, 2 * math.pi - wrapped)
    assert rep.rotation_angle == pytest.approx(expected_arg, rel=1e-2)
    assert rep.product_error <= 1e-6


def test_jacobi_flat_no_conjugate_points():
    g = MetricField.constant(1, 1, 0)
    H = geodesic_hamiltonian(g)
    traj = integrate(H, PhaseState((0, 0), (0.6, 0.8)), 1.0, 1e-2)
    assert jacobi_conjugate_scan(g, traj, 50.0, step=5e-3) == []


def test_jacobi_outer_equator_conjugate_point():
    g = revolution()
    H = geodesic_hamiltonian(g)
    traj = integrate(H, PhaseState((0.0, 0.0), (0.0, 3 * TWO_PI)), 2.0, 2e-3)
    zeros = jacobi_conjugate_scan(g, traj, 6.0, step=2e-3)
    assert len(zeros) == 1
    assert zeros[0] == pytest.approx(math.pi * math.sqrt(3), abs=1e-3)


def test_jacobi_inner_equator_no_conjugate_points():
    g = revolution()
    H = geodesic_hamiltonian(g)
    traj = integrate(H, PhaseState((0.5, 0.0), (0.0, TWO_PI)), 2.0, 2e-3)
    assert jacobi_conjugate_scan(g, traj, 8.0, step=2e-3) == []


def test_jacobi_rejects_non_geodesic_input():
    g = revolution()
    flat_H = geodesic_hamiltonian(MetricField.constant(1, 1, 0))
    traj = integrate(flat_H, PhaseState((0, 0), (0.6, 0.8)), 1.0, 1e-2)
    # orbit of the wrong Hamiltonian: energy of g-geodesic flow not conserved
    with pytest.raises(DomainError):
        # forge a non-constant energy by perturbing a sample
        bad = traj
        bad.states[len(bad.states) // 2, 2] += 0.1
        object.__setattr__(bad, "energy_drift", 1.0)
        jacobi_conjugate_scan(g, bad, 10.0)


def test_hyperbolic_search_pendulum_resonance():
    H = pendulum_system(1e-2)
    dom = SectionDomain(0.0, 1.0, 1.0, (-0.05, 0.05), axis=2)
    results = hyperbolic_search(H, dom, (6, 5), periods=(1,))
    classes = sorted(rep.orbit_class for _, rep in results)
    assert "hyperbolic" in classes and "elliptic" in classes
    hyp = [rep for _, rep in results if rep.orbit_class == "hyperbolic"][0]
    eps_k = 1e-2 * KAPPA
    lam = TWO_PI * math.sqrt(2 * eps_k)
    tau = 1 / (2 * math.sqrt(1 - eps_k))
    assert hyp.multipliers[0].real == pytest.approx(math.exp(lam * tau), rel=1e-6)
    assert hyp.multipliers[0].real > 1 + 1e-3
    # hyperbolic orbit sits at theta1 = 0, the elliptic partner at 1/2
    horb = [o for o, rep in results if rep.orbit_class == "hyperbolic"][0]
    assert min(horb.x0.theta[0], 1 - horb.x0.theta[0]) == pytest.approx(0.0, abs=1e-6)


def test_hyperbolic_search_integrable_finds_nothing_nondegenerate():
    H = NearIntegrableHamiltonian(QuadraticForm(1, 1, 0))
    dom = SectionDomain(0.0, 1.0, 0.5, (-0.4, 0.4))
    results = hyperbolic_search(H, dom, (4, 3), periods=(1, 2))
    assert all(rep.orbit_class == "parabolic" for _, rep in results)


def test_orbit_catalog_json_shape():
    H = pendulum_system(1e-2)
    dom = SectionDomain(0.0, 1.0, 1.0, (-0.05, 0.05), axis=2)
    results = hyperbolic_search(H, dom, (4, 3), periods=(1,))
    catalog = orbit_catalog_json(results)
    assert catalog, "search found nothing"
    entry = catalog[0]
    assert set(entry) == {
        "theta", "r", "period", "residual", "multipliers", "class",
        "trivial_pair_error", "bott_index",
    }
    assert all(len(m) == 2 for m in entry["multipliers"])
