import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruslab import (
    FourierPerturbation,
    FourierTerm,
    NearIntegrableHamiltonian,
    QuadraticForm,
)
from toruslab.errors import (
    ConstructionError,
    DomainExitError,
    InsufficientSamplingError,
    ShellSolveError,
)
from toruslab.sections import (
    SectionDomain,
    SectionPoint,
    analytic_angle_advance,
    analytic_return_map,
    analytic_return_time,
    birkhoff_graph_test,
    numeric_return_map,
    r1_on_shell,
    section_dataset_to_csv,
    twist_derivative_closed,
    twist_report,
)

KAPPA = (2 * math.pi) ** -5


def flat():
    return NearIntegrableHamiltonian(QuadraticForm(1, 1, 0))


def product_cosine_system(eps):
    f = FourierPerturbation(
        [FourierTerm((1, 1), 0.0, 0.5 * KAPPA), FourierTerm((1, -1), 0.0, 0.5 * KAPPA)]
    )
    return NearIntegrableHamiltonian(QuadraticForm(1, 1, 0), f, eps)


def std_domain(H, window=(-0.6, 0.6)):
    return SectionDomain(0.0, 1.0, 0.5, window).validate(H)


# ---------------------------------------------------------------------------
# on-shell solve


def test_r1_on_shell_values():
    H = flat()
    assert r1_on_shell(H, (0, 0), 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert r1_on_shell(H, (0, 0), 0.5, 1.0) == pytest.approx(math.sqrt(0.75), abs=1e-12)
    H2 = NearIntegrableHamiltonian(QuadraticForm(1, 2, 1))
    expect = (-0.2 + math.sqrt(0.04 + 4 * 0.92)) / 2  # positive root of r^2 + 0.2 r - 0.92
    assert r1_on_shell(H2, (0, 0), 0.2, 1.0) == pytest.approx(expect, abs=1e-12)


def test_r1_on_shell_no_root():
    with pytest.raises(ShellSolveError):
        r1_on_shell(flat(), (0, 0), 2.0, 1.0)  # r2^2 > e: no real root


def test_r1_on_shell_residual_perturbed():
    H = product_cosine_system(1e-2)
    th = (0.0, 0.31)
    r1 = r1_on_shell(H, th, 0.4, 1.0)
    assert abs(H.value_scalar(th[0], th[1], r1, 0.4) - 1.0) <= 1e-12


# ---------------------------------------------------------------------------
# analytic map and twist


def test_analytic_return_map_circular():
    h = QuadraticForm(1, 1, 0)
    q = analytic_return_map(h, SectionPoint(0.25, 0.0))
    assert q.theta2 == pytest.approx(0.25) and q.r2 == 0.0
    q2 = analytic_return_map(h, SectionPoint(0.0, 0.5))
    assert q2.theta2 == pytest.approx(0.5 / math.sqrt(0.75), abs=1e-14)
    assert q2.r2 == 0.5  # actions frozen


def test_analytic_return_time():
    h = QuadraticForm(1, 1, 0)
    assert analytic_return_time(h, 0.0) == pytest.approx(0.5, abs=1e-15)
    assert analytic_return_time(h, 0.5) == pytest.approx(1 / (2 * math.sqrt(0.75)), abs=1e-15)


def test_twist_derivative_closed_values():
    h = QuadraticForm(1, 1, 0)
    assert twist_derivative_closed(h, 0.0) == pytest.approx(1.0, abs=1e-14)
    assert twist_derivative_closed(h, 0.5) == pytest.approx(0.75**-1.5, abs=1e-12)


def test_twist_matches_fd_of_analytic_map():
    h = QuadraticForm(1.0, 1.3, 0.7)
    d = 1e-5
    for r2 in np.linspace(-0.5, 0.5, 7):
        fd = (analytic_angle_advance(h, r2 + d) - analytic_angle_advance(h, r2 - d)) / (2 * d)
        assert abs(fd - twist_derivative_closed(h, r2)) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(0.3, 2.5),
    b=st.floats(0.3, 2.5),
    cfrac=st.floats(-0.9, 0.9),
    r2=st.floats(-0.5, 0.5),
)
def test_twist_strictly_positive(a, b, cfrac, r2):
    c = cfrac * 2 * math.sqrt(a * b)
    h = QuadraticForm(a, b, c)
    # keep the sample on the shell interior
    if h.value(np.array([0.0, r2])) >= 0.95:
        return
    assert twist_derivative_closed(h, r2) > 0.0


# ---------------------------------------------------------------------------
# numeric return map


def test_numeric_matches_analytic_on_grid():
    H = flat()
    h = H.h
    dom = std_domain(H)
    worst = 0.0
    for i in range(6):
        for j in range(6):
            p = SectionPoint(i / 6, -0.6 + 1.2 * j / 5)
            a = analytic_return_map(h, p)
            n = numeric_return_map(H, dom, p)
            dth = abs(n.image.theta2 - a.theta2)
            worst = max(worst, min(dth, 1 - dth), abs(n.image.r2 - a.r2))
    assert worst <= 1e-9


def test_numeric_return_time_center():
    s = numeric_return_map(flat(), std_domain(flat()), SectionPoint(0.0, 0.0))
    assert s.return_time == pytest.approx(0.5, abs=1e-10)
    assert s.image.theta2 == pytest.approx(0.0, abs=1e-12)


def test_numeric_return_domain_guard():
    # a window reaching past the shell edge fails validation
    with pytest.raises((ConstructionError, ShellSolveError)):
        SectionDomain(0.0, 1.0, 0.5, (-0.999, 0.999)).validate(flat())


def test_return_map_area_preservation():
    H = product_cosine_system(1e-2)
    dom = std_domain(H)
    c = SectionPoint(0.3, 0.1)
    d = 1e-3
    corners = [
        SectionPoint(c.theta2 - d, c.r2 - d),
        SectionPoint(c.theta2 + d, c.r2 - d),
        SectionPoint(c.theta2 + d, c.r2 + d),
        SectionPoint(c.theta2 - d, c.r2 + d),
    ]
    imgs = [numeric_return_map(H, dom, p).image for p in corners]

    def shoelace(pts, lift):
        xs = []
        prev = None
        for p in pts:
            x = p.theta2
            if prev is not None and lift:
                while x < prev - 0.5:
                    x += 1.0
                while x > prev + 0.5:
                    x -= 1.0
            prev = x
            xs.append((x, p.r2))
        area = 0.0
        for i in range(len(xs)):
            x1, y1 = xs[i]
            x2, y2 = xs[(i + 1) % len(xs)]
            area += x1 * y2 - x2 * y1
        return abs(area) / 2

    a0 = shoelace(corners, lift=False)
    a1 = shoelace(imgs, lift=True)
    assert abs(a1 - a0) / a0 <= 1e-5


def test_twist_report_eps0_matches_closed_form():
    H = flat()
    rep = twist_report(H, std_domain(H), (4, 4))
    gaps = [abs(fd - closed) for _, fd, closed in rep.grid]
    assert max(gaps) <= 1e-6
    assert rep.min_twist > 0


def test_twist_report_positive_at_small_eps():
    H = product_cosine_system(1e-3)
    rep = twist_report(H, std_domain(H), (4, 3))
    assert rep.min_twist > 0
    assert all(closed is None for _, _, closed in rep.grid)


# ---------------------------------------------------------------------------
# Birkhoff graph test


def test_birkhoff_horizontal_circle():
    pts = [SectionPoint(i / 300, 0.3) for i in range(300)]
    v = birkhoff_graph_test(pts, window=1.2)
    assert v.essential and v.graph
    assert v.lipschitz == 0.0 and v.max_residual == 0.0
    assert v.winding == 1


def test_birkhoff_librational_ellipse_not_essential():
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    pts = np.stack([0.5 + 0.1 * np.cos(t), 0.2 * np.sin(t)], axis=-1)
    v = birkhoff_graph_test(pts, window=1.2)
    assert not v.essential and v.winding == 0
    assert not v.graph


def test_birkhoff_too_few_points():
    with pytest.raises(InsufficientSamplingError):
        birkhoff_graph_test([SectionPoint(i / 100, 0.0) for i in range(100)])


def test_birkhoff_low_coverage_essential_raises():
    # winding-1 data concentrated on half the circle cannot be certified
    pts = [SectionPoint(0.5 * i / 400, 0.1) for i in range(400)]
    with pytest.raises(InsufficientSamplingError):
        birkhoff_graph_test(pts, window=1.0)


def test_birkhoff_wavy_graph_lipschitz():
    th = np.arange(512) / 512
    r = 0.2 + 0.01 * np.sin(2 * np.pi * th)
    v = birkhoff_graph_test(np.stack([th, r], axis=-1), window=1.2, spread_tol=1e-3)
    assert v.essential and v.graph
    # slope bounded by the analytic maximum 0.02 pi, with binning slack
    assert v.lipschitz <= 0.02 * np.pi * 1.2


def test_section_csv_export(tmp_path):
    H = flat()
    dom = std_domain(H)
    samples = [numeric_return_map(H, dom, SectionPoint(i / 4, 0.1)) for i in range(4)]
    path = tmp_path / "section.csv"
    section_dataset_to_csv(samples, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "theta2,r2,theta2_image,r2_image,return_time"
    assert len(lines) == 5
