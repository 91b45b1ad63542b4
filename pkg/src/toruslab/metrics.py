"""Concrete metric families on T^2 and the flatness-vs-hyperbolicity pipeline.

The pipeline gathers three kinds of evidence on the unit cotangent bundle of a
metric: (i) do sampled orbits lie on graph tori over the angle torus, (ii) do
sampled geodesics develop conjugate points, (iii) does a section search find
nondegenerate closed orbits.  The verdict class follows the dichotomy rule:
class 2 exactly when a hyperbolic orbit was found; integrable/flat-like flows
are class 1; class 0 is reserved for frozen systems (constant Hamiltonians),
which geodesic flows never are.  Graph evidence is an ensemble statistic, not
a foliation claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, ToruslabError
from .flow import integrate
from .hamiltonians import (
    ConformalFactor,
    FourierScalar,
    GeodesicHamiltonian,
    MetricField,
    PhaseState,
    geodesic_hamiltonian,
)
from .kam import fit_invariant_torus
from .sections import SectionDomain, r1_on_shell
from .stability import hyperbolic_search, jacobi_conjugate_scan, orbit_catalog_json

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MetricFamily:
    """A named metric family member and its realized coefficient field."""

    kind: str  # flat | conformal | revolution
    params: dict
    realized: MetricField

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return build_metric(d)


def build_metric(spec) -> MetricFamily:
    """Realize a metric family member from {"kind": ..., <parameters>}.

    flat: constant coefficients a, b, c (ds^2 = a dth1^2 + 2c dth1 dth2 + b dth2^2).
    conformal: e^{2 * amplitude * u} * flat identity, u a Fourier scalar.
    revolution: torus of revolution with radii R0 > rho > 0, in unit-period
    angles (theta1 the meridian, theta2 the rotation angle).
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    params = dict(spec.get("params", spec))
    if kind == "flat":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 1.0))
        c = float(params.get("c", 0.0))
        realized = MetricField.constant(a, b, c)
        return MetricFamily("flat", {"a": a, "b": b, "c": c}, realized)
    if kind == "conformal":
        amp = float(params.get("amplitude", 0.0))
        u = params.get("u")
        if not isinstance(u, FourierScalar):
            u = FourierScalar.from_dict(u) if u else FourierScalar(0.0)
        factor = ConformalFactor(u, amp)
        realized = MetricField(factor, FourierScalar(0.0), ConformalFactor(u, amp))
        return MetricFamily("conformal", {"amplitude": amp, "u": u.to_dict()}, realized)
    if kind == "revolution":
        R0 = float(params.get("R0", 2.0))
        rho = float(params.get("rho", 1.0))
        if not (R0 > rho > 0.0):
            raise ConstructionError(f"revolution torus needs R0 > rho > 0, got {R0}, {rho}")
        g11 = FourierScalar(TWO_PI**2 * rho**2)
        g22 = FourierScalar(
            TWO_PI**2 * (R0**2 + 0.5 * rho**2),
            [((1, 0), 0.0, TWO_PI**2 * 2.0 * R0 * rho), ((2, 0), 0.0, TWO_PI**2 * 0.5 * rho**2)],
        )
        realized = MetricField(g11, FourierScalar(0.0), g22)
        return MetricFamily("revolution", {"R0": R0, "rho": rho}, realized)
    raise ConstructionError(f"unknown metric kind {kind!r}")


def clairaut_integral(family: MetricFamily, x: PhaseState):
    """Angular momentum p2 of a revolution-torus geodesic (the conserved
    integral of the rotational symmetry)."""
    if family.kind != "revolution":
        raise TypeError(f"clairaut_integral needs a revolution metric, got {family.kind}")
    return float(x.r[1])


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class PipelineBudget:
    """Knobs for the evidence pipeline, sized for desk-scale runs."""

    n_orbits: int = 10
    fit_T: float = 150.0
    fit_step: float = 2e-3
    fit_stride: int = 5
    fit_bins: int = 32
    fit_tolerance: float = 1e-5
    jacobi_L: float = 60.0
    jacobi_step: float = 2e-3
    search_seeds: tuple = (5, 5)
    search_periods: tuple = (1, 2)
    search_step: float = 1e-3
    energy: float = 1.0


@dataclass
class SystemVerdict:
    """Outcome of the evidence pipeline; hpol_class = 2 iff a hyperbolic
    orbit is in the list (0 is reserved for frozen Hamiltonians)."""

    has_graph_foliation_evidence: bool
    has_conjugate_points: bool
    hyperbolic_orbits: list
    hpol_class: int
    notes: list = field(default_factory=list)

    def to_json_dict(self):
        return {
            "has_graph_foliation_evidence": self.has_graph_foliation_evidence,
            "has_conjugate_points": self.has_conjugate_points,
            "hyperbolic_orbits": self.hyperbolic_orbits,
            "hpol_class": self.hpol_class,
            "notes": list(self.notes),
        }

    def summary(self):
        lines = [
            f"graph-foliation evidence: {self.has_graph_foliation_evidence}",
            f"conjugate points found:   {self.has_conjugate_points}",
            f"hyperbolic orbits found:  {len(self.hyperbolic_orbits)}",
            f"hpol class:               {self.hpol_class}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def _unit_bundle_seeds(H, n, e=1.0):
    """Deterministic spread of unit-bundle initial conditions.

    Momentum directions and base points advance by low-discrepancy steps;
    momenta are scaled onto H = e exactly.
    """
    seeds = []
    golden = (math.sqrt(5) - 1) / 2
    for k in range(n):
        th = ((0.17 + k * golden) % 1.0, (0.39 + k * (golden * golden)) % 1.0)
        phi = TWO_PI * ((k + 0.31) / n)
        d = (math.cos(phi), math.sin(phi))
        q = H.value_scalar(th[0], th[1], d[0], d[1])
        s = math.sqrt(e / q)
        seeds.append(PhaseState(th, (s * d[0], s * d[1])))
    return seeds


def _auto_section_domain(H, e=1.0, axis=2, frac=0.35):
    """A section window around r_axis-conjugate momentum 0 with a safe alpha."""
    Hs = H.swapped() if axis == 2 else H
    # momentum cap along the lifted coordinate at the section angle
    cap = math.sqrt(e / Hs.value_scalar(0.0, 0.0, 0.0, 1.0))
    window = (-frac * cap, frac * cap)
    speeds = []
    for t2 in np.linspace(0.0, 1.0, 9):
        for r2 in np.linspace(window[0], window[1], 9):
            r1 = r1_on_shell(Hs, (0.0, t2), float(r2), e)
            speeds.append(Hs.field_scalar(0.0, t2, r1, float(r2))[0])
    alpha = 0.5 * min(speeds)
    return SectionDomain(0.0, e, alpha, window, axis=axis)


def theorem_a_pipeline(family: MetricFamily, budget: PipelineBudget | None = None) -> SystemVerdict:
    """Run the graph-fit, conjugate-point and closed-orbit stages on a metric."""
    budget = budget or PipelineBudget()
    H = geodesic_hamiltonian(family.realized)
    e = budget.energy
    notes = []

    # (i) invariant-torus graph fits over an orbit ensemble
    graph, notgraph, insufficient = 0, 0, 0
    trajs = []
    for x0 in _unit_bundle_seeds(H, budget.n_orbits, e):
        traj = integrate(H, x0, budget.fit_T, budget.fit_step, sample_every=budget.fit_stride)
        trajs.append(traj)
        fit = fit_invariant_torus(traj, bins=budget.fit_bins, tolerance=budget.fit_tolerance)
        if fit.verdict == "graph":
            graph += 1
        elif fit.verdict == "not-graph":
            notgraph += 1
        else:
            insufficient += 1
    decided = graph + notgraph
    evidence = decided > 0 and notgraph == 0 and decided >= 0.8 * budget.n_orbits
    notes.append(f"torus fits: {graph} graph, {notgraph} not-graph, {insufficient} insufficient")

    # (ii) conjugate points along the same ensemble
    conj = 0
    for traj in trajs:
        if jacobi_conjugate_scan(family.realized, traj, budget.jacobi_L, step=budget.jacobi_step):
            conj += 1
    notes.append(f"conjugate points on {conj}/{len(trajs)} sampled geodesics")

    # (iii) closed orbits from the section search
    hyperbolic = []
    try:
        dom = _auto_section_domain(H, e)
        results = hyperbolic_search(
            H, dom, budget.search_seeds, periods=budget.search_periods, step=budget.search_step
        )
        catalog = orbit_catalog_json(results)
        hyperbolic = [c for c in catalog if c["class"] == "hyperbolic"]
        notes.append(
            f"search: {len(catalog)} orbits "
            f"({sum(1 for c in catalog if c['class'] == 'elliptic')} elliptic, "
            f"{len(hyperbolic)} hyperbolic)"
        )
    except ToruslabError as err:
        notes.append(f"search inconclusive: {err}")

    hpol_class = 2 if hyperbolic else 1
    return SystemVerdict(evidence, conj > 0, hyperbolic, hpol_class, notes)


def verdict_for_hamiltonian(H, dom: SectionDomain, seeds, periods=(1,), step=1e-3, notes=None) -> SystemVerdict:
    """Dichotomy verdict for a near-integrable Hamiltonian from a section search."""
    results = hyperbolic_search(H, dom, seeds, periods=periods, step=step)
    catalog = orbit_catalog_json(results)
    hyperbolic = [c for c in catalog if c["class"] == "hyperbolic"]
    out_notes = list(notes or [])
    out_notes.append(
        f"search: {len(catalog)} orbits, {len(hyperbolic)} hyperbolic, "
        f"{sum(1 for c in catalog if c['class'] == 'elliptic')} elliptic"
    )
    return SystemVerdict(False, False, hyperbolic, 2 if hyperbolic else 1, out_notes)
