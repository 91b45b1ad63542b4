"""Command-line experiment runner.

Single flag-driven interface (no subcommands): ``--scenario`` picks one of
flat-baseline, kam-sweep, twist-check, revolution-torus, entropy-table,
pipeline; ``--config`` merges a JSON file over the scenario defaults;
``--set key=value`` overrides individual (dotted) keys; ``--out`` picks the
output directory (default: $TORUSLAB_OUT or ./toruslab-out).

Every run writes manifest.json (config echo + versions + wall time) plus
scenario-specific CSV/JSON artifacts.  Outputs are byte-identical across runs
and worker counts (wall-time fields aside): all randomness flows from the
single ``seed`` key, grids are deterministic, and parallel reductions are
collected in index order.

Exit codes: 0 success, 2 config validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, ToruslabError
from .entropy import CoverTable, CoveringLab, HpolEstimate, NetSpec, ShellNet, hpol_estimate
from .flow import integrate
from .hamiltonians import (
    FourierPerturbation,
    FourierTerm,
    NearIntegrableHamiltonian,
    PhaseState,
    QuadraticForm,
    hamiltonian_from_dict,
)
from .kam import fit_confinement_delta, kam_survival_scan, scan_rows_to_csv
from .metrics import (
    MetricFamily,
    PipelineBudget,
    build_metric,
    clairaut_integral,
    theorem_a_pipeline,
    verdict_for_hamiltonian,
)
from .sections import SectionDomain, SectionPoint, twist_report
from .stability import floquet, jacobi_conjugate_scan, orbit_catalog_json, refine_periodic

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
KAPPA5 = (2.0 * math.pi) ** -5  # C^5-normalized amplitude of a single cosine


def _default_system():
    """h = r1^2 + r2^2 with the C^5-normalized product perturbation."""
    return {
        "type": "near_integrable",
        "h": {"a": 1.0, "b": 1.0, "c": 0.0},
        "f": {
            "terms": [
                {"k": [1, 1], "phase": 0.0, "amplitude": 0.5 * KAPPA5, "radial": [[1.0]]},
                {"k": [1, -1], "phase": 0.0, "amplitude": 0.5 * KAPPA5, "radial": [[1.0]]},
            ],
            "normalization": 1.0,
        },
        "epsilon": 0.0,
    }


SCENARIO_DEFAULTS = {
    "twist-check": {
        "system": _default_system(),
        "params": {
            "epsilon": 1e-3,
            "grid": [8, 8],
            "window": [-0.6, 0.6],
            "theta0": 0.0,
            "alpha": 0.5,
            "energy": 1.0,
            "delta": 1e-4,
            "step": 1e-3,
        },
    },
    "kam-sweep": {
        "system": _default_system(),
        "params": {
            "targets": [[1.0, GOLDEN], [1.0, 1.0]],
            "eps_ladder": [1e-5, 1e-4, 1e-3, 1e-2],
            "T": 200.0,
            "step": 1e-3,
            "bins": 64,
            "stride": 10,
            "tau": 2.0,
            "K": 50,
            "gamma_min": 1e-3,
            "energy": 1.0,
        },
    },
    "flat-baseline": {
        "system": {"type": "near_integrable", "h": {"a": 1.0, "b": 1.0, "c": 0.0}, "epsilon": 0.0},
        "params": {
            # the arc window keeps the t in [10, 300] window inside the
            # linear-shear scaling regime of the 64-sample section net
            "net": {"n_theta1": 100, "n_theta2": 100, "n_arc": 64,
                    "arc_center": 0.13, "arc_width": 2.93e-3, "budget": 1000000},
            "delta": 1.0,
            "times": [10.0, 20.0, 40.0, 79.0, 158.0, 300.0],
            "ladder_fractions": [0.4, 0.2, 0.1],
            "window": [10.0, 300.0],
        },
    },
    "entropy-table": {
        "system": _default_system(),
        "params": {
            "synthetic": None,  # "ceil_t_squared" | "constant" bypass the flow
            "net": {"n_theta1": 24, "n_theta2": 24, "n_arc": 32,
                    "arc_center": 0.13, "arc_width": 0.01, "budget": 20000},
            "delta": 1.0,
            "step": 1e-2,
            "times": [10.0, 20.0, 40.0, 79.0, 158.0, 300.0],
            "ladder_fractions": [0.4, 0.2, 0.1],
            "window": [10.0, 300.0],
        },
    },
    "revolution-torus": {
        "system": {"kind": "revolution", "R0": 2.0, "rho": 1.0},
        "params": {
            "step": 1e-3,
            "jacobi_L": 12.0,
            "jacobi_step": 1e-3,
            "clairaut_T": 50.0,
            "clairaut_step": 1e-2,
            "energy": 1.0,
        },
    },
    "pipeline": {
        "system": {"kind": "flat", "a": 1.0, "b": 1.0, "c": 0.0},
        "params": {
            "n_orbits": 8,
            "fit_T": 120.0,
            "fit_step": 2e-3,
            "fit_bins": 32,
            "fit_tolerance": 1e-5,
            "jacobi_L": 40.0,
            "jacobi_step": 2e-3,
            "search_seeds": [5, 5],
            "search_periods": [1, 2],
            "search_step": 1e-3,
            "energy": 1.0,
            # used only for near-integrable systems:
            "section": {"theta0": 0.0, "alpha": 1.0, "window": [-0.05, 0.05], "axis": 2},
        },
    },
}

_TOP_KEYS = {"scenario", "system", "params", "seed", "workers"}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = dict(defaults)
    for k, v in override.items():
        if k not in defaults:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(defaults[k], dict):
            out[k] = _merge(defaults[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def build_config(scenario, file_cfg=None, sets=None):
    if scenario not in SCENARIO_DEFAULTS:
        raise ConfigError(
            f"unknown scenario {scenario!r}; choose from {sorted(SCENARIO_DEFAULTS)}"
        )
    cfg = {
        "scenario": scenario,
        "system": SCENARIO_DEFAULTS[scenario]["system"],
        "params": SCENARIO_DEFAULTS[scenario]["params"],
        "seed": 0,
        "workers": 1,
    }
    if file_cfg:
        for k in file_cfg:
            if k not in _TOP_KEYS:
                raise ConfigError(f"unknown config key {k!r}")
        if "scenario" in file_cfg and file_cfg["scenario"] != scenario:
            raise ConfigError("config file scenario does not match --scenario")
        if "system" in file_cfg:
            cfg["system"] = file_cfg["system"]
        if "params" in file_cfg:
            cfg["params"] = _merge(cfg["params"], file_cfg["params"], "params.")
        for k in ("seed", "workers"):
            if k in file_cfg:
                cfg[k] = int(file_cfg[k])
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = val
    return cfg


# ---------------------------------------------------------------------------
# Output helpers


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(outdir, cfg, t0):
    _write_json(
        os.path.join(outdir, "manifest.json"),
        {
            "config": cfg,
            "versions": {
                "toruslab": __version__,
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "wall_time_s": time.time() - t0,
        },
    )


def _pmap(fn, payloads, workers):
    """Deterministic parallel map: results returned in input order."""
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, payloads, chunksize=max(1, len(payloads) // (4 * workers))))


# ---------------------------------------------------------------------------
# Scenario implementations


def _twist_cell(payload):
    H, dom, p, delta, step = payload
    from .sections import _fd_twist, twist_derivative_closed

    fd = _fd_twist(H, dom, p, delta, step)
    fd_half = _fd_twist(H, dom, p, 0.5 * delta, step)
    closed = None
    if isinstance(H, NearIntegrableHamiltonian) and H.epsilon == 0.0:
        hh = H.h if dom.axis == 1 else H.h.swapped()
        closed = twist_derivative_closed(hh, p.r2, dom.energy)
    return fd, fd_half, closed


def _run_twist_check(cfg, outdir):
    par = cfg["params"]
    sysd = dict(cfg["system"])
    sysd["epsilon"] = float(par["epsilon"])
    if sysd["epsilon"] == 0.0:
        sysd.pop("f", None)
    H = hamiltonian_from_dict(sysd)
    dom = SectionDomain(
        float(par["theta0"]), float(par["energy"]), float(par["alpha"]), tuple(par["window"])
    ).validate(H)
    n_t, n_r = par["grid"]
    delta, step = float(par["delta"]), float(par["step"])
    lo, hi = dom.window[0] + 2 * delta, dom.window[1] - 2 * delta
    pts = [
        SectionPoint(i / n_t, lo + (hi - lo) * j / max(n_r - 1, 1))
        for i in range(n_t)
        for j in range(n_r)
    ]
    rows = _pmap(_twist_cell, [(H, dom, p, delta, step) for p in pts], cfg["workers"])
    entries = []
    max_rich = 0.0
    max_gap = None
    for p, (fd, fd_half, closed) in zip(pts, rows):
        entries.append({"theta2": p.theta2, "r2": p.r2, "twist_fd": fd, "twist_closed": closed})
        max_rich = max(max_rich, abs(fd - fd_half))
        if closed is not None:
            gap = abs(fd - closed)
            max_gap = gap if max_gap is None else max(max_gap, gap)
    report = {
        "delta": delta,
        "epsilon": sysd["epsilon"],
        "min_twist": min(e["twist_fd"] for e in entries),
        "max_richardson_err": max_rich,
        "max_fd_closed_gap": max_gap,
        "grid": entries,
    }
    _write_json(os.path.join(outdir, "twist.json"), report)
    with open(os.path.join(outdir, "twist.csv"), "w", newline="") as fh:
        fh.write("theta2,r2,twist_fd,twist_closed\n")
        for e in entries:
            closed = "" if e["twist_closed"] is None else repr(e["twist_closed"])
            fh.write(f"{e['theta2']!r},{e['r2']!r},{e['twist_fd']!r},{closed}\n")
    print(f"twist-check: min_twist={report['min_twist']:.6g} max_fd_closed_gap={max_gap}")


def _kam_cell(payload):
    h, f, target, eps, par = payload
    rows = kam_survival_scan(
        h,
        f,
        [target],
        [eps],
        e=par["energy"],
        T=par["T"],
        step=par["step"],
        bins=par["bins"],
        sample_stride=par["stride"],
        tau=par["tau"],
        K=par["K"],
        gamma_min=par["gamma_min"],
    )
    return rows[0]


def _run_kam_sweep(cfg, outdir):
    par = cfg["params"]
    sysd = cfg["system"]
    H0 = hamiltonian_from_dict(sysd)
    h, f = H0.h, H0.f
    payloads = [
        (h, f, tuple(map(float, tgt)), float(eps), par)
        for tgt in par["targets"]
        for eps in par["eps_ladder"]
    ]
    rows = _pmap(_kam_cell, payloads, cfg["workers"])
    scan_rows_to_csv(rows, os.path.join(outdir, "kam_scan.csv"))
    delta, ratios = fit_confinement_delta(rows)
    summary = {
        "delta_fit": delta,
        "ratios_dev_over_sqrt_eps": ratios,
        "all_graph": all(r.verdict == "graph" for r in rows if r.verdict != "skipped"),
        "rows": [
            {"omega": list(r.omega), "eps": r.eps, "verdict": r.verdict, "deviation": r.deviation}
            for r in rows
        ],
    }
    _write_json(os.path.join(outdir, "kam_summary.json"), summary)
    print(f"kam-sweep: {len(rows)} cells, all_graph={summary['all_graph']}, delta={delta:.4g}")


def _entropy_common(cfg, outdir, net_par, par, H):
    spec = NetSpec(
        int(net_par["n_theta1"]),
        int(net_par["n_theta2"]),
        int(net_par["n_arc"]),
        arc_window=(float(net_par["arc_center"]), float(net_par["arc_width"])),
        budget=int(net_par["budget"]),
        seed=int(cfg["seed"]),
    )
    net = ShellNet(spec, H.h)
    diam = 0.5 * math.sqrt(2.0)
    epsilons = sorted(float(fr) * diam for fr in par["ladder_fractions"])
    times = [float(t) for t in par["times"]]
    lab = CoveringLab(H, net, float(par["delta"]), max(times), step=float(par.get("step", 1e-2)))
    G = np.zeros((len(times), len(epsilons)), dtype=int)
    for j, eps in enumerate(epsilons):
        for i, t in enumerate(times):
            G[i, j] = lab.count(t, eps)
    table = CoverTable(epsilons, times, G)
    table.to_csv(os.path.join(outdir, "cover_table.csv"))
    est = hpol_estimate(table, window=tuple(par["window"]))
    _write_json(os.path.join(outdir, "hpol.json"), est.to_json_dict())
    return est


def _run_flat_baseline(cfg, outdir):
    par = cfg["params"]
    H = hamiltonian_from_dict(cfg["system"])
    est = _entropy_common(cfg, outdir, par["net"], par, H)
    verdict = {
        "hpol_class": 1,
        "basis": "integrable action-angle flow (class 0 is reserved for frozen Hamiltonians)",
        "measured_slope": est.slope,
        "epsilon_used": est.epsilon_used,
    }
    _write_json(os.path.join(outdir, "verdict.json"), verdict)
    print(f"flat-baseline: slope={est.slope:.3f} at eps={est.epsilon_used:.4f}, hpol_class=1")


def _run_entropy_table(cfg, outdir):
    par = cfg["params"]
    synth = par.get("synthetic")
    if synth:
        times = [float(t) for t in par["times"]]
        eps = sorted(float(fr) for fr in par["ladder_fractions"])
        if synth == "ceil_t_squared":
            col = np.ceil(np.asarray(times) ** 2).astype(int)
        elif synth == "constant":
            col = np.full(len(times), 7, dtype=int)
        else:
            raise ConfigError(f"unknown synthetic table {synth!r}")
        table = CoverTable(eps, times, np.stack([col] * len(eps), axis=-1))
        table.to_csv(os.path.join(outdir, "cover_table.csv"))
        est = hpol_estimate(table, window=tuple(par["window"]))
        _write_json(os.path.join(outdir, "hpol.json"), est.to_json_dict())
        print(f"entropy-table (synthetic {synth}): slope={est.slope:.4f}")
        return
    H = hamiltonian_from_dict(cfg["system"])
    est = _entropy_common(cfg, outdir, par["net"], par, H)
    print(f"entropy-table: slope={est.slope:.3f} at eps={est.epsilon_used:.4f}")


def _run_revolution(cfg, outdir):
    par = cfg["params"]
    family = build_metric(cfg["system"])
    R0, rho = family.params["R0"], family.params["rho"]
    from .hamiltonians import geodesic_hamiltonian

    H = geodesic_hamiltonian(family.realized)
    tp = 2.0 * math.pi
    e = float(par["energy"])
    step = float(par["step"])
    results = []
    conj = {}
    for name, th1, radius in (("inner", 0.5, R0 - rho), ("outer", 0.0, R0 + rho)):
        p2 = tp * radius * math.sqrt(e)
        period = math.pi * radius / math.sqrt(e)
        orbit = refine_periodic(H, PhaseState((th1, 0.0), (0.0, p2)), period, step=step)
        rep = floquet(H, orbit, step=step)
        results.append((orbit, rep))
        traj = integrate(H, orbit.x0, period, step)
        zeros = jacobi_conjugate_scan(
            family.realized, traj, float(par["jacobi_L"]), step=float(par["jacobi_step"])
        )
        conj[name] = zeros
    catalog = orbit_catalog_json(results)
    _write_json(os.path.join(outdir, "orbits.json"), catalog)
    _write_json(
        os.path.join(outdir, "conjugate.json"),
        {k: list(map(float, v)) for k, v in conj.items()},
    )
    # Clairaut drift on a generic orbit
    x0 = PhaseState((0.21, 0.13), (1.1 * tp * rho * 0.3, 0.0))
    xs = x0.as_array()
    q = H.value_scalar(*xs)
    scale = math.sqrt(e / q)
    x0 = PhaseState(x0.theta, scale * x0.r)
    traj = integrate(H, x0, float(par["clairaut_T"]), float(par["clairaut_step"]), sample_every=10)
    p2_vals = traj.states[:, 3]
    drift = float(np.max(np.abs(p2_vals - p2_vals[0])))
    _write_json(os.path.join(outdir, "clairaut.json"), {"p2_drift": drift, "T": par["clairaut_T"]})
    print(
        f"revolution-torus: inner={results[0][1].orbit_class} "
        f"outer={results[1][1].orbit_class} clairaut_drift={drift:.2e}"
    )


def _run_pipeline(cfg, outdir):
    par = cfg["params"]
    sysd = cfg["system"]
    if sysd.get("type") == "near_integrable":
        H = hamiltonian_from_dict(sysd)
        sec = par["section"]
        dom = SectionDomain(
            float(sec["theta0"]), float(par["energy"]), float(sec["alpha"]),
            tuple(sec["window"]), int(sec["axis"]),
        )
        verdict = verdict_for_hamiltonian(
            H, dom, tuple(par["search_seeds"]), periods=tuple(par["search_periods"]),
            step=float(par["search_step"]),
        )
    else:
        family = build_metric(sysd)
        budget = PipelineBudget(
            n_orbits=int(par["n_orbits"]),
            fit_T=float(par["fit_T"]),
            fit_step=float(par["fit_step"]),
            fit_bins=int(par["fit_bins"]),
            fit_tolerance=float(par["fit_tolerance"]),
            jacobi_L=float(par["jacobi_L"]),
            jacobi_step=float(par["jacobi_step"]),
            search_seeds=tuple(par["search_seeds"]),
            search_periods=tuple(par["search_periods"]),
            search_step=float(par["search_step"]),
            energy=float(par["energy"]),
        )
        verdict = theorem_a_pipeline(family, budget)
    _write_json(os.path.join(outdir, "verdict.json"), verdict.to_json_dict())
    print(verdict.summary())


_RUNNERS = {
    "twist-check": _run_twist_check,
    "kam-sweep": _run_kam_sweep,
    "flat-baseline": _run_flat_baseline,
    "entropy-table": _run_entropy_table,
    "revolution-torus": _run_revolution,
    "pipeline": _run_pipeline,
}


def run(cfg, outdir):
    """Validated config -> artifacts in outdir; raises on numeric failure."""
    t0 = time.time()
    os.makedirs(outdir, exist_ok=True)
    _RUNNERS[cfg["scenario"]](cfg, outdir)
    _manifest(outdir, cfg, t0)


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="toruslab",
        description="Deterministic experiment scenarios for near-integrable torus flows.",
    )
    ap.add_argument("--scenario", required=True, help=", ".join(sorted(SCENARIO_DEFAULTS)))
    ap.add_argument("--config", help="JSON config file merged over the scenario defaults")
    ap.add_argument("--out", help="output directory (default $TORUSLAB_OUT or ./toruslab-out)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a single (dotted) config key; value parsed as JSON")
    ap.add_argument("--workers", type=int, default=None, help="worker processes for grid stages")
    args = ap.parse_args(argv)

    try:
        file_cfg = None
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        cfg = build_config(args.scenario, file_cfg, args.set)
        if args.workers is not None:
            cfg["workers"] = int(args.workers)
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    outdir = args.out or os.environ.get("TORUSLAB_OUT") or "toruslab-out"
    try:
        run(cfg, outdir)
    except ToruslabError as err:
        print(f"numeric failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
