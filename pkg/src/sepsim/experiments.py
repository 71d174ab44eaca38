"""Experiment orchestration: sectioned configs, runners, and the CLI.

Configs are INI files (configparser), one experiment per file; see
``configs/`` in the repository root for the grammar by example.  Each run
writes CSV tables plus a metadata JSON sufficient to reproduce it and a
plain-text run log; the process exits 0 iff every assertion listed in the
config holds.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import RegimeViolation
from .geometry import CircleBundle, Torus, make_potential
from .graphs import (NeighbourhoodGraph, WeightScheme, _assemble_csr,
                     build_graph, build_lifted_graph, density_field)
from .kernels import (kernel_moments, make_kernel, make_product_kernel,
                      odd_moment, product_kernel_moments)
from .sampling import (BandwidthSchedule, bandwidth, initial_configuration,
                       lifted_bandwidths, regime_report, sample_lifted,
                       sample_ppp)
from .sep import duality_check, simulate
from .walkers import (concentration_experiment, consistency_profile,
                      lifted_consistency_profile, parse_bundle_function,
                      parse_test_function)
from . import graphs as graphs_mod
from . import pde as pde_mod

log = logging.getLogger("sepsim.experiments")

KINDS = ("moments", "consistency", "concentration", "duality", "hydro",
         "bundle-consistency", "bundle-hydro")

ANALYTIC_MOMENTS = {
    ("indicator", 1): (2.0, 2.0 / 3.0),
    ("indicator", 2): (np.pi, np.pi / 4.0),
    ("epanechnikov", 1): (4.0 / 3.0, 4.0 / 15.0),
    ("epanechnikov", 2): (np.pi / 2.0, np.pi / 12.0),
}


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _strs(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    """Parsed experiment description; carries the raw sections too."""

    kind: str
    out: Path
    raw: Dict[str, Dict[str, str]]
    workers: int = 1

    def section(self, name: str) -> Dict[str, str]:
        return self.raw.get(name, {})

    def get(self, section: str, key: str, default=None):
        return self.section(section).get(key, default)

    # registry constructions -------------------------------------------------
    def torus(self) -> Torus:
        geo = self.section("geometry")
        dim = int(geo.get("dim", "1"))
        sides = _floats(geo.get("sides", "")) or None
        return Torus(dim, np.asarray(sides) if sides else None)

    def potential(self, torus: Torus):
        pot = dict(self.section("potential"))
        name = pot.pop("name", "zero")
        params = {k: float(v) for k, v in pot.items()}
        return make_potential(name, torus, **params)

    def bundle(self, torus: Torus) -> CircleBundle:
        sec = self.section("bundle")
        circ = float(sec.get("circumference", 2 * np.pi))
        conn = _floats(sec.get("connection", "0"))
        return CircleBundle(torus, circ, np.asarray(conn))

    def schedule(self) -> BandwidthSchedule:
        sec = self.section("schedule")
        return BandwidthSchedule(
            rule=sec.get("rule", "default"),
            c=float(sec.get("c", "0.5")),
            power=float(sec.get("power", "1.0")),
            fibre_c=float(sec.get("fibre_c", "1.0")),
            fibre_power=float(sec.get("fibre_power", "1.25")),
        )

    def schemes(self) -> List[WeightScheme]:
        sec = self.section("scheme")
        variant = sec.get("variant", "alpha_estimator")
        alphas = _floats(sec.get("alpha", "0.5"))
        return [WeightScheme(variant, a) for a in alphas]

    def seeds(self) -> List[int]:
        return _ints(self.get("sweep", "seeds", "1"))

    def n_list(self) -> List[int]:
        return _ints(self.get("sweep", "n_list", "1000"))


def load_config(path, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file {path} not found")
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides or []:
        key, _, value = item.partition("=")
        section, _, option = key.strip().partition(".")
        if not option or not value:
            raise ValueError(f"override {item!r} is not section.key=value")
        raw.setdefault(section, {})[option] = value.strip()
    exp = raw.get("experiment", {})
    kind = exp.get("kind", "")
    out = Path(exp.get("out", "runs/" + (kind or "run")))
    return ExperimentConfig(kind=kind, out=out, raw=raw,
                            workers=int(exp.get("workers", "1")))


@dataclass
class ValidationReport:
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def validate(config: ExperimentConfig) -> ValidationReport:
    """Schema and regime checks with no execution."""
    rep = ValidationReport()
    if config.kind not in KINDS:
        rep.failures.append(f"unknown experiment kind {config.kind!r}; "
                            f"one of {KINDS}")
        return rep
    try:
        torus = config.torus()
        config.potential(torus)
    except (KeyError, ValueError) as exc:
        rep.failures.append(f"geometry/potential: {exc}")
        return rep
    kernel_name = config.get("kernel", "name", "indicator")
    try:
        if config.kind == "moments":
            for name in _strs(kernel_name):
                make_kernel(name)
        elif config.kind.startswith("bundle"):
            make_product_kernel(kernel_name)
        else:
            make_kernel(kernel_name)
    except KeyError as exc:
        rep.failures.append(f"kernel registry: {exc}")
    try:
        config.schemes()
    except KeyError as exc:
        rep.failures.append(f"scheme: {exc}")
    if not config.seeds():
        rep.failures.append("sweep.seeds must be nonempty")
    ns = config.n_list()
    if any(b <= a for a, b in zip(ns, ns[1:])):
        rep.failures.append("sweep.n_list must be strictly increasing")
    if config.kind in ("consistency", "concentration", "hydro"):
        try:
            for n in ns:
                bandwidth(config.schedule(), n, torus.dim)
        except RegimeViolation as exc:
            rep.failures.append(f"schedule regime: {exc}")
    if config.kind.startswith("bundle"):
        nps = _ints(config.get("sweep", "n_fibre_list", "100"))
        if len(nps) != len(ns):
            rep.failures.append("sweep.n_fibre_list must pair with n_list")
        try:
            for n, np_ in zip(ns, nps):
                lifted_bandwidths(config.schedule(), n, np_, torus.dim)
        except (RegimeViolation, KeyError) as exc:
            rep.failures.append(f"lifted schedule regime: {exc}")
    return rep


# ---------------------------------------------------------------------------
# output helpers


def _write_csv(path: Path, header: List[str], rows: List[list]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _finish(config: ExperimentConfig, metadata: dict, assertions: Dict[str, bool]):
    assertions = {k: bool(v) for k, v in assertions.items()}
    metadata = dict(metadata)
    metadata["config"] = config.raw
    metadata["assertions"] = assertions
    with open(config.out / "metadata.json", "w") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True, default=str)
    ok = all(assertions.values())
    log.info("assertions: %s", assertions)
    log.info("experiment %s: %s", config.kind, "PASS" if ok else "FAIL")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# runners


def _run_moments(config: ExperimentConfig) -> int:
    kernels = _strs(config.get("kernel", "name", "indicator,epanechnikov"))
    dims = _ints(config.get("kernel", "dims", "1,2"))
    rows = []
    ok = True
    for name in kernels:
        k = make_kernel(name)
        for m in dims:
            mom = kernel_moments(k, m)
            odd1 = odd_moment(k, m, 1)
            odd3 = odd_moment(k, m, 3)
            match = ""
            if (name, m) in ANALYTIC_MOMENTS:
                c0, c2 = ANALYTIC_MOMENTS[(name, m)]
                good = (abs(mom.c0 - c0) <= 1e-8 and abs(mom.c2 - c2) <= 1e-8
                        and abs(odd1) < 1e-10 and abs(odd3) < 1e-10)
                ok &= good
                match = "yes" if good else "no"
            rows.append([name, m, float(mom.c0), float(mom.c2),
                         float(odd1), float(odd3), match])
    _write_csv(config.out / "moments.csv",
               ["kernel", "dim", "c0", "c2", "odd1", "odd3", "matches_analytic"],
               rows)
    return _finish(config, {}, {"moments_match_analytic": ok})


def _consistency_task(args):
    (raw, n, seed) = args
    config = ExperimentConfig(kind="consistency", out=Path("."), raw=raw)
    torus = config.torus()
    potential = config.potential(torus)
    kernel = make_kernel(config.get("kernel", "name", "indicator"))
    h = bandwidth(config.schedule(), n, torus.dim, check=False)
    cloud = sample_ppp(torus, potential, n, seed)
    kbar = density_field(cloud, kernel, h)
    # witness for the bounded-limsup density hypothesis
    density = graphs_mod.density_diagnostic(
        cloud, (np.zeros(torus.dim), torus.sides))
    out = {}
    for scheme in config.schemes():
        phi = parse_test_function(config.get("test_function", "names", "cos:1"),
                                  torus)
        rep = consistency_profile(cloud, kernel, scheme, h, phi, potential,
                                  kbar=kbar)
        out[scheme.alpha] = rep.errors
    return n, seed, h, density, out


def _run_consistency(config: ExperimentConfig) -> int:
    ns = config.n_list()
    seeds = config.seeds()
    tasks = [(config.raw, n, s) for n in ns for s in seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_consistency_task, tasks))
    else:
        results = [_consistency_task(t) for t in tasks]
    pooled: Dict[tuple, List[np.ndarray]] = {}
    hs = {}
    density_sup = 0.0
    for n, seed, h, density, out in results:
        hs[n] = h
        density_sup = max(density_sup, density)
        for alpha, errors in out.items():
            pooled.setdefault((n, alpha), []).append(errors)
    rows = []
    stats = {}
    for (n, alpha), chunks in sorted(pooled.items()):
        errors = np.concatenate(chunks)
        med, sup = float(np.median(errors)), float(errors.max())
        stats[(n, alpha)] = (med, sup)
        rows.append([n, float(hs[n]), float(alpha), med, sup])
    _write_csv(config.out / "consistency.csv",
               ["N", "h", "alpha", "median_err", "sup_err"], rows)
    checks = {}
    sec = config.section("assertions")
    min_factor = float(sec.get("min_total_decrease", "0"))
    for alpha in sorted({a for (_, a) in stats}):
        med = [stats[(n, alpha)][0] for n in ns]
        sup = [stats[(n, alpha)][1] for n in ns]
        if sec.get("median_decreasing", "true") == "true":
            checks[f"median_decreasing_alpha={alpha:g}"] = \
                all(b < a for a, b in zip(med, med[1:]))
        if min_factor > 0:
            checks[f"total_decrease_alpha={alpha:g}"] = med[0] / med[-1] >= min_factor
        if sec.get("sup_decreasing", "false") == "true":
            checks[f"sup_decreasing_alpha={alpha:g}"] = \
                all(b < a for a, b in zip(sup, sup[1:]))
    torus = config.torus()
    mom = kernel_moments(make_kernel(config.get("kernel", "name", "indicator")),
                         torus.dim)
    meta = {"h": hs,
            "density_diagnostic_sup": density_sup,
            "kernel_moments": {"c0": mom.c0, "c2": mom.c2},
            "regime": regime_report(config.schedule(), ns[0], torus.dim)}
    return _finish(config, meta, checks)


def _run_concentration(config: ExperimentConfig) -> int:
    torus = config.torus()
    potential = config.potential(torus)
    kernel = make_kernel(config.get("kernel", "name", "indicator"))
    quantile = float(config.get("assertions", "delta_quantile", "0.8"))
    result = concentration_experiment(torus, potential, kernel,
                                      config.schedule(), config.n_list(),
                                      config.seeds(), delta_quantile=quantile)
    rows = [[n, float(result["h"][n]), float(result["delta"]),
             float(result["frequencies"][n])] for n in config.n_list()]
    _write_csv(config.out / "concentration.csv",
               ["N", "h", "delta", "freq"], rows)
    dev_rows = [[n, seed, float(d)]
                for n in config.n_list()
                for seed, d in zip(config.seeds(), result["deviations"][n])]
    _write_csv(config.out / "deviations.csv", ["N", "seed", "deviation"],
               dev_rows)
    freqs = [result["frequencies"][n] for n in config.n_list()]
    checks = {"freq_nonincreasing": all(b <= a for a, b in zip(freqs, freqs[1:]))}
    return _finish(config, {"delta": result["delta"]}, checks)


def random_weighted_graph(n_vertices: int, seed: int,
                          edge_prob: float = 0.6) -> NeighbourhoodGraph:
    """Random symmetric weighted graph for generator diagnostics."""
    rng = np.random.default_rng(seed)
    gi, gj = np.triu_indices(n_vertices, k=1)
    keep = rng.uniform(size=gi.shape[0]) < edge_prob
    gi, gj = gi[keep], gj[keep]
    w = rng.uniform(0.1, 2.0, size=gi.shape[0])
    indptr, indices, weights = _assemble_csr(
        n_vertices, gi.astype(np.int64), gj.astype(np.int64), w)
    torus = Torus(1)
    potential = make_potential("zero", torus)
    cloud = sample_ppp(torus, potential, max(2, n_vertices), seed=seed)
    cloud.points = np.linspace(0, 1, n_vertices, endpoint=False)[:, None]
    cloud.level = n_vertices
    cloud.potential = potential
    return NeighbourhoodGraph(cloud, WeightScheme("gibbs_sqrt"), "indicator",
                              0.5, indptr, indices, weights)


def _run_duality(config: ExperimentConfig) -> int:
    n_graphs = int(config.get("sweep", "graphs", "50"))
    max_v = int(config.get("sweep", "max_vertices", "12"))
    seed0 = config.seeds()[0]
    rows = []
    worst = 0.0
    for g_id in range(n_graphs):
        rng = np.random.default_rng(seed0 + g_id)
        n = int(rng.integers(3, max_v + 1))
        g = random_weighted_graph(n, seed0 + 1000 + g_id)
        phi = rng.normal(size=n)
        dev = duality_check(g, phi)
        worst = max(worst, dev)
        rows.append([g_id, n, g.n_edges, float(dev)])
    _write_csv(config.out / "duality.csv",
               ["graph", "vertices", "edges", "max_deviation"], rows)
    tol = float(config.get("assertions", "max_deviation", "1e-12"))
    return _finish(config, {"worst": worst}, {"duality_identity": worst <= tol})


def _hydro_single(config: ExperimentConfig, n: int, seed: int, torus, potential,
                  kernel, scheme, phis, t_grid, modes, pde_curves=None):
    h = bandwidth(config.schedule(), n, torus.dim, check=False)
    cloud = sample_ppp(torus, potential, n, seed)
    graph = build_graph(cloud, kernel, scheme, h)
    offset = float(config.get("rho0", "offset", "0.5"))
    amp = float(config.get("rho0", "cos_amplitude", "0.5"))

    def rho0(pts):
        return offset + amp * np.cos(2 * np.pi * pts[..., 0] / torus.sides[0])

    eta0 = initial_configuration(cloud, rho0, seed=seed + 1)
    observables = {name: phi.value(cloud.points) for name, phi in phis.items()}
    traj = simulate(graph, eta0, t_end=float(t_grid[-1]), seed=seed + 2,
                    observables=observables, time_points=len(t_grid))

    mom = kernel_moments(kernel, torus.dim)
    C = mom.c2 / (2.0 * mom.c0 ** (2.0 * scheme.alpha))
    if pde_curves is None:
        drift = 2.0 * (1.0 - scheme.alpha)
        pref = 2.0 * scheme.alpha - 1.0
        fields = pde_mod.solve_weighted_heat(
            rho0, potential, torus, C, t_grid, modes=modes,
            drift_coefficient=drift, prefactor_exponent=pref)
        pde_curves = {name: np.array([pde_mod.pde_pairing(f, phi, "gibbs",
                                                          potential)
                                      for f in fields])
                      for name, phi in phis.items()}
    return h, traj, pde_curves, C


def _run_hydro(config: ExperimentConfig) -> int:
    torus = config.torus()
    potential = config.potential(torus)
    kernel = make_kernel(config.get("kernel", "name", "indicator"))
    scheme = config.schemes()[0]
    names = _strs(config.get("test_function", "names", "const,cos:1,sin:1"))
    phis = {name: parse_test_function(name, torus) for name in names}
    t_end = float(config.get("time", "t_end", "0.3"))
    points = int(config.get("time", "points", "21"))
    t_grid = np.linspace(0.0, t_end, points)
    modes = int(config.get("solver", "modes", "16"))
    seed = config.seeds()[0]

    replicas = int(config.get("sweep", "replicas", "1"))
    rows = []
    max_err = {}
    for n in config.n_list():
        # assertions track the first replica; extra replicas feed the
        # trajectory-overlay figures
        pde_curves = None
        for rep_id in range(replicas):
            h, traj, pde_curves, C = _hydro_single(
                config, n, seed + 100 * rep_id, torus, potential, kernel,
                scheme, phis, t_grid, modes, pde_curves=pde_curves)
            worst = 0.0
            for name in names:
                sep_curve = traj.pairings[name]
                for t, sv, pv in zip(t_grid, sep_curve, pde_curves[name]):
                    err = abs(sv - pv)
                    worst = max(worst, err)
                    rows.append([n, rep_id, float(t), name, float(sv),
                                 float(pv), float(err)])
            if rep_id == 0:
                max_err[n] = worst
            log.info("hydro N=%d replica=%d h=%.4f max pairing error %.4f",
                     n, rep_id, h, worst)
    _write_csv(config.out / "hydro.csv",
               ["N", "replica", "t", "phi", "sep_pairing", "pde_pairing",
                "abs_err"], rows)
    checks = {}
    tol = float(config.get("assertions", "max_pairing_error", "0.05"))
    ns = config.n_list()
    checks[f"max_error_at_N={ns[-1]}"] = max_err[ns[-1]] <= tol
    if len(ns) > 1 and config.get("assertions", "error_decreasing", "true") == "true":
        checks["error_decreasing_in_N"] = max_err[ns[0]] > max_err[ns[-1]]
    mom = kernel_moments(kernel, torus.dim)
    return _finish(config, {"max_err": {str(k): v for k, v in max_err.items()},
                            "C": C,
                            "kernel_moments": {"c0": mom.c0, "c2": mom.c2}},
                   checks)


def _run_bundle_consistency(config: ExperimentConfig) -> int:
    torus = config.torus()
    potential = config.potential(torus)
    bundle = config.bundle(torus)
    pk = make_product_kernel(config.get("kernel", "name", "indicator_product"))
    scheme = config.schemes()[0]
    stride = int(config.get("sweep", "source_stride", "1"))
    bphi = parse_bundle_function(config.get("test_function", "names", "cos:1;1"),
                                 bundle)
    ns = config.n_list()
    nps = _ints(config.get("sweep", "n_fibre_list", "100"))
    seed = config.seeds()[0]
    rows = []
    meds = []
    for n, np_ in zip(ns, nps):
        h, hp = lifted_bandwidths(config.schedule(), n, np_, torus.dim,
                                  check=False)
        cloud = sample_ppp(torus, potential, n, seed)
        lifted = sample_lifted(cloud, bundle, np_, seed + 1)
        rep = lifted_consistency_profile(lifted, pk, scheme, h, hp, bphi,
                                         potential, source_stride=stride)
        rows.append([n, np_, float(h), float(hp), float(scheme.alpha),
                     float(rep.median_error), float(rep.sup_error)])
        meds.append(rep.median_error)
        log.info("bundle consistency (N,N')=(%d,%d): median %.4f", n, np_,
                 rep.median_error)
    _write_csv(config.out / "bundle_consistency.csv",
               ["N", "N_fibre", "h", "h_fibre", "alpha", "median_err",
                "sup_err"], rows)
    checks = {"median_decreasing": all(b < a for a, b in zip(meds, meds[1:]))}
    return _finish(config, {}, checks)


def _run_bundle_hydro(config: ExperimentConfig) -> int:
    torus = config.torus()
    potential = config.potential(torus)
    bundle = config.bundle(torus)
    pk = make_product_kernel(config.get("kernel", "name", "indicator_product"))
    scheme = config.schemes()[0]
    n = config.n_list()[0]
    np_ = _ints(config.get("sweep", "n_fibre_list", "8"))[0]
    seed = config.seeds()[0]
    h, hp = lifted_bandwidths(config.schedule(), n, np_, torus.dim, check=False)
    cloud = sample_ppp(torus, potential, n, seed)
    lifted = sample_lifted(cloud, bundle, np_, seed + 1)
    graph = build_lifted_graph(lifted, pk, scheme, h, hp)
    layout = graph.layout
    base_pts = cloud.points[layout.base_index]

    offset = float(config.get("rho0", "offset", "0.5"))
    amp = float(config.get("rho0", "cos_amplitude", "0.25"))
    wl = 2.0 * np.pi / bundle.fibre_circumference

    def rho0(pts, theta):
        return offset + amp * np.cos(
            2 * np.pi * pts[..., 0] / torus.sides[0] + wl * theta)

    probs = rho0(base_pts, layout.angles)
    gen = np.random.Generator(np.random.PCG64(seed + 2))
    occ = (gen.uniform(size=layout.count) < probs).astype(np.uint8)
    from .sampling import Configuration
    eta0 = Configuration.from_occupancy(occ)

    name = config.get("test_function", "names", "cos:1;1")
    bphi = parse_bundle_function(name, bundle)
    obs = {name: bphi.value(base_pts, layout.angles)}
    t_end = float(config.get("time", "t_end", "0.2"))
    points = int(config.get("time", "points", "11"))
    t_grid = np.linspace(0.0, t_end, points)
    traj = simulate(graph, eta0, t_end=t_end, seed=seed + 3,
                    observables=obs, time_points=points)

    pm = product_kernel_moments(pk, torus.dim, 1)
    C = pm.c2 / (2.0 * pm.c0 ** (2.0 * scheme.alpha))
    modes = (int(config.get("solver", "modes", "8")),
             int(config.get("solver", "fibre_modes", "8")))
    fields = pde_mod.solve_horizontal_heat(
        rho0, potential, bundle, C, t_grid, modes=modes,
        drift_coefficient=2.0 * (1.0 - scheme.alpha),
        prefactor_exponent=2.0 * scheme.alpha - 1.0)
    pde_curve = np.array([pde_mod.pde_pairing(f, bphi, "gibbs", potential)
                          for f in fields])
    rows = [[n, np_, float(t), name, float(sv), float(pv), float(abs(sv - pv))]
            for t, sv, pv in zip(t_grid, traj.pairings[name], pde_curve)]
    _write_csv(config.out / "bundle_hydro.csv",
               ["N", "N_fibre", "t", "phi", "sep_pairing", "pde_pairing",
                "abs_err"], rows)
    worst = max(r[-1] for r in rows)
    tol = float(config.get("assertions", "max_pairing_error", "0.1"))
    return _finish(config, {"max_err": worst},
                   {"max_error_within_tolerance": worst <= tol})


RUNNERS = {
    "moments": _run_moments,
    "consistency": _run_consistency,
    "concentration": _run_concentration,
    "duality": _run_duality,
    "hydro": _run_hydro,
    "bundle-consistency": _run_bundle_consistency,
    "bundle-hydro": _run_bundle_hydro,
}


def run(config: ExperimentConfig) -> int:
    """Execute the configured experiment; returns the process exit code."""
    report = validate(config)
    if not report.ok:
        for failure in report.failures:
            log.error("validation: %s", failure)
        return 2
    config.out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(config.out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    root = logging.getLogger("sepsim")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    started = time.time()
    try:
        code = RUNNERS[config.kind](config)
    finally:
        log.info("elapsed %.1f s", time.time() - started)
        root.removeHandler(handler)
        handler.close()
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sepsim",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="experiment config file (INI)")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--workers", type=int, help="worker process count")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="SECTION.KEY=VALUE",
                       help="override a config entry")

    add_common(sub.add_parser("run", help="run the experiment in the config"))
    add_common(sub.add_parser("validate", help="check a config without running"))
    for kind in KINDS:
        add_common(sub.add_parser(kind, help=f"run a {kind} experiment"))

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(message)s")
    config = load_config(args.config, args.overrides)
    if args.out:
        config.out = Path(args.out)
    if args.workers:
        config.workers = args.workers
    if args.command not in ("run", "validate"):
        if config.kind and config.kind != args.command:
            log.error("config kind %r does not match subcommand %r",
                      config.kind, args.command)
            return 2
        config.kind = args.command
    if args.command == "validate":
        report = validate(config)
        for failure in report.failures:
            print(f"FAIL: {failure}")
        print("config OK" if report.ok else f"{len(report.failures)} failure(s)")
        return 0 if report.ok else 1
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
