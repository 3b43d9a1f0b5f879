"""``lab`` command line: run experiment suites described in a YAML file.

Exit codes: 0 success, 2 configuration error, 3 an experiment failed.
"""
import argparse
import copy
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from formlab import config as cfgmod
from formlab import graphs, kernels
from formlab import measures as M
from formlab.forms import Grid1D, assemble_schrodinger_form, capacity_1d, weyl_residual
from formlab.lab import (ap_check, ap_threshold, caccioppoli_probe, delta_shell_radial,
                         gap_via_gst, kronig_penney_bands, radial_mesh)
from formlab.solvers import eig_smallest, shnol_scan

ENV_OUT = "LAB_OUT_DIR"
REQUIRED = object()


class ConfigError(Exception):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ------------------------------------------------------------------- schema

GEOMETRY = {
    "schrodinger1d": {"a": REQUIRED, "b": REQUIRED, "n": 2001, "bc": ["dirichlet", "dirichlet"]},
    "metric_graph": {"vertices": REQUIRED, "edges": REQUIRED, "min_length": None, "h": 0.01},
    "delta_shell": {"R": 1.0, "r_max": 40.0, "m_max": 0, "h": 0.01, "growth": 1.02},
}
DENSITY = {
    "zero": {},
    "constant": {"c": REQUIRED},
    "quadratic": {"c": 1.0},
    "well": {"depth": REQUIRED, "width": REQUIRED, "center": 0.0},
    "box": {"lo": REQUIRED, "hi": REQUIRED, "height": 1.0},
    "table": {"file": REQUIRED},
}
EXPERIMENTS = {
    "spectrum": ({"k": 5}, "lowest eigenvalues of the assembled model"),
    "shnol": ({"lam_min": REQUIRED, "lam_max": REQUIRED, "step": 0.01, "L": 200.0, "eps": None,
               "bound_states": True, "reference": "auto"},
              "transfer-matrix growth rates and detected spectrum"),
    "ap": ({"lams": [], "threshold": False, "window": None, "tol": 1e-3, "angles": 720},
           "positive-solution checks and threshold bisection"),
    "gap": ({}, "spectral gap from the ground-state transform vs the eigensolver"),
    "cacc": ({"E": [-1.0, 1.0], "b_grid": [0.25, 0.5, 1.0], "b0": 1.0, "k": 10},
             "Caccioppoli ratios for the lowest eigenfunctions"),
    "kato": ({"alphas": [1.0, 4.0, 16.0, 64.0, 256.0]}, "Kato constants of the measure"),
    "weyl": ({"k": 3, "lams": []}, "Weyl residuals of eigenvectors at trial energies"),
    "capacity": ({"intervals": [[-1.0, 1.0]]}, "capacity of intervals"),
    "graph_spectrum": ({"k_max": 20.0, "steps": 10000}, "Kirchhoff eigenvalues from the secular equation"),
}
COMPATIBLE = {
    "schrodinger1d": {"spectrum", "shnol", "ap", "gap", "cacc", "kato", "weyl", "capacity"},
    "metric_graph": {"spectrum", "gap", "weyl", "graph_spectrum"},
    "delta_shell": {"spectrum"},
}


def _fill(data, schema, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    for key in data:
        if key not in schema:
            raise ConfigError(f"{path}.{key}", "unknown key")
    out = {}
    for key, default in schema.items():
        if key in data:
            out[key] = data[key]
        elif default is REQUIRED:
            raise ConfigError(f"{path}.{key}", "required key missing")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _check_finite(obj, path):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return
    if isinstance(obj, (int, float)):
        if not math.isfinite(obj):
            raise ConfigError(path, "numeric value must be finite")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


@dataclass
class RunConfig:
    model: dict
    experiments: list
    output: dict
    seed: int = 0
    source: str = None

    def echo(self):
        return {"model": self.model, "experiments": self.experiments, "output": self.output,
                "seed": self.seed}


def validate(raw, source=None):
    top = _fill(raw, {"model": REQUIRED, "experiments": REQUIRED, "output": None, "seed": 0}, "")
    model = _fill(top["model"], {"kind": REQUIRED, "geometry": REQUIRED, "measure": None}, "model")
    kind = model["kind"]
    if kind not in GEOMETRY:
        raise ConfigError("model.kind", f"must be one of {sorted(GEOMETRY)}, got {kind!r}")
    geom_schema = dict(GEOMETRY[kind])
    if kind == "delta_shell":
        geom_schema["alpha"] = REQUIRED
    model["geometry"] = _fill(model["geometry"], geom_schema, "model.geometry")
    meas = _fill(model["measure"], {"density": None, "atoms": [], "lattice": None}, "model.measure")
    dens = meas["density"] or {"kind": "zero"}
    if not isinstance(dens, dict) or "kind" not in dens:
        raise ConfigError("model.measure.density", "expected a mapping with a 'kind'")
    dk = dens["kind"]
    if dk not in DENSITY:
        raise ConfigError("model.measure.density.kind", f"must be one of {sorted(DENSITY)}, got {dk!r}")
    rest = {k: v for k, v in dens.items() if k != "kind"}
    meas["density"] = {"kind": dk, **_fill(rest, DENSITY[dk], "model.measure.density")}
    if not isinstance(meas["atoms"], list) or any(
            not isinstance(a, list) or len(a) != 2 for a in meas["atoms"]):
        raise ConfigError("model.measure.atoms", "expected a list of [position, weight] pairs")
    if meas["lattice"] is not None:
        meas["lattice"] = _fill(meas["lattice"], {"weight": REQUIRED, "period": 1.0, "offset": 0.0},
                                "model.measure.lattice")
    model["measure"] = meas
    exps = top["experiments"]
    if not isinstance(exps, list) or not exps:
        raise ConfigError("experiments", "expected a nonempty list")
    filled = []
    for i, e in enumerate(exps):
        path = f"experiments[{i}]"
        e = _fill(e, {"name": REQUIRED, "params": None}, path)
        name = e["name"]
        if name not in EXPERIMENTS:
            raise ConfigError(f"{path}.name", f"unknown experiment {name!r}; expected one of {sorted(EXPERIMENTS)}")
        if name not in COMPATIBLE[kind]:
            raise ConfigError(f"{path}.name", f"experiment {name!r} is not available for model kind {kind!r}")
        e["params"] = _fill(e["params"], EXPERIMENTS[name][0], f"{path}.params")
        filled.append(e)
    output = _fill(top["output"], {"directory": "lab_out", "formats": ["csv"]}, "output")
    if output["formats"] != ["csv"]:
        raise ConfigError("output.formats", "only ['csv'] is supported")
    cfg = RunConfig(model, filled, output, int(top["seed"]), source)
    _check_finite(cfg.echo(), "")
    return cfg


def parse_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError("", f"parse error at {where}: {exc.problem}") from exc
    return validate(raw, source=str(path))


# ------------------------------------------------------------------ models


def build_measure(measure_cfg, base_dir="."):
    d = measure_cfg["density"]
    kind = d["kind"]
    if kind == "zero":
        mu = M.zero()
    elif kind == "constant":
        mu = M.constant(d["c"])
    elif kind == "quadratic":
        mu = M.harmonic(math.sqrt(d["c"])) if d["c"] >= 0 else M.harmonic(1.0).scaled(d["c"])
    elif kind == "well":
        mu = M.well(d["depth"], d["width"], d["center"])
    elif kind == "box":
        mu = M.box(d["lo"], d["hi"], d["height"])
    else:
        mu = M.table_file(os.path.join(base_dir, d["file"]))
    if measure_cfg["atoms"]:
        mu = mu + M.point_masses([tuple(map(float, a)) for a in measure_cfg["atoms"]])
    if measure_cfg["lattice"]:
        lat = measure_cfg["lattice"]
        mu = mu + M.periodic_atoms(lat["weight"], lat["period"], lat["offset"])
    return mu


def build_graph(geom):
    edges = geom["edges"]
    if not isinstance(edges, list) or any(not isinstance(e, list) or len(e) != 3 for e in edges):
        raise ConfigError("model.geometry.edges", "expected [head, tail, length] triplets")
    g = graphs.MetricGraph.from_triplets(geom["vertices"], [(h, t, float(l)) for h, t, l in edges],
                                         geom["min_length"])
    try:
        graphs.validate_graph(g)
    except Exception as exc:
        raise ConfigError("model.geometry", str(exc)) from exc
    return g


# ------------------------------------------------------------------ results


@dataclass
class ResultTable:
    name: str
    headers: list
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.headers)) != len(self.headers):
            raise ValueError("headers must be unique")
        if any(len(r) != len(self.headers) for r in self.rows):
            raise ValueError("table is not rectangular")

    def csv_text(self):
        lines = [",".join(self.headers)]
        for r in self.rows:
            lines.append(",".join(_fmt(v) for v in r))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


class Context:
    def __init__(self, cfg, threads):
        self.cfg = cfg
        self.threads = threads
        self.kind = cfg.model["kind"]
        self.geom = cfg.model["geometry"]
        base = os.path.dirname(cfg.source) if cfg.source else "."
        self.measure = build_measure(cfg.model["measure"], base) if self.kind == "schrodinger1d" else None
        self.graph = build_graph(self.geom) if self.kind == "metric_graph" else None
        if self.kind == "schrodinger1d":
            self.grid  # bad intervals surface here, before any experiment runs
        self._form = None

    @property
    def grid(self):
        g = self.geom
        return Grid1D(float(g["a"]), float(g["b"]), int(g["n"]), tuple(g["bc"]))

    def form(self):
        if self._form is None:
            if self.kind == "schrodinger1d":
                self._form = assemble_schrodinger_form(self.grid, self.measure)
            else:
                self._form = graphs.discretize_graph_form(self.graph, float(self.geom["h"]))
        return self._form


def exp_spectrum(ctx, p):
    if ctx.kind == "delta_shell":
        g = ctx.geom
        nodes = radial_mesh(float(g["R"]), float(g["r_max"]), float(g["h"]), float(g["growth"]))
        rep = delta_shell_radial(float(g["alpha"]), float(g["R"]), int(g["m_max"]), nodes=nodes)
        rows = []
        for m, vals in rep.sectors.items():
            ex = rep.exact[m]
            for i, v in enumerate(vals):
                rows.append([m, i, v, ex if (ex is not None and i == 0) else math.nan])
        return [ResultTable("spectrum", ["m", "index", "eigenvalue", "exact_full_plane"], rows)]
    pairs = eig_smallest(ctx.form(), int(p["k"]))
    return [ResultTable("spectrum", ["index", "eigenvalue", "residual"],
                        [[i, e.value, e.residual] for i, e in enumerate(pairs)])]


def exp_shnol(ctx, p):
    lams = np.arange(round((p["lam_max"] - p["lam_min"]) / p["step"]) + 1) * p["step"] + p["lam_min"]
    lams = np.round(lams, 12)
    mu = ctx.measure
    ref = None
    if p["reference"] == "auto" and mu.lattice is not None and not mu.has_density and not mu.atoms:
        w, period, _ = mu.lattice
        ref = kronig_penney_bands(w, period, (float(lams[0]), float(lams[-1])))
    elif p["reference"] == "auto" and not mu.has_density and not mu.atoms and mu.lattice is None:
        ref = [(0.0, math.inf)]
    rep = shnol_scan(mu, lams, float(p["L"]), p["eps"], reference=ref, threads=ctx.threads,
                     bound_states=bool(p["bound_states"]))
    main = ResultTable("shnol", ["lam", "gamma", "detected"],
                       [[l, g, d] for l, g, d in zip(rep.lams, rep.gamma, rep.detected)],
                       {"eps": rep.eps, "L": rep.L})
    rows = [["detected", a, b] for a, b in rep.intervals]
    if ref is not None:
        rows += [["reference", a, b] for a, b in ref]
    rows += [["bound_state", e, e] for e in rep.bound_states]
    summary = ResultTable("shnol_intervals", ["kind", "lo", "hi"], rows,
                          {"symmetric_difference": rep.symmetric_difference})
    return [main, summary]


def exp_ap(ctx, p):
    window = tuple(p["window"]) if p["window"] else (float(ctx.geom["a"]), float(ctx.geom["b"]))
    rows = []
    for lam in p["lams"]:
        r = ap_check(ctx.measure, float(lam), window, int(p["angles"]))
        rows.append([float(lam), r.verdict == "positive", r.positive_angles,
                     math.nan if r.sign_change_at is None else r.sign_change_at])
    tables = [ResultTable("ap", ["lam", "positive", "positive_angles", "sign_change_at"], rows)]
    if p["threshold"]:
        t = ap_threshold(ctx.measure, window, float(p["tol"]), angles=int(p["angles"]))
        tables.append(ResultTable("ap_threshold", ["window_lo", "window_hi", "threshold"],
                                  [[window[0], window[1], t]]))
    return tables


def exp_gap(ctx, p):
    r = gap_via_gst(ctx.form())
    return [ResultTable("gap", ["lam0", "lam1", "gap_formula", "gap_eigen"],
                        [[r.lam0, r.lam1, r.gap_formula, r.gap_eigen]])]


def exp_cacc(ctx, p):
    g = ctx.geom
    rep = caccioppoli_probe(ctx.measure, (float(g["a"]), float(g["b"])), int(p["k"]), tuple(p["E"]),
                            p["b_grid"], float(p["b0"]), n=int(g["n"]))
    rows = [[i, rep.eigenvalues[i], b, rep.ratios[i, j]]
            for i in range(len(rep.eigenvalues)) for j, b in enumerate(rep.b_grid)]
    return [ResultTable("cacc", ["index", "eigenvalue", "b", "ratio"], rows, {"C_est": rep.C_est})]


def exp_kato(ctx, p):
    rows = [[float(a), M.kato_constant(ctx.measure, float(a))] for a in p["alphas"]]
    return [ResultTable("kato", ["alpha", "c_alpha"], rows)]


def exp_weyl(ctx, p):
    form = ctx.form()
    pairs = eig_smallest(form, int(p["k"]))
    rows = []
    for i, e in enumerate(pairs):
        for lam in [e.value] + [float(x) for x in p["lams"]]:
            r = weyl_residual(form, lam, e.vector)
            rows.append([i, lam, r.residual, r.shift])
    return [ResultTable("weyl", ["index", "lam", "residual", "shift"], rows)]


def exp_capacity(ctx, p):
    rows = [[float(a), float(b), capacity_1d(ctx.form(), (float(a), float(b)))] for a, b in p["intervals"]]
    return [ResultTable("capacity", ["lo", "hi", "capacity"], rows)]


def exp_graph_spectrum(ctx, p):
    roots = graphs.kirchhoff_roots(ctx.graph, float(p["k_max"]), int(p["steps"]), ctx.threads)
    ncomp = graphs.validate_graph(ctx.graph).n_components
    rows = [[0.0, 0.0, ncomp]] + [[k, k * k, m] for k, m in roots]
    return [ResultTable("graph_spectrum", ["k", "eigenvalue", "multiplicity"], rows)]


RUNNERS = {
    "spectrum": exp_spectrum, "shnol": exp_shnol, "ap": exp_ap, "gap": exp_gap, "cacc": exp_cacc,
    "kato": exp_kato, "weyl": exp_weyl, "capacity": exp_capacity, "graph_spectrum": exp_graph_spectrum,
}


def run(cfg, out_dir=None, threads=1, tol_scale=1.0):
    """Execute the experiments in order; returns (tables, manifest)."""
    out_dir = out_dir or os.environ.get(ENV_OUT) or cfg.output["directory"]
    os.makedirs(out_dir, exist_ok=True)
    tol = cfgmod.TOL.scaled(tol_scale) if tol_scale != 1.0 else cfgmod.TOL
    tables = []
    records = []
    with cfgmod.using(tol):
        ctx = Context(cfg, threads)
        for i, e in enumerate(cfg.experiments):
            t0 = time.perf_counter()
            rec = {"index": i, "name": e["name"], "params": e["params"]}
            files = []
            try:
                out = RUNNERS[e["name"]](ctx, e["params"])
                rendered = [(f"{i:02d}_{t.name}.csv", t.csv_text()) for t in out]
            except Exception as exc:  # recorded, remaining experiments still run
                rec.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            else:
                rec["status"] = "ok"
                for t, (fname, text) in zip(out, rendered):
                    with open(os.path.join(out_dir, fname), "w", newline="") as fh:
                        fh.write(text)
                    files.append({"file": fname, "metadata": _jsonable(t.metadata)})
                    tables.append(t)
            rec["wall_time"] = time.perf_counter() - t0
            rec["tables"] = files
            records.append(rec)
    manifest = {
        "config": cfg.echo(),
        "source": cfg.source,
        "tolerances": _jsonable(vars(tol)),
        "tol_scale": tol_scale,
        "threads": threads,
        "seed": cfg.seed,
        "backend": kernels.BACKEND,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "experiments": records,
        "success": all(r["status"] == "ok" for r in records),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return tables, manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------- main


def _parser():
    ap = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the experiments of a config file")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (overrides ${ENV_OUT} and the config)")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--tol-scale", type=float, default=1.0)
    v = sub.add_parser("validate", help="check a config file and echo it with defaults")
    v.add_argument("config")
    sub.add_parser("list-experiments", help="list experiment names")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.cmd == "list-experiments":
        for name, (_, desc) in EXPERIMENTS.items():
            print(f"{name:15s} {desc}")
        return 0
    try:
        cfg = parse_config(args.config)
        if args.cmd == "run":
            if args.threads < 1 or not (args.tol_scale > 0 and math.isfinite(args.tol_scale)):
                raise ConfigError("", "--threads must be >= 1 and --tol-scale positive")
            Context(cfg, 1)  # surface model construction errors as config errors
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if args.cmd == "validate":
        print(yaml.safe_dump(cfg.echo(), sort_keys=False), end="")
        return 0
    _, manifest = run(cfg, args.out, args.threads, args.tol_scale)
    for rec in manifest["experiments"]:
        line = f"{rec['name']}: {rec['status']}"
        if rec["status"] != "ok":
            line += f" ({rec['error']})"
        print(line)
    return 0 if manifest["success"] else 3


if __name__ == "__main__":
    sys.exit(main())
