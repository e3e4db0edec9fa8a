"""Config-driven experiment runs: compute, write CSVs, record a manifest.

Each experiment emits one CSV per plotted panel plus an optional SVG per
CSV.  All randomness comes off Philox streams keyed by the config seed,
and the CSV writer uses shortest round-trip decimals, so a rerun of the
same config is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, families, graphs, ot, spectral
from .config import ExperimentConfig
from .errors import WassmanError
from .flows import Quadrature, finite_difference_map, w_lambda_curve
from .measures import SampledVelocityField, TemplateSpec, l2_norm
from .svgplot import PlotSpec, render_svg

_ETA_STREAM = 101  # seed-sequence tag for tangent draws


@dataclass
class RunManifest:
    """What a run produced: output files with checksums and stage timings."""

    config_hash: str
    code_version: str
    files: dict = field(default_factory=dict)        # name -> sha256
    wall_clock: dict = field(default_factory=dict)   # stage -> seconds

    def register(self, path: str):
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        self.files[os.path.basename(path)] = digest

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "manifest.json")
        body = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "files": dict(sorted(self.files.items())),
            "wall_clock": {k: round(v, 3) for k, v in self.wall_clock.items()},
        }
        with open(path, "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str, columns, rows, config_hash: str, seed: int) -> str:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash} seed={seed}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _map_tasks(fn, tasks, threads: int):
    """Order-preserving map; the thread pool only changes who computes."""
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _draw_etas(fam, theta, n: int, seed: int) -> list:
    """n tangents uniform on the shifted box S - theta, so theta + t*eta
    stays inside S for every t in [0, 1]."""
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([seed, _ETA_STREAM])))
    lo = fam.box[:, 0] - theta
    hi = fam.box[:, 1] - theta
    return [lo + (hi - lo) * rng.random(fam.m) for _ in range(n)]


def _sinkhorn_or_none(cfg: ExperimentConfig, fam):
    return cfg.sinkhorn_config(fam) if cfg.sinkhorn else None


# -- experiment bodies -------------------------------------------------------
# Each returns a list of panels: (filename, columns, rows, PlotSpec).


def _run_wv_convergence(cfg: ExperimentConfig, threads: int):
    fam = cfg.build_family()
    theta = np.asarray(cfg.options["theta"], dtype=float)
    t_list = sorted(cfg.options["t_list"])
    etas = _draw_etas(fam, theta, cfg.options["n_etas"], cfg.seed)
    scfg = _sinkhorn_or_none(cfg, fam)
    lam = families.embed(fam, theta)

    def one(task):
        ei, t = task
        v = families.velocity(fam, theta, etas[ei])
        w = finite_difference_map(fam, theta, etas[ei], t, cfg=scfg)
        diff = SampledVelocityField(v.values - w.values)
        return [t, ei, l2_norm(diff, lam)]

    tasks = [(ei, t) for ei in range(len(etas)) for t in t_list]
    rows = _map_tasks(one, tasks, threads)
    spec = PlotSpec(x="t", y="err", group_by="eta_index", logx=True, logy=True,
                    guides=((1.0, "slope 1"),), title="velocity vs difference map",
                    xlabel="t", ylabel="L2 error")
    return [("wv_convergence.csv", ["t", "eta_index", "err"], rows, spec)]


def _spectra_panel(tab: spectral.SpectraTable, fname: str, title: str):
    cols = tab.columns()
    eig_cols = tuple(c for c in cols if c.startswith("eig_"))
    spec = PlotSpec(x="t", ys=eig_cols, logx=True, logy=True,
                    guides=((2.0, "slope 2"),), title=title,
                    xlabel="t", ylabel="eigenvalue")
    return (fname, cols, list(tab.rows()), spec)


def _run_spectrum(cfg: ExperimentConfig, threads: int):
    fam = cfg.build_family()
    theta = np.asarray(cfg.options["theta"], dtype=float)
    etas = _draw_etas(fam, theta, cfg.options["n_etas"], cfg.seed)
    tab = spectral.tangent_recovery_experiment(
        fam, theta, etas, cfg.options["t_list"], cfg=_sinkhorn_or_none(cfg, fam),
        n_eigs=cfg.options["n_eigs"])
    return [_spectra_panel(tab, "spectrum.csv", "span operator spectrum")]


def _run_distance_hierarchy(cfg: ExperimentConfig, threads: int):
    fam = cfg.build_family()
    quad = Quadrature(cfg.options["quad_steps"])
    scfg = cfg.sinkhorn_config(fam)
    base = fam.template
    zero = np.zeros(fam.m)
    mu0 = families.embed(fam, zero)

    def one(th):
        th = np.asarray(th, dtype=float)
        nu = families.embed(fam, th)
        w2 = ot.w2(mu0, nu, scfg)
        disp = fam.deform_points(th, base.points) - base.points
        map_l2 = l2_norm(SampledVelocityField(disp), base)
        wlam = w_lambda_curve(fam, zero, th, quad)
        lower = (map_l2 - w2) / map_l2 if map_l2 > 0 else 0.0
        upper = (wlam - map_l2) / map_l2 if map_l2 > 0 else 0.0
        return [float(th[0]), w2, map_l2, wlam, lower, upper]

    rows = _map_tasks(one, cfg.options["theta_list"], threads)
    spec = PlotSpec(x="theta", ys=("w2", "map_l2", "w_lambda"),
                    title="distance hierarchy", xlabel="theta", ylabel="distance")
    cols = ["theta", "w2", "map_l2", "w_lambda", "lower_margin", "upper_margin"]
    return [("distance_hierarchy.csv", cols, rows, spec)]


def _run_graph_gw(cfg: ExperimentConfig, threads: int):
    fam = cfg.build_family()
    eps_rule = None
    if "eps_c" in cfg.options:
        eps_rule = graphs.make_eps_rule(fam.m, cfg.options["eps_c"])
    tab = graphs.gw_convergence_experiment(
        fam, cfg.options["N_list"], eps_rule=eps_rule,
        M_probe=cfg.options["M_probe"], seed=cfg.seed,
        cfg=_sinkhorn_or_none(cfg, fam),
        cache_dir=os.environ.get("WASSMAN_CACHE") or None,
        quad=Quadrature(cfg.options["quad_steps"]))
    spec = PlotSpec(x="N", y=None, ys=("sup_distortion",), logx=True, logy=True,
                    title="graph metric distortion", xlabel="N",
                    ylabel="sup distortion")
    return [("graph_gw.csv", tab.columns(), list(tab.rows()), spec)]


def _run_gradproj_spectrum(cfg: ExperimentConfig, threads: int):
    panels = []
    theta = np.asarray(cfg.options["theta"], dtype=float)
    for res in cfg.options["resolutions"]:
        block = dict(cfg.family)
        tmpl = dict(block.get("template") or
                    {"kind": "disk_density_2d", "resolution": 102})
        scale = res / tmpl["resolution"]
        if "resolution_y" in tmpl:
            tmpl["resolution_y"] = max(2, round(tmpl["resolution_y"] * scale))
        tmpl["resolution"] = res
        block["template"] = tmpl
        fam = replace(cfg, family=block).build_family()
        etas = _draw_etas(fam, theta, cfg.options["n_etas"], cfg.seed)
        tab = spectral.tangent_recovery_experiment(
            fam, theta, etas, cfg.options["t_list"],
            cfg=_sinkhorn_or_none(cfg, fam), n_eigs=cfg.options["n_eigs"],
            include_z=cfg.options["include_z"])
        panels.append(_spectra_panel(tab, f"gradproj_spectrum_res{res}.csv",
                                     f"projected spectrum, {res} cells"))
    return panels


def _run_sample_family(cfg: ExperimentConfig, threads: int):
    fam = cfg.build_family()

    def one(task):
        idx, th = task
        mu = families.embed(fam, np.asarray(th, dtype=float))
        out = []
        if mu.dim == 1:
            x = mu.points[:, 0]
            order = np.argsort(x)
            xs, ws = x[order], mu.weights[order]
            gaps = np.gradient(xs)
            dens = np.where(gaps > 0, ws / np.maximum(gaps, 1e-300), 0.0)
            for xi, di in zip(xs, dens):
                out.append([idx, xi, di])
        else:
            for p, w in zip(mu.points, mu.weights):
                out.append([idx, *p.tolist(), w])
        return out

    tasks = list(enumerate(cfg.options["theta_list"]))
    chunks = _map_tasks(one, tasks, threads)
    rows = [r for chunk in chunks for r in chunk]
    if fam.template.dim == 1:
        cols = ["theta_index", "x", "density"]
        spec = PlotSpec(x="x", y="density", group_by="theta_index",
                        title="family members", xlabel="x", ylabel="density")
    else:
        cols = ["theta_index", "x", "y", "weight"]
        spec = PlotSpec(x="x", y="y", group_by="theta_index",
                        title="family members", xlabel="x", ylabel="y")
    return [("sample_family.csv", cols, rows, spec)]


_RUNNERS = {
    "wv-convergence": _run_wv_convergence,
    "spectrum": _run_spectrum,
    "distance-hierarchy": _run_distance_hierarchy,
    "graph-gw": _run_graph_gw,
    "gradproj-spectrum": _run_gradproj_spectrum,
    "sample-family": _run_sample_family,
}


def run(cfg: ExperimentConfig, threads: int = 1, svg: bool = False) -> RunManifest:
    """Execute one experiment config; returns the manifest (also written to
    out_dir/manifest.json along with the CSVs and optional SVGs)."""
    manifest = RunManifest(config_hash=cfg.config_hash(), code_version=__version__)
    os.makedirs(cfg.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        panels = _RUNNERS[cfg.experiment](cfg, threads)
    except WassmanError:
        raise
    except Exception as exc:
        raise WassmanError(f"experiment {cfg.experiment!r} failed: {exc}") from exc
    manifest.wall_clock["compute"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for fname, cols, rows, spec in panels:
        path = os.path.join(cfg.out_dir, fname)
        write_csv(path, cols, rows, manifest.config_hash, cfg.seed)
        manifest.register(path)
    manifest.wall_clock["write"] = time.perf_counter() - t0

    if svg:
        t0 = time.perf_counter()
        for fname, _, _, spec in panels:
            csv_path = os.path.join(cfg.out_dir, fname)
            out = csv_path[:-4] + ".svg"
            render_svg(csv_path, spec, out)
            manifest.register(out)
        manifest.wall_clock["svg"] = time.perf_counter() - t0

    manifest.write(cfg.out_dir)
    return manifest
