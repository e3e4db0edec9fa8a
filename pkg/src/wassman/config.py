"""JSON experiment configs: schema validation and canonical hashing.

One JSON file per experiment run.  Validation is strict about types and
ranges and reports the dotted path of the offending field so broken
fixtures are quick to fix.  The hash of the normalized config (defaults
filled in) keys output CSVs and the run manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import families, ot
from .errors import ConfigError
from .measures import TemplateSpec

EXPERIMENTS = (
    "wv-convergence",
    "spectrum",
    "distance-hierarchy",
    "graph-gw",
    "gradproj-spectrum",
    "sample-family",
)

_FAMILY_KINDS = ("translation", "dilation", "tanh_1d", "ode_1param", "gradproj_2d")
_TEMPLATE_KINDS = ("interval_density_1d", "rect_uniform_2d", "disk_density_2d")
_SINKHORN_KEYS = ("eps_start", "eps_final", "eps_decay", "max_iters", "marginal_tol")


def _fail(path: str, msg: str):
    raise ConfigError(path, msg)


def _as_int(v, path: str, lo: int = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}, got {v}")
    return v


def _as_num(v, path: str, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected number, got {v!r}")
    if positive and not v > 0:
        _fail(path, f"must be > 0, got {v}")
    return float(v)


def _as_list(v, path: str, min_len: int = 1) -> list:
    if not isinstance(v, list):
        _fail(path, f"expected list, got {type(v).__name__}")
    if len(v) < min_len:
        _fail(path, f"needs at least {min_len} entries, got {len(v)}")
    return v


def _num_list(v, path: str, positive: bool = False, min_len: int = 1) -> list:
    return [_as_num(x, f"{path}[{i}]", positive=positive)
            for i, x in enumerate(_as_list(v, path, min_len))]


def _validate_family(block, path: str) -> dict:
    if not isinstance(block, dict):
        _fail(path, "expected object")
    out = {}
    kind = block.get("kind")
    if kind not in _FAMILY_KINDS:
        _fail(f"{path}.kind", f"must be one of {list(_FAMILY_KINDS)}, got {kind!r}")
    out["kind"] = kind
    tmpl = block.get("template")
    if tmpl is not None:
        if not isinstance(tmpl, dict):
            _fail(f"{path}.template", "expected object")
        t = {}
        tk = tmpl.get("kind")
        if tk not in _TEMPLATE_KINDS:
            _fail(f"{path}.template.kind",
                  f"must be one of {list(_TEMPLATE_KINDS)}, got {tk!r}")
        t["kind"] = tk
        t["resolution"] = _as_int(tmpl.get("resolution", 64),
                                  f"{path}.template.resolution", lo=2)
        if "resolution_y" in tmpl:
            t["resolution_y"] = _as_int(tmpl["resolution_y"],
                                        f"{path}.template.resolution_y", lo=2)
        for key in ("floor",):
            if key in tmpl:
                t[key] = _as_num(tmpl[key], f"{path}.template.{key}", positive=True)
        if "cov_diag" in tmpl:
            t["cov_diag"] = _num_list(tmpl["cov_diag"], f"{path}.template.cov_diag",
                                      positive=True, min_len=2)[:2]
        unknown = set(tmpl) - set(t)
        if unknown:
            _fail(f"{path}.template.{sorted(unknown)[0]}", "unknown field")
        out["template"] = t
    if "box" in block:
        box = _as_list(block["box"], f"{path}.box")
        parsed = []
        for i, row in enumerate(box):
            pair = _num_list(row, f"{path}.box[{i}]", min_len=2)
            if len(pair) != 2 or pair[0] >= pair[1]:
                _fail(f"{path}.box[{i}]", f"expected [lo, hi] with lo < hi, got {row!r}")
            parsed.append(pair)
        out["box"] = parsed
    if "params" in block:
        if not isinstance(block["params"], dict):
            _fail(f"{path}.params", "expected object")
        out["params"] = block["params"]
    unknown = set(block) - {"kind", "template", "box", "params"}
    if unknown:
        _fail(f"{path}.{sorted(unknown)[0]}", "unknown field")
    return out


def _validate_sinkhorn(block, path: str) -> dict:
    if not isinstance(block, dict):
        _fail(path, "expected object")
    out = {}
    for key, v in block.items():
        if key not in _SINKHORN_KEYS:
            _fail(f"{path}.{key}", f"unknown field; known: {list(_SINKHORN_KEYS)}")
        if key == "max_iters":
            out[key] = _as_int(v, f"{path}.{key}", lo=1)
        else:
            out[key] = _as_num(v, f"{path}.{key}", positive=True)
    if "eps_decay" in out and not out["eps_decay"] < 1:
        _fail(f"{path}.eps_decay", f"must be < 1, got {out['eps_decay']}")
    return out


# Per-experiment option schema: name -> (checker, default).  A default of
# _REQUIRED marks the option as mandatory for that experiment.
_REQUIRED = object()


def _theta_checker(v, path):
    return _num_list(v, path)


def _theta_list_checker(v, path):
    rows = _as_list(v, path)
    return [_num_list(r, f"{path}[{i}]") if isinstance(r, list)
            else [_as_num(r, f"{path}[{i}]")] for i, r in enumerate(rows)]


_OPTION_SCHEMAS = {
    "wv-convergence": {
        "theta": (_theta_checker, _REQUIRED),
        "n_etas": (lambda v, p: _as_int(v, p, lo=1), 100),
        "t_list": (lambda v, p: _num_list(v, p, positive=True, min_len=2), _REQUIRED),
    },
    "spectrum": {
        "theta": (_theta_checker, _REQUIRED),
        "n_etas": (lambda v, p: _as_int(v, p, lo=2), 100),
        "t_list": (lambda v, p: _num_list(v, p, positive=True, min_len=2), _REQUIRED),
        "n_eigs": (lambda v, p: _as_int(v, p, lo=1), 12),
    },
    "distance-hierarchy": {
        "theta_list": (_theta_list_checker, _REQUIRED),
        "quad_steps": (lambda v, p: _as_int(v, p, lo=1), 64),
    },
    "graph-gw": {
        "N_list": (lambda v, p: [_as_int(x, f"{p}[{i}]", lo=2)
                                 for i, x in enumerate(_as_list(v, p))], _REQUIRED),
        "M_probe": (lambda v, p: _as_int(v, p, lo=1), 30),
        "eps_c": (lambda v, p: _as_num(v, p, positive=True), None),
        "quad_steps": (lambda v, p: _as_int(v, p, lo=1), 64),
    },
    "gradproj-spectrum": {
        "theta": (_theta_checker, _REQUIRED),
        "resolutions": (lambda v, p: [_as_int(x, f"{p}[{i}]", lo=4)
                                      for i, x in enumerate(_as_list(v, p))],
                        [102]),
        "t_list": (lambda v, p: _num_list(v, p, positive=True, min_len=2), _REQUIRED),
        "n_etas": (lambda v, p: _as_int(v, p, lo=2), 4),
        "n_eigs": (lambda v, p: _as_int(v, p, lo=1), 8),
        "include_z": (lambda v, p: v if isinstance(v, bool)
                      else _fail(p, f"expected bool, got {v!r}"), True),
    },
    "sample-family": {
        "theta_list": (_theta_list_checker, _REQUIRED),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated, normalized experiment description."""

    experiment: str
    family: dict
    options: dict
    sinkhorn: dict
    seed: int
    out_dir: str

    def normalized(self) -> dict:
        return {
            "experiment": self.experiment,
            "family": self.family,
            "options": self.options,
            "sinkhorn": self.sinkhorn,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        """12-hex digest of the normalized config; out_dir excluded so the
        same run written elsewhere keeps its identity."""
        blob = json.dumps(self.normalized(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def build_family(self) -> families.ManifoldFamily:
        spec = None
        if "template" in self.family:
            t = dict(self.family["template"])
            if "cov_diag" in t:
                t["cov_diag"] = tuple(t["cov_diag"])
            spec = TemplateSpec(**t)
        try:
            fam = families.make_family(self.family["kind"], template_spec=spec,
                                       box=self.family.get("box"),
                                       **self.family.get("params", {}))
        except (TypeError, ValueError) as exc:
            _fail("family.params", str(exc))
        self._check_thetas(fam)
        return fam

    def _check_thetas(self, fam):
        def inside(vec, path):
            v = np.asarray(vec, dtype=float)
            if v.size != fam.m:
                _fail(path, f"family has {fam.m} parameters, got {v.size}")
            lo, hi = fam.box[:, 0], fam.box[:, 1]
            if (v < lo).any() or (v > hi).any():
                _fail(path, f"{v.tolist()} outside box {fam.box.tolist()}")

        if "theta" in self.options:
            inside(self.options["theta"], "options.theta")
        for i, th in enumerate(self.options.get("theta_list", [])):
            inside(th, f"options.theta_list[{i}]")

    def sinkhorn_config(self, fam) -> ot.SinkhornConfig:
        """Config with family-aligned defaults for whatever the JSON left out."""
        kw = dict(self.sinkhorn)
        kw.setdefault("eps_final", (fam.spacing() / 4.0) ** 2)
        kw.setdefault("eps_start",
                      max(0.5 * fam.template.diameter_sq(), kw["eps_final"]))
        return ot.SinkhornConfig(**kw)


def validate(raw, out_dir: str = "out") -> ExperimentConfig:
    """Check a parsed JSON object against the experiment schemas."""
    if not isinstance(raw, dict):
        _fail("$", f"top level must be an object, got {type(raw).__name__}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        _fail("experiment", f"must be one of {list(EXPERIMENTS)}, got {exp!r}")
    if "family" not in raw:
        _fail("family", "required")
    fam_block = _validate_family(raw["family"], "family")
    seed = _as_int(raw.get("seed", 0), "seed", lo=0)
    sink = _validate_sinkhorn(raw.get("sinkhorn", {}), "sinkhorn")
    out = raw.get("out_dir", out_dir)
    if not isinstance(out, str) or not out:
        _fail("out_dir", f"expected non-empty string, got {out!r}")

    schema = _OPTION_SCHEMAS[exp]
    opts_block = raw.get("options", {})
    if not isinstance(opts_block, dict):
        _fail("options", "expected object")
    opts = {}
    for key, (checker, default) in schema.items():
        if key in opts_block:
            opts[key] = checker(opts_block[key], f"options.{key}")
        elif default is _REQUIRED:
            _fail(f"options.{key}", f"required for experiment {exp!r}")
        elif default is not None:
            opts[key] = default
    unknown = set(opts_block) - set(schema)
    if unknown:
        _fail(f"options.{sorted(unknown)[0]}",
              f"unknown option for experiment {exp!r}")
    unknown = set(raw) - {"experiment", "family", "options", "sinkhorn", "seed",
                          "out_dir"}
    if unknown:
        _fail(sorted(unknown)[0], "unknown top-level field")

    cfg = ExperimentConfig(experiment=exp, family=fam_block, options=opts,
                           sinkhorn=sink, seed=seed, out_dir=out)
    cfg.build_family()  # referenced thetas must sit inside the box
    return cfg


def load(path: str, out_dir: str | None = None) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(path, "file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(path, f"invalid JSON: {exc}") from None
    cfg = validate(raw, out_dir=out_dir or raw.get("out_dir", "out"))
    if out_dir is not None:
        cfg = ExperimentConfig(experiment=cfg.experiment, family=cfg.family,
                               options=cfg.options, sinkhorn=cfg.sinkhorn,
                               seed=cfg.seed, out_dir=out_dir)
    return cfg
