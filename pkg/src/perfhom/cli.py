"""Command-line experiment runner.

Every subcommand takes its parameters from an optional JSON config file
(``--config``) overridden by command-line flags.  The merged config is
validated against a schema before any computation; outputs (CSV files, a
manifest and optionally plot scripts) go to ``--out``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (partial outputs
are kept).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

from .defaults import DEFAULTS, effective
from .errors import ArgumentError, GeometryError, PerfhomError, ValidationError

log = logging.getLogger("perfhom")

SUBCOMMANDS = ("mu", "capacity", "corrector", "solve", "resolvent-sweep", "spectrum", "gap", "numrange",
               "semigroup", "decay", "interaction", "decompose", "mesh-audit")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_EPS = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_COMPLEX = {"type": ["string", "number"]}
_INT = {"type": "integer"}

PROPERTIES = {
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "threads": {"type": "integer", "minimum": 1},
    "tolerances": {"type": "object", "additionalProperties": False,
                   "properties": {k: {"type": "number"} for k in DEFAULTS}},
    "record_timings": {"type": "boolean"},
    "plot": {"type": "boolean"},
    "bc": {"enum": ["dirichlet", "neumann", "robin"]},
    "outer_bc": {"enum": ["dirichlet", "neumann", "robin", "same"]},
    "alpha": _COMPLEX,
    "dim": {"enum": [2, 3]},
    "eps": {"oneOf": [_EPS, {"type": "array", "items": _EPS, "minItems": 1}]},
    "box": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
    "h_far": _POS,
    "grading": {"type": "number", "exclusiveMinimum": 1, "maximum": 2},
    "radius_override": _POS,
    "neumann_exponent": {"type": "number", "exclusiveMinimum": 1},
    "mu": {"oneOf": [{"enum": ["strange", "zero"]}, _COMPLEX]},
    "delta_eps": {"type": "boolean"},
    "source": {"enum": ["sin", "one", "zero"]},
    "window": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
    "delta": _POS,
    "samples": {"type": "integer", "minimum": 1},
    "t_max": _POS,
    "dt": _POS,
    "lam": _NUM,
    "sources": {"type": "integer", "minimum": 1},
    "length": _POS,
    "i": {"type": "integer", "minimum": 0},
    "j_max": {"type": "integer", "minimum": 1},
    "n": {"oneOf": [{"type": "integer", "minimum": 2}, {"type": "array", "items": {"type": "integer", "minimum": 2}}]},
    "cubes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    "mode": {"enum": ["difference", "resolvent"]},
    "R": {"type": "number", "exclusiveMinimum": 1},
    "nodes": {"type": "integer", "minimum": 3},
    "a": _POS,
    "unit_trace": {"type": "boolean"},
}

_COMMON = ["seed", "threads", "tolerances", "record_timings", "plot"]
_GEOM = ["bc", "alpha", "eps", "box", "h_far", "grading", "radius_override", "neumann_exponent", "outer_bc"]

ALLOWED = {
    "mu": ["bc", "alpha", "dim", "eps", "unit_trace", "neumann_exponent", "radius_override"],
    "capacity": ["dim", "R", "nodes"],
    "corrector": ["bc", "alpha", "dim", "eps", "a", "nodes"],
    "solve": _GEOM + ["mu", "source"],
    "resolvent-sweep": _GEOM + ["mu", "source", "delta_eps"],
    "spectrum": _GEOM + ["mu", "window"],
    "gap": _GEOM + ["delta", "window"],
    "numrange": _GEOM + ["samples", "mu"],
    "semigroup": _GEOM + ["t_max", "dt"],
    "decay": ["bc", "alpha", "lam", "sources", "length", "h_far"],
    "interaction": _GEOM + ["i", "j_max", "mode"],
    "decompose": _GEOM + ["n", "cubes", "mode"],
    "mesh-audit": _GEOM,
}

DEFAULT_CONFIG = {
    "seed": DEFAULTS["seed"],
    "bc": "robin",
    "alpha": "1+0i",
    "dim": 2,
    "h_far": 1 / 32,
    "grading": DEFAULTS["grading"],
    "mu": "strange",
    "source": "sin",
    "delta_eps": True,
    "delta": 0.2,
    "samples": 200,
    "t_max": 5.0,
    "dt": 0.5,
    "lam": 1.0,
    "sources": 20,
    "i": 1,
    "j_max": 8,
    "n": [3, 4],
    "mode": "difference",
    "R": 100.0,
    "nodes": 2000,
    "unit_trace": False,
    "record_timings": False,
    "plot": False,
}

# per-subcommand defaults that differ from the table above
SUB_DEFAULTS = {
    "resolvent-sweep": {"eps": [0.25, 0.125, 0.0625]},
    "spectrum": {"eps": [0.25, 0.125, 0.0625], "window": [1.0, 30.0]},
    "gap": {"eps": [0.0625]},
    "numrange": {"eps": [0.125], "alpha": "1+1i"},
    "semigroup": {"eps": [0.125], "alpha": "1+1i"},
    "interaction": {"eps": [0.25], "box": [10.0, 1.0], "h_far": 1 / 16},
    "decompose": {"eps": [0.25], "box": [8.0, 1.0], "h_far": 1 / 16, "cubes": [1, 2, 3, 4, 5, 6]},
    "decay": {"length": 8.0, "h_far": 1 / 16},
    "solve": {"eps": [0.125]},
    "mesh-audit": {"eps": [0.125]},
    "corrector": {"eps": [0.25]},
    "mu": {"eps": [0.25, 0.125, 0.0625, 0.03125]},
}


def schema_for(sub: str) -> dict:
    keys = _COMMON + ALLOWED[sub]
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": f"perfhom {sub} config",
        "type": "object",
        "additionalProperties": False,
        "properties": {k: PROPERTIES[k] for k in keys},
    }


def validate_config(sub: str, cfg: dict) -> dict:
    """Schema check plus semantic checks; returns the merged config."""
    import jsonschema

    try:
        jsonschema.validate(cfg, schema_for(sub))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config error at {path}: {exc.message}") from None
    merged = {k: v for k, v in DEFAULT_CONFIG.items() if k in _COMMON + ALLOWED[sub]}
    merged.update({k: v for k, v in SUB_DEFAULTS.get(sub, {}).items() if k in ALLOWED[sub]})
    merged.update(cfg)
    if "eps" in merged and not isinstance(merged["eps"], list):
        merged["eps"] = [merged["eps"]]
    if "n" in merged and not isinstance(merged["n"], list):
        merged["n"] = [merged["n"]]
    try:
        effective(merged.get("tolerances"))
        _build_specs(merged, sub)
        if "alpha" in merged:
            from .geometry import parse_complex

            parse_complex(merged["alpha"])
        if "mu" in merged and merged["mu"] not in ("strange", "zero"):
            from .geometry import parse_complex

            parse_complex(merged["mu"])
        if sub == "decay" and not merged["lam"] > 0.5:
            raise ArgumentError("lam must exceed 1/2")
        if "window" in merged and merged["window"][0] > merged["window"][1]:
            raise ArgumentError("window must be increasing")
    except (ArgumentError, GeometryError, KeyError) as exc:
        raise ValidationError(str(exc)) from None
    return merged


def _bc(cfg, key="bc"):
    from .geometry import BoundaryKind, parse_complex

    kind = cfg.get(key, "robin")
    if kind == "same":
        return None
    if kind == "robin":
        return BoundaryKind.robin(parse_complex(cfg.get("alpha", "1+0i")))
    return BoundaryKind(kind)


def _build_specs(cfg, sub=None):
    from .geometry import DomainShape, DomainSpec, PerforationSpec

    if "eps" not in cfg or sub in ("mu", "corrector"):
        if "bc" in cfg:
            _bc(cfg)
        return []
    box = tuple(cfg.get("box", (1.0, 1.0)))
    shape = DomainShape.STRIP if box[0] != box[1] else DomainShape.RECTANGLE
    domain = DomainSpec(2, box, shape)
    bc = _bc(cfg)
    kw = {}
    if "neumann_exponent" in cfg:
        kw["neumann_exponent"] = cfg["neumann_exponent"]
    if "radius_override" in cfg:
        kw["radius_override"] = cfg["radius_override"]
    return [PerforationSpec(domain, e, bc, **kw) for e in cfg["eps"]]


def config_hash(sub: str, cfg: dict) -> str:
    blob = json.dumps({"subcommand": sub, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x) -> str:
    """Deterministic text for CSV cells."""
    from .geometry import format_complex

    if x is None:
        return ""
    if hasattr(x, "dtype"):
        x = x.item()
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, complex):
        return format_complex(x)
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


class Table:
    """CSV table; failed rows keep only the first ``keep`` (identifying)
    columns and leave every value column blank."""

    def __init__(self, name: str, header: list, keep: int = 1):
        self.name, self.header, self.keep = name, list(header), keep
        self.status_col = self.header.index("status")
        self.rows = []

    def add(self, values: list, status: str = "ok") -> None:
        values = [fmt(v) for v in values]
        n_val = len(self.header) - 1
        if status != "ok":
            values = values[: self.keep]
        values = values + [""] * (n_val - len(values))
        if len(values) != n_val:
            raise ValueError(f"{self.name}: row has {len(values)} values for {n_val} columns")
        values.insert(self.status_col, status)
        self.rows.append(values)

    @property
    def statuses(self) -> list:
        return [r[self.status_col] for r in self.rows]

    def text(self, manifest_hash: str) -> str:
        buf = io.StringIO()
        buf.write(f"# manifest={manifest_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommand handlers (each returns a list of Tables and a list of messages)


def _mu_value(cfg):

    if cfg.get("mu", "strange") == "strange":
        return None
    if cfg["mu"] == "zero":
        return 0j
    from .geometry import parse_complex

    return parse_complex(cfg["mu"])


def _source(cfg):
    import numpy as np

    from .lab import default_source

    kind = cfg.get("source", "sin")
    if kind == "sin":
        return default_source
    if kind == "one":
        return lambda x: np.ones(len(x))
    return lambda x: np.zeros(len(x))


def run_mu(cfg, ctx):
    from .geometry import BCType, strange_term
    from .lab import mu_percell

    bc = _bc(cfg)
    d = cfg["dim"]
    st = strange_term(bc, d)
    t = Table("mu", ["bc", "dim", "epsilon", "mu_re", "mu_im", "percell_re", "percell_im", "identity", "status"], 3)
    exact = True
    for eps in cfg["eps"]:
        try:
            pc = mu_percell(bc, eps, d, a=cfg.get("radius_override"), unit_trace=cfg["unit_trace"])
            ident = bc.kind is BCType.ROBIN and abs(mu_percell(bc, eps, d, unit_trace=True) - st.mu) <= 4e-16 * abs(st.mu)
            if bc.kind is BCType.ROBIN:
                exact = exact and ident
            t.add([bc.label(), d, eps, st.mu.real, st.mu.imag, pc.real, pc.imag, ident])
        except PerfhomError as exc:
            ctx["failed"] = True
            log.error("eps=%g: %s: %s", eps, type(exc).__name__, exc)
            t.add([bc.label(), d, eps], "failed")
    flag = "exact" if bc.kind is BCType.ROBIN and exact else ("n/a" if bc.kind is not BCType.ROBIN else "violated")
    from .geometry import format_complex

    ctx["stdout"].append(f"mu = {format_complex(st.mu)} ({st.mu.real!r})  identity={flag}")
    return [t]


def run_capacity(cfg, ctx):
    from .lab import capacity_extrapolated, capacity_variational
    from .geometry import surface_area_unit_ball

    d, R, n = cfg["dim"], float(cfg["R"]), cfg["nodes"]
    t = Table("capacity", ["dim", "R", "nodes", "energy", "closed_form", "rel_err", "status"], 3)
    try:
        cap_true = (d - 2) * surface_area_unit_ball(d)
        E = capacity_variational(d, R, n=n)
        closed = cap_true / (1 - R ** (2 - d))
        t.add([d, R, n, E, closed, abs(E - closed) / closed])
        ext = capacity_extrapolated(d, n=n)
        t.add([d, math.inf, n, ext, cap_true, abs(ext - cap_true) / cap_true])
        ctx["stdout"].append(f"capacity(R={R}) = {E!r}; extrapolated = {ext!r}; mu_D = {ext / 2**d!r}")
    except PerfhomError as exc:
        ctx["failed"] = True
        log.error("%s: %s", type(exc).__name__, exc)
        t.add([d, R, n], "failed")
    return [t]


def run_corrector(cfg, ctx):
    from .geometry import DomainSpec, PerforationSpec
    from .lab import corrector_radial

    bc = _bc(cfg)
    d = cfg["dim"]
    eps = cfg["eps"][0]
    a = cfg.get("a") or PerforationSpec(DomainSpec(d, (1.0,) * d), eps, bc).hole_radius
    cor = corrector_radial(bc, a, eps, d, n=cfg.get("nodes", 400) if cfg.get("nodes", 2000) <= 10**5 else 400)
    t = Table("corrector", ["r", "w_re", "w_im", "numeric_re", "numeric_im", "status"], 1)
    for r, w, wn in zip(cor.grid.nodes, cor.values, cor.numeric):
        t.add([float(r), w.real, w.imag, wn.real, wn.imag])
    ctx["stdout"].append(f"flux = {fmt(complex(cor.flux))}; w(a) = {fmt(cor.trace)}; "
                         f"max |closed - numeric| = {cor.max_numeric_error:.3e}")
    return [t]


def run_solve(cfg, ctx):
    import numpy as np

    from .assembly import build_operator
    from .lab import build_pair
    from .solvers import solve

    t = Table("solve", ["epsilon", "h_far", "dofs", "residual", "l2_norm", "status"], 2)
    f = _source(cfg)
    for spec in _build_specs(cfg):
        try:
            perf, _ = build_pair(spec, cfg["h_far"], cfg["grading"])
            op = build_operator(perf, spec.bc, 0.0, 0.0, _bc(cfg, "outer_bc") if "outer_bc" in cfg else None)
            fv = np.asarray(f(perf.vertices), dtype=complex)
            u, rep = solve(op, op.Mass.csr @ fv)
            nrm = math.sqrt(float(np.real(np.vdot(u, op.Mass.csr @ u))))
            t.add([spec.epsilon, cfg["h_far"], op.n_free, rep.residual, nrm])
        except PerfhomError as exc:
            ctx["failed"] = True
            log.error("eps=%g: %s: %s", spec.epsilon, type(exc).__name__, exc)
            t.add([spec.epsilon, cfg["h_far"]], "failed")
    return [t]


def run_sweep(cfg, ctx):
    from .lab import SWEEP_HEADER, resolvent_sweep

    specs = _build_specs(cfg)
    recs = resolvent_sweep(specs, _source(cfg), cfg["h_far"], _mu_value(cfg), cfg["delta_eps"], True,
                           cfg["seed"], outer_bc=_bc(cfg, "outer_bc") if "outer_bc" in cfg else None)
    # status sits before the trailing seconds column
    t = Table("sweep", SWEEP_HEADER, 2)
    for r in recs:
        ctx["timings"].append({"epsilon": r.epsilon, "seconds": r.seconds})
        secs = r.seconds if cfg["record_timings"] else None
        if r.status != "ok":
            ctx["failed"] = True
            t.add([r.epsilon, r.h_far], r.status)
            continue
        lam = complex(r.lambda1)
        t.add([r.epsilon, r.h_far, r.dofs, r.defect, None if not cfg["delta_eps"] else r.delta_eps,
               lam.real, lam.imag, secs])
    return [t]


def run_spectrum(cfg, ctx):
    from .assembly import build_operator
    from .geometry import strange_term
    from .lab import build_pair
    from .spectral import SpectrumWindow, spectra_hausdorff

    win = SpectrumWindow(*cfg["window"])
    ev = Table("spectrum", ["epsilon", "operator", "re", "im", "status"], 2)
    hd = Table("hausdorff", ["epsilon", "hausdorff", "n_eps", "n_lim", "status"], 1)
    mu_cfg = _mu_value(cfg)
    for spec in _build_specs(cfg):
        try:
            perf, full = build_pair(spec, cfg["h_far"], cfg["grading"])
            mu = strange_term(spec.bc, 2).mu if mu_cfg is None else mu_cfg
            d, e1, e2 = spectra_hausdorff(build_operator(perf, spec.bc), build_operator(full, spec.bc, mu), win)
            for z in e1:
                ev.add([spec.epsilon, "eps", z.real, z.imag])
            for z in e2:
                ev.add([spec.epsilon, "limit", z.real, z.imag])
            hd.add([spec.epsilon, d, int(win.contains(e1).sum()), int(win.contains(e2).sum())])
        except PerfhomError as exc:
            ctx["failed"] = True
            log.error("eps=%g: %s: %s", spec.epsilon, type(exc).__name__, exc)
            hd.add([spec.epsilon], "failed")
    return [ev, hd]


def run_gap(cfg, ctx):
    from .assembly import build_operator
    from .geometry import strange_term
    from .lab import build_pair
    from .spectral import spectral_gap_check

    t = Table("gap", ["epsilon", "delta", "lo", "hi", "holds", "n_violators", "status"], 2)
    for spec in _build_specs(cfg):
        try:
            perf, _ = build_pair(spec, cfg["h_far"], cfg["grading"])
            mu = strange_term(spec.bc, 2).mu
            rep = spectral_gap_check(build_operator(perf, spec.bc, 0.0, -1.0), cfg["delta"], mu,
                                     tuple(cfg["window"]) if "window" in cfg else None)
            t.add([spec.epsilon, cfg["delta"], rep.interval[0], rep.interval[1], rep.holds, len(rep.violators)])
            ctx["stdout"].append(f"eps={spec.epsilon}: gap {'holds' if rep.holds else 'violated'}")
        except PerfhomError as exc:
            ctx["failed"] = True
            log.error("eps=%g: %s: %s", spec.epsilon, type(exc).__name__, exc)
            t.add([spec.epsilon, cfg["delta"]], "failed")
    return [t]


def run_numrange(cfg, ctx):
    from .assembly import build_operator
    from .lab import build_pair
    from .spectral import SectorVariant, sector_angle, numerical_range_sample

    spec = _build_specs(cfg)[0]
    alpha = spec.bc.robin_coefficient
    perf, _ = build_pair(spec, cfg["h_far"], cfg["grading"])
    mu = _mu_value(cfg) or 0j
    op = build_operator(perf, spec.bc, mu, -1.0)
    z = numerical_range_sample(op, cfg["samples"], cfg["seed"])
    theta = sector_angle(alpha, variant=SectorVariant.THETA_0).half_angle if alpha.real > 0 else math.pi / 2
    from .spectral import SectorSpec

    sector = SectorSpec(0j, theta)
    inside = sector.contains(z, 1e-12)
    t = Table("numrange", ["re", "im", "theta0", "in_sector", "status"], 0)
    for zi, ok in zip(z, inside):
        t.add([zi.real, zi.imag, theta, bool(ok)])
    ctx["stdout"].append(f"theta0 = {theta!r}; {int(inside.sum())}/{len(z)} samples inside")
    if not inside.all():
        ctx["failed"] = True
    return [t]


def run_semigroup(cfg, ctx):
    import numpy as np

    from .assembly import build_operator
    from .geometry import strange_term
    from .lab import build_pair
    from .solvers import eigs_window
    from .spectral import semigroup_decay_curve

    spec = _build_specs(cfg)[0]
    if spec.bc.robin_coefficient.real <= 0:
        raise ValidationError("semigroup experiments need a Robin coefficient with Re(alpha) > 0")
    perf, _ = build_pair(spec, cfg["h_far"], cfg["grading"])
    B = build_operator(perf, spec.bc, 0.0, -1.0)
    mu = strange_term(spec.bc, 2).mu
    ev = eigs_window(B, (-0.1, mu.real + 10.0)).values
    lam_min = float(ev.real.min()) if len(ev) else mu.real
    grid = np.arange(0.0, cfg["t_max"] + 1e-9, cfg["dt"])
    curve = semigroup_decay_curve(B, grid, seed=cfg["seed"], lambdas=[0.95 * lam_min, 0.5 * mu.real])
    t = Table("decay", ["t", "norm", "bound", "fit_bound", "status"], 1)
    for tk, nk in zip(curve.t, curve.norms):
        t.add([float(tk), float(nk), 1.05 * math.exp(-0.95 * lam_min * tk),
               curve.M * math.exp(-curve.lam * tk) if not math.isnan(curve.M) else None])
    ctx["stdout"].append(f"min Re sigma(B) = {lam_min!r}; fitted M = {curve.M!r}, lambda = {curve.lam!r}")
    return [t]


def run_decay(cfg, ctx):
    from .geometry import DomainSpec
    from .assembly import WeightSpec
    from .lab import DecayCheckConfig, strip_operator, weighted_decay_check

    strip = DomainSpec.strip(cfg["length"], 1.0)
    bc = _bc(cfg)
    dcfg = DecayCheckConfig(strip, cfg["lam"], WeightSpec((cfg["length"] / 2, 0.5)), bc, cfg["h_far"])
    mesh_op = strip_operator(strip, cfg["h_far"], bc, cfg["lam"])
    t = Table("decay_check", ["source", "cube", "r1", "r2", "M", "pass1", "pass2", "tail", "status"], 1)
    for k in range(cfg["sources"]):
        rep = weighted_decay_check(dcfg, None, cfg["seed"] + k, mesh_op)
        t.add([k, rep.cube, rep.r1, rep.r2, rep.M, rep.pass1, rep.pass2, rep.tail_fraction])
        if not rep.passed:
            ctx["failed"] = True
    return [t]


def _cube_problem(cfg):
    from .lab import CubeProblem

    spec = _build_specs(cfg)[0]
    return CubeProblem(spec, cfg["h_far"], cfg["mode"], _mu_value(cfg), cfg["grading"])


def run_interaction(cfg, ctx):
    from .lab import interaction_decay

    prob = _cube_problem(cfg)
    i = cfg["i"]
    t = Table("interaction", ["i", "j", "distance", "inner_re", "inner_im", "ratio", "status"], 3)
    for j in range(i + 1, min(prob.n_cubes, i + cfg["j_max"] + 1)):
        ip, ratio = interaction_decay(prob, i, j)
        t.add([i, j, j - i, ip.real, ip.imag, ratio])
    return [t]


def run_decompose(cfg, ctx):
    import numpy as np

    from .lab import decomposition_inequality_check

    prob = _cube_problem(cfg)
    f = np.zeros(prob.full.n_vertices, complex)
    for c in cfg["cubes"]:
        if c >= prob.n_cubes:
            raise ValidationError(f"cube {c} outside the strip")
        f += prob.bump(c)
    t = Table("decompose", ["n", "lhs", "sum_sq", "f_norm", "C", "status"], 1)
    for n in cfg["n"]:
        rep = decomposition_inequality_check(prob, f, n)
        t.add([n, rep.lhs, rep.sum_sq, rep.f_norm, rep.C])
    return [t]


def run_mesh_audit(cfg, ctx):
    from .mesh import MeshQualityReport, audit_mesh, fill_holes, mesh_perforated

    fields = list(MeshQualityReport.__dataclass_fields__)
    t = Table("mesh_audit", ["epsilon", "mesh"] + fields + ["status"], 2)
    for spec in _build_specs(cfg):
        try:
            perf = mesh_perforated(spec, cfg["h_far"], cfg["grading"])
            full = fill_holes(perf)
            for name, m in (("perforated", perf), ("full", full)):
                rep = audit_mesh(m)
                t.add([spec.epsilon, name] + [getattr(rep, f) for f in fields])
            ctx["extra"][f"mesh_eps{spec.epsilon:g}.pdmesh"] = perf
        except PerfhomError as exc:
            ctx["failed"] = True
            log.error("eps=%g: %s: %s", spec.epsilon, type(exc).__name__, exc)
            t.add([spec.epsilon, "perforated"], "failed")
    return [t]


HANDLERS = {
    "mu": run_mu, "capacity": run_capacity, "corrector": run_corrector, "solve": run_solve,
    "resolvent-sweep": run_sweep, "spectrum": run_spectrum, "gap": run_gap, "numrange": run_numrange,
    "semigroup": run_semigroup, "decay": run_decay, "interaction": run_interaction,
    "decompose": run_decompose, "mesh-audit": run_mesh_audit,
}


# ---------------------------------------------------------------------------
# plot scripts

PLOT_KINDS = {
    "sweep": ["epsilon", "h_far", "dofs", "defect", "delta_eps", "lambda1_re", "lambda1_im", "status", "seconds"],
    "numrange": ["re", "im", "theta0", "in_sector", "status"],
    "decay": ["t", "norm", "bound", "fit_bound", "status"],
    "spectrum": ["epsilon", "operator", "re", "im", "status"],
}

_PLOT_HEAD = '''"""Plot {csv_name} (generated script)."""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV = os.path.join(os.path.dirname(os.path.abspath(__file__)), {csv_path!r})


def rows():
    with open(CSV) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [r for r in csv.DictReader(lines) if r.get("status") == "ok"]


data = rows()
fig, ax = plt.subplots()
'''

_PLOT_BODY = {
    "sweep": '''eps = [float(r["epsilon"]) for r in data]
ax.loglog(eps, [float(r["defect"]) for r in data], "o-", label="L2 defect")
if all(r["delta_eps"] for r in data):
    ax.loglog(eps, [float(r["delta_eps"]) for r in data], "s--", label="delta_eps")
ax.set_xlabel("epsilon")
ax.set_ylabel("defect")
ax.legend()
''',
    "numrange": '''import math

re = [float(r["re"]) for r in data]
im = [float(r["im"]) for r in data]
ax.scatter(re, im, s=8)
theta = float(data[0]["theta0"])
x = [0.0, max(re) * 1.1]
ax.plot(x, [math.tan(theta) * v for v in x], "k--", label="sector boundary")
ax.plot(x, [-math.tan(theta) * v for v in x], "k--")
ax.set_xlabel("Re")
ax.set_ylabel("Im")
ax.legend()
''',
    "decay": '''t = [float(r["t"]) for r in data]
ax.semilogy(t, [float(r["norm"]) for r in data], "o-", label="||exp(-tB)||")
ax.semilogy(t, [float(r["bound"]) for r in data], "k--", label="bound")
ax.set_xlabel("t")
ax.legend()
''',
    "spectrum": '''for op, marker in (("eps", "o"), ("limit", "x")):
    pts = [r for r in data if r["operator"] == op]
    ax.scatter([float(r["re"]) for r in pts], [float(r["im"]) for r in pts], marker=marker, label=op)
ax.set_xlabel("Re")
ax.set_ylabel("Im")
ax.legend()
''',
}

_PLOT_EMPTY = '''ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
'''

_PLOT_TAIL = '''fig.savefig(CSV.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def _csv_header(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines or not lines[0].strip():
        return None, 0
    return next(csv.reader(lines[:1])), len([ln for ln in lines[1:] if ln.strip()])


def emit_plotscript(csv_path, kind: str | None = None, out=None) -> Path:
    """Write a standalone matplotlib script for a CSV produced by this tool."""
    csv_path = Path(csv_path)
    if kind is not None and kind not in PLOT_KINDS:
        raise ValidationError(f"unknown plot kind {kind!r}")
    if not csv_path.is_file():
        raise ValidationError(f"{csv_path}: no such CSV file")
    header, n_rows = _csv_header(csv_path)
    if header is None:
        kind = kind or "sweep"
    else:
        matches = [k for k, h in PLOT_KINDS.items() if h == header]
        if not matches:
            raise ValidationError(f"{csv_path}: unrecognised CSV header {header}")
        if kind is not None and kind not in matches:
            raise ValidationError(f"{csv_path}: header does not match plot kind {kind!r}")
        kind = matches[0]
    out = Path(out) if out is not None else csv_path.with_suffix(".plot.py")
    # the script locates the CSV relative to itself
    rel = os.path.relpath(csv_path.resolve(), out.resolve().parent)
    if n_rows:
        body = "if data:\n" + "".join("    " + ln if ln else ln for ln in _PLOT_BODY[kind].splitlines(True))
        body += "else:\n    " + _PLOT_EMPTY
    else:
        body = _PLOT_EMPTY
    text = _PLOT_HEAD.format(csv_name=csv_path.name, csv_path=rel) + body + _PLOT_TAIL
    atomic_write(out, text)
    return out


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfhom", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out", default="perfhom_out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--bc", choices=["dirichlet", "neumann", "robin"])
        s.add_argument("--outer-bc", dest="outer_bc", choices=["dirichlet", "neumann", "robin", "same"])
        s.add_argument("--alpha", help="Robin coefficient, e.g. 1+2i")
        s.add_argument("--dim", type=int)
        s.add_argument("--eps", help="comma-separated list")
        s.add_argument("--box", help="Lx,Ly")
        s.add_argument("--h-far", dest="h_far", type=float)
        s.add_argument("--grading", type=float)
        s.add_argument("--radius-override", dest="radius_override", type=float)
        s.add_argument("--neumann-exponent", dest="neumann_exponent", type=float)
        s.add_argument("--mu", help="strange, zero or a complex value")
        s.add_argument("--source", choices=["sin", "one", "zero"])
        s.add_argument("--no-delta", dest="delta_eps", action="store_const", const=False)
        s.add_argument("--window", help="lo,hi")
        s.add_argument("--delta", type=float)
        s.add_argument("--samples", type=int)
        s.add_argument("--t-max", dest="t_max", type=float)
        s.add_argument("--dt", type=float)
        s.add_argument("--lam", type=float)
        s.add_argument("--sources", type=int)
        s.add_argument("--length", type=float)
        s.add_argument("--i", type=int)
        s.add_argument("--j-max", dest="j_max", type=int)
        s.add_argument("--n", help="comma-separated list")
        s.add_argument("--cubes", help="comma-separated list")
        s.add_argument("--mode", choices=["difference", "resolvent"])
        s.add_argument("--R", type=float)
        s.add_argument("--nodes", type=int)
        s.add_argument("--a", type=float)
        s.add_argument("--unit-trace", dest="unit_trace", action="store_const", const=True)
        s.add_argument("--record-timings", dest="record_timings", action="store_const", const=True)
        s.add_argument("--plot", action="store_const", const=True)
    return p


_LISTS = {"eps": float, "box": float, "window": float, "n": int, "cubes": int}
_SKIP = {"subcommand", "config", "out"}


def _flags_to_config(ns) -> dict:
    out = {}
    for k, v in vars(ns).items():
        if k in _SKIP or v is None:
            continue
        if k in _LISTS:
            try:
                v = [_LISTS[k](x) for x in str(v).split(",") if x.strip()]
            except ValueError:
                raise ValidationError(f"--{k}: cannot parse {v!r}") from None
        out[k] = v
    return out


def _setup_logging():
    level = os.environ.get("PERFHOM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv=None) -> int:
    _setup_logging()
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    sub = ns.subcommand
    try:
        cfg = {}
        if ns.config:
            try:
                with open(ns.config) as fh:
                    cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read config {ns.config}: {exc}") from None
            if not isinstance(cfg, dict):
                raise ValidationError("config must be a JSON object")
        flags = _flags_to_config(ns)
        unknown = sorted(set(flags) - set(_COMMON + ALLOWED[sub]))
        if unknown:
            raise ValidationError(f"options not accepted by {sub}: {', '.join(unknown)}")
        cfg.update(flags)
        merged = validate_config(sub, cfg)
    except ValidationError as exc:
        print(f"perfhom: validation error: {exc}", file=sys.stderr)
        return 2
    if merged.get("threads"):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(merged["threads"])
    tol = effective(merged.get("tolerances"))
    saved = dict(DEFAULTS)
    DEFAULTS.update(tol)
    try:
        return _execute(sub, merged, tol, Path(ns.out))
    finally:
        DEFAULTS.clear()
        DEFAULTS.update(saved)


def _execute(sub, merged, tol, out) -> int:
    h = config_hash(sub, merged)
    ctx = {"failed": False, "stdout": [], "timings": [], "extra": {}}
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    code = 0
    tables = []
    error = None
    try:
        tables = HANDLERS[sub](merged, ctx)
    except ValidationError as exc:
        print(f"perfhom: validation error: {exc}", file=sys.stderr)
        return 2
    except (ArgumentError, GeometryError) as exc:
        print(f"perfhom: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except PerfhomError as exc:
        error = f"{type(exc).__name__}: {exc}"
        print(f"perfhom: {error}", file=sys.stderr)
        code = 3
    if ctx["failed"] and code == 0:
        code = 3
    files = []
    for t in tables:
        path = out / f"{t.name}.csv"
        atomic_write(path, t.text(h))
        files.append(path.name)
        if merged.get("plot") and t.name in ("sweep", "numrange", "decay", "spectrum"):
            files.append(emit_plotscript(path).name)
    from .mesh import write_mesh

    for name, mesh in ctx["extra"].items():
        out.mkdir(parents=True, exist_ok=True)
        write_mesh(mesh, out / name)
        files.append(name)
    from . import __version__

    manifest = {
        "config_hash": h,
        "subcommand": sub,
        "version": __version__,
        "config": merged,
        "defaults": tol,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "seconds": time.perf_counter() - t0,
        "timings": ctx["timings"],
        "files": files,
        "rows": {t.name: t.statuses for t in tables},
        "exit_code": code,
        "error": error,
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    for line in ctx["stdout"]:
        print(line)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
