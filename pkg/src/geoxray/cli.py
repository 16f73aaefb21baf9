"""Command-line interface, configuration and the GXR1 file format.

GXR1 layout: the 4 magic bytes ``GXR1``, a one-line UTF-8 JSON header
terminated by a newline, then little-endian float64 arrays in row-major
order, component by component.  Field headers carry the tensor order, grid
size and extent and the metric tag; sinogram headers carry the chart and
grid parameters, the metric tag, the order m and the weight tag.

Exit codes: 0 success, 2 invalid input (config, file or arguments), 3 for
``decompose`` when the field is a pure potential.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import harness as hn
from . import manifold as mf
from . import rays as ry
from . import sobolev as sb
from . import tensor as tn
from . import xray as xr

MAGIC = b"GXR1"
EXIT_OK, EXIT_INPUT, EXIT_POTENTIAL = 0, 2, 3

DEFAULT_CONFIG = {
    "metric": {"kind": "euclidean", "delta": mf.DEFAULT_DELTA},
    "field_grid": {"n": tn.DEFAULT_N, "extent": tn.DEFAULT_EXTENT},
    "ray_grid": {"chart": "FAN", "n_beta": 256, "n_alpha": 256,
                 "n_p": 256, "n_phi": 256},
    "n_dir": xr.DEFAULT_NDIR,
    "h": mf.DEFAULT_STEP,
    "solver": {"tol": 1e-8},
    "specs": list(sb.PRESETS),
    "experiment": {"trials": 100, "seed": None, "K": 8, "m": 0,
                   "nus": [8, 16, 32, 64], "with_normal": True,
                   "cone": {"kind": "disc", "R0": 0.5, "center": [0.25, 0.0],
                            "width": 0.02, "dilations": [1.0, 1.2, 1.5],
                            "floor": 8.0}},
    "out": "out",
}
_RESOLUTIONS = [("field_grid", "n"), ("ray_grid", "n_beta"),
                ("ray_grid", "n_alpha"), ("ray_grid", "n_p"),
                ("ray_grid", "n_phi"), ("n_dir",)]


class InputError(Exception):
    """Invalid configuration, file or argument; key names the culprit."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key

    def as_dict(self):
        return {"error": type(self).__name__, "key": self.key,
                "message": str(self)}


class ConfigError(InputError):
    pass


class FormatError(InputError):
    pass


# --------------------------------------------------------------------------
# configuration


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}", key)
        if isinstance(base[k], dict) and k != "metric":
            if not isinstance(v, dict):
                raise ConfigError(f"{key} must be a mapping", key)
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _get(cfg, path):
    node = cfg
    for p in path:
        node = node[p]
    return node


def validate_config(cfg):
    for path in _RESOLUTIONS:
        key = ".".join(path)
        v = _get(cfg, path)
        if not isinstance(v, int) or isinstance(v, bool) or v < 32 or \
                v > 1024 or v & (v - 1):
            raise ConfigError(f"{key} must be a power of two in [32, 1024], "
                              f"got {v!r}", key)
    for key, v in (("h", cfg["h"]), ("solver.tol", cfg["solver"]["tol"]),
                   ("field_grid.extent", cfg["field_grid"]["extent"])):
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"{key} must be positive, got {v!r}", key)
    if cfg["ray_grid"]["chart"] not in ("FAN", "PARALLEL"):
        raise ConfigError("ray_grid.chart must be FAN or PARALLEL",
                          "ray_grid.chart")
    if not isinstance(cfg["metric"], dict) or "kind" not in cfg["metric"]:
        raise ConfigError("metric needs a kind", "metric.kind")
    try:
        mf.metric_from_config(cfg["metric"])
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"invalid metric: {e}", "metric") from e
    seed = cfg["experiment"]["seed"]
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise ConfigError("experiment.seed must be a non-negative integer",
                          "experiment.seed")
    return cfg


def load_config(path=None, seed=None, out=None):
    over = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                over = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}", "config") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}",
                              "config") from e
        if not isinstance(over, dict):
            raise ConfigError("config must be a JSON object", "config")
    cfg = _merge(DEFAULT_CONFIG, over)
    if seed is not None:
        cfg["experiment"]["seed"] = int(seed)
    if out is not None:
        cfg["out"] = out
    return validate_config(cfg)


def require_seed(cfg):
    seed = cfg["experiment"]["seed"]
    if seed is None:
        raise ConfigError("this command is stochastic: pass --seed or set "
                          "experiment.seed", "experiment.seed")
    return seed


def build_metric(cfg):
    return mf.metric_from_config(cfg["metric"])


def build_field_grid(cfg):
    return tn.FieldGrid(cfg["field_grid"]["n"],
                        float(cfg["field_grid"]["extent"]))


def build_ray_grid(cfg, metric, chart=None):
    rg = cfg["ray_grid"]
    chart = chart or rg["chart"]
    if chart == "FAN":
        return ry.fan_grid(metric, rg["n_beta"], rg["n_alpha"])
    return ry.parallel_grid(metric, rg["n_p"], rg["n_phi"])


# --------------------------------------------------------------------------
# GXR1 files


def _write_gxr(path, header, arrays):
    head = json.dumps(header, sort_keys=True, separators=(",", ":"))
    if "\n" in head:
        raise FormatError("header must fit on one line", "header")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in arrays)
    hn.atomic_write(path, MAGIC + head.encode("utf-8") + b"\n" + body)


def _read_gxr(path, kind):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}", "path") from e
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: missing GXR1 magic", "magic")
    nl = raw.find(b"\n", len(MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: unterminated header", "header")
    try:
        header = json.loads(raw[len(MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not JSON: {e}",
                          "header") from e
    if header.get("type") != kind:
        raise FormatError(f"{path}: expected a {kind} file, found "
                          f"{header.get('type')!r}", "type")
    if header.get("endianness") != "little" or \
            header.get("dtype") != "float64":
        raise FormatError(f"{path}: unsupported encoding", "dtype")
    shape = header.get("shape")
    if not isinstance(shape, list) or not all(
            isinstance(s, int) and s > 0 for s in shape):
        raise FormatError(f"{path}: bad shape {shape!r}", "shape")
    body = raw[nl + 1:]
    if len(body) != 8 * int(np.prod(shape)):
        raise FormatError(f"{path}: payload has {len(body)} bytes, header "
                          f"shape {shape} needs {8 * int(np.prod(shape))}",
                          "shape")
    data = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
    return header, data


def field_header(f: tn.SymTensorField):
    return {"type": "field", "m": f.order, "n": f.grid.n,
            "extent": f.grid.extent, "metric": f.metric_tag,
            "support": f.support, "shape": list(f.data.shape),
            "components": list(tn.COMPONENT_NAMES[f.order]),
            "mask": "M is |x| < 1, M1 is |x| < R1; zero outside support",
            "endianness": "little", "dtype": "float64"}


def write_field(path, f: tn.SymTensorField):
    _write_gxr(path, field_header(f), [f.data])


def read_field(path):
    header, data = _read_gxr(path, "field")
    for k in ("m", "n", "extent", "metric", "support"):
        if k not in header:
            raise FormatError(f"{path}: field header lacks {k!r}", k)
    m, n = header["m"], header["n"]
    if m not in tn.N_COMPONENTS or data.shape != (tn.N_COMPONENTS[m], n, n):
        raise FormatError(f"{path}: shape {list(data.shape)} does not match "
                          f"m={m}, n={n}", "shape")
    grid = tn.FieldGrid(n, float(header["extent"]))
    return tn.SymTensorField(m, data, grid, header["metric"],
                             header["support"])


def sinogram_header(s: xr.Sinogram):
    chart = s.grid.chart.kind
    if chart == "FAN" and s.grid.chart.base_radius is None:
        params = {"n_beta": s.grid.shape[0], "n_alpha": s.grid.shape[1]}
    elif chart == "PARALLEL":
        params = {"n_p": s.grid.shape[0], "n_phi": s.grid.shape[1],
                  # rounded so the recovered grid matches bit for bit
                  "p_max": float("%.15g" % (s.grid.axes[0][-1]
                                            + 0.5 * s.grid.spacing[0]))}
    else:
        raise FormatError(f"cannot store sinograms on chart {chart}",
                          "chart")
    return {"type": "sinogram", "chart": chart, "grid": params, "m": s.m,
            "metric": s.metric_tag, "weight": s.weight_tag,
            "supported": bool(s.supported), "shape": list(s.values.shape),
            "endianness": "little", "dtype": "float64"}


def write_sinogram(path, s: xr.Sinogram):
    _write_gxr(path, sinogram_header(s), [s.values])


def read_sinogram(path, metric):
    header, data = _read_gxr(path, "sinogram")
    check_tag(header.get("metric"), metric, path)
    g = header.get("grid", {})
    try:
        if header.get("chart") == "FAN":
            grid = ry.fan_grid(metric, g["n_beta"], g["n_alpha"])
        elif header.get("chart") == "PARALLEL":
            grid = ry.parallel_grid(metric, g["n_p"], g["n_phi"], g["p_max"])
        else:
            raise FormatError(f"{path}: unknown chart "
                              f"{header.get('chart')!r}", "chart")
    except KeyError as e:
        raise FormatError(f"{path}: grid header lacks {e}", "grid") from e
    if data.shape != grid.shape:
        raise FormatError(f"{path}: values {list(data.shape)} do not match "
                          f"grid {list(grid.shape)}", "shape")
    return xr.Sinogram(grid, data, int(header["m"]), header["metric"],
                       header.get("weight", "1"),
                       bool(header.get("supported", True)))


def check_tag(tag, metric, path):
    if tag != metric.tag:
        raise InputError(f"{path} was made for metric {tag!r}, config "
                         f"metric is {metric.tag!r}", "metric")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# commands


def _out_path(cfg, args, default):
    if getattr(args, "output", None):
        return args.output
    return os.path.join(cfg["out"], default)


def _stem(path):
    base = os.path.basename(path)
    return base.split(".")[0] or "out"


def _emit(obj):
    print(json.dumps(hn._jsonable(obj), indent=2, sort_keys=True))


def _write_json(path, obj):
    hn.atomic_write(path, json.dumps(hn._jsonable(obj), indent=2,
                                     sort_keys=True) + "\n")


def cmd_gen(cfg, args):
    try:
        spec = json.loads(args.spec)
    except json.JSONDecodeError as e:
        raise InputError(f"field spec is not JSON: {e}", "spec") from e
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InputError("field spec must be an object with 'kind'", "kind")
    if spec["kind"] in ("random", "potential") and "seed" not in spec:
        spec["seed"] = require_seed(cfg)
    metric = build_metric(cfg)
    try:
        f = tn.gen_field(spec, metric, build_field_grid(cfg))
    except (ValueError, KeyError) as e:
        raise InputError(str(e), "spec") from e
    path = _out_path(cfg, args, "field.gxr")
    write_field(path, f)
    _emit({"output": path, "m": f.order, "norm_l2": tn.norm_l2(metric, f)})
    return EXIT_OK


def _load_field(cfg, path, metric):
    f = read_field(path)
    check_tag(f.metric_tag, metric, path)
    if f.grid.n != cfg["field_grid"]["n"]:
        raise InputError(f"{path} has grid {f.grid.n}, config says "
                         f"{cfg['field_grid']['n']}", "field_grid.n")
    return f


def cmd_forward(cfg, args):
    metric = build_metric(cfg)
    f = _load_field(cfg, args.field, metric)
    grid = build_ray_grid(cfg, metric, args.chart)
    s = xr.forward(metric, None, f, grid, cfg["h"])
    path = _out_path(cfg, args, _stem(args.field) + ".sino.gxr")
    write_sinogram(path, s)
    _emit({"output": path, "norm_l2_mu": xr.sino_norm(s)})
    return EXIT_OK


def cmd_adjoint(cfg, args):
    metric = build_metric(cfg)
    s = read_sinogram(args.sinogram, metric)
    if s.grid.chart.kind != "FAN":
        raise InputError("the adjoint needs a FAN sinogram", "chart")
    f = xr.adjoint(metric, None, s, build_field_grid(cfg), cfg["n_dir"],
                   cfg["h"])
    path = _out_path(cfg, args, _stem(args.sinogram) + ".adj.gxr")
    write_field(path, f)
    _emit({"output": path, "norm_l2_M1": tn.norm_l2(metric, f, "M1")})
    return EXIT_OK


def cmd_normal(cfg, args):
    metric = build_metric(cfg)
    f = _load_field(cfg, args.field, metric)
    grid = build_ray_grid(cfg, metric, "FAN")
    Nf = xr.normal(metric, None, f, grid, f.grid, cfg["n_dir"], cfg["h"])
    path = _out_path(cfg, args, _stem(args.field) + ".normal.gxr")
    write_field(path, Nf)
    _emit({"output": path, "norm_h1_M1": tn.norm_h1(metric, Nf, "M1")})
    return EXIT_OK


def cmd_decompose(cfg, args):
    metric = build_metric(cfg)
    f = _load_field(cfg, args.field, metric)
    stem = _stem(args.field)
    out = args.output or cfg["out"]
    os.makedirs(out, exist_ok=True)
    nf = tn.norm_l2(metric, f)
    if f.order == 0:
        fs, pot, its, res = f, None, 0, 0.0
    else:
        try:
            dec = tn.solenoidal_project(metric, f, cfg["solver"]["tol"])
        except tn.SolverError as e:
            raise InputError(str(e), "solver.tol") from e
        fs, pot, its, res = dec.solenoidal, dec.potential, dec.iterations, \
            dec.residual
    nfs = tn.norm_l2(metric, fs)
    paths = {"solenoidal": os.path.join(out, stem + ".fs.gxr")}
    write_field(paths["solenoidal"], fs)
    if pot is not None:
        paths["potential"] = os.path.join(out, stem + ".pot.gxr")
        write_field(paths["potential"], pot)
    tol = 1e-6 * nf
    status = "potential" if f.order > 0 and nfs <= tol else "ok"
    _emit({"outputs": paths, "norm_f": nf, "norm_fs": nfs,
           "cg_iterations": its, "residual": res, "status": status})
    return EXIT_POTENTIAL if status == "potential" else EXIT_OK


def _specs(cfg, metric, names, s=None):
    out = []
    for n in names:
        try:
            spec = sb.spec_from_config(n, metric)
        except ValueError as e:
            raise InputError(str(e), "specs") from e
        out.append(spec if s is None else spec.with_order(s))
    return out


def cmd_norms(cfg, args):
    metric = build_metric(cfg)
    s = read_sinogram(args.sinogram, metric)
    table = {"l2_chart": sb.l2_chart(s), "l2_mu": xr.sino_norm(s)}
    if s.grid.chart.kind == "PARALLEL":
        specs = [sb.parallel_spec(("p",)), sb.parallel_spec(("p", "phi"))]
        if args.s is not None:
            specs = [sp.with_order(args.s) for sp in specs]
    else:
        specs = _specs(cfg, metric, args.specs or cfg["specs"], args.s)
    try:
        for sp in specs:
            table[sp.name] = sb.norm_hbar(sp, s)
    except sb.ContractError as e:
        raise InputError(str(e), "supported") from e
    result = {"sinogram": args.sinogram,
              "input_sha256": file_sha256(args.sinogram),
              "s": args.s if args.s is not None else 0.5, "norms": table}
    if args.output:
        _write_json(args.output, result)
    _emit(result)
    return EXIT_OK


def _nd_named(metric, name, cfg, n):
    """Spec presets plus the reference charts PARALLEL_P and BOUNDARY."""
    name = name.upper()
    if name == "PARALLEL_P":
        grid = ry.parallel_grid(metric, n, n // 2, 0.999)
        return {"all": sb.nd_check(metric, ry.ParallelChart(), (0,),
                                   grid.coords())}
    if name == "BOUNDARY":
        beta = 2 * np.pi * np.arange(n // 4) / (n // 4)
        alpha = np.concatenate([np.linspace(-np.pi / 2, np.pi / 2, n + 1),
                                [np.pi / 2 - 5e-4, -np.pi / 2 + 5e-4]])
        B, A = np.meshgrid(beta, alpha, indexing="ij")
        coords = np.stack([B.ravel(), A.ravel()], -1)
        return {"all": sb.nd_check(metric, ry.FanChart(base_radius=1.0),
                                   (0, 1), coords)}
    spec = _specs(cfg, metric, [name])[0]
    reports, _ = sb.nd_check_spec(metric, spec, ry.fan_grid(metric, n, n + 1))
    return reports


def cmd_ndcheck(cfg, args):
    metric = build_metric(cfg)
    reports = _nd_named(metric, args.spec, cfg, args.rays)
    out = {"spec": args.spec, "metric": metric.tag, "config": cfg,
           "windows": {k: r.summary() for k, r in reports.items()}}
    out["minimum"] = min(r.minimum for r in reports.values())
    out["passed"] = all(r.passed for r in reports.values())
    path = _out_path(cfg, args, f"ndcheck_{args.spec}.json")
    _write_json(path, out)
    _emit(out)
    return EXIT_OK


def _experiment_out(cfg, args, stem, report, inputs=None):
    out = args.output or cfg["out"]
    csv_path, json_path = hn.write_report(report, out, stem, cfg, inputs)
    s = report.summary()
    _emit({"csv": csv_path, "json": json_path, "summary": s})
    return EXIT_OK


def cmd_stability(cfg, args):
    seed = require_seed(cfg)
    metric = build_metric(cfg)
    ex = cfg["experiment"]
    m = ex["m"] if args.m is None else args.m
    rep = hn.run_stability(metric, m, _specs(cfg, metric, cfg["specs"]),
                           ex["trials"], seed, ex["K"], build_field_grid(cfg),
                           build_ray_grid(cfg, metric, "FAN"), cfg["h"],
                           ex["with_normal"], cfg["n_dir"])
    return _experiment_out(cfg, args, f"stability_m{m}", rep)


def cmd_equivalence(cfg, args):
    seed = require_seed(cfg)
    metric = build_metric(cfg)
    ex = cfg["experiment"]
    a, b = _specs(cfg, metric, [args.spec_a, args.spec_b])
    rep = hn.run_range_equivalence(metric, a, b, ex["nus"], ex["trials"],
                                   seed, tuple(args.m or (0, 1, 2)), ex["K"],
                                   build_field_grid(cfg),
                                   build_ray_grid(cfg, metric, "FAN"),
                                   cfg["h"])
    return _experiment_out(cfg, args, f"equivalence_{a.name}_{b.name}", rep)


def cmd_cone(cfg, args):
    c = cfg["experiment"]["cone"]
    rg = cfg["ray_grid"]
    rep = hn.run_cone_check(c["R0"], c["kind"], tuple(c["center"]),
                            c["width"], rg["n_p"], rg["n_phi"],
                            tuple(c["dilations"]), c["floor"], cfg["h"])
    return _experiment_out(cfg, args, f"cone_{c['kind']}", rep)


def cmd_oracle(cfg, args):
    rg = cfg["ray_grid"]
    seed = cfg["experiment"]["seed"] or 0
    rep = hn.run_euclidean_oracle(build_field_grid(cfg), rg["n_p"],
                                  rg["n_phi"], seed, h=cfg["h"])
    return _experiment_out(cfg, args, "euclidean_oracle", rep)


def cmd_simplicity(cfg, args):
    metric = build_metric(cfg)
    rep = mf.check_simplicity(metric)
    out = {"metric": metric.tag, "passed": rep.passed,
           "conjugate_margin": rep.conjugate_margin,
           "convexity_margin": rep.convexity_margin,
           "leaf_convexity_margin": rep.leaf_convexity_margin,
           "rays": rep.n_rays, "notes": rep.notes}
    _emit(out)
    return EXIT_OK if rep.passed else EXIT_INPUT


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(
        prog="geoxray",
        description="Weighted geodesic X-ray transform on simple discs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("-o", "--output", help="output path")
        return sp

    sp = add("gen", cmd_gen, "generate a field file")
    sp.add_argument("spec", help='JSON field spec, e.g. \'{"kind": "random", '
                                 '"m": 1, "K": 8}\'')
    sp = add("forward", cmd_forward, "field -> sinogram")
    sp.add_argument("field")
    sp.add_argument("--chart", choices=("FAN", "PARALLEL"))
    sp = add("adjoint", cmd_adjoint, "FAN sinogram -> field on M1")
    sp.add_argument("sinogram")
    sp = add("normal", cmd_normal, "field -> I* I field")
    sp.add_argument("field")
    sp = add("decompose", cmd_decompose,
             "solenoidal part and potential (output is a directory)")
    sp.add_argument("field")
    sp = add("norms", cmd_norms, "norm table of a sinogram")
    sp.add_argument("sinogram")
    sp.add_argument("--specs", nargs="+")
    sp.add_argument("--s", type=float, help="Sobolev order (default 1/2)")
    sp = add("ndcheck", cmd_ndcheck, "(ND) report for a spec or BOUNDARY / "
                                     "PARALLEL_P")
    sp.add_argument("spec")
    sp.add_argument("--rays", type=int, default=64)
    sp = add("stability", cmd_stability, "stability ratios experiment")
    sp.add_argument("--m", type=int, choices=(0, 1, 2))
    sp = add("equivalence", cmd_equivalence, "range equivalence experiment")
    sp.add_argument("--spec-a", default="FULL")
    sp.add_argument("--spec-b", default="OFFSET")
    sp.add_argument("--m", type=int, nargs="+", choices=(0, 1, 2))
    add("cone", cmd_cone, "wavefront cone experiment")
    add("oracle", cmd_oracle, "Euclidean Plancherel oracle")
    add("simplicity", cmd_simplicity, "simplicity diagnostic of the metric")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        return args.func(cfg, args)
    except InputError as e:
        print(json.dumps(e.as_dict()), file=sys.stderr)
        return EXIT_INPUT
    except (mf.DomainError, mf.TrappingError) as e:
        print(json.dumps({"error": type(e).__name__, "key": None,
                          "message": str(e)}), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
