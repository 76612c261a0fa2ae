"""Command-line pipelines: simulate, invert, phi, fbp, deconv and estimate.

Usage::

    rcdemand COMMAND CONFIG.ini [--set section.key=value ...]

The config is an INI file whose sections and keys are listed in
``SCHEMA``; unknown entries are rejected. Each command prints a JSON
summary on stdout and exits with 0. Failures print a JSON error on stderr
and exit with 1 for numerical failures or 2 for configuration errors.
"""

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .deconv import DEFAULT_CUTOFF, cf_from_density, deconvolve, deconvolve_conditional
from .demand import DemandOracle
from .densities import Normal, NormalMixture, PointMass
from .errors import ConfigError, DimensionError, RcDemandError
from .gmm import GmmSpec, gmm_estimate
from .inversion import invert_bundles, invert_multinomial, invert_multiunit
from .model import ModelSpec
from .npiv import npiv_fit, npiv_problem, panel_arguments
from .panel import PanelConfig, generate_panel
from .radon import (DEFAULT_TRUNCATION, DensityGrid, PhiEvaluator, SphereGrid,
                    assemble_sinogram, differentiate_offset, fbp_invert)

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _blocks(text):
    """Semicolon separated rows of numbers."""
    return tuple(_floats(row) for row in text.split(";") if row.strip())


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse):
    return lambda text: None if text.strip().lower() in ("", "none") else parse(text)


SCHEMA = {
    "model": {"menu": (str, "multinomial"), "n_goods": (int, 1), "sigma_eps": (int, 1),
              "d_x": (int, 1), "eps_family": (_optional(str), None),
              "eps_cov": (_optional(_floats), None)},
    "density": {"kind": (str, "normal"), "mean": (_floats, None), "cov": (_floats, None),
                "weights": (_floats, None), "means": (_blocks, None), "covs": (_blocks, None)},
    "panel": {"n_markets": (int, 100), "seed": (int, 0), "x1_mean": (float, 0.0),
              "x1_sd": (float, 1.0), "x2_sd": (float, 1.0), "xi_sd": (float, 0.3),
              "n_instruments": (int, 1), "p_mean": (float, 1.0),
              "price_on_xi": (float, 0.5), "price_on_z": (float, 0.5),
              "price_noise": (float, 0.2), "share_draws": (int, 20_000), "qmc": (_bool, True)},
    "oracle": {"draws": (int, 20_000), "seed": (int, 0), "qmc": (_bool, True),
               "smooth": (_bool, True), "threads": (int, 1)},
    "invert": {"pair": (_optional(_ints), None), "tol": (float, 1e-10)},
    "phi": {"strategy": (str, "blp"), "j": (int, 0), "label": (_optional(_ints), None),
            "truncation": (float, DEFAULT_TRUNCATION), "bias_budget": (float, 1e-3)},
    "grid": {"n_directions": (int, 64), "u_min": (float, -5.0), "u_max": (float, 5.0),
             "n_offsets": (int, 128)},
    "output_grid": {"lower": (_floats, None), "upper": (_floats, None), "shape": (_ints, None)},
    "fbp": {"bandwidth": (_optional(float), None), "clip": (_bool, False)},
    "deconv": {"lower": (float, -5.0), "upper": (float, 5.0), "n": (int, 201),
               "cutoff": (float, DEFAULT_CUTOFF)},
    "estimate": {"method": (str, "gmm"), "lower": (_floats, (-3.0, 0.0, -2.0, 0.0)),
                 "upper": (_floats, (1.0, 1.5, 2.0, 1.5)), "weight": (str, "two-step"),
                 "n_sim": (int, 25), "draws": (str, "hermite"), "seed": (int, 0),
                 "n_starts": (int, 5), "maxfev": (int, 400), "j": (int, 0),
                 "columns": (str, "p share"), "alpha": (float, 1e-6),
                 "penalty": (str, "norm"), "n_knots": (int, 5), "monotone_axis": (int, 0),
                 "increasing": (_bool, True)},
    "paths": {"panel": (_optional(str), None), "sinogram": (_optional(str), None),
              "density": (_optional(str), None), "noise": (_optional(str), None),
              "output": (_optional(str), None), "table": (_optional(str), None)},
}

COMMANDS = ("simulate", "invert", "phi", "fbp", "deconv", "estimate")


class RunConfig:
    """Validated configuration: ``cfg[section][key]`` with defaults filled in.

    Relative paths resolve against the directory of the config file.
    """

    def __init__(self, values, base=Path(".")):
        self.values, self.base = values, Path(base)

    @classmethod
    def from_file(cls, path, overrides=()):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as err:
            raise ConfigError("config", str(err)) from err
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.partition(".")
            if not sep or not dot:
                raise ConfigError(item, "overrides take the form section.key=value")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, name.strip(), value)
        return cls.from_parser(parser, path.parent)

    @classmethod
    def from_parser(cls, parser, base=Path(".")):
        values = {section: {k: default for k, (_, default) in keys.items()}
                  for section, keys in SCHEMA.items()}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(section, "unknown config section")
            for key, text in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown config key")
                parse = SCHEMA[section][key][0]
                try:
                    values[section][key] = parse(text)
                except ValueError as err:
                    raise ConfigError(f"{section}.{key}", str(err)) from err
        return cls(values, base)

    def __getitem__(self, section):
        return self.values[section]

    def path(self, key, *, must_exist=False):
        value = self.values["paths"][key]
        if value is None:
            raise ConfigError(f"paths.{key}", "required by this command")
        path = Path(value)
        path = path if path.is_absolute() else self.base / path
        if must_exist and not path.is_file():
            raise ConfigError(f"paths.{key}", f"file not found: {path}")
        return path


# ------------------------------------------------------------ builders


def model_spec(cfg):
    m = cfg["model"]
    cov = m["eps_cov"]
    if cov is not None:
        cov = np.asarray(cov).reshape(m["n_goods"], m["n_goods"])
    try:
        return ModelSpec(m["menu"], m["n_goods"], m["sigma_eps"], m["d_x"], m["eps_family"],
                         cov)
    except DimensionError as err:
        raise ConfigError(f"model.{err.field}", str(err)) from err


def coefficient_density(cfg, dim):
    d = cfg["density"]
    kind = d["kind"]
    try:
        if kind == "normal":
            mean = d["mean"] if d["mean"] is not None else (0.0,) * dim
            cov = np.eye(dim) if d["cov"] is None else np.asarray(d["cov"]).reshape(dim, dim)
            density = Normal(mean, cov)
        elif kind == "point":
            density = PointMass(d["mean"] if d["mean"] is not None else (0.0,) * dim)
        elif kind == "mixture":
            if d["weights"] is None or d["means"] is None or d["covs"] is None:
                raise ConfigError("density.weights", "mixtures need weights, means and covs")
            covs = [np.asarray(c).reshape(dim, dim) for c in d["covs"]]
            density = NormalMixture(d["weights"], d["means"], covs)
        else:
            raise ConfigError("density.kind", "must be 'normal', 'mixture' or 'point'")
    except (ValueError, np.linalg.LinAlgError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("density", str(err)) from err
    if density.dim != dim:
        raise ConfigError("density.mean", f"expected dimension {dim}, got {density.dim}")
    return density


def panel_config(cfg):
    p = cfg["panel"]
    keys = ("x1_mean", "x1_sd", "x2_sd", "xi_sd", "n_instruments", "p_mean", "price_on_xi",
            "price_on_z", "price_noise", "share_draws", "qmc")
    return PanelConfig(**{k: p[k] for k in keys})


def panel_oracle(cfg, spec):
    """The oracle that :func:`generate_panel` uses for the same config."""
    pc = panel_config(cfg)
    density = coefficient_density(cfg, spec.n_coefficients)
    return DemandOracle(spec, density, pc.share_draws, seed=cfg["panel"]["seed"], qmc=pc.qmc)


def phi_oracle(cfg, spec):
    o = cfg["oracle"]
    density = coefficient_density(cfg, spec.n_coefficients)
    return DemandOracle(spec, density, o["draws"], seed=o["seed"], qmc=o["qmc"],
                        smooth=o["smooth"], threads=o["threads"])


def output_grid(cfg, dim):
    g = cfg["output_grid"]
    if g["lower"] is None or g["upper"] is None or g["shape"] is None:
        raise ConfigError("output_grid", "lower, upper and shape are required")
    if not len(g["lower"]) == len(g["upper"]) == len(g["shape"]) == dim:
        raise ConfigError("output_grid.shape", f"expected {dim} entries each")
    return DensityGrid.regular(g["lower"], g["upper"], g["shape"])


def _dump(result, path):
    text = json.dumps(result, indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return result


# ------------------------------------------------------------ commands


def cmd_simulate(cfg):
    spec = model_spec(cfg)
    oracle = panel_oracle(cfg, spec)
    data = generate_panel(spec, oracle.density, cfg["panel"]["n_markets"], panel_config(cfg),
                          cfg["panel"]["seed"], oracle=oracle)
    out = cfg.path("panel")
    io.write_panel(out, data)
    return {"command": "simulate", "markets": data.n_markets, "panel": str(out),
            "min_share": float(data.shares.min())}


def cmd_invert(cfg):
    """Recover delta market by market with the config's demand model."""
    data = io.read_panel(cfg.path("panel", must_exist=True))
    spec = data.spec
    if spec != model_spec(cfg):
        raise ConfigError("model", "the panel was generated under a different model")
    oracle = panel_oracle(cfg, spec)
    tol = cfg["invert"]["tol"]
    pair = cfg["invert"]["pair"]
    if spec.menu == "multinomial":
        res = invert_multinomial(spec, oracle, data.x2, data.p, data.shares, tol=tol)
    else:
        if pair is None:
            pair = (0, 0, 0, 1)
        if len(pair) != 4:
            raise ConfigError("invert.pair", "give two labels as four integers")
        which = (tuple(pair[:2]), tuple(pair[2:]))
        cols = [spec.label_index(lab) for lab in which]
        solver = invert_bundles if spec.menu == "bundles" else invert_multiunit
        try:
            res = solver(spec, oracle, data.x2, data.p, data.shares[:, cols], tol=tol,
                         which=which)
        except ValueError as err:
            if isinstance(err, RcDemandError):
                raise
            raise ConfigError("invert.pair", str(err)) from err
    delta = res.delta
    xi = delta - data.x1
    out = cfg.path("output")
    T, J = delta.shape
    rows = [[t, j, delta[t, j], xi[t, j]] for t in range(T) for j in range(J)]
    io.write_table(out, ["t", "j", "delta", "xi"], rows)
    return {"command": "invert", "markets": T, "output": str(out),
            "max_delta_error": float(np.max(np.abs(delta - data.delta))),
            "max_share_residual": float(np.max(res.residual_norm))}


def cmd_phi(cfg):
    spec = model_spec(cfg)
    ph = cfg["phi"]
    oracle = phi_oracle(cfg, spec)
    label = ph["label"]
    try:
        evaluator = PhiEvaluator(spec, oracle, ph["strategy"], ph["j"],
                                 label=None if label is None else tuple(label),
                                 truncation=ph["truncation"], bias_budget=ph["bias_budget"])
    except ValueError as err:
        raise ConfigError("phi.strategy", str(err)) from err
    g = cfg["grid"]
    grid = SphereGrid.hemisphere(evaluator.q, g["n_directions"], g["u_min"], g["u_max"],
                                 g["n_offsets"])
    sino = differentiate_offset(assemble_sinogram(evaluator, grid))
    out = cfg.path("sinogram")
    io.write_sinogram(out, sino)
    summary = {"command": "phi", "q": grid.q, "shape": list(grid.shape), "sinogram": str(out)}
    if "max_truncation_gap" in sino.meta:
        summary["max_truncation_gap"] = float(sino.meta["max_truncation_gap"])
    return summary


def cmd_fbp(cfg):
    sino = io.read_sinogram(cfg.path("sinogram", must_exist=True))
    out = output_grid(cfg, sino.grid.q)
    rec = fbp_invert(sino, out, cfg["fbp"]["bandwidth"], clip=cfg["fbp"]["clip"])
    path = cfg.path("density")
    io.write_density_grid(path, rec)
    if cfg["paths"]["table"] is not None:
        pts = rec.points().reshape(-1, rec.dim)
        columns = [f"x_{k + 1}" for k in range(rec.dim)] + ["recovered"]
        io.write_table(cfg.path("table"), columns,
                       np.column_stack([pts, rec.values.ravel()]))
    return {"command": "fbp", "density": str(path), "mass": rec.mass,
            "negative_mass": rec.negative_mass, "bandwidth": rec.diagnostics["bandwidth"]}


def cmd_deconv(cfg):
    """Density of the bundle effect from the two limit densities.

    ``paths.density`` holds the density of (coefficients, taste + effect)
    and ``paths.noise`` that of (coefficients, taste); in one dimension the
    plain ratio of characteristic functions is used, otherwise the last
    axis is deconvolved conditionally on the others and averaged.
    """
    total = io.read_density_grid(cfg.path("density", must_exist=True))
    noise = io.read_density_grid(cfg.path("noise", must_exist=True))
    d = cfg["deconv"]
    x = np.linspace(d["lower"], d["upper"], d["n"])
    if total.dim != noise.dim:
        raise ConfigError("paths.noise", "the two densities differ in dimension")
    if total.dim == 1:
        rec = deconvolve(cf_from_density(total), cf_from_density(noise), d["cutoff"], x)
    else:
        rec = deconvolve_conditional(total, noise, d["cutoff"], x).marginal()
    out = cfg.path("output")
    io.write_density_grid(out, rec)
    return {"command": "deconv", "output": str(out), "mass": rec.mass,
            "negative_mass": float(rec.diagnostics.get("negative_mass", 0.0))}


def cmd_estimate(cfg):
    data = io.read_panel(cfg.path("panel", must_exist=True))
    e = cfg["estimate"]
    if e["method"] == "gmm":
        spec = GmmSpec(lower=e["lower"], upper=e["upper"], weight=e["weight"],
                       n_sim=e["n_sim"], draws=e["draws"], seed=e["seed"])
        res = gmm_estimate(spec, data, n_starts=e["n_starts"], maxfev=e["maxfev"])
        report = {"command": "estimate", "method": "gmm",
                  "gamma": dict(zip(("mean_alpha", "sd_alpha", "mean_delta", "sd_delta"),
                                    map(float, res.gamma))),
                  "q": res.q, "on_boundary": [bool(b) for b in res.on_boundary],
                  "starts": [{"gamma": [float(v) for v in r["gamma"]], "q": r["q"],
                              "evaluations": r["evaluations"]} for r in res.starts]}
    elif e["method"] == "npiv":
        W, Z, y = panel_arguments(data, e["j"], tuple(e["columns"].split()))
        problem = npiv_problem(W, Z, y, alpha=e["alpha"], penalty=e["penalty"],
                               n_knots=e["n_knots"], monotone_axis=e["monotone_axis"],
                               increasing=e["increasing"])
        fit = npiv_fit(problem)
        report = {"command": "estimate", "method": "npiv", "alpha": fit.alpha,
                  "residual": fit.residual, "penalty": fit.penalty,
                  "basis": {"lower": list(fit.basis.lower), "upper": list(fit.basis.upper),
                            "n_knots": fit.basis.n_knots},
                  "coefficients": [float(c) for c in fit.coef]}
    else:
        raise ConfigError("estimate.method", "must be 'gmm' or 'npiv'")
    out = cfg["paths"]["output"]
    return _dump(report, None if out is None else cfg.path("output"))


HANDLERS = {"simulate": cmd_simulate, "invert": cmd_invert, "phi": cmd_phi, "fbp": cmd_fbp,
            "deconv": cmd_deconv, "estimate": cmd_estimate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("arguments", message)


def build_parser():
    parser = _Parser(prog="rcdemand", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="INI file")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config entry")
    return parser


def _error(kind, err, code, key=None):
    payload = {"error": kind, "message": str(err)}
    if key is not None:
        payload["key"] = key
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def run(argv=None):
    """Run one command and return the exit code."""
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig.from_file(args.config, args.set)
        summary = HANDLERS[args.command](cfg)
    except ConfigError as err:
        return _error("ConfigError", err, EXIT_CONFIG, err.key)
    except DimensionError as err:
        return _error("DimensionError", err, EXIT_CONFIG, err.field)
    except RcDemandError as err:
        return _error(type(err).__name__, err, EXIT_NUMERICAL)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        return _error(type(err).__name__, err, EXIT_NUMERICAL)
    except OSError as err:
        return _error("OSError", err, EXIT_CONFIG)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
