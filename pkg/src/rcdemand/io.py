"""CSV formats for market panels, sinograms and density grids.

Every float is written with 17 significant digits, so a write followed by
a read reproduces the arrays bit for bit. Metadata lives in leading
``# key: value`` comment lines.
"""

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .model import ModelSpec
from .panel import MarketPanel
from .radon import DensityGrid, Sinogram, SphereGrid


def fmt(value):
    return format(float(value), ".17g")


def _fmt_list(values):
    return " ".join(fmt(v) for v in np.ravel(values))


def _write(path, header, columns, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        if columns:
            writer.writerow(columns)
        writer.writerows(rows)


def _read(path):
    """Header dict, column names and the remaining text lines."""
    header, body = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
    return header, body


def _need(header, key, path):
    if key not in header:
        raise ConfigError(key, f"missing from the header of {path}")
    return header[key]


def _table(body, path):
    reader = csv.reader(body)
    try:
        columns = next(reader)
    except StopIteration:
        raise DimensionError("rows", f"{path} has no column header") from None
    rows = [row for row in reader]
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(columns)))
    return columns, data


# --------------------------------------------------------------- panel


def _spec_header(spec):
    return {"menu": spec.menu, "n_goods": spec.n_goods, "sigma_eps": spec.sigma_eps,
            "d_x": spec.d_x, "eps_family": spec.eps_family,
            "eps_cov": _fmt_list(spec.eps_cov)}


def _spec_from_header(header, path):
    n = int(_need(header, "n_goods", path))
    cov = header.get("eps_cov")
    cov = None if cov is None else np.array(cov.split(), dtype=float).reshape(n, n)
    return ModelSpec(_need(header, "menu", path), n, int(_need(header, "sigma_eps", path)),
                     int(_need(header, "d_x", path)), header.get("eps_family"), cov)


def panel_columns(spec, n_instruments):
    return (["t", "j", "x1"] + [f"x2_{k + 1}" for k in range(spec.d_x - 1)]
            + ["p", "xi", "delta"] + [f"z_{k + 1}" for k in range(n_instruments)]
            + list(spec.label_names))


def write_panel(path, panel: MarketPanel):
    """One row per (market, good); shares repeat across a market's rows."""
    T, J = panel.x1.shape
    dz = panel.z.shape[-1]
    rows = []
    delta = panel.delta
    for t in range(T):
        shares = [fmt(v) for v in panel.shares[t]]
        for j in range(J):
            rows.append([str(t), str(j), fmt(panel.x1[t, j])]
                        + [fmt(v) for v in panel.x2[t, j]]
                        + [fmt(panel.p[t, j]), fmt(panel.xi[t, j]), fmt(delta[t, j])]
                        + [fmt(v) for v in panel.z[t, j]] + shares)
    _write(path, _spec_header(panel.spec), panel_columns(panel.spec, dz), rows)


def read_panel(path):
    header, body = _read(path)
    spec = _spec_from_header(header, path)
    columns, data = _table(body, path)
    dz = sum(c.startswith("z_") for c in columns)
    expected = panel_columns(spec, dz)
    if columns != expected:
        raise DimensionError("columns", f"{path}: expected {expected}, got {columns}")
    J = spec.n_goods
    if data.shape[0] % J:
        raise DimensionError("rows", f"{path}: row count is not a multiple of {J} goods")
    T = data.shape[0] // J
    cube = data.reshape(T, J, -1)
    col = {name: k for k, name in enumerate(columns)}
    k = spec.d_x - 1
    x2 = cube[:, :, col["x1"] + 1: col["x1"] + 1 + k]
    z = cube[:, :, col["delta"] + 1: col["delta"] + 1 + dz]
    shares = cube[:, 0, len(columns) - spec.n_alternatives:]
    return MarketPanel(spec, cube[:, :, col["x1"]], x2, cube[:, :, col["p"]],
                       cube[:, :, col["xi"]], z, shares)


# ------------------------------------------------------------ sinogram


def write_sinogram(path, sino: Sinogram):
    """Columns w_1..w_q, u, phi, dphi; direction weights in the header."""
    grid = sino.grid
    q = grid.q
    header = {"q": q, "n_directions": grid.shape[0], "n_offsets": grid.shape[1],
              "weights": _fmt_list(grid.weights)}
    for key, value in sino.meta.items():
        if isinstance(value, (int, float, str, np.floating, np.integer)):
            header[f"meta.{key}"] = value
    dphi = sino.dphi if sino.dphi is not None else np.full(grid.shape, np.nan)
    rows = []
    for i, w in enumerate(grid.directions):
        ws = [fmt(v) for v in w]
        for k, u in enumerate(grid.offsets):
            rows.append(ws + [fmt(u), fmt(sino.phi[i, k]), fmt(dphi[i, k])])
    columns = [f"w_{k + 1}" for k in range(q)] + ["u", "phi", "dphi"]
    _write(path, header, columns, rows)


def read_sinogram(path):
    header, body = _read(path)
    q = int(_need(header, "q", path))
    n_dir = int(_need(header, "n_directions", path))
    n_off = int(_need(header, "n_offsets", path))
    columns, data = _table(body, path)
    if len(columns) != q + 3 or data.shape[0] != n_dir * n_off:
        raise DimensionError("rows", f"{path}: expected {n_dir * n_off} rows of {q + 3} columns")
    cube = data.reshape(n_dir, n_off, q + 3)
    weights = np.array(_need(header, "weights", path).split(), dtype=float)
    grid = SphereGrid(cube[:, 0, :q], cube[0, :, q], weights)
    dphi = cube[:, :, q + 2]
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    return Sinogram(grid, cube[:, :, q + 1], None if np.all(np.isnan(dphi)) else dphi, meta)


# -------------------------------------------------------- density grid


def write_density_grid(path, grid: DensityGrid):
    """Header with bounds and node counts per axis, then values in row-major order.

    Axes that are not exactly ``linspace(lower, upper, n)`` also get their
    nodes listed, so irregular lattices survive the round trip.
    """
    header = {"dim": grid.dim}
    for k, axis in enumerate(grid.axes):
        header[f"axis_{k + 1}"] = f"{fmt(axis[0])} {fmt(axis[-1])} {axis.size}"
        if not np.array_equal(axis, np.linspace(axis[0], axis[-1], axis.size)):
            header[f"nodes_{k + 1}"] = _fmt_list(axis)
    for key, value in grid.diagnostics.items():
        if isinstance(value, (int, float, np.floating, np.integer)):
            header[f"diagnostic.{key}"] = fmt(value)
    _write(path, header, ["value"], [[fmt(v)] for v in grid.values.ravel()])


def read_density_grid(path):
    header, body = _read(path)
    dim = int(_need(header, "dim", path))
    axes = []
    for k in range(1, dim + 1):
        lo, hi, n = _need(header, f"axis_{k}", path).split()
        nodes = header.get(f"nodes_{k}")
        axes.append(np.linspace(float(lo), float(hi), int(n)) if nodes is None
                    else np.array(nodes.split(), dtype=float))
    _, data = _table(body, path)
    shape = tuple(a.size for a in axes)
    if data.size != int(np.prod(shape)):
        raise DimensionError("values", f"{path}: expected {int(np.prod(shape))} values")
    diag = {k[11:]: float(v) for k, v in header.items() if k.startswith("diagnostic.")}
    return DensityGrid(tuple(axes), data.reshape(shape), diag)


def write_table(path, columns, rows):
    """Tidy CSV for plotting: one header row, then 17-digit values."""
    _write(path, {}, list(columns), [[fmt(v) for v in row] for row in rows])


__all__ = [
    "fmt", "panel_columns", "read_density_grid", "read_panel", "read_sinogram",
    "write_density_grid", "write_panel", "write_sinogram", "write_table",
]
