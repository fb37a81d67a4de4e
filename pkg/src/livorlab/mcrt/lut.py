"""Reflectance lookup table: build, interpolate, persist.

The table maps optical-parameter coordinates (by default absorption
mu_a and reduced scattering mu_s' = mu_s (1 - g)) to diffuse
reflectance, each node backed by a full photon-transport run. Every node
reuses the same stream seed, so neighboring nodes share random numbers
and the stored surface is smooth in the parameters.

File format FLUT1 (see docs/flut1.md): magic "FLUT1\\n", a 4-byte
little-endian header length, a canonical JSON header (axes, shape,
dtype, provenance), then the value and stderr arrays as row-major
float64 little-endian bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from ..errors import GridTooLarge, LutFormatError, OutOfGrid
from .engine import default_worker_count, simulate
from .model import INFINITE, Layer, LayerStack, SimConfig

MAGIC = b"FLUT1\n"
MAX_GRID_NODES = 4096

DEFAULT_MU_A_RANGE = (0.005, 5.0)
DEFAULT_MU_A_NODES = 16
DEFAULT_MU_S_PRIME_RANGE = (0.3, 10.0)
DEFAULT_MU_S_PRIME_NODES = 12
DEFAULT_PHOTONS_PER_NODE = 100_000


def default_axes() -> dict[str, np.ndarray]:
    return {
        "mu_a": np.geomspace(*DEFAULT_MU_A_RANGE, DEFAULT_MU_A_NODES),
        "mu_s_prime": np.geomspace(*DEFAULT_MU_S_PRIME_RANGE,
                                   DEFAULT_MU_S_PRIME_NODES),
    }


def single_layer_template(g: float = 0.8, n: float = 1.4,
                          ambient_n: float = 1.0) -> LayerStack:
    """Semi-infinite homogeneous skin model, the default geometry.

    g = 0.8 is a typical dermis anisotropy in the visible; the table is
    indexed by mu_s', so this only sets how mu_s is recovered per node.
    """
    return LayerStack((Layer(1.0, 10.0, g, n, INFINITE),), ambient_n)


def default_build_config(seed: int = 0) -> SimConfig:
    return SimConfig(photon_count=DEFAULT_PHOTONS_PER_NODE, seed=seed)


def build_default_lut(workers: int | None = None, progress=None) -> ForwardLUT:
    """The production table: default template, axes and photon budget."""
    return build_lut(single_layer_template(), default_axes(),
                     default_build_config(), workers=workers,
                     progress=progress)


def epidermis_dermis_template(epidermis_mm: float = 0.1,
                              g: float = 0.9) -> LayerStack:
    """Two-layer variant; the lower (variable) layer is the dermis."""
    return LayerStack(
        (Layer(0.2, 30.0, g, 1.4, epidermis_mm),
         Layer(1.0, 10.0, g, 1.4, INFINITE)),
        ambient_n=1.0,
    )


@dataclass(frozen=True)
class ForwardLUT:
    axis_names: tuple[str, ...]
    axis_values: tuple[np.ndarray, ...]
    values: np.ndarray
    stderr: np.ndarray
    provenance: dict

    def __post_init__(self):
        if len(self.axis_names) != len(self.axis_values) or not self.axis_names:
            raise LutFormatError("axis names and grids must match, nonempty")
        shape = tuple(len(ax) for ax in self.axis_values)
        if self.values.shape != shape or self.stderr.shape != shape:
            raise LutFormatError(
                f"value shape {self.values.shape} does not match axes {shape}")
        for name, ax in zip(self.axis_names, self.axis_values):
            if ax.ndim != 1 or len(ax) < 1 or np.any(np.diff(ax) <= 0.0):
                raise LutFormatError(
                    f"axis {name!r} must be 1-D strictly increasing")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise LutFormatError("reflectance values must lie in [0, 1]")

    def axis(self, name: str) -> np.ndarray:
        return self.axis_values[self.axis_names.index(name)]


def _layer_with(layer: Layer, mu_a: float, mu_s: float) -> Layer:
    return Layer(mu_a, mu_s, layer.g, layer.n, layer.thickness_mm)


def build_lut(template: LayerStack, axes: dict[str, np.ndarray],
              cfg: SimConfig, variable_layer: int = 0,
              workers: int | None = None,
              progress=None) -> ForwardLUT:
    """Simulate every grid node of (mu_a, mu_s') for the variable layer.

    mu_s is recovered from the node's mu_s' through the template layer's
    fixed anisotropy. All nodes run with the same seed.
    """
    names = tuple(axes)
    grids = tuple(np.asarray(axes[n], dtype=np.float64) for n in names)
    if set(names) != {"mu_a", "mu_s_prime"}:
        raise LutFormatError(
            f"axes must be mu_a and mu_s_prime, got {names!r}")
    for name, ax in zip(names, grids):
        if ax.ndim != 1 or len(ax) < 1 or np.any(np.diff(ax) <= 0.0):
            raise LutFormatError(
                f"axis {name!r} must be 1-D strictly increasing")
    shape = tuple(len(ax) for ax in grids)
    n_nodes = int(np.prod(shape))
    if n_nodes > MAX_GRID_NODES:
        raise GridTooLarge(f"{n_nodes} nodes exceeds cap {MAX_GRID_NODES}")
    if not 0 <= variable_layer < len(template.layers):
        raise LutFormatError(f"no layer {variable_layer} in template")

    base = template.layers[variable_layer]
    one_minus_g = 1.0 - base.g

    def node_value(idx: tuple[int, ...]):
        coords = {n: float(ax[i]) for n, ax, i in zip(names, grids, idx)}
        mu_s = coords["mu_s_prime"] / one_minus_g
        layers = list(template.layers)
        layers[variable_layer] = _layer_with(base, coords["mu_a"], mu_s)
        res = simulate(LayerStack(tuple(layers), template.ambient_n), cfg,
                       workers=1)
        if progress is not None:
            progress(idx, res)
        return res.r_diffuse, res.r_diffuse_stderr

    indices = list(product(*(range(c) for c in shape)))
    if workers is None:
        workers = default_worker_count()
    if workers <= 1 or n_nodes == 1:
        samples = [node_value(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(node_value, indices))

    values = np.empty(shape)
    stderr = np.empty(shape)
    for idx, (v, e) in zip(indices, samples):
        values[idx] = v
        stderr[idx] = e
    provenance = {
        "config": dataclasses.asdict(cfg),
        "template": {
            "ambient_n": template.ambient_n,
            "layers": [dataclasses.asdict(ly) for ly in template.layers],
        },
        "variable_layer": variable_layer,
        "format": "FLUT1",
    }
    return ForwardLUT(names, grids, values, stderr, provenance)


def _multilinear(lut: ForwardLUT, grid: np.ndarray, coords) -> float:
    coords = tuple(float(c) for c in coords)
    if len(coords) != len(lut.axis_names):
        raise OutOfGrid(
            f"need {len(lut.axis_names)} coordinates, got {len(coords)}",
            coords)
    cells = []
    for name, ax, c in zip(lut.axis_names, lut.axis_values, coords):
        if c < ax[0] or c > ax[-1]:
            raise OutOfGrid(
                f"{name}={c:g} outside [{ax[0]:g}, {ax[-1]:g}]", coords)
        if len(ax) == 1:
            cells.append((0, 0.0))
            continue
        i = min(max(int(np.searchsorted(ax, c, side="right")) - 1, 0),
                len(ax) - 2)
        t = (c - ax[i]) / (ax[i + 1] - ax[i])
        cells.append((i, t))
    total = 0.0
    for corner in product((0, 1), repeat=len(cells)):
        weight = 1.0
        idx = []
        for (i, t), bit in zip(cells, corner):
            weight *= t if bit else 1.0 - t
            idx.append(min(i + bit, grid.shape[len(idx)] - 1))
        if weight != 0.0:
            total += weight * float(grid[tuple(idx)])
    return total


def lut_reflectance(lut: ForwardLUT, coords) -> float:
    """Multilinear interpolation at coords (one value per axis)."""
    return _multilinear(lut, lut.values, coords)


def lut_stderr(lut: ForwardLUT, coords) -> float:
    """Interpolated per-node standard error at coords."""
    return _multilinear(lut, lut.stderr, coords)


def save_lut(lut: ForwardLUT, path: str | Path) -> None:
    Path(path).write_bytes(lut_to_bytes(lut))


def lut_to_bytes(lut: ForwardLUT) -> bytes:
    header = {
        "axes": [
            {"name": n, "values": [float(v) for v in ax]}
            for n, ax in zip(lut.axis_names, lut.axis_values)
        ],
        "shape": list(lut.values.shape),
        "dtype": "<f8",
        "provenance": lut.provenance,
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    parts.append(np.ascontiguousarray(lut.values, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(lut.stderr, dtype="<f8").tobytes())
    return b"".join(parts)


def load_lut(path: str | Path) -> ForwardLUT:
    return lut_from_bytes(Path(path).read_bytes())


def lut_from_bytes(raw: bytes) -> ForwardLUT:
    if not raw.startswith(MAGIC):
        raise LutFormatError("not a FLUT1 file (bad magic)")
    off = len(MAGIC)
    if len(raw) < off + 4:
        raise LutFormatError("truncated FLUT1 header length")
    (blob_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + blob_len:
        raise LutFormatError("truncated FLUT1 header")
    try:
        header = json.loads(raw[off:off + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LutFormatError(f"unreadable FLUT1 header: {exc}") from exc
    off += blob_len
    try:
        names = tuple(a["name"] for a in header["axes"])
        grids = tuple(np.asarray(a["values"], dtype=np.float64)
                      for a in header["axes"])
        shape = tuple(header["shape"])
        provenance = header.get("provenance", {})
    except (KeyError, TypeError) as exc:
        raise LutFormatError(f"malformed FLUT1 header: {exc}") from exc
    dtype = header.get("dtype", "<f8")
    if dtype != "<f8":
        raise LutFormatError(f"unsupported dtype {dtype!r}")
    count = int(np.prod(shape)) if shape else 0
    need = count * 8 * 2
    if len(raw) - off != need:
        raise LutFormatError(
            f"payload is {len(raw) - off} bytes, expected {need}")
    values = np.frombuffer(raw, dtype="<f8", count=count,
                           offset=off).reshape(shape).copy()
    stderr = np.frombuffer(raw, dtype="<f8", count=count,
                           offset=off + count * 8).reshape(shape).copy()
    return ForwardLUT(names, grids, values, stderr, provenance)
