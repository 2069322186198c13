"""Grids, scalar fields, stencil calculus and the on-disk field format.

Everything downstream (potentials, resolvent iterates, metric functions,
time slices) is a ScalarField on a Grid.  Grids are uniform, 1-d or 2-d,
either periodic or Dirichlet with a linear far-field extension.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FieldFormatError, ParameterError

MAGIC = b"HJHG"
FORMAT_VERSION = 1
_BOUNDARY_TAGS = {"periodic": 0, "dirichlet": 1}
_TAG_BOUNDARIES = {v: k for k, v in _BOUNDARY_TAGS.items()}


@dataclass(frozen=True)
class Grid:
    """Uniform grid with n nodes per side and spacing h (box side n*h)."""

    dim: int
    n: int
    h: float
    boundary: str = "periodic"
    dirichlet_slope: tuple = ()

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ParameterError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise ParameterError(f"need n >= 8, got {self.n}")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ParameterError(f"bad spacing h={self.h}")
        if self.boundary not in _BOUNDARY_TAGS:
            raise ParameterError(f"unknown boundary '{self.boundary}'")
        if not self.dirichlet_slope:
            object.__setattr__(self, "dirichlet_slope", (0.0,) * self.dim)
        elif len(self.dirichlet_slope) != self.dim:
            raise ParameterError("dirichlet_slope length must match dim")

    @property
    def box_side(self) -> float:
        return self.n * self.h

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def node_coord(self, node) -> np.ndarray:
        node = _as_node(node, self.dim)
        return np.asarray(node, dtype=float) * self.h

    def index_delta(self, idx, center) -> np.ndarray:
        """Signed index offsets idx - center, wrapped on periodic grids."""
        d = np.asarray(idx, dtype=np.int64) - np.asarray(center, dtype=np.int64)
        if self.periodic:
            d = (d + self.n // 2) % self.n - self.n // 2
        return d

    def nearest_node(self, coord) -> tuple:
        idx = np.rint(np.atleast_1d(np.asarray(coord, dtype=float)) / self.h).astype(int)
        if self.periodic:
            idx %= self.n
        else:
            idx = np.clip(idx, 0, self.n - 1)
        return tuple(int(i) for i in idx)


def _as_node(node, dim):
    if np.isscalar(node):
        node = (int(node),)
    node = tuple(int(i) for i in node)
    if len(node) != dim:
        raise ParameterError(f"node {node} has wrong arity for dim={dim}")
    return node


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.shape != self.grid.shape:
            raise ParameterError(
                f"values shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.isfinite(v).all():
            raise ParameterError("field contains non-finite values")
        self.values = v

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        ax = grid.axis_coords()
        if grid.dim == 1:
            return cls(grid, fn(ax))
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        return cls(grid, fn(xx, yy))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def _shift(values: np.ndarray, axis: int, offset: int, grid: Grid) -> np.ndarray:
    """values shifted so result[i] = values[i + offset] with the boundary rule."""
    if grid.periodic:
        return np.roll(values, -offset, axis=axis)
    out = np.empty_like(values)
    n = grid.n
    slope = grid.dirichlet_slope[axis] * grid.h
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    if offset > 0:
        dst[axis] = slice(0, n - offset)
        src[axis] = slice(offset, n)
        out[tuple(dst)] = values[tuple(src)]
        edge = [slice(None)] * values.ndim
        edge[axis] = slice(n - 1, n)
        for k in range(offset):
            fill = [slice(None)] * values.ndim
            fill[axis] = slice(n - offset + k, n - offset + k + 1)
            out[tuple(fill)] = values[tuple(edge)] + (k + 1) * slope
    else:
        m = -offset
        dst[axis] = slice(m, n)
        src[axis] = slice(0, n - m)
        out[tuple(dst)] = values[tuple(src)]
        edge = [slice(None)] * values.ndim
        edge[axis] = slice(0, 1)
        for k in range(m):
            fill = [slice(None)] * values.ndim
            fill[axis] = slice(m - 1 - k, m - k)
            out[tuple(fill)] = values[tuple(edge)] - (k + 1) * slope
    return out


def backward_diff(f: ScalarField, axis: int) -> np.ndarray:
    return (f.values - _shift(f.values, axis, -1, f.grid)) / f.grid.h


def forward_diff(f: ScalarField, axis: int) -> np.ndarray:
    return (_shift(f.values, axis, +1, f.grid) - f.values) / f.grid.h


def one_sided_gradients(f: ScalarField, node) -> tuple:
    """Backward/forward difference pair (q_minus, q_plus), one entry per axis."""
    node = _as_node(node, f.grid.dim)
    qm = np.empty(f.grid.dim)
    qp = np.empty(f.grid.dim)
    for ax in range(f.grid.dim):
        qm[ax] = backward_diff(f, ax)[node]
        qp[ax] = forward_diff(f, ax)[node]
    return qm, qp


def laplacian_values(f: ScalarField) -> np.ndarray:
    out = np.zeros_like(f.values)
    for ax in range(f.grid.dim):
        out += (_shift(f.values, ax, +1, f.grid) - 2.0 * f.values
                + _shift(f.values, ax, -1, f.grid))
    return out / f.grid.h ** 2


def laplacian(f: ScalarField, node) -> float:
    node = _as_node(node, f.grid.dim)
    return float(laplacian_values(f)[node])


def ball_mask(grid: Grid, center, radius: float) -> np.ndarray:
    """Boolean mask of nodes with |node - center| <= radius (wrapped if periodic)."""
    center = _as_node(center, grid.dim)
    idx = np.arange(grid.n)
    dist2 = None
    for ax in range(grid.dim):
        d = idx - center[ax]
        if grid.periodic:
            d = (d + grid.n // 2) % grid.n - grid.n // 2
        d = (d * grid.h) ** 2
        shape = [1] * grid.dim
        shape[ax] = grid.n
        d = d.reshape(shape)
        dist2 = d if dist2 is None else dist2 + d
    return dist2 <= radius ** 2 + 1e-12


def oscillation(f: ScalarField, center, radius: float) -> float:
    """max - min of the field over the discrete ball around center."""
    mask = ball_mask(f.grid, center, radius)
    sel = f.values[mask]
    if sel.size == 0:
        return 0.0
    return float(sel.max() - sel.min())


# ---------------------------------------------------------------------------
# Binary field format: magic "HJHG", version u16, dim u16, n u32 per axis,
# h f64, boundary tag u8, then row-major little-endian f64 values.
# ---------------------------------------------------------------------------

def write_field(f: ScalarField, path) -> None:
    g = f.grid
    head = MAGIC + struct.pack("<HH", FORMAT_VERSION, g.dim)
    head += struct.pack("<" + "I" * g.dim, *((g.n,) * g.dim))
    head += struct.pack("<d", g.h)
    head += struct.pack("<B", _BOUNDARY_TAGS[g.boundary])
    payload = f.values.astype("<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload)


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FieldFormatError("bad magic; not a field file")
    version, dim = struct.unpack_from("<HH", blob, 4)
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"unsupported format version {version}")
    if dim not in (1, 2):
        raise FieldFormatError(f"bad dim {dim}")
    off = 8
    try:
        ns = struct.unpack_from("<" + "I" * dim, blob, off)
        off += 4 * dim
        (h,) = struct.unpack_from("<d", blob, off)
        off += 8
        (tag,) = struct.unpack_from("<B", blob, off)
        off += 1
    except struct.error as exc:
        raise FieldFormatError("truncated header") from exc
    if len(set(ns)) != 1:
        raise FieldFormatError("anisotropic node counts are not supported")
    if tag not in _TAG_BOUNDARIES:
        raise FieldFormatError(f"bad boundary tag {tag}")
    n = ns[0]
    count = n ** dim
    expected = off + 8 * count
    if len(blob) != expected:
        raise FieldFormatError(
            f"payload length mismatch: have {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
    grid = Grid(dim=dim, n=n, h=h, boundary=_TAG_BOUNDARIES[tag])
    return ScalarField(grid, values.reshape(grid.shape).copy())


def field_to_dat(f: ScalarField, path) -> None:
    """Plain-text emitter: one `x [y] value` triplet per line, gnuplot-ready."""
    ax = f.grid.axis_coords()
    with open(path, "w") as fh:
        if f.grid.dim == 1:
            for i in range(f.grid.n):
                fh.write(f"{ax[i]:.17g} {f.values[i]:.17g}\n")
        else:
            for i in range(f.grid.n):
                for j in range(f.grid.n):
                    fh.write(f"{ax[i]:.17g} {ax[j]:.17g} {f.values[i, j]:.17g}\n")
                fh.write("\n")


def shifted_field(f: ScalarField, shift_nodes) -> ScalarField:
    """Cyclic shift by whole nodes (periodic grids only)."""
    if not f.grid.periodic:
        raise ParameterError("shifted_field requires a periodic grid")
    shift_nodes = _as_node(shift_nodes, f.grid.dim)
    return ScalarField(f.grid, np.roll(f.values, shift_nodes,
                                       axis=tuple(range(f.grid.dim))))


def with_boundary(grid: Grid, boundary: str, slope=()) -> Grid:
    return replace(grid, boundary=boundary, dirichlet_slope=tuple(slope))
