"""Uniform tensor grids on intervals and rectangles, nodal fields, and norms.

Everything downstream builds on three conventions fixed here:

* Nodes include the boundary.  A field stores one value per node, in
  lexicographic node order when flattened, and a Dirichlet field is one
  that vanishes on the boundary mask.
* Nodal integrals (Lp norms, load vectors) use tensor trapezoid weights,
  so the weights sum exactly to the domain measure.
* Gradients live on cells: one vector per cell, reconstructed from the
  2^d surrounding nodes (plain forward difference in 1D, edge-averaged
  differences to the cell center in 2D).  Gradient integrals use the
  one-point-per-cell midpoint rule.  This pairing makes the discrete
  p-Dirichlet energy exactly p-homogeneous, which the solver layer and
  its scaling identities exploit.

The boundary distance is evaluated analytically (exact min over the
faces), never via a nodal graph metric; the singular right-hand sides
downstream divide by powers of it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "GradientField",
    "build_grid",
    "zero_field",
    "constant_field",
    "field_from_function",
    "gradient",
    "nodal_gradient",
    "sup_norm",
    "lp_norm",
    "w1p_seminorm",
    "lorentz_norm",
    "norm",
    "write_field_csv",
    "read_field_csv",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid over an interval or axis-aligned rectangle.

    Attributes
    ----------
    dim : 1 or 2.
    lo, hi : per-axis domain endpoints.
    n : per-axis interior node counts (the grid stores n + 2 nodes per
        axis, boundary included).
    h : per-axis spacing, (hi - lo) / (n + 1).
    axes : per-axis node coordinates, each of length n + 2; the last
        entry is set to hi exactly so boundary distances vanish exactly.
    boundary_mask : boolean node array, True on boundary nodes.
    dist : exact analytic distance to the boundary at every node.
    node_weights : tensor trapezoid quadrature weights; they sum to the
        domain measure exactly.
    """

    dim: int
    lo: tuple
    hi: tuple
    n: tuple
    h: tuple
    axes: tuple
    boundary_mask: np.ndarray
    dist: np.ndarray
    node_weights: np.ndarray

    def __post_init__(self):
        for ax in self.axes:
            ax.setflags(write=False)
        for arr in (self.boundary_mask, self.dist, self.node_weights):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple:
        return tuple(nk + 2 for nk in self.n)

    @property
    def cell_shape(self) -> tuple:
        return tuple(nk + 1 for nk in self.n)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    @property
    def coords(self) -> np.ndarray:
        """Node coordinate table of shape (num_nodes, dim), lexicographic order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def compatible(self, other: "Grid") -> bool:
        return (
            self.dim == other.dim
            and self.n == other.n
            and self.lo == other.lo
            and self.hi == other.hi
        )


def build_grid(dim: int, extent, n) -> Grid:
    """Build a uniform grid with n interior nodes per axis.

    Parameters
    ----------
    dim : 1 or 2.
    extent : (lo, hi) in 1D, or ((lo1, hi1), (lo2, hi2)).
    n : interior node count, scalar or per-axis.
    """
    if dim not in (1, 2):
        raise ValueError(f"invalid domain: dim must be 1 or 2, got {dim}")
    ext = np.asarray(extent, dtype=float)
    if ext.shape == (2,):
        ext = ext.reshape(1, 2)
    if ext.shape != (dim, 2):
        raise ValueError(
            f"invalid domain: extent must give (lo, hi) per axis, got shape {ext.shape}"
        )
    nn = np.asarray(n, dtype=int)
    if nn.ndim == 0:
        nn = np.full(dim, int(nn))
    if nn.shape != (dim,):
        raise ValueError(f"invalid domain: n must be scalar or length {dim}")
    if np.any(nn < 2):
        raise ValueError(f"invalid domain: need at least 2 interior nodes per axis, got {tuple(nn)}")
    if np.any(ext[:, 1] <= ext[:, 0]):
        raise ValueError("invalid domain: each axis needs hi > lo")

    lo = tuple(float(v) for v in ext[:, 0])
    hi = tuple(float(v) for v in ext[:, 1])
    h = tuple((hi[k] - lo[k]) / (nn[k] + 1) for k in range(dim))

    axes = []
    for k in range(dim):
        x = lo[k] + np.arange(nn[k] + 2, dtype=float) * h[k]
        x[-1] = hi[k]  # exact endpoint so hi - x vanishes exactly there
        axes.append(x)

    shape = tuple(int(nk) + 2 for nk in nn)
    mask = np.zeros(shape, dtype=bool)
    for k in range(dim):
        sl_lo = tuple(0 if j == k else slice(None) for j in range(dim))
        sl_hi = tuple(-1 if j == k else slice(None) for j in range(dim))
        mask[sl_lo] = True
        mask[sl_hi] = True

    per_axis_dist = [np.minimum(axes[k] - lo[k], hi[k] - axes[k]) for k in range(dim)]
    per_axis_w = []
    for k in range(dim):
        w = np.full(shape[k], h[k])
        w[0] = w[-1] = h[k] / 2.0
        per_axis_w.append(w)

    if dim == 1:
        dist = per_axis_dist[0].copy()
        weights = per_axis_w[0].copy()
    else:
        dist = np.minimum(per_axis_dist[0][:, None], per_axis_dist[1][None, :])
        weights = np.multiply.outer(per_axis_w[0], per_axis_w[1])

    return Grid(
        dim=dim,
        lo=lo,
        hi=hi,
        n=tuple(int(v) for v in nn),
        h=h,
        axes=tuple(axes),
        boundary_mask=mask,
        dist=dist,
        node_weights=weights,
    )


@dataclass(frozen=True, eq=False)
class Field:
    """One real value per grid node.  Immutable after construction."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"field shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_dirichlet(self) -> bool:
        """True when the field vanishes on every boundary node."""
        return bool(np.all(self.values[self.grid.boundary_mask] == 0.0))

    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior_mask]

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)


def zero_field(grid: Grid) -> Field:
    return Field(grid, np.zeros(grid.shape))


def constant_field(grid: Grid, c: float) -> Field:
    return Field(grid, np.full(grid.shape, float(c)))


def field_from_function(grid: Grid, fn) -> Field:
    """Sample ``fn(x)`` (1D) or ``fn(x, y)`` (2D) at every node."""
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    return Field(grid, np.asarray(fn(*mesh), dtype=float))


@dataclass(frozen=True, eq=False)
class GradientField:
    """One gradient vector per cell, shape cell_shape + (dim,)."""

    grid: Grid
    cell_values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.cell_values, dtype=float, copy=True)
        want = self.grid.cell_shape + (self.grid.dim,)
        if vals.shape != want:
            raise ValueError(f"cell gradient shape {vals.shape}, expected {want}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("cell gradient values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "cell_values", vals)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.cell_values**2, axis=-1))

    def sup(self) -> float:
        mag = self.magnitude()
        return float(mag.max()) if mag.size else 0.0


def cell_corner_slices(dim: int):
    """Corners of the unit cell and the node-array slices selecting them.

    Corner c (a {0,1}^dim tuple) of every cell is obtained by slicing the
    nodal array with slice(0, -1) or slice(1, None) per axis; the result
    always has the cell shape.
    """
    corners = list(itertools.product((0, 1), repeat=dim))
    slices = [
        tuple(slice(1, None) if b else slice(0, -1) for b in c) for c in corners
    ]
    return corners, slices


def cell_corner_coefs(dim: int, h) -> np.ndarray:
    """Coefficient of each cell corner in the cell-average gradient.

    Along axis k the gradient averages the 2^(dim-1) edge differences, so
    corner c contributes with sign 2*c[k]-1 and magnitude 1/(2^(dim-1) h_k).
    """
    corners = list(itertools.product((0, 1), repeat=dim))
    scale = 2.0 ** (dim - 1)
    coef = np.empty((len(corners), dim))
    for a, c in enumerate(corners):
        for k in range(dim):
            coef[a, k] = (1.0 if c[k] else -1.0) / (scale * h[k])
    return coef


def cell_gradient_components(values: np.ndarray, h) -> list:
    """Per-axis cell gradient components of a nodal array (list of dim arrays)."""
    dim = values.ndim
    _, slices = cell_corner_slices(dim)
    coef = cell_corner_coefs(dim, h)
    comps = []
    for k in range(dim):
        acc = coef[0, k] * values[slices[0]]
        for a in range(1, len(slices)):
            acc = acc + coef[a, k] * values[slices[a]]
        comps.append(acc)
    return comps


def gradient(u: Field) -> GradientField:
    """Cell-centered gradient of a nodal field.

    The stored boundary values enter the differences, so for a Dirichlet
    field the reconstruction sees the homogeneous boundary data; fields
    with nonzero trace are differentiated from their stored values as-is.
    """
    comps = cell_gradient_components(u.values, u.grid.h)
    return GradientField(u.grid, np.stack(comps, axis=-1))


def nodal_gradient(u: Field) -> np.ndarray:
    """Gradient vectors averaged back to interior nodes.

    Returns a full-shape array (shape + (dim,)); each interior node gets
    the mean of its 2^dim adjacent cell gradients (the central difference
    on a uniform grid) and boundary rows are left at zero.
    """
    g = gradient(u).cell_values
    dim = u.grid.dim
    _, slices = cell_corner_slices(dim)
    acc = g[slices[0] + (slice(None),)].copy()
    for s in slices[1:]:
        acc += g[s + (slice(None),)]
    acc /= len(slices)
    out = np.zeros(u.grid.shape + (dim,))
    out[tuple(slice(1, -1) for _ in range(dim)) + (slice(None),)] = acc
    return out


def nodal_gradient_magnitude(u: Field) -> np.ndarray:
    return np.sqrt(np.sum(nodal_gradient(u) ** 2, axis=-1))


# ---------------------------------------------------------------------------
# norms


def sup_norm(u: Field) -> float:
    return float(np.abs(u.values).max())


def lp_norm(u: Field, p: float) -> float:
    """Node-weighted Lp norm, trapezoid weights."""
    if p < 1:
        raise ValueError(f"Lp norm needs p >= 1, got {p}")
    w = u.grid.node_weights
    return float(np.sum(w * np.abs(u.values) ** p) ** (1.0 / p))


def w1p_seminorm(u: Field, p: float) -> float:
    """Midpoint-rule Lp norm of the cell-centered gradient."""
    if p < 1:
        raise ValueError(f"W1p seminorm needs p >= 1, got {p}")
    mag = gradient(u).magnitude()
    return float((u.grid.cell_measure * np.sum(mag**p)) ** (1.0 / p))


def lorentz_norm(u: Field, pl: float, ql: float) -> float:
    """Lorentz (pl, ql) norm via the decreasing rearrangement.

    The rearrangement is the right-continuous step function on
    [0, measure] obtained by sorting |values| in decreasing order, each
    node carrying its quadrature weight as measure (ties broken by node
    index, so the result is deterministic).  The norm integral

        ( int_0^measure  [ t^(1/pl) u*(t) ]^ql  dt / t )^(1/ql)

    is evaluated in closed form on every step.  With ql = pl = q this
    reproduces the Lq norm exactly.
    """
    if pl <= 1:
        raise ValueError(f"Lorentz norm needs pl > 1, got {pl}")
    if not np.isfinite(ql) or ql < 1:
        raise ValueError(f"Lorentz norm needs finite ql >= 1, got {ql}")
    v = np.abs(u.values).ravel()
    w = u.grid.node_weights.ravel()
    order = np.argsort(-v, kind="stable")
    v = v[order]
    w = w[order]
    t1 = np.cumsum(w)
    t0 = np.concatenate(([0.0], t1[:-1]))
    e = ql / pl
    contrib = v**ql * (t1**e - t0**e) * (pl / ql)
    return float(np.sum(contrib) ** (1.0 / ql))


def norm(u: Field, kind: str, p: float | None = None) -> float:
    """Dispatch on kind: 'sup', 'lp' (needs p), 'w1p' (needs p)."""
    k = kind.lower()
    if k == "sup":
        return sup_norm(u)
    if k in ("lp", "l^p"):
        if p is None:
            raise ValueError("kind 'lp' needs p")
        return lp_norm(u, p)
    if k in ("w1p", "w^1p"):
        if p is None:
            raise ValueError("kind 'w1p' needs p")
        return w1p_seminorm(u, p)
    raise ValueError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------------------
# CSV round-trip


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(u: Field, path) -> None:
    """Write one node per row as x[,y],value with 17 significant digits.

    Row order is the lexicographic node order; the format round-trips
    float64 bit-exactly.
    """
    grid = u.grid
    cols = ["x", "y"][: grid.dim] + ["value"]
    coords = grid.coords
    vals = u.values.ravel()
    with open(path, "w", encoding="ascii") as f:
        f.write(",".join(cols) + "\n")
        for i in range(grid.num_nodes):
            row = [_fmt(c) for c in coords[i]] + [_fmt(vals[i])]
            f.write(",".join(row) + "\n")


def read_field_csv(path) -> Field:
    """Read a field CSV back, reconstructing its uniform tensor grid.

    The grid is rebuilt from the coordinate columns and the parsed table
    must match its node order bit-exactly, so write -> read -> write is
    the identity.
    """
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if header[-1] != "value" or header[:-1] not in (["x"], ["x", "y"]):
        raise ValueError(f"unrecognized field CSV header {header}")
    dim = len(header) - 1
    data = np.array([[float(v) for v in r] for r in rows])
    if data.shape[1] != dim + 1:
        raise ValueError("field CSV rows do not match the header")
    axes = [np.unique(data[:, k]) for k in range(dim)]
    extent = [(ax[0], ax[-1]) for ax in axes]
    n = [ax.size - 2 for ax in axes]
    grid = build_grid(dim, extent, n)
    if not np.array_equal(grid.coords, data[:, :dim]):
        raise ValueError("field CSV nodes do not form a uniform tensor grid in lexicographic order")
    values = data[:, dim].reshape(grid.shape)
    return Field(grid, values)
