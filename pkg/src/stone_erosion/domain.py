"""Cartesian grid, level-set classification and ghost-point interpolation.

Nodes are stored flat in C order over ``grid.shape``; axis 0 is x, axis 1
is y. The level set is ``phi = n - n_max``: negative inside the stone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

OUTSIDE, INTERNAL, GHOST = 0, 1, 2

__all__ = [
    "OUTSIDE",
    "INTERNAL",
    "GHOST",
    "Grid",
    "GhostGeometry",
    "GridClassification",
    "DomainError",
    "FullyErodedError",
    "DegenerateNormalError",
    "ProjectionError",
    "StencilError",
    "classify",
    "project_ghost",
    "build_stencil",
    "dirichlet_weights",
    "neumann_weights",
    "lagrange3",
    "lagrange3_deriv",
    "tensor_weights",
    "interpolate",
    "axis_front",
]


class DomainError(RuntimeError):
    pass


class FullyErodedError(DomainError):
    """No internal node left: the specimen has been eroded away."""


class DegenerateNormalError(DomainError):
    pass


class ProjectionError(DomainError):
    pass


class StencilError(DomainError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``N`` intervals (``N + 1`` nodes) per axis."""

    dim: int
    N: int
    h: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.N < 2 or not self.h > 0.0:
            raise ValueError(f"need N >= 2 and h > 0, got N={self.N}, h={self.h}")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin[: self.dim]))

    @classmethod
    def over(cls, dim: int, N: int, length: float, origin: float = 0.0) -> "Grid":
        return cls(dim, N, length / N, (origin,) * dim)

    @property
    def shape(self):
        return (self.N + 1,) * self.dim

    @property
    def size(self):
        return (self.N + 1) ** self.dim

    @property
    def strides(self):
        return (self.N + 1, 1) if self.dim == 2 else (1,)

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.h * np.arange(self.N + 1)

    def coords(self) -> np.ndarray:
        """(size, dim) array of node coordinates."""
        mesh = np.meshgrid(*[self.axis(a) for a in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def unravel(self, k: int):
        return np.unravel_index(k, self.shape)

    def ravel(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def point(self, k: int) -> np.ndarray:
        idx = self.unravel(k)
        return np.array([self.origin[a] + self.h * idx[a] for a in range(self.dim)])

    def neighbors(self) -> np.ndarray:
        """(size, 2*dim) neighbour table, ordered (-x, +x, -y, +y); -1 off grid."""
        idx = np.arange(self.size).reshape(self.shape)
        out = np.full((self.size, 2 * self.dim), -1, dtype=np.int64)
        for a in range(self.dim):
            lo = np.full(self.shape, -1, dtype=np.int64)
            hi = np.full(self.shape, -1, dtype=np.int64)
            sl_dst = [slice(None)] * self.dim
            sl_src = [slice(None)] * self.dim
            sl_dst[a], sl_src[a] = slice(1, None), slice(None, -1)
            lo[tuple(sl_dst)] = idx[tuple(sl_src)]
            sl_dst[a], sl_src[a] = slice(None, -1), slice(1, None)
            hi[tuple(sl_dst)] = idx[tuple(sl_src)]
            out[:, 2 * a] = lo.ravel()
            out[:, 2 * a + 1] = hi.ravel()
        return out


@dataclass
class GhostGeometry:
    ghost: int
    x_G: np.ndarray
    x_B: np.ndarray
    normal: np.ndarray
    xi: np.ndarray
    # per-axis offset of x_B from the stencil centre, in units of h
    t: np.ndarray = None
    center: tuple = None
    box: np.ndarray = None
    stencil: np.ndarray = None
    stencil_kind: np.ndarray = None
    alpha: np.ndarray = None
    omega: np.ndarray = None
    nstar: int = -1
    least_squares: bool = False


@dataclass
class GridClassification:
    grid: Grid
    kind: np.ndarray
    phi: np.ndarray
    internal: np.ndarray
    ghost: np.ndarray
    outside: np.ndarray
    geometry: list = field(default_factory=list)

    def __post_init__(self):
        self._by_ghost = {g.ghost: g for g in self.geometry}

    def geometry_of(self, k: int) -> GhostGeometry:
        return self._by_ghost[k]

    def porosity_index(self) -> np.ndarray:
        """Index whose porosity a node uses in the discrete operators.

        Internal and outside nodes use their own value; ghost nodes use the
        boundary porosity n_* of their stencil.
        """
        pidx = np.arange(self.grid.size, dtype=np.int64)
        for g in self.geometry:
            pidx[g.ghost] = g.nstar
        return pidx

    def ghost_csr(self):
        """Stencils packed as (ptr, nodes, alpha, omega, nstar) arrays."""
        ptr = np.zeros(len(self.geometry) + 1, dtype=np.int64)
        for i, g in enumerate(self.geometry):
            ptr[i + 1] = ptr[i] + len(g.stencil)
        nodes = np.concatenate([g.stencil for g in self.geometry]) if self.geometry else np.zeros(0, np.int64)
        alpha = np.concatenate([g.alpha for g in self.geometry]) if self.geometry else np.zeros(0)
        omega = np.concatenate([g.omega for g in self.geometry]) if self.geometry else np.zeros(0)
        nstar = np.array([g.nstar for g in self.geometry], dtype=np.int64)
        return ptr, nodes.astype(np.int64), alpha, omega, nstar

    def same_sets(self, other: "GridClassification") -> bool:
        return bool(np.array_equal(self.kind, other.kind))


# --- 1D Lagrange weights ----------------------------------------------------


def dirichlet_weights(xi: float):
    """Quadratic Lagrange weights on (x_{i-1}, x_i, x_{i+1}) evaluated at x_i - xi*h."""
    return np.array([xi * (xi + 1.0) / 2.0, 1.0 - xi * xi, xi * (xi - 1.0) / 2.0])


def neumann_weights(xi: float, h: float):
    """d/dx of the quadratic interpolant on (x_{i-1}, x_i, x_{i+1}) at x_i - xi*h."""
    return np.array([-0.5 - xi, 2.0 * xi, 0.5 - xi]) / h


def lagrange3(t: float):
    """Weights on nodes at offsets (-1, 0, 1) for the value at offset ``t``."""
    return np.array([t * (t - 1.0) / 2.0, 1.0 - t * t, t * (t + 1.0) / 2.0])


def lagrange3_deriv(t: float, h: float):
    return np.array([(2.0 * t - 1.0) / 2.0, -2.0 * t, (2.0 * t + 1.0) / 2.0]) / h


def tensor_weights(geom: GhostGeometry, h: float):
    """Box weights (Dirichlet, Neumann) for the 3^dim box of ``geom``.

    Returned flat in C order over the box, matching ``geom.box``.
    """
    if geom.t is None:
        raise StencilError(f"ghost {geom.ghost} has no tensor stencil")
    dim = len(geom.t)
    if dim == 1:
        return lagrange3(geom.t[0]), geom.normal[0] * lagrange3_deriv(geom.t[0], h)
    ax, ay = lagrange3(geom.t[0]), lagrange3(geom.t[1])
    wx, wy = lagrange3_deriv(geom.t[0], h), lagrange3_deriv(geom.t[1], h)
    alpha = np.outer(ax, ay).ravel()
    omega = (geom.normal[0] * np.outer(wx, ay) + geom.normal[1] * np.outer(ax, wy)).ravel()
    return alpha, omega


# --- level-set geometry -----------------------------------------------------


def interpolate(grid: Grid, values: np.ndarray, x) -> float:
    """Multilinear interpolation of nodal ``values`` at point ``x`` (clamped to the grid)."""
    v = values.reshape(grid.shape)
    base, frac = [], []
    for a in range(grid.dim):
        u = (x[a] - grid.origin[a]) / grid.h
        u = min(max(u, 0.0), float(grid.N))
        i0 = min(int(math.floor(u)), grid.N - 1)
        base.append(i0)
        frac.append(u - i0)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=grid.dim):
        w = 1.0
        for a, c in enumerate(corner):
            w *= frac[a] if c else 1.0 - frac[a]
        if w != 0.0:
            total += w * v[tuple(base[a] + corner[a] for a in range(grid.dim))]
    return total


def _gradient(grid: Grid, phi: np.ndarray, k: int) -> np.ndarray:
    idx = grid.unravel(k)
    v = phi.reshape(grid.shape)
    g = np.zeros(grid.dim)
    for a in range(grid.dim):
        lo, hi = list(idx), list(idx)
        i = idx[a]
        if 0 < i < grid.N:
            lo[a], hi[a] = i - 1, i + 1
            g[a] = (v[tuple(hi)] - v[tuple(lo)]) / (2.0 * grid.h)
        elif i == 0:
            hi[a] = 1
            g[a] = (v[tuple(hi)] - v[tuple(idx)]) / grid.h
        else:
            lo[a] = i - 1
            g[a] = (v[tuple(idx)] - v[tuple(lo)]) / grid.h
    return g


def project_ghost(grid: Grid, phi: np.ndarray, ghost: int, normal=None) -> GhostGeometry:
    """Project a ghost node onto the zero level set along the outward normal."""
    x_G = grid.point(ghost)
    if normal is None:
        grad = _gradient(grid, phi, ghost)
        norm = float(np.linalg.norm(grad))
        if norm < 1e-14:
            raise DegenerateNormalError(f"vanishing level-set gradient at ghost {ghost}")
        normal = grad / norm
    normal = np.asarray(normal, dtype=float)
    phi_G = float(phi[ghost])
    h = grid.h

    def f(s):
        return interpolate(grid, phi, x_G - s * normal)

    if phi_G <= 0.0:
        s_root = 0.0
    else:
        step = h / 8.0
        lo, hi = 0.0, None
        s = step
        while s <= 2.0 * h + 1e-15 * h:
            if f(s) <= 0.0:
                hi = s
                break
            lo = s
            s += step
        if hi is None:
            raise ProjectionError(f"no zero crossing within 2h of ghost {ghost}")
        flo = f(lo)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if fm > 0.0:
                lo, flo = mid, fm
            else:
                hi = mid
            if hi - lo <= 1e-15 * h:
                break
        s_root = hi if f(hi) == 0.0 else 0.5 * (lo + hi)
    x_B = x_G - s_root * normal
    dist = np.abs(x_B - x_G)
    # coincidence with the ghost node maps to 0, keeping xi in [0, 1)
    xi = np.where(dist < 1e-12 * h, 0.0, np.clip(1.0 - dist / h, 0.0, 1.0))
    return GhostGeometry(ghost=ghost, x_G=x_G, x_B=x_B, normal=normal, xi=xi)


def _box_indices(grid: Grid, center):
    """Flat indices of the 3^dim box around ``center`` (-1 where off grid)."""
    out = []
    for off in itertools.product((-1, 0, 1), repeat=grid.dim):
        idx = [center[a] + off[a] for a in range(grid.dim)]
        if all(0 <= i <= grid.N for i in idx):
            out.append(grid.ravel(idx))
        else:
            out.append(-1)
    return np.array(out, dtype=np.int64)


def _axis_center_options(g_idx, x_G, x_B, normal, h, N):
    options = []
    d = x_B - x_G
    if abs(d) > 1e-12 * h:
        options.append(g_idx + (1 if d > 0 else -1))
    else:
        inward = -1 if normal > 0 else 1
        if normal == 0.0:
            options += [g_idx, g_idx + 1, g_idx - 1]
        else:
            options += [g_idx + inward, g_idx, g_idx - inward]
    return [c for c in options if 0 <= c <= N]


def _least_squares(grid: Grid, kind: np.ndarray, geom: GhostGeometry):
    g_idx = grid.unravel(geom.ghost)
    cands = []
    for off in itertools.product(range(-2, 3), repeat=grid.dim):
        idx = [g_idx[a] + off[a] for a in range(grid.dim)]
        if all(0 <= i <= grid.N for i in idx):
            k = grid.ravel(idx)
            if kind[k] != OUTSIDE:
                cands.append(k)
    npts = 3 if grid.dim == 1 else 9
    cands.sort(key=lambda k: (float(np.linalg.norm(grid.point(k) - geom.x_B)), k))
    pts = cands[:npts]
    X = np.array([(grid.point(k) - geom.x_B) / grid.h for k in pts]).reshape(len(pts), grid.dim)
    # quadratic basis, degrading to linear for isolated fragments
    bases = [[np.ones(len(pts))] + [X[:, a] for a in range(grid.dim)]]
    if grid.dim == 1:
        bases.insert(0, bases[0] + [X[:, 0] ** 2])
    else:
        x, y = X[:, 0], X[:, 1]
        bases.insert(0, bases[0] + [x * x, x * y, y * y])
    for cols in bases:
        V = np.stack(cols, axis=1)
        if len(pts) >= V.shape[1] and np.linalg.matrix_rank(V) == V.shape[1]:
            break
    else:
        raise StencilError(f"not enough admissible nodes around ghost {geom.ghost}")
    P = np.linalg.pinv(V)
    alpha = P[0]
    omega = sum(geom.normal[a] * P[1 + a] for a in range(grid.dim)) / grid.h
    return np.array(pts, dtype=np.int64), alpha, omega


def build_stencil(grid: Grid, kind: np.ndarray, geom: GhostGeometry) -> GhostGeometry:
    """Choose the interpolation box for ``geom`` and attach its weights."""
    g_idx = grid.unravel(geom.ghost)
    per_axis = [
        _axis_center_options(g_idx[a], geom.x_G[a], geom.x_B[a], geom.normal[a], grid.h, grid.N)
        for a in range(grid.dim)
    ]
    for center in itertools.product(*per_axis):
        t = np.array(
            [(geom.x_B[a] - (grid.origin[a] + grid.h * center[a])) / grid.h for a in range(grid.dim)]
        )
        if np.any(np.abs(t) > 1.0 + 1e-12):
            continue
        geom.t, geom.center = t, tuple(int(c) for c in center)
        geom.box = _box_indices(grid, center)
        alpha, omega = tensor_weights(geom, grid.h)
        scale_a = np.max(np.abs(alpha))
        scale_w = max(np.max(np.abs(omega)), 1e-300)
        used = (np.abs(alpha) > 1e-14 * scale_a) | (np.abs(omega) > 1e-14 * scale_w)
        nodes = geom.box[used]
        if np.any(nodes < 0) or np.any(kind[nodes[nodes >= 0]] == OUTSIDE):
            continue
        if geom.ghost not in nodes:
            continue
        geom.stencil = nodes
        geom.alpha, geom.omega = alpha[used], omega[used]
        geom.least_squares = False
        break
    else:
        geom.t = geom.center = geom.box = None
        geom.stencil, geom.alpha, geom.omega = _least_squares(grid, kind, geom)
        geom.least_squares = True
    geom.stencil_kind = kind[geom.stencil].copy()
    internal = geom.stencil[geom.stencil_kind == INTERNAL]
    if len(internal) == 0:
        raise StencilError(f"stencil of ghost {geom.ghost} has no internal node")
    dist = [float(np.linalg.norm(grid.point(k) - geom.x_B)) for k in internal]
    geom.nstar = int(internal[int(np.argmin(dist))])
    return geom


def _fallback_normal(grid: Grid, kind: np.ndarray, nbr: np.ndarray, k: int):
    v = np.zeros(grid.dim)
    for a in range(grid.dim):
        if nbr[k, 2 * a] >= 0 and kind[nbr[k, 2 * a]] == INTERNAL:
            v[a] += 1.0
        if nbr[k, 2 * a + 1] >= 0 and kind[nbr[k, 2 * a + 1]] == INTERNAL:
            v[a] -= 1.0
    if not np.any(v):
        for a in range(grid.dim):
            if nbr[k, 2 * a] >= 0 and kind[nbr[k, 2 * a]] == INTERNAL:
                v[a] = 1.0
                break
            if nbr[k, 2 * a + 1] >= 0 and kind[nbr[k, 2 * a + 1]] == INTERNAL:
                v[a] = -1.0
                break
    return v / np.linalg.norm(v)


def _axis_normal(grid: Grid, kind: np.ndarray, nbr: np.ndarray, k: int):
    for col in range(nbr.shape[1]):
        j = nbr[k, col]
        if j >= 0 and kind[j] == INTERNAL:
            v = np.zeros(grid.dim)
            v[col // 2] = 1.0 if col % 2 == 0 else -1.0
            return v
    raise ProjectionError(f"ghost {k} has no internal neighbour")


def classify(grid: Grid, n_field: np.ndarray, n_max: float) -> GridClassification:
    """Split nodes into internal, ghost and outside sets and build ghost stencils."""
    n_flat = np.asarray(n_field, dtype=float).ravel()
    if n_flat.size != grid.size:
        raise ValueError(f"porosity field has {n_flat.size} values, grid has {grid.size}")
    if not np.all(np.isfinite(n_flat)):
        raise ValueError("porosity field must be finite")
    phi = n_flat - n_max
    inside = phi < 0.0
    if not inside.any():
        raise FullyErodedError("no internal node left")
    nbr = grid.neighbors()
    has_internal_nbr = np.zeros(grid.size, dtype=bool)
    for col in range(nbr.shape[1]):
        j = nbr[:, col]
        ok = j >= 0
        has_internal_nbr[ok] |= inside[j[ok]]
    kind = np.full(grid.size, OUTSIDE, dtype=np.int8)
    kind[inside] = INTERNAL
    kind[~inside & has_internal_nbr] = GHOST
    ghosts = np.flatnonzero(kind == GHOST)
    geometry = []
    for g in ghosts:
        try:
            geom = project_ghost(grid, phi, int(g))
        except (DegenerateNormalError, ProjectionError):
            try:
                geom = project_ghost(grid, phi, int(g), normal=_fallback_normal(grid, kind, nbr, int(g)))
            except ProjectionError:
                # along a grid line towards an internal neighbour a crossing always exists
                geom = project_ghost(grid, phi, int(g), normal=_axis_normal(grid, kind, nbr, int(g)))
        geometry.append(build_stencil(grid, kind, geom))
    return GridClassification(
        grid=grid,
        kind=kind,
        phi=phi,
        internal=np.flatnonzero(kind == INTERNAL),
        ghost=ghosts,
        outside=np.flatnonzero(kind == OUTSIDE),
        geometry=geometry,
    )


def axis_front(grid: Grid, phi: np.ndarray, kind: np.ndarray, line: tuple, axis: int, side: int):
    """Sub-grid zero crossing of ``phi`` along one grid line.

    ``line`` fixes the indices of the other axes (empty in 1D). Scanning
    from the ``side`` end (-1: low coordinates, +1: high), the crossing is
    interpolated linearly between the outermost internal node and its
    outward neighbour. Returns None if the line has no internal node or no
    crossing.
    """
    idx_line = []
    for i in range(grid.N + 1):
        idx = list(line)
        idx.insert(axis, i)
        idx_line.append(grid.ravel(idx))
    idx_line = np.array(idx_line)
    inside = np.flatnonzero(kind[idx_line] == INTERNAL)
    if inside.size == 0:
        return None
    pos = inside[0] if side < 0 else inside[-1]
    out = pos + side
    if out < 0 or out > grid.N:
        return None
    p_in, p_out = phi[idx_line[pos]], phi[idx_line[out]]
    if p_out < 0.0:
        return None
    frac = p_out / (p_out - p_in)
    x_out = grid.origin[axis] + grid.h * out
    return x_out - side * frac * grid.h
