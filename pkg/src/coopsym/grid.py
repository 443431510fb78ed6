"""Polar finite-difference discretization of balls and annuli in the plane.

Unknowns live at cell centres ``r_i = r_inner + (i + 1/2) dr`` and at the
angles ``theta_j = (j + s) dtheta``.  The angular offset ``s`` is 1/2 when
``n_theta`` is a multiple of 4 and 0 otherwise; either way no node sits on a
reflection hyperplane ``T(e)`` of a grid-aligned direction ``e``, so every
reflection is an exact permutation of the nodes.

Node ``(i, j)`` has flat index ``i * n_theta + j``.  Multi-component fields
are stored component-major as an ``(m, n_r * n_theta)`` array.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import ConfigurationError


@dataclass(frozen=True)
class Domain:
    """A disc (``r_inner == 0``) or an annulus centred at the origin."""

    kind: str
    r_inner: float
    r_outer: float

    def __post_init__(self):
        if self.kind not in ("ball", "annulus"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if not (self.r_outer > self.r_inner >= 0.0):
            raise ConfigurationError(
                f"need r_outer > r_inner >= 0, got [{self.r_inner}, {self.r_outer}]")
        if (self.kind == "ball") != (self.r_inner == 0.0):
            raise ConfigurationError("a ball has r_inner == 0 and an annulus r_inner > 0")

    @classmethod
    def ball(cls, radius: float = 1.0) -> "Domain":
        return cls("ball", 0.0, float(radius))

    @classmethod
    def annulus(cls, r_inner: float, r_outer: float) -> "Domain":
        return cls("annulus", float(r_inner), float(r_outer))

    @property
    def measure(self) -> float:
        return np.pi * (self.r_outer ** 2 - self.r_inner ** 2)


@dataclass(frozen=True)
class Direction:
    """Grid-aligned unit vector ``e = (cos 2 pi k/n, sin 2 pi k/n)``."""

    index: int
    n_theta: int

    def __post_init__(self):
        object.__setattr__(self, "index", int(self.index) % self.n_theta)

    @property
    def angle(self) -> float:
        return 2.0 * np.pi * self.index / self.n_theta

    @property
    def vector(self) -> np.ndarray:
        return np.array([np.cos(self.angle), np.sin(self.angle)])

    def opposite(self) -> "Direction":
        return Direction(self.index + self.n_theta // 2, self.n_theta)

    def rotated(self, steps: int) -> "Direction":
        return Direction(self.index + steps, self.n_theta)


@dataclass(frozen=True, eq=False)
class PolarGrid:
    domain: Domain
    n_r: int
    n_theta: int

    @property
    def dr(self) -> float:
        return (self.domain.r_outer - self.domain.r_inner) / self.n_r

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def theta_shift(self) -> int:
        """Twice the angular node offset, in units of ``dtheta``."""
        return 1 if self.n_theta % 4 == 0 else 0

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @cached_property
    def r_nodes(self) -> np.ndarray:
        return self.domain.r_inner + (np.arange(self.n_r) + 0.5) * self.dr

    @cached_property
    def theta_nodes(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5 * self.theta_shift) * self.dtheta

    @cached_property
    def r(self) -> np.ndarray:
        """Radius of every node, flat ordering."""
        return np.repeat(self.r_nodes, self.n_theta)

    @cached_property
    def theta(self) -> np.ndarray:
        return np.tile(self.theta_nodes, self.n_r)

    @cached_property
    def xy(self) -> np.ndarray:
        return np.stack([self.r * np.cos(self.theta), self.r * np.sin(self.theta)])

    @cached_property
    def quad_weights(self) -> np.ndarray:
        return self.r * self.dr * self.dtheta

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return laplacian_operator(self)

    def direction(self, k: int) -> Direction:
        return Direction(k, self.n_theta)

    def directions(self) -> list[Direction]:
        return [Direction(k, self.n_theta) for k in range(self.n_theta)]

    def describe(self) -> dict:
        return {"kind": self.domain.kind, "r_inner": self.domain.r_inner,
                "r_outer": self.domain.r_outer, "n_r": self.n_r, "n_theta": self.n_theta}


def build_grid(domain: Domain, n_r: int, n_theta: int) -> PolarGrid:
    if n_r < 2:
        raise ConfigurationError(f"n_r must be >= 2, got {n_r}")
    if n_theta < 4 or n_theta % 2:
        raise ConfigurationError(f"n_theta must be even and >= 4, got {n_theta}")
    return PolarGrid(domain, int(n_r), int(n_theta))


def laplacian_operator(grid: PolarGrid) -> sp.csr_matrix:
    """Five-point discretization of ``-Delta`` with homogeneous Dirichlet data.

    The boundary value 0 is imposed on the faces ``r_outer`` (and
    ``r_inner`` for an annulus) through the mirror ghost ``u_ghost = -u``.
    For a ball the neighbour across the pole is the antipodal node, but its
    flux carries the face radius ``r = 0`` and so drops out.  The matrix is
    symmetric with respect to the quadrature inner product.
    """
    nr, nt = grid.n_r, grid.n_theta
    dr, dt = grid.dr, grid.dtheta
    r = grid.r_nodes
    faces = grid.domain.r_inner + np.arange(nr + 1) * dr
    idx = np.arange(nr * nt).reshape(nr, nt)

    c_out = faces[1:] / (r * dr * dr)
    c_in = faces[:-1] / (r * dr * dr)
    c_ang = 1.0 / (r * r * dt * dt)

    diag = c_out + c_in + 2.0 * c_ang
    diag[-1] += c_out[-1]
    if grid.domain.kind == "annulus":
        diag[0] += c_in[0]

    rows, cols, vals = [idx.ravel()], [idx.ravel()], [np.repeat(diag, nt)]
    # radial couplings (i, j) <-> (i + 1, j)
    lo, hi = idx[:-1].ravel(), idx[1:].ravel()
    rows += [lo, hi]
    cols += [hi, lo]
    vals += [-np.repeat(c_out[:-1], nt), -np.repeat(c_in[1:], nt)]
    # angular couplings, periodic
    right = np.roll(idx, -1, axis=1).ravel()
    left = np.roll(idx, 1, axis=1).ravel()
    a = -np.repeat(c_ang, nt)
    rows += [idx.ravel(), idx.ravel()]
    cols += [right, left]
    vals += [a, a]
    n = nr * nt
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


@dataclass(frozen=True, eq=False)
class Field:
    """An ``m``-component grid function, values shaped ``(m, n_nodes)``."""

    grid: PolarGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.shape[1] != self.grid.size:
            raise ValueError(f"field has {vals.shape[1]} nodes, grid has {self.grid.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def component(self, i: int) -> np.ndarray:
        return self.values[i]

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def norm(self) -> float:
        """Weighted L2 norm over the whole domain."""
        return float(np.sqrt(np.sum(self.values ** 2 * self.grid.quad_weights)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def with_values(self, values) -> "Field":
        return Field(self.grid, np.asarray(values, dtype=float).reshape(self.values.shape))

    @classmethod
    def from_function(cls, grid: PolarGrid, fn, m: int | None = None) -> "Field":
        """Sample ``fn(r, theta)``; a sequence return gives the components."""
        out = np.asarray(fn(grid.r, grid.theta), dtype=float)
        if out.ndim == 1:
            out = out[None, :]
        if m is not None and out.shape[0] != m:
            out = np.broadcast_to(out, (m, grid.size)).copy()
        return cls(grid, out)

    @classmethod
    def zeros(cls, grid: PolarGrid, m: int) -> "Field":
        return cls(grid, np.zeros((m, grid.size)))


def mirror_permutation(grid: PolarGrid, line: int) -> np.ndarray:
    """Permutation for the reflection across the line at angle ``line * dtheta / 2``.

    ``perm[p]`` is the node that ``p`` is mapped to, so ``u[perm]`` is
    ``u`` composed with the reflection.
    """
    nt = grid.n_theta
    j = np.arange(nt)
    jj = (line - j - grid.theta_shift) % nt
    return (np.arange(grid.n_r)[:, None] * nt + jj[None, :]).ravel()


def hyperplane_line(e: Direction) -> int:
    """Line index of ``T(e)``, the hyperplane orthogonal to ``e``."""
    return 2 * e.index + e.n_theta // 2


def reflection_permutation(grid: PolarGrid, e: Direction) -> np.ndarray:
    """Node permutation of ``sigma_e``, the reflection through ``T(e)``."""
    if e.n_theta != grid.n_theta:
        raise ConfigurationError("direction and grid disagree on n_theta")
    return mirror_permutation(grid, hyperplane_line(e))


def reflect_field(field: Field, e: Direction) -> Field:
    """``U o sigma_e`` as an exact node permutation."""
    return Field(field.grid, field.values[:, reflection_permutation(field.grid, e)])


def cap_mask(grid: PolarGrid, e: Direction) -> np.ndarray:
    """Boolean mask of the nodes with ``x . e > 0``."""
    c = np.cos(grid.theta - e.angle)
    mask = c > 0
    if np.any(np.abs(c) < 1e-12) or mask.sum() * 2 != grid.size:
        raise AssertionError("a node lies on the hyperplane T(e)")
    return mask


def integrate(values, grid: PolarGrid) -> float:
    return float(np.sum(np.asarray(values) * grid.quad_weights))


def angular_derivative(field: Field) -> Field:
    """Second-order central difference in theta, periodic."""
    g = field.grid
    v = field.values.reshape(field.m, g.n_r, g.n_theta)
    d = (np.roll(v, -1, axis=2) - np.roll(v, 1, axis=2)) / (2.0 * g.dtheta)
    return Field(g, d.reshape(field.m, g.size))


def angular_average(field: Field) -> Field:
    g = field.grid
    v = field.values.reshape(field.m, g.n_r, g.n_theta)
    avg = np.repeat(v.mean(axis=2), g.n_theta, axis=1)
    return Field(g, avg)


@dataclass(frozen=True, eq=False)
class Region:
    """A node subset on which Dirichlet eigenproblems and forms are posed.

    Caps carry the reflection ``sigma_e`` so that the boundary condition on
    ``T(e)`` is imposed by odd extension (exactly on the hyperplane).  Any
    other subset gets the value 0 at every excluded neighbour.
    """

    grid: PolarGrid
    nodes: np.ndarray
    name: str
    mirror: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.nodes)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.size, dtype=bool)
        m[self.nodes] = True
        return m

    @cached_property
    def weights(self) -> np.ndarray:
        return self.grid.quad_weights[self.nodes]

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        L = self.grid.laplacian
        rows = L[self.nodes]
        Lc = rows[:, self.nodes]
        if self.mirror is not None:
            outside = np.flatnonzero(~self.mask)
            pos = np.full(self.grid.size, -1)
            pos[self.nodes] = np.arange(self.size)
            target = pos[self.mirror[outside]]
            if np.any(target < 0):
                raise AssertionError("mirror does not map the complement onto the region")
            P = sp.csr_matrix((np.ones(len(outside)), (np.arange(len(outside)), target)),
                              shape=(len(outside), self.size))
            Lc = Lc - rows[:, outside] @ P
        return Lc.tocsr()


def full_region(grid: PolarGrid) -> Region:
    return Region(grid, np.arange(grid.size), "domain")


def cap_region(grid: PolarGrid, e: Direction) -> Region:
    nodes = np.flatnonzero(cap_mask(grid, e))
    return Region(grid, nodes, f"cap[{e.index}]", reflection_permutation(grid, e))


def node_region(grid: PolarGrid, mask, name: str = "subset") -> Region:
    nodes = np.flatnonzero(np.asarray(mask, dtype=bool))
    if nodes.size == 0:
        raise ConfigurationError("empty region")
    return Region(grid, nodes, name)


def sector_region(grid: PolarGrid, e: Direction, fraction: float) -> Region:
    """Nodes within the angular sector of total width ``fraction * 2 pi`` about ``e``."""
    half = np.pi * fraction
    d = np.angle(np.exp(1j * (grid.theta - e.angle)))
    return node_region(grid, np.abs(d) < half, f"sector[{e.index},{fraction:g}]")


def write_field_csv(field: Field, path) -> Path:
    path = Path(path)
    g = field.grid
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "theta"] + [f"component_{i}" for i in range(field.m)])
        for p in range(g.size):
            w.writerow([repr(float(g.r[p])), repr(float(g.theta[p]))]
                       + [repr(float(v)) for v in field.values[:, p]])
    return path


def read_field_csv(grid: PolarGrid, path) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.size:
        raise ConfigurationError(f"{path}: {data.shape[0]} rows for a grid of {grid.size} nodes")
    if not (np.allclose(data[:, 0], grid.r) and np.allclose(data[:, 1], grid.theta)):
        raise ConfigurationError(f"{path}: node coordinates do not match the grid")
    return Field(grid, data[:, 2:].T.copy())
