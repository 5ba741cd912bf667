"""Uniform cell-centered space-time grids and the discrete calculus on them.

The domain is [0, T] x [0, 1]^n. Axis 0 of every field array is time with
``nt`` cells, axis 1 + i is space dimension i with ``nx[i]`` cells; values
live at cell centers. A scalar field is an array of shape ``(nt, *nx)``;
a flux field carries a leading component axis of length n + 1 with slot 0
the time component and slots 1..n the space components; a space slice is
an array of shape ``nx``.

The gradient uses second-order central differences with reflection ghost
cells (homogeneous-Neumann extension). The divergence is *defined* as the
negative transpose of the gradient under the cell-volume inner product, so
discrete integration by parts

    <gradient(phi), mu> + <phi, divergence(mu)> = 0

holds exactly, not approximately. All integration-by-parts identities used
by the solvers inherit this exactness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleGrids


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on [0, T] x [0, 1]^n.

    Parameters
    ----------
    T : float
        Final time, > 0.
    nt : int
        Number of time cells, >= 2.
    nx : tuple of int
        Cells per space dimension, each >= 2.
    """

    T: float
    nt: int
    nx: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "nx", tuple(int(m) for m in np.atleast_1d(self.nx)))
        if self.T <= 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if self.nt < 2:
            raise ValueError(f"need at least 2 time cells, got {self.nt}")
        if any(m < 2 for m in self.nx):
            raise ValueError(f"need at least 2 cells per space axis, got {self.nx}")

    @property
    def n(self) -> int:
        """Spatial dimension."""
        return len(self.nx)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(1.0 / m for m in self.nx)

    @property
    def steps(self) -> tuple[float, ...]:
        """(dt, dx_1, ..., dx_n), indexed like field axes."""
        return (self.dt,) + self.dx

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of a scalar field array."""
        return (self.nt,) + self.nx

    @property
    def flux_shape(self) -> tuple[int, ...]:
        """Shape of a flux field array (component axis first)."""
        return (self.n + 1,) + self.shape

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        """Space-time volume of one cell."""
        return float(self.dt * np.prod(self.dx))

    @property
    def spatial_volume(self) -> float:
        """Spatial volume of one cell (used by `mass`)."""
        return float(np.prod(self.dx))

    def t_centers(self) -> np.ndarray:
        return (np.arange(self.nt) + 0.5) * self.dt

    def x_centers(self, i: int) -> np.ndarray:
        return (np.arange(self.nx[i]) + 0.5) * self.dx[i]

    def meshes(self):
        """Cell-center coordinate arrays (t, x_1, ..., x_n), each broadcastable
        to `shape` via open meshgrid."""
        axes = [self.t_centers()] + [self.x_centers(i) for i in range(self.n)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def space_meshes(self):
        """Spatial cell-center coordinates, broadcastable to `nx`."""
        axes = [self.x_centers(i) for i in range(self.n)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)


def check_scalar(grid: GridSpec, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi)
    if phi.shape != grid.shape:
        raise IncompatibleGrids(f"scalar field shape {phi.shape} != grid shape {grid.shape}")
    return phi


def check_flux(grid: GridSpec, mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu)
    if mu.shape != grid.flux_shape:
        raise IncompatibleGrids(f"flux field shape {mu.shape} != {grid.flux_shape}")
    return mu


def check_slice(grid: GridSpec, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.shape != grid.nx:
        raise IncompatibleGrids(f"space slice shape {rho.shape} != {grid.nx}")
    return rho


def _sl(ndim, axis, idx):
    s = [slice(None)] * ndim
    s[axis] = idx
    return tuple(s)


def _diff(phi: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central difference along one axis with reflection ghost cells."""
    out = np.empty_like(phi)
    nd = phi.ndim
    inner = _sl(nd, axis, slice(1, -1))
    up = _sl(nd, axis, slice(2, None))
    dn = _sl(nd, axis, slice(None, -2))
    out[inner] = (phi[up] - phi[dn]) / (2.0 * h)
    first, second = _sl(nd, axis, 0), _sl(nd, axis, 1)
    last, prev = _sl(nd, axis, -1), _sl(nd, axis, -2)
    # ghost = mirror of the first interior value, so the one-sided stencil
    # collapses to (phi_1 - phi_0) / 2h
    out[first] = (phi[second] - phi[first]) / (2.0 * h)
    out[last] = (phi[last] - phi[prev]) / (2.0 * h)
    return out


def _diff_nt(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Negative transpose of `_diff` along one axis (exact adjoint pair)."""
    out = np.empty_like(v)
    nd = v.ndim
    inner = _sl(nd, axis, slice(1, -1))
    up = _sl(nd, axis, slice(2, None))
    dn = _sl(nd, axis, slice(None, -2))
    out[inner] = (v[up] - v[dn]) / (2.0 * h)
    first, second = _sl(nd, axis, 0), _sl(nd, axis, 1)
    last, prev = _sl(nd, axis, -1), _sl(nd, axis, -2)
    out[first] = (v[first] + v[second]) / (2.0 * h)
    out[last] = -(v[last] + v[prev]) / (2.0 * h)
    return out


def gradient(grid: GridSpec, phi: np.ndarray) -> np.ndarray:
    """Discrete space-time gradient of a scalar field.

    Returns a flux field; component a is the central difference of `phi`
    along field axis a, with reflection closure at the boundary layers.
    """
    phi = check_scalar(grid, phi)
    out = np.empty(grid.flux_shape, dtype=phi.dtype)
    for a, h in enumerate(grid.steps):
        out[a] = _diff(phi, a, h)
    return out


def divergence(grid: GridSpec, mu: np.ndarray) -> np.ndarray:
    """Discrete space-time divergence, the exact negative adjoint of `gradient`.

    The boundary-layer values carry the flux closure terms of the transpose
    construction: a constant flux field has zero interior divergence but
    nonzero first/last layers along each axis.
    """
    mu = check_flux(grid, mu)
    out = np.zeros(grid.shape, dtype=mu.dtype)
    for a, h in enumerate(grid.steps):
        out += _diff_nt(mu[a], a, h)
    return out


def laplacian(grid: GridSpec, phi: np.ndarray) -> np.ndarray:
    """divergence(gradient(phi)); symmetric negative semidefinite, kernel = constants."""
    return divergence(grid, gradient(grid, phi))


def inner(grid: GridSpec, u: np.ndarray, v: np.ndarray) -> float:
    """Cell-volume-weighted inner product of two fields of equal shape."""
    u, v = np.asarray(u), np.asarray(v)
    if u.shape != v.shape:
        raise IncompatibleGrids(f"inner product shapes differ: {u.shape} vs {v.shape}")
    if u.shape not in (grid.shape, grid.flux_shape):
        raise IncompatibleGrids(f"field shape {u.shape} does not match grid {grid.shape}")
    return float(grid.cell_volume * np.sum(u * v))


def norm(grid: GridSpec, u: np.ndarray) -> float:
    return float(np.sqrt(max(inner(grid, u, u), 0.0)))


def integrate(grid: GridSpec, f: np.ndarray) -> float:
    """Cell-volume-weighted sum over the space-time grid."""
    f = np.asarray(f)
    if f.shape not in (grid.shape, grid.flux_shape):
        raise IncompatibleGrids(f"field shape {f.shape} does not match grid {grid.shape}")
    return float(grid.cell_volume * np.sum(f))


def mass(grid: GridSpec, rho_slice: np.ndarray) -> float:
    """Spatial integral of a space slice."""
    rho_slice = check_slice(grid, rho_slice)
    return float(grid.spatial_volume * np.sum(rho_slice))


def mean_zero(grid: GridSpec, phi: np.ndarray) -> np.ndarray:
    """Remove the mean; the result integrates to zero."""
    phi = check_scalar(grid, phi)
    return phi - phi.mean()
