"""System models and compilation of input/density constraints.

A `SystemModel` supplies the drift f(t, x) and input matrix B(t, x) of the
control-affine dynamics, evaluated vectorized over grid cells. From it the
solvers need the Moore-Penrose inverse of B, an orthonormal completion of
its column space, the lifted matrices used by the direct formulation, and
the per-cell halfspace systems that the momentum projection enforces.

Momentum coordinates per formulation:

* direct   -- mu = (rho, m_u, m_v), m_u = rho u, m_v the auxiliary slots
              for the completed input directions (constrained to zero);
* indirect -- mu = (rho, m), m = rho v with v = f + B u the full velocity;
* dr       -- same variables as indirect, but the halfspaces must be a
              single constant matrix R with a (possibly space-time varying)
              right-hand side gamma.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EmptyFeasibleSet, RankDeficient, UnsupportedForDR
from .grid import GridSpec

_RANK_TOL = 1e-10


@dataclass
class SystemModel:
    """Control-affine dynamics xdot = f(x, t) + B(x, t) u.

    `f(t, xs)` maps a time array and a tuple of coordinate arrays
    (broadcastable against each other) to the stacked drift of shape
    ``(n, ...)``; `B(t, xs)` returns shape ``(n, r, ...)`` or a constant
    ``(n, r)`` matrix. B must have full column rank everywhere.
    """

    n: int
    r: int
    f: Callable
    B: Callable
    B_constant: bool = False
    Bdagf_constant: bool = False
    name: str = "custom"

    def f_grid(self, grid: GridSpec) -> np.ndarray:
        """Drift at every cell, shape (n, nt, *nx)."""
        t, *xs = grid.meshes()
        out = np.asarray(self.f(t, tuple(xs)), dtype=float)
        return np.broadcast_to(out, (self.n,) + grid.shape).copy()

    def B_grid(self, grid: GridSpec) -> np.ndarray:
        """Input matrix at every cell: (n, r) if constant, else (n, r, nt, *nx)."""
        if self.B_constant:
            return np.asarray(self.B(0.0, tuple(np.zeros(self.n))), dtype=float).reshape(
                self.n, self.r
            )
        t, *xs = grid.meshes()
        out = np.asarray(self.B(t, tuple(xs)), dtype=float)
        return np.broadcast_to(out, (self.n, self.r) + grid.shape).copy()


def double_integrator_model() -> SystemModel:
    """x1dot = x2, x2dot = u on the unit square."""

    def f(t, xs):
        x1, x2 = xs
        shp = np.broadcast_shapes(np.shape(t), np.shape(x1), np.shape(x2))
        return np.stack([np.broadcast_to(x2, shp), np.zeros(shp)])

    def B(t, xs):
        return np.array([[0.0], [1.0]])

    # B^+ f = second drift component = 0 identically
    return SystemModel(
        n=2, r=1, f=f, B=B, B_constant=True, Bdagf_constant=True, name="double_integrator"
    )


def single_integrator_model(n: int = 1) -> SystemModel:
    """Fully actuated xdot = u in n dimensions (f = 0, B = I)."""

    def f(t, xs):
        shp = np.broadcast_shapes(np.shape(t), *(np.shape(x) for x in xs))
        return np.zeros((n,) + shp)

    def B(t, xs):
        return np.eye(n)

    return SystemModel(
        n=n, r=n, f=f, B=B, B_constant=True, Bdagf_constant=True, name="single_integrator"
    )


def linear_model(A: np.ndarray, B: np.ndarray) -> SystemModel:
    """xdot = A x + B u with constant matrices."""
    A = np.asarray(A, dtype=float)
    Bm = np.asarray(B, dtype=float)
    n, r = Bm.shape
    if A.shape != (n, n):
        raise ValueError(f"A must be {n}x{n}, got {A.shape}")

    def f(t, xs):
        shp = np.broadcast_shapes(np.shape(t), *(np.shape(x) for x in xs))
        xs_full = [np.broadcast_to(x, shp) for x in xs]
        return np.einsum("ij,j...->i...", A, np.stack(xs_full))

    def Bfun(t, xs):
        return Bm

    # B^+ (A x) is constant only if A = 0
    return SystemModel(
        n=n, r=r, f=f, B=Bfun, B_constant=True,
        Bdagf_constant=bool(np.all(A == 0.0)), name="linear",
    )


def pseudo_inverse(Bmat: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse (B^T B)^{-1} B^T of a full-column-rank matrix."""
    Bmat = np.asarray(Bmat, dtype=float)
    sv = np.linalg.svd(Bmat, compute_uv=False)
    if sv[-1] <= _RANK_TOL * max(sv[0], 1.0):
        raise RankDeficient(f"smallest singular value {sv[-1]:.3e} below tolerance")
    return np.linalg.solve(Bmat.T @ Bmat, Bmat.T)


def complete_basis(Bmat: np.ndarray) -> np.ndarray:
    """Orthonormal completion B2 of range(B); [B B2] is invertible.

    Deterministic: QR factorization of [B I] keeps the identity columns'
    orthogonalized residuals, so B2 columns are orthonormal and orthogonal
    to range(B).
    """
    Bmat = np.asarray(Bmat, dtype=float)
    n, r = Bmat.shape
    sv = np.linalg.svd(Bmat, compute_uv=False) if r > 0 else np.array([1.0])
    if r > 0 and sv[-1] <= _RANK_TOL * max(sv[0], 1.0):
        raise RankDeficient("cannot complete a rank-deficient column space")
    if r == n:
        return np.zeros((n, 0))
    q, _ = np.linalg.qr(np.concatenate([Bmat, np.eye(n)], axis=1))
    B2 = q[:, r:n]
    # fix the sign freedom: largest-magnitude entry of each column positive
    lead = np.take_along_axis(B2, np.abs(B2).argmax(axis=0)[None], axis=0)[0]
    return B2 * np.where(lead < 0, -1.0, 1.0)


def assemble_P(model: SystemModel, t, x) -> np.ndarray:
    """Lifted matrix [[1, f^T], [0, B^T]] of shape (r+1, n+1[, ...])."""
    fv = np.asarray(model.f(t, tuple(x)), dtype=float)
    Bv = np.asarray(model.B(t, tuple(x)), dtype=float)
    tail = np.broadcast_shapes(fv.shape[1:], Bv.shape[2:] if Bv.ndim > 2 else ())
    P = np.zeros((model.r + 1, model.n + 1) + tail)
    P[0, 0] = 1.0
    P[0, 1:] = np.broadcast_to(fv, (model.n,) + tail)
    if Bv.ndim == 2:
        Bv = Bv.reshape((model.n, model.r) + (1,) * len(tail))
    P[1:, 1:] = np.broadcast_to(np.swapaxes(Bv, 0, 1), (model.r, model.n) + tail)
    return P


def assemble_Ptilde(model: SystemModel, t, x, B2: np.ndarray | None = None) -> np.ndarray:
    """Invertible lift [[1, f^T], [0, Btilde^T]] with Btilde = [B B2]."""
    fv = np.asarray(model.f(t, tuple(x)), dtype=float)
    Bv = np.asarray(model.B(t, tuple(x)), dtype=float)
    if Bv.ndim != 2:
        raise UnsupportedForDR("Ptilde assembly needs a constant B; vary-in-space B is "
                               "not supported by the direct formulation here")
    if B2 is None:
        B2 = complete_basis(Bv)
    Btilde = np.concatenate([Bv, B2], axis=1)
    tail = fv.shape[1:]
    P = np.zeros((model.n + 1, model.n + 1) + tail)
    P[0, 0] = 1.0
    P[0, 1:] = fv
    P[1:, 1:] = Btilde.T.reshape((model.n, model.n) + (1,) * len(tail))
    return P


def kf_params(model: SystemModel, t, x) -> tuple[np.ndarray, np.ndarray]:
    """Data (c, Gram) of the drift-shifted paraboloid set.

    The constraint on q = (alpha, beta) reads
        alpha + c . beta + 0.5 beta^T Gram beta <= 0
    with c = B B^+ f and Gram = B B^T; the cross term uses the symmetry of
    B B^+ to trade the pseudo-inverse onto the drift.
    """
    fv = np.asarray(model.f(t, tuple(x)), dtype=float)
    Bv = np.asarray(model.B(t, tuple(x)), dtype=float)
    if Bv.ndim == 2:
        Bd = pseudo_inverse(Bv)
        gram = Bv @ Bv.T
        c = np.einsum("ij,j...->i...", Bv @ Bd, fv)
        return c, gram
    # pointwise-varying B: batched over trailing axes
    tail = Bv.shape[2:]
    gram = np.einsum("ik...,jk...->ij...", Bv, Bv)
    BtB = np.einsum("ki...,kj...->ij...", Bv, Bv)
    flat = np.moveaxis(BtB.reshape(model.r, model.r, -1), -1, 0)
    btf = np.moveaxis(np.einsum("ki...,k...->i...", Bv, fv).reshape(model.r, -1), -1, 0)
    bdagf = np.linalg.solve(flat, btf[..., None])[..., 0]
    bdagf = np.moveaxis(bdagf, 0, -1).reshape((model.r,) + tail)
    c = np.einsum("ik...,k...->i...", Bv, bdagf)
    return c, gram


@dataclass
class ConstraintSpec:
    """Input set and density bounds.

    `halfspaces` lists pairs (a, b) meaning a . u + b <= 0 in input space;
    `box_bounds` is the per-component bound |u_i| <= k_i (either or both may
    be given). `g`/`h` bound the density, broadcastable to a space slice or
    a full scalar field; h may be None (no cap).
    """

    halfspaces: list = field(default_factory=list)
    box_bounds: np.ndarray | None = None
    g: float | np.ndarray = 0.0
    h: float | np.ndarray | None = None

    def u_halfspaces(self, r: int) -> list:
        """All input halfspaces, box bounds expanded into pairs."""
        rows = [(np.asarray(a, dtype=float).reshape(r), float(b)) for a, b in self.halfspaces]
        if self.box_bounds is not None:
            ks = np.broadcast_to(np.asarray(self.box_bounds, dtype=float), (r,))
            for i in range(r):
                e = np.zeros(r)
                e[i] = 1.0
                rows.append((e.copy(), -float(ks[i])))
                rows.append((-e, -float(ks[i])))
        return rows


@dataclass
class CompiledConstraints:
    """Per-cell halfspace system normal . mu <= offset in (rho, m)-space.

    `normals` has shape (k, n+1) or (k, n+1, nt, *nx); `offsets` has shape
    (k,) or (k, nt, *nx); rows are unit-normalized. For the splitting
    formulation `R` is the constant matrix (= normals) and `gamma` the
    stacked right-hand side as a full field.
    """

    normals: np.ndarray
    offsets: np.ndarray
    R: np.ndarray | None = None
    gamma: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.normals.shape[0]


def _density_bound_fields(spec: ConstraintSpec, grid: GridSpec):
    # scalars, space slices, and full fields all broadcast against the grid
    g = np.broadcast_to(np.asarray(spec.g, dtype=float), grid.shape)
    h = None
    if spec.h is not None:
        h = np.broadcast_to(np.asarray(spec.h, dtype=float), grid.shape)
    if np.any(g < -1e-15):
        raise EmptyFeasibleSet("density lower bound must be nonnegative")
    if h is not None and np.any(g > h + 1e-15):
        raise EmptyFeasibleSet("density lower bound exceeds the cap somewhere")
    return g, h


def compile_constraints(
    model: SystemModel,
    spec: ConstraintSpec,
    grid: GridSpec,
    formulation: str,
) -> CompiledConstraints:
    """Translate input and density constraints into per-cell halfspaces.

    Row order: density cap (if any), density lower bound / nonnegativity,
    input rows, and (direct only) the pinned auxiliary-momentum pairs.
    Every row is scaled to unit coefficient norm.
    """
    if formulation not in ("direct", "indirect", "dr"):
        raise ValueError(f"unknown formulation {formulation!r}")
    d = model.n + 1
    g_fld, h_fld = _density_bound_fields(spec, grid)
    u_rows = spec.u_halfspaces(model.r)

    varying = False
    if formulation in ("indirect", "dr") and u_rows:
        varying = not (model.B_constant and model.Bdagf_constant)
        if formulation == "dr" and varying:
            raise UnsupportedForDR(
                "splitting constraints need constant B and constant B^+ f"
            )

    e_rho = np.zeros(d)
    e_rho[0] = 1.0

    normals: list[np.ndarray] = []
    offsets: list[np.ndarray | float] = []

    if h_fld is not None:
        normals.append(e_rho.copy())
        offsets.append(h_fld)
    normals.append(-e_rho)
    offsets.append(-g_fld if np.any(g_fld != 0.0) else 0.0)

    if formulation == "direct":
        # u-halfspaces act on the m_u slots: a . m_u + b rho <= 0
        for a, b in u_rows:
            row = np.zeros(d)
            row[0] = b
            row[1 : 1 + model.r] = a
            normals.append(row)
            offsets.append(0.0)
        # auxiliary input pinned to zero: +/- m_v <= 0
        for j in range(model.n - model.r):
            row = np.zeros(d)
            row[1 + model.r + j] = 1.0
            normals.append(row.copy())
            offsets.append(0.0)
            normals.append(-row)
            offsets.append(0.0)
    elif u_rows:
        # indirect / dr: u = B^+ (m / rho - f), so a . u + b <= 0 becomes
        # (B^+T a) . m + (b - a . B^+ f) rho <= 0
        if not varying:
            Bc = model.B_grid(grid)
            Bd = pseudo_inverse(Bc)
            f0 = model.f_grid(grid)
            bdagf = np.einsum("ij,j...->i...", Bd, f0)
            bdagf0 = bdagf.reshape(model.r, -1)[:, 0]
            for a, b in u_rows:
                row = np.zeros(d)
                row[0] = b - float(a @ bdagf0)
                row[1:] = Bd.T @ a
                normals.append(row)
                offsets.append(0.0)
        else:
            Bfield = model.B_grid(grid)
            ffield = model.f_grid(grid)
            BtB = np.einsum("ik...,il...->kl...", Bfield, Bfield)
            BtB_flat = np.moveaxis(BtB.reshape(model.r, model.r, -1), -1, 0)
            Bt_f = np.einsum("ik...,i...->k...", Bfield, ffield)
            sol = np.linalg.solve(BtB_flat, np.moveaxis(Bt_f.reshape(model.r, -1), -1, 0)[..., None])
            bdagf = np.moveaxis(sol[..., 0], 0, -1).reshape((model.r,) + grid.shape)
            for a, b in u_rows:
                # B^{+T} a = B (B^T B)^{-1} a
                rhs = np.broadcast_to(a[:, None], (model.r, BtB_flat.shape[0]))
                y = np.linalg.solve(BtB_flat, np.moveaxis(rhs, -1, 0)[..., None])[..., 0]
                y = np.moveaxis(y, 0, -1).reshape((model.r,) + grid.shape)
                m_coef = np.einsum("ik...,k...->i...", Bfield, y)
                row = np.zeros((d,) + grid.shape)
                row[0] = b - np.einsum("k,k...->...", a, bdagf)
                row[1:] = m_coef
                normals.append(row)
                offsets.append(0.0)

    per_cell = any(nr.ndim > 1 for nr in normals)
    k = len(normals)
    nsh = len(grid.shape)
    if per_cell:
        N = np.zeros((k, d) + grid.shape)
        for i, nr in enumerate(normals):
            N[i] = nr if nr.ndim > 1 else nr.reshape((d,) + (1,) * nsh)
        scale = np.sqrt(np.sum(N**2, axis=1))  # (k, *shape)
    else:
        N = np.stack(normals)  # (k, d)
        scale = np.linalg.norm(N, axis=1)  # (k,)
    if np.any(scale <= 0):
        raise ValueError("zero halfspace row produced by compilation")
    C = np.zeros((k,) + grid.shape)
    for i, off in enumerate(offsets):
        C[i] = off
    if per_cell:
        N = N / scale[:, None]
        C = C / scale
    else:
        N = N / scale[:, None]
        C = C / scale.reshape((k,) + (1,) * nsh)
    flatC = C.reshape(k, -1)
    offsets_out = flatC[:, 0].copy() if np.all(flatC == flatC[:, :1]) else C

    R = gamma = None
    if formulation == "dr":
        R = N.copy()
        gamma = C.copy()
    return CompiledConstraints(normals=N, offsets=offsets_out, R=R, gamma=gamma)
