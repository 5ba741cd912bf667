"""Brute-force references for testing the pointwise and projection operators.

Nothing here is used by the solvers; dense factorizations and grid searches
are test-only machinery. The search oracles recompute every objective from
its definition rather than calling the production implementations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryHit
from .grid import GridSpec, divergence

_FEAS_EPS = 1e-12


@dataclass
class OracleSpec:
    """Search box controls for `brute_prox`."""

    resolution: int = 21
    rounds: int = 9
    radius: float | None = None
    max_expand: int = 12


def _grid_search(objective, center, radius, spec, lower_bounds=None):
    """Refine a box search around the best feasible point.

    `objective(pts)` maps a (D, P) stack of points to values (+inf marks
    infeasible). The box re-centers and shrinks around the incumbent each
    round; it expands instead when the incumbent sits on a box face that is
    not clamped by `lower_bounds`. Raises BoundaryHit after too many
    expansions.
    """
    center = np.asarray(center, dtype=float).copy()
    radius = np.asarray(radius, dtype=float).copy()
    D = center.size
    expansions = 0
    rounds_done = 0
    best = None
    while rounds_done < spec.rounds:
        los = center - radius
        his = center + radius
        if lower_bounds is not None:
            los = np.maximum(los, lower_bounds)
        axes = [np.linspace(lo, hi, spec.resolution) for lo, hi in zip(los, his)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh])
        vals = objective(pts)
        idx = int(np.argmin(vals))
        if not np.isfinite(vals[idx]):
            # nothing feasible in the box: widen
            expansions += 1
            if expansions > spec.max_expand:
                raise BoundaryHit("no feasible point found after repeated expansion")
            radius *= 2.0
            continue
        best = pts[:, idx]
        multi = np.unravel_index(idx, (spec.resolution,) * D)
        on_face = np.zeros(D, dtype=bool)
        for d in range(D):
            lo_clamped = lower_bounds is not None and los[d] <= lower_bounds[d] + 1e-300
            at_lo = multi[d] == 0 and not lo_clamped
            at_hi = multi[d] == spec.resolution - 1
            on_face[d] = at_lo or at_hi
        if np.any(on_face):
            expansions += 1
            if expansions > spec.max_expand:
                raise BoundaryHit(f"minimizer pinned to the search box after {expansions} expansions")
            radius = np.where(on_face, radius * 2.0, radius)
            center = best
            continue
        center = best
        cell = 2.0 * radius / (spec.resolution - 1)
        radius = 2.0 * cell
        rounds_done += 1
    return best


def brute_prox(tag, anchor, params=None, spec=None):
    """Grid-search solution of one pointwise subproblem.

    tag: 'K-dist' | 'Kf-dist' | 'M' | 'polyhedron-dist'. `anchor` is the
    point being projected / proximal-mapped: (a, b) pairs for the
    paraboloid sets, (rho, m) for the kinetic prox, a bare vector for the
    halfspace projection. `params` carries per-tag data (c, Gram, Bdag, f,
    normals, offsets).
    """
    spec = spec or OracleSpec()
    params = params or {}

    if tag in ("K-dist", "Kf-dist"):
        a0, b0 = anchor
        b0 = np.atleast_1d(np.asarray(b0, dtype=float))
        a0 = float(a0)
        if tag == "K-dist":
            c = np.zeros(b0.size)
            gram = np.eye(b0.size)
        else:
            c = np.asarray(params["c"], dtype=float)
            gram = np.asarray(params["Gram"], dtype=float)
        if a0 + c @ b0 + 0.5 * b0 @ gram @ b0 <= _FEAS_EPS:
            return a0, b0.copy()

        # the projection of an outside point sits on the boundary surface
        # alpha = -(c.beta + beta^T Gram beta / 2); search over beta only,
        # where the squared distance is smooth and cell-accurate
        def objective(betas):
            aval = -(c @ betas + 0.5 * np.sum(betas * (gram @ betas), axis=0))
            return (aval - a0) ** 2 + np.sum((betas - b0[:, None]) ** 2, axis=0)

        r0 = spec.radius or (2.0 + 2.0 * np.hypot(a0, np.linalg.norm(b0)))
        best = _grid_search(objective, b0, np.full(b0.size, r0), spec)
        return float(-(c @ best + 0.5 * best @ gram @ best)), best

    if tag == "M":
        rho0, m0 = anchor
        m0 = np.atleast_1d(np.asarray(m0, dtype=float))
        Bdag = np.asarray(params["Bdag"], dtype=float)
        fvec = np.asarray(params["f"], dtype=float)
        mu0 = np.concatenate([[float(rho0)], m0])
        bf = Bdag @ fvec

        def objective(pts):
            rho, m = pts[0], pts[1:]
            bm = Bdag @ m
            with np.errstate(divide="ignore", invalid="ignore"):
                kin = np.sum(bm**2, axis=0) / (2.0 * rho)
            Mval = kin + 0.5 * rho * (bf @ bf) - bm.T @ bf
            zero_pt = (rho <= 0) & (np.max(np.abs(pts), axis=0) <= 0)
            Mval = np.where(zero_pt, 0.0, np.where(rho > 0, Mval, np.inf))
            return 0.5 * np.sum((pts - mu0[:, None]) ** 2, axis=0) + Mval

        r0 = spec.radius or (2.0 + 2.0 * np.linalg.norm(mu0))
        lower = np.full(mu0.size, -np.inf)
        lower[0] = 0.0
        best = _grid_search(objective, np.maximum(mu0, lower), np.full(mu0.size, r0), spec,
                            lower_bounds=lower)
        # the prox objective is continuous up to the domain edge; snap
        # a vanishing density onto the closure point
        if best[0] <= 2.0 * r0 * 0.2**spec.rounds:
            cand = np.concatenate([[0.0], best[1:]])
            if objective(best[:, None])[0] >= objective_closure(cand, mu0, Bdag, bf):
                best = cand
        return best[0], best[1:]

    if tag == "polyhedron-dist":
        # box search staircases on constraint faces; exhaustive active-set
        # enumeration is exact for the small row counts used here
        return qp_projection_exact(
            np.asarray(anchor, dtype=float),
            np.asarray(params["normals"], dtype=float),
            np.asarray(params["offsets"], dtype=float),
        )

    raise ValueError(f"unknown oracle tag {tag!r}")


def objective_closure(mu, mu0, Bdag, bf):
    """Prox objective at a boundary point, using the kernel-momentum closure."""
    rho, m = mu[0], mu[1:]
    bm = Bdag @ m
    if rho > 0:
        Mval = bm @ bm / (2 * rho) + 0.5 * rho * (bf @ bf) - bm @ bf
    else:
        Mval = 0.0 if np.linalg.norm(bm) <= 1e-9 else np.inf
    return 0.5 * np.sum((mu - mu0) ** 2) + Mval


def brute_literal_kinetic(rho_hat, m_hat, Bdag, fvec, n_scan=4096):
    """Independent smallest-positive-root solve of the literal density update.

    Eliminates the momentum with per-sample dense solves and scans the
    density equation on a fine geometric ladder before bisecting the first
    sign change. Used to validate the comparison ('literal') mode of the
    kinetic prox.
    """
    m_hat = np.atleast_1d(np.asarray(m_hat, dtype=float))
    Bdag = np.asarray(Bdag, dtype=float)
    W = Bdag.T @ Bdag
    d = m_hat.size
    rhs = m_hat + W @ np.asarray(fvec, dtype=float)
    bf = Bdag @ np.asarray(fvec, dtype=float)
    evals, evecs = np.linalg.eigh(W)
    null = evals <= 1e-12
    m_null = evecs @ (np.where(null, evecs.T @ m_hat, 0.0))
    if rho_hat <= 1e-12:
        return 0.0, m_null

    def m_of(rho):
        # (I + W / rho) m = m_hat + W f, batched over samples
        mats = np.eye(d)[None] + W[None] / rho[:, None, None]
        b = np.broadcast_to(rhs, (rho.size, d))[..., None]
        return np.linalg.solve(mats, b)[..., 0]

    def g(rho):
        m = m_of(rho)
        bm2 = np.einsum("si,ij,sj->s", m, W, m)
        return rho - rho_hat - bm2 / (2.0 * rho_hat**2) + 0.5 * bf @ bf

    hi = max(rho_hat, 1.0)
    for _ in range(200):
        if g(np.array([hi]))[0] > 0:
            break
        hi *= 2.0
    grid_pts = np.geomspace(1e-12 * hi, hi, n_scan)
    gv = g(grid_pts)
    sign = np.sign(gv)
    flips = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
    if flips.size == 0:
        return 0.0, m_null
    lo, hi_b = grid_pts[flips[0]], grid_pts[flips[0] + 1]
    glo = g(np.array([lo]))[0]
    for _ in range(80):
        mid = 0.5 * (lo + hi_b)
        gm = g(np.array([mid]))[0]
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi_b = mid
    rho = 0.5 * (lo + hi_b)
    return rho, m_of(np.array([rho]))[0]


def qp_projection_exact(z, normals, offsets):
    """Exact projection onto a small halfspace intersection by active-set
    enumeration (test-only; exponential in the row count)."""
    from itertools import combinations

    z = np.asarray(z, dtype=float)
    normals = np.asarray(normals, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    k = normals.shape[0]
    if np.all(normals @ z <= offsets + 1e-14):
        return z.copy()
    best, best_d = None, np.inf
    for size in range(1, k + 1):
        for rows in combinations(range(k), size):
            A = normals[list(rows)]
            b = offsets[list(rows)]
            # KKT of min |x - z|^2 s.t. A x = b: x = z - A^T lam
            try:
                lam = np.linalg.solve(A @ A.T, A @ z - b)
            except np.linalg.LinAlgError:
                continue
            if np.any(lam < -1e-12):
                continue
            x = z - A.T @ lam
            if np.all(normals @ x <= offsets + 1e-9):
                dist = float(np.sum((x - z) ** 2))
                if dist < best_d - 1e-15:
                    best, best_d = x, dist
    if best is None:
        raise RuntimeError("active-set enumeration found no KKT point")
    return best


class DenseSubspaceProjector:
    """Exact weighted projection onto {A mu = eta, R mu = xi} via a dense
    factorization (ground truth for the splitting solver).

    Unknowns stack as (mu, eta0, eta1, eta2, xi); each constraint row
    carries its own slack, so the constraint matrix has full row rank and
    the normal system C W^-1 C^T is positive definite. The factorization is
    built once and reused across projections.
    """

    def __init__(self, grid: GridSpec, R):
        import scipy.linalg

        n1 = grid.n + 1
        N = grid.num_cells
        S = int(np.prod(grid.nx))
        R = np.asarray(R, dtype=float)
        k = R.shape[0]
        sizes = [n1 * N, N, S, S, k * N]
        total = sum(sizes)
        if total > 20000:
            raise ValueError(f"dense oracle limited to small grids, got {total} unknowns")
        offs = np.cumsum([0] + sizes)

        D = np.zeros((N, n1 * N))
        eye = np.eye(n1 * N)
        for j in range(n1 * N):
            D[:, j] = divergence(grid, eye[j].reshape(grid.flux_shape)).ravel()

        sel0 = np.zeros((S, n1 * N))
        selT = np.zeros((S, n1 * N))
        rho_block = np.arange(N).reshape(grid.shape)
        sel0[np.arange(S), rho_block[0].ravel()] = 1.0
        selT[np.arange(S), rho_block[-1].ravel()] = 1.0

        Rbig = np.zeros((k * N, n1 * N))
        for i in range(k):
            for c in range(n1):
                Rbig[i * N : (i + 1) * N, c * N : (c + 1) * N] = R[i, c] * np.eye(N)

        m_rows = N + 2 * S + k * N
        C = np.zeros((m_rows, total))
        C[:N, offs[0] : offs[1]] = D
        C[:N, offs[1] : offs[2]] = -np.eye(N)
        C[N : N + S, offs[0] : offs[1]] = sel0
        C[N : N + S, offs[2] : offs[3]] = -np.eye(S)
        C[N + S : N + 2 * S, offs[0] : offs[1]] = selT
        C[N + S : N + 2 * S, offs[3] : offs[4]] = -np.eye(S)
        C[N + 2 * S :, offs[0] : offs[1]] = Rbig
        C[N + 2 * S :, offs[4] :] = -np.eye(k * N)

        w = grid.cell_volume
        wx = grid.spatial_volume
        Wdiag = np.concatenate(
            [np.full(n1 * N, w), np.full(N, w), np.full(S, wx), np.full(S, wx), np.full(k * N, w)]
        )
        self._grid = grid
        self._k = k
        self._offs = offs
        self._C = C
        self._CWinv = C / Wdiag
        self._chol = scipy.linalg.cho_factor(self._CWinv @ C.T)

    def project(self, mu, eta0, eta1, eta2, xi):
        import scipy.linalg

        grid, offs, k = self._grid, self._offs, self._k
        x0 = np.concatenate(
            [np.asarray(a, dtype=float).ravel() for a in (mu, eta0, eta1, eta2, xi)]
        )
        lam = scipy.linalg.cho_solve(self._chol, self._C @ x0)
        sol = x0 - self._CWinv.T @ lam
        return (
            sol[offs[0] : offs[1]].reshape(grid.flux_shape),
            sol[offs[1] : offs[2]].reshape(grid.shape),
            sol[offs[2] : offs[3]].reshape(grid.nx),
            sol[offs[3] : offs[4]].reshape(grid.nx),
            sol[offs[4] :].reshape((k,) + grid.shape),
        )


def dense_prox_N(grid: GridSpec, R, mu, eta0, eta1, eta2, xi):
    """One-shot wrapper around `DenseSubspaceProjector`."""
    return DenseSubspaceProjector(grid, R).project(mu, eta0, eta1, eta2, xi)


def adjoint_check(apply, apply_adj, dim_in, dim_out, trials=20, rng=None,
                  weight_in=None, weight_out=None):
    """Max relative defect |<A x, y> - <x, At y>| / (|x| |y|) on random pairs."""
    rng = rng or np.random.default_rng(0)
    w_in = np.ones(dim_in) if weight_in is None else np.asarray(weight_in, dtype=float)
    w_out = np.ones(dim_out) if weight_out is None else np.asarray(weight_out, dtype=float)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(dim_in)
        y = rng.standard_normal(dim_out)
        lhs = float(np.sum(w_out * apply(x) * y))
        rhs = float(np.sum(w_in * x * apply_adj(y)))
        nx = np.sqrt(np.sum(w_in * x * x))
        ny = np.sqrt(np.sum(w_out * y * y))
        worst = max(worst, abs(lhs - rhs) / (nx * ny + 1e-300))
    return worst
