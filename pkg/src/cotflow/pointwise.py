"""Per-cell convex subproblems, vectorized over grid cells.

Component axes lead, grid axes trail: a batch of d-vectors is an array of
shape ``(d, ...)``. Every operation is an exact Euclidean projection or
proximal map per cell; scalar roots are solved by safeguarded bisection
(60 halvings) with a Newton polish, to 1e-12 absolute.
"""

from __future__ import annotations

import numpy as np

from .errors import DykstraStall

_EIG_TOL = 1e-12
_BISECT_STEPS = 60


def gram_eig(gram: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a PSD matrix (or per-cell stack, trailing axes).

    Returns (evals, evecs) shaped ``(d[, ...])`` and ``(d, d[, ...])``.
    An exact identity short-circuits to (ones, eye), which keeps code paths
    bitwise identical when a general set degenerates to the canonical one.
    """
    gram = np.asarray(gram, dtype=float)
    d = gram.shape[0]
    if gram.shape == (d, d) and np.array_equal(gram, np.eye(d)):
        return np.ones(d), np.eye(d)
    if gram.ndim == 2:
        evals, evecs = np.linalg.eigh(gram)
        return np.maximum(evals, 0.0), evecs
    tail = gram.shape[2:]
    flat = np.moveaxis(gram.reshape(d, d, -1), -1, 0)
    evals, evecs = np.linalg.eigh(flat)
    evals = np.maximum(np.moveaxis(evals, 0, -1).reshape((d,) + tail), 0.0)
    evecs = np.moveaxis(evecs, 0, -1).reshape((d, d) + tail)
    return evals, evecs


def _rot(evecs, x, transpose):
    if transpose:
        return np.einsum("ji...,j...->i...", evecs, x)
    return np.einsum("ij...,j...->i...", evecs, x)


def _paraboloid_core(alpha, beta, evals, c):
    """Projection onto {alpha + c.beta + 0.5 beta^T diag(e) beta <= 0}.

    Works in the eigenbasis: all inputs broadcast against beta's shape.
    The multiplier solves psi(lam) = h(alpha - lam, beta(lam)) = 0 with
    beta_i(lam) = (beta_i - lam c_i) / (1 + lam e_i); psi is strictly
    decreasing and psi(h(q)) <= 0, so [0, h(q)] brackets the root.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    h = alpha + np.sum(c * beta, axis=0) + 0.5 * np.sum(evals * beta**2, axis=0)
    out_a = alpha.copy()
    out_b = beta.astype(float).copy()
    mask = h > 0.0
    if not np.any(mask):
        return out_a, out_b
    bm = np.broadcast_to(beta, beta.shape)[:, mask]
    em = np.broadcast_to(evals, beta.shape)[:, mask]
    cm = np.broadcast_to(c, beta.shape)[:, mask]
    am = np.broadcast_to(alpha, h.shape)[mask]

    def psi(lam):
        bl = (bm - lam * cm) / (1.0 + lam * em)
        return am - lam + np.sum(cm * bl, axis=0) + 0.5 * np.sum(em * bl**2, axis=0)

    lo = np.zeros(am.shape)
    hi = h[mask].copy()
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        up = psi(mid) > 0.0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    lam = 0.5 * (lo + hi)
    # one Newton step; dbeta/dlam = -(c + e*beta_hat)/(1+lam e)^2
    bl = (bm - lam * cm) / (1.0 + lam * em)
    dpsi = -1.0 - np.sum((cm + em * bl) * (cm + em * bm) / (1.0 + lam * em) ** 2, axis=0)
    lam = np.clip(lam - psi(lam) / dpsi, lo, hi)

    bl = (bm - lam * cm) / (1.0 + lam * em)
    out_b[:, mask] = bl
    # place the result exactly on the boundary
    out_a[mask] = -(np.sum(cm * bl, axis=0) + 0.5 * np.sum(em * bl**2, axis=0))
    return out_a, out_b


def proj_K(a, b):
    """Euclidean projection onto {(a, b) : a + |b|^2 / 2 <= 0}.

    Points inside are returned unchanged; outside points land on the
    boundary paraboloid via the scalar multiplier root of
    (a - lam)(1 + lam)^2 + |b|^2/2 = 0 over lam > 0.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a = np.asarray(a, dtype=float)
    return _paraboloid_core(a, b, np.ones((b.shape[0],) + (1,) * (b.ndim - 1)), np.zeros_like(b))


def proj_Kf(alpha, beta, c, gram):
    """Projection onto the drift-shifted set {alpha + c.beta + 0.5 beta^T Gram beta <= 0}.

    `gram` is a PSD (d, d[, ...]) matrix (stack), `c` broadcastable to beta.
    Directions in the Gram kernel that c does not touch pass through
    unchanged; the rest follows the same scalar-multiplier equation as
    `proj_K`, solved after diagonalizing Gram.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    evals, evecs = gram_eig(np.asarray(gram, dtype=float))
    d = beta.shape[0]
    ev = evals.reshape((d,) + (1,) * (beta.ndim - 1)) if evals.ndim == 1 else evals
    cv = np.broadcast_to(np.asarray(c, dtype=float).reshape(
        (d,) + (1,) * (beta.ndim - 1)) if np.asarray(c).ndim == 1 else np.asarray(c, dtype=float),
        beta.shape)
    b_eig = _rot(evecs, beta, transpose=True)
    c_eig = _rot(evecs, cv, transpose=True)
    a_out, b_out = _paraboloid_core(alpha, b_eig, ev, c_eig)
    return a_out, _rot(evecs, b_out, transpose=False)


def _first_sign_change_root(gfun, hi, n_scan=256):
    """Smallest positive root of gfun on (0, hi] by scan + bisection.

    `hi` is a per-cell array with gfun(hi) > 0. Returns (root, found_mask);
    cells without a sign change report found=False.
    """
    m = hi.shape
    lo_edge = np.full(m, 1e-14) * np.maximum(hi, 1.0)
    # geometric scan catches roots near zero as well as O(hi) ones
    ratios = np.geomspace(1e-12, 1.0, n_scan)
    roots = np.zeros(m)
    found = np.zeros(m, dtype=bool)
    prev_x = lo_edge
    prev_g = gfun(prev_x)
    lo = np.zeros(m)
    hi_b = np.zeros(m)
    for rrat in ratios:
        x = rrat * hi
        gx = gfun(x)
        flip = (~found) & (np.sign(gx) * np.sign(prev_g) <= 0) & (np.sign(prev_g) != 0)
        lo = np.where(flip, prev_x, lo)
        hi_b = np.where(flip, x, hi_b)
        found |= flip
        prev_x, prev_g = x, gx
    if np.any(found):
        glo = gfun(lo)
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi_b)
            gm = gfun(mid)
            same = np.sign(gm) == np.sign(glo)
            lo = np.where(found & same, mid, lo)
            glo = np.where(found & same, gm, glo)
            hi_b = np.where(found & same, hi_b, mid)
        roots = np.where(found, 0.5 * (lo + hi_b), 0.0)
    return roots, found


def _kinetic_core(rho_hat, s, evals, half_fwf, literal=False):
    """Scalar stationarity solve for the kinetic prox in the eigenbasis.

    s = Vt(m_hat) + e * Vt(f); returns (rho, m_eig). `literal` switches the
    denominator of the density equation from the unknown rho^2 to the
    anchor rho_hat^2 (for comparison runs; not the exact prox).
    """
    rho_hat = np.asarray(rho_hat, dtype=float)
    shape = rho_hat.shape
    e = np.broadcast_to(evals, s.shape)
    null = e <= _EIG_TOL

    # limit of the stationarity function at rho -> 0+ (kernel slots drop out)
    tail0 = np.where(null, 0.0, s**2) / np.where(null, 1.0, 2.0 * e)
    glim0 = -rho_hat + np.broadcast_to(half_fwf, shape) - np.sum(tail0, axis=0)

    rho_out = np.zeros(shape)
    m_eig = np.where(null, s, 0.0)  # boundary case keeps kernel momentum

    active = (rho_hat > 1e-12) if literal else (glim0 < 0.0)
    if not np.any(active):
        return rho_out, m_eig

    rho_hat_m = rho_hat[active]
    s_m = s[:, active]
    e_m = e[:, active]
    half_m = np.broadcast_to(half_fwf, shape)[active]
    # zero-eigenvalue slots contribute nothing; substitute a safe denominator
    es2 = np.where(e_m > _EIG_TOL, e_m * s_m**2, 0.0)
    e_safe = np.where(e_m > _EIG_TOL, e_m, 1.0)

    if not literal:

        def g(rho):
            return rho - rho_hat_m + half_m - np.sum(es2 / (2.0 * (rho + e_safe) ** 2), axis=0)

        hi = np.maximum(rho_hat_m, 1.0)
        for _ in range(200):
            bad = g(hi) <= 0.0
            if not np.any(bad):
                break
            hi = np.where(bad, 2.0 * hi, hi)
        lo = np.zeros_like(hi)
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            neg = g(mid) < 0.0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        rho = 0.5 * (lo + hi)
        dg = 1.0 + np.sum(es2 / (rho + e_safe) ** 3, axis=0)
        rho = np.clip(rho - g(rho) / dg, lo, hi)
        found = np.ones_like(rho, dtype=bool)
    else:

        def g(rho):
            return rho - rho_hat_m + half_m - np.sum(
                es2 * rho**2 / (2.0 * rho_hat_m**2 * (rho + e_safe) ** 2), axis=0
            )

        hi = np.maximum(rho_hat_m, 1.0)
        for _ in range(200):
            bad = g(hi) <= 0.0
            if not np.any(bad):
                break
            hi = np.where(bad, 2.0 * hi, hi)
        rho, found = _first_sign_change_root(g, hi)

    mm = rho[None] * s_m / (rho[None] + e_safe)
    mm = np.where(e_m <= _EIG_TOL, s_m, mm)  # kernel slots pass through
    mm = np.where(found[None], mm, np.where(e_m <= _EIG_TOL, s_m, 0.0))
    rho = np.where(found, rho, 0.0)

    rho_out[active] = rho
    m_full = m_eig.copy()
    m_full[:, active] = mm
    return rho_out, m_full


def prox_M_point(rho_hat, m_hat, Bdag, fvec, literal=False):
    """Proximal map of the kinetic transport cost at one point (or a batch).

    Minimizes 0.5 |mu - mu_hat|^2 + M(mu) with
    M(rho, m) = |B+ m|^2 / (2 rho) + (rho / 2)|B+ f|^2 - (B+ m).(B+ f)
    for rho > 0, closed at rho = 0 by keeping only momentum in the kernel
    of B+ (zero kinetic energy) and charging +inf otherwise. The momentum
    stationarity m(rho) = (I + W/rho)^{-1} (m_hat + W f), W = B+^T B+,
    reduces the problem to a scalar strictly-increasing root.

    With ``literal=True`` the density equation keeps the anchor density
    squared in its denominator (comparison mode; smallest positive root).
    """
    m_hat = np.atleast_1d(np.asarray(m_hat, dtype=float))
    Bdag = np.asarray(Bdag, dtype=float)
    W = Bdag.T @ Bdag
    evals, evecs = gram_eig(W)
    d = m_hat.shape[0]
    tail_ndim = m_hat.ndim - 1
    ev = evals.reshape((d,) + (1,) * tail_ndim)
    fv = np.asarray(fvec, dtype=float)
    if fv.ndim == 1:
        fv = fv.reshape((d,) + (1,) * tail_ndim)
    f_eig = _rot(evecs, np.broadcast_to(fv, m_hat.shape), transpose=True)
    m_eig = _rot(evecs, m_hat, transpose=True)
    s = m_eig + ev * f_eig
    half_fwf = 0.5 * np.sum(ev * f_eig**2, axis=0)
    rho, m_out_eig = _kinetic_core(np.asarray(rho_hat, dtype=float), s, ev, half_fwf,
                                   literal=literal)
    return rho, _rot(evecs, m_out_eig, transpose=False)


def project_polyhedron(z, normals, offsets, max_sweeps=200, move_tol=1e-12, stall_tol=1e-8):
    """Projection onto an intersection of halfspaces by cyclic Dykstra sweeps.

    `z` is (d, ...); `normals` is (k, d) shared across cells or (k, d, ...)
    per cell with unit rows; `offsets` is (k,) or (k, ...). Sweeps stop
    early once the iterate moves less than `move_tol` (relative to the
    input scale); if it still moves more than `stall_tol` at the sweep cap
    the constraint compilation is ill-conditioned and `DykstraStall` is
    raised.
    """
    z = np.asarray(z, dtype=float)
    normals = np.asarray(normals, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    k = normals.shape[0]
    x = z.copy()
    y = np.zeros((k,) + z.shape)
    scale = 1.0 + float(np.max(np.abs(z))) if z.size else 1.0
    shared = normals.ndim == 2

    move = 0.0
    for _ in range(max_sweeps):
        x_prev = x.copy()
        for i in range(k):
            v = x + y[i]
            ni = normals[i]
            if shared:
                viol = np.einsum("d,d...->...", ni, v)
            else:
                viol = np.einsum("d...,d...->...", ni, v)
            step = np.maximum(viol - offsets[i], 0.0)
            if shared:
                x = v - step * ni.reshape((-1,) + (1,) * (z.ndim - 1))
            else:
                x = v - step * ni
            y[i] = v - x
        move = float(np.max(np.abs(x - x_prev))) if x.size else 0.0
        if move <= move_tol * scale:
            break
    else:
        if move > stall_tol * scale:
            raise DykstraStall(
                f"cyclic projection still moving {move:.2e} after {max_sweeps} sweeps"
            )
    return x


def clamp_cap(xi, gamma):
    """Componentwise cap: the proximal map of the indicator of {xi <= gamma}."""
    return np.minimum(np.asarray(xi, dtype=float), gamma)
