"""Vectorized Monte Carlo kernels.

Every function is batched over the leading draw axis: ``xbar`` has shape
``(D, n, 3)`` holding measured homogeneous image-plane points (third
component 1), ``T`` is ``(n, 3, 3)`` of localization->camera attitudes and
``p`` is ``(n, 3)`` of anchors.  Solvers use batched normal equations (the
stacks are 3 unknowns wide; conditioning is benign for the scenario
geometries these kernels serve).
"""

from __future__ import annotations

import numpy as np


def _batch_skew(v):
    """(..., 3) -> (..., 3, 3) cross-product matrices."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def _solve_normal(A, b):
    """Batched solve of small SPD systems with a stacked vector rhs."""
    return np.linalg.solve(A, b[..., None])[..., 0]


def batch_dlt(xbar, T, p, unit_norm: bool = False):
    """Cross-product linear triangulation for every draw. Returns (D, 3)."""
    xbar = np.asarray(xbar, dtype=float)
    ell = xbar
    if unit_norm:
        ell = xbar / np.linalg.norm(xbar, axis=-1, keepdims=True)
    H = _batch_skew(ell) @ T  # (D, n, 3, 3)
    y = np.einsum("dnij,nj->dni", H, p)  # (D, n, 3)
    A = np.einsum("dnki,dnkj->dij", H, H)
    b = np.einsum("dnki,dnk->di", H, y)
    return _solve_normal(A, b)


def _ell_localization(xbar, T):
    """Unnormalized measured LOS in the localization frame, (D, n, 3)."""
    return np.einsum("nji,dnj->dni", T, xbar)


def batch_lost(xbar, T, p, sigma_x):
    """Optimally weighted linear triangulation for every draw.

    Row weights ``q_i = 1 / (sigma_x_i * gamma_i)`` with the range factor
    from the cyclic companion measurement, recomputed per draw from the
    noisy directions exactly like the scalar solver.
    """
    xbar = np.asarray(xbar, dtype=float)
    D, n, _ = xbar.shape
    ell = _ell_localization(xbar, T)  # (D, n, 3)
    nxt = (np.arange(n) + 1) % n
    d = p[nxt] - p  # (n, 3)
    num = np.linalg.norm(np.cross(np.broadcast_to(d, ell.shape), ell[:, nxt]), axis=-1)
    den = np.linalg.norm(np.cross(ell, ell[:, nxt]), axis=-1)
    gamma = num / den  # (D, n)
    q = 1.0 / (sigma_x[None, :] * gamma)  # (D, n)

    M = (_batch_skew(xbar) @ T)[:, :, :2, :]  # (D, n, 2, 3)
    y = np.einsum("dnij,nj->dni", M, p)  # (D, n, 2)
    q2 = q * q
    A = np.einsum("dn,dnki,dnkj->dij", q2, M, M)
    b = np.einsum("dn,dnki,dnk->di", q2, M, y)
    return _solve_normal(A, b)


def batch_range2(xbar, T, p):
    """Two-observation explicit-range triangulation for every draw."""
    xbar = np.asarray(xbar, dtype=float)
    ell = _ell_localization(xbar, T)
    a = ell / np.linalg.norm(ell, axis=-1, keepdims=True)  # (D, 2, 3)
    a1, a2 = a[:, 0], a[:, 1]
    d = p[1] - p[0]
    c = np.einsum("di,di->d", a1, a2)
    h1 = a1 @ d
    h2 = a2 @ d
    det = c * c - 1.0
    rho1 = (h1 - c * h2) / det
    rho2 = (c * h1 - h2) / det
    r1 = p[0] - rho1[:, None] * a1
    r2 = p[1] - rho2[:, None] * a2
    return 0.5 * (r1 + r2)


def batch_quat(xbar, T, p, w):
    """Shared-attitude optimal two-point correction for every draw.

    ``T`` is the single shared attitude (3, 3); returns the triangulated
    positions (D, 3) from the corrected pair.
    """
    xbar = np.asarray(xbar, dtype=float)
    D = xbar.shape[0]
    w1, w2 = float(w[0]), float(w[1])
    dd, ee, ff = T @ (p[1] - p[0])

    xt1, yt1 = xbar[:, 0, 0], xbar[:, 0, 1]
    xt2, yt2 = xbar[:, 1, 0], xbar[:, 1, 1]

    resid = ff * (xt2 * yt1 - xt1 * yt2) + ee * (xt1 - xt2) + dd * (yt2 - yt1)
    h2 = ff * ff * w1 * w2 * resid
    h1 = -2.0 * w1 * w2 * (
        ff * ff * (w1 * xt1**2 + w1 * yt1**2 + w2 * xt2**2 + w2 * yt2**2)
        - 2.0 * ff * (dd * w1 * xt1 + dd * w2 * xt2 + ee * w1 * yt1 + ee * w2 * yt2)
        + (dd * dd + ee * ee) * (w1 + w2)
    )
    h0 = 4.0 * (w1 * w2) ** 2 * resid

    def corrected(lam):
        Dq = ff * ff * lam * lam - 4.0 * w1 * w2
        cx1 = (dd * ff * lam * lam + 2.0 * w2 * (ee - ff * yt2) * lam - 4 * w1 * w2 * xt1) / Dq
        cy1 = (ee * ff * lam * lam + 2.0 * w2 * (ff * xt2 - dd) * lam - 4 * w1 * w2 * yt1) / Dq
        cx2 = (dd * ff * lam * lam + 2.0 * w1 * (ff * yt1 - ee) * lam - 4 * w1 * w2 * xt2) / Dq
        cy2 = (ee * ff * lam * lam + 2.0 * w1 * (dd - ff * xt1) * lam - 4 * w1 * w2 * yt2) / Dq
        return cx1, cy1, cx2, cy2

    small = np.abs(h2) < 1e-9 * np.maximum(np.maximum(np.abs(h1), np.abs(h0)), 1.0)
    if ff == 0.0:
        lam = -h0 / h1
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(np.maximum(h1 * h1 - 4.0 * h2 * h0, 0.0))
            qq = -0.5 * (h1 + np.copysign(disc, h1))
            lamA = np.where(small, -h0 / h1, qq / h2)
            lamB = np.where((np.abs(qq) > 0) & ~small, h0 / np.where(qq == 0, 1.0, qq), lamA)

        def cost(lam):
            cx1, cy1, cx2, cy2 = corrected(lam)
            return w1 * ((cx1 - xt1) ** 2 + (cy1 - yt1) ** 2) + w2 * (
                (cx2 - xt2) ** 2 + (cy2 - yt2) ** 2
            )

        lam = np.where(cost(lamA) <= cost(lamB), lamA, lamB)

    cx1, cy1, cx2, cy2 = corrected(lam)
    corr = np.stack(
        [
            np.stack([cx1, cy1, np.ones(D)], axis=-1),
            np.stack([cx2, cy2, np.ones(D)], axis=-1),
        ],
        axis=1,
    )
    return batch_dlt(corr, np.stack([T, T]), p)


def _reduce_mapping(x_meas, e):
    """Per-draw reduction transform around one image's measured points.

    ``x_meas``: (D, 3) measured homogeneous points; ``e``: (3,) epipole.
    Returns (Minv (D,3,3), f (D,), cth, sth).
    """
    D = x_meas.shape[0]
    wx = e[0] - e[2] * x_meas[:, 0]
    wy = e[1] - e[2] * x_meas[:, 1]
    nw = np.hypot(wx, wy)
    cth = wx / nw
    sth = -wy / nw
    f = e[2] / nw
    Minv = np.zeros((D, 3, 3))
    Minv[:, 0, 0] = cth
    Minv[:, 0, 1] = sth
    Minv[:, 0, 2] = x_meas[:, 0]
    Minv[:, 1, 0] = -sth
    Minv[:, 1, 1] = cth
    Minv[:, 1, 2] = x_meas[:, 1]
    Minv[:, 2, 2] = 1.0
    return Minv, f, cth, sth


def _real_roots_ascending(g, rel_tol=1e-14):
    """Real roots of each row of ascending-coefficient polynomials.

    Returns (D, 6) with NaN padding.  Rows are grouped by effective degree
    (relative to each row's largest coefficient) so rows with vanishing
    leading coefficients are solved at their true degree.
    """
    D = g.shape[0]
    t = np.full((D, 6), np.nan)
    scale = np.max(np.abs(g), axis=1)
    live = np.abs(g) > rel_tol * np.where(scale > 0, scale, 1.0)[:, None]
    deg = np.where(live.any(axis=1), 6 - np.argmax(live[:, ::-1], axis=1), 0)
    for k in range(1, 7):
        sel = deg == k
        if not np.any(sel):
            continue
        comp = np.zeros((int(sel.sum()), k, k))
        if k > 1:
            comp[:, 1:, : k - 1] = np.eye(k - 1)
        comp[:, :, k - 1] = -g[sel, :k] / g[sel, k][:, None]
        eig = np.linalg.eigvals(comp)
        is_real = np.abs(eig.imag) <= 1e-8 * (1.0 + np.abs(eig.real))
        t[sel, :k] = np.where(is_real, eig.real, np.nan)
    return t


def batch_hs(xbar, T1, T2, p1, p2, w):
    """Two-view optimal polynomial triangulation for every draw.

    ``xbar``: (D, 2, 3); attitudes/anchors per camera; ``w``: weights (2,).
    Returns (D, 3) triangulated positions from the corrected pairs.
    """
    xbar = np.asarray(xbar, dtype=float)
    D = xbar.shape[0]
    w1, w2 = float(w[0]), float(w[1])
    baseline = p2 - p1
    E = T2 @ _batch_skew(baseline) @ T1.T
    e1 = T1 @ baseline
    e2 = -(T2 @ baseline)

    M1inv, f1, _, _ = _reduce_mapping(xbar[:, 0], e1)
    M2inv, f2, _, _ = _reduce_mapping(xbar[:, 1], e2)

    Ep = np.transpose(M2inv, (0, 2, 1)) @ E @ M1inv
    a, b = Ep[:, 1, 1], Ep[:, 1, 2]
    c, d = Ep[:, 2, 1], Ep[:, 2, 2]

    # Degree-6 derivative polynomial (ascending coefficients)
    f2sq = f2 * f2
    q0 = b * b + f2sq * d * d
    q1 = 2.0 * (a * b + f2sq * c * d)
    q2 = a * a + f2sq * c * c
    s0, s1, s2 = q0 * q0, 2 * q0 * q1, q1 * q1 + 2 * q0 * q2
    s3, s4 = 2 * q1 * q2, q2 * q2
    f1sq = f1 * f1
    u0, u2, u4 = np.ones(D), 2.0 * f1sq, f1sq * f1sq
    v0, v1, v2 = b * d, a * d + b * c, a * c
    k = w2 * (a * d - b * c)
    g = np.zeros((D, 7))
    g[:, 0] = -k * (u0 * v0)
    g[:, 1] = w1 * s0 - k * (u0 * v1)
    g[:, 2] = w1 * s1 - k * (u0 * v2 + u2 * v0)
    g[:, 3] = w1 * s2 - k * (u2 * v1)
    g[:, 4] = w1 * s3 - k * (u2 * v2 + u4 * v0)
    g[:, 5] = w1 * s4 - k * (u4 * v1)
    g[:, 6] = -k * (u4 * v2)

    # Batched companion-matrix eigenvalues, grouped by effective degree:
    # degenerate geometry (e.g. exactly constraint-satisfying measurements)
    # zeroes the leading coefficients, and solving the reduced polynomial
    # keeps those draws exact.  Trimming a tiny leading coefficient only
    # drops a root running off to infinity, whose cost the asymptote
    # candidate below already covers.
    t = _real_roots_ascending(g)

    order = np.argsort(np.abs(t), axis=1)  # NaNs sort last; ties favor small |t|
    t = np.take_along_axis(t, order, axis=1)

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        term1 = w1 * t * t / (1.0 + f1sq[:, None] * t * t)
        ct_d = c[:, None] * t + d[:, None]
        at_b = a[:, None] * t + b[:, None]
        den = at_b * at_b + f2sq[:, None] * ct_d * ct_d
        cost = term1 + w2 * ct_d * ct_d / den
        cost = np.where(np.isfinite(cost), cost, np.inf)
        asym = w1 / f1sq + w2 * c * c / (a * a + f2sq * c * c)
        asym = np.where(np.isfinite(asym), asym, np.inf)

    all_cost = np.column_stack([cost, asym])
    choice = np.argmin(all_cost, axis=1)
    use_asym = choice == 6
    t_best = np.take_along_axis(t, np.minimum(choice, 5)[:, None], axis=1)[:, 0]

    # Corrected points in reduced coordinates
    tb = t_best
    x1p = np.stack([f1 * tb * tb, tb, f1sq * tb * tb + 1.0], axis=-1)
    ctd = c * tb + d
    atb = a * tb + b
    x2p = np.stack([f2 * ctd * ctd, -atb * ctd, f2sq * ctd * ctd + atb * atb], axis=-1)

    if np.any(use_asym):
        x1a = np.stack([f1, np.zeros(D), f1sq], axis=-1)
        deg = f1 == 0.0
        if np.any(deg):
            x1a[deg] = np.array([0.0, 1.0, 0.0])
        x2a = np.stack([f2 * c * c, -a * c, f2sq * c * c + a * a], axis=-1)
        x1p = np.where(use_asym[:, None], x1a, x1p)
        x2p = np.where(use_asym[:, None], x2a, x2p)

    x1h = np.einsum("dij,dj->di", M1inv, x1p)
    x2h = np.einsum("dij,dj->di", M2inv, x2p)
    x1h = x1h / x1h[:, 2:3]
    x2h = x2h / x2h[:, 2:3]

    corr = np.stack([x1h, x2h], axis=1)
    return batch_dlt(corr, np.stack([T1, T2]), np.stack([p1, p2]))
