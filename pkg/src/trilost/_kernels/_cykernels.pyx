# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-draw Monte Carlo kernels.

Same contracts as ``numpy_backend``: xbar is (D, n, 3) of measured
homogeneous image-plane points, T is (n, 3, 3), p is (n, 3).  Solvers use
per-draw normal equations with closed-form small solves.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign

cnp.import_array()


cdef inline void _solve3(double[3][3] A, double[3] b, double[3] out) nogil:
    """Solve a symmetric positive-definite 3x3 system by adjugate."""
    cdef double c00 = A[1][1] * A[2][2] - A[1][2] * A[2][1]
    cdef double c01 = A[1][2] * A[2][0] - A[1][0] * A[2][2]
    cdef double c02 = A[1][0] * A[2][1] - A[1][1] * A[2][0]
    cdef double det = A[0][0] * c00 + A[0][1] * c01 + A[0][2] * c02
    cdef double c10 = A[0][2] * A[2][1] - A[0][1] * A[2][2]
    cdef double c11 = A[0][0] * A[2][2] - A[0][2] * A[2][0]
    cdef double c12 = A[0][1] * A[2][0] - A[0][0] * A[2][1]
    cdef double c20 = A[0][1] * A[1][2] - A[0][2] * A[1][1]
    cdef double c21 = A[0][2] * A[1][0] - A[0][0] * A[1][2]
    cdef double c22 = A[0][0] * A[1][1] - A[0][1] * A[1][0]
    out[0] = (c00 * b[0] + c10 * b[1] + c20 * b[2]) / det
    out[1] = (c01 * b[0] + c11 * b[1] + c21 * b[2]) / det
    out[2] = (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det


cdef inline void _row_accumulate(double[3] m0, double[3] m1, double y0, double y1,
                                 double q2, double[3][3] A, double[3] b) nogil:
    """Accumulate q^2 (M^T M) and q^2 M^T y for a 2x3 block."""
    cdef int i, j
    for i in range(3):
        for j in range(3):
            A[i][j] += q2 * (m0[i] * m0[j] + m1[i] * m1[j])
        b[i] += q2 * (m0[i] * y0 + m1[i] * y1)


def batch_dlt(double[:, :, ::1] xbar, double[:, :, ::1] T, double[:, ::1] p,
              bint unit_norm=False):
    cdef Py_ssize_t D = xbar.shape[0], n = xbar.shape[1]
    out_arr = np.empty((D, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t d, i, r, cidx
    cdef double lx, ly, lz, nrm
    cdef double[3][3] A
    cdef double[3] bb, sol
    cdef double[3] h0, h1, h2
    cdef double y0, y1, y2

    with nogil:
        for d in range(D):
            for r in range(3):
                bb[r] = 0.0
                for cidx in range(3):
                    A[r][cidx] = 0.0
            for i in range(n):
                lx = xbar[d, i, 0]; ly = xbar[d, i, 1]; lz = xbar[d, i, 2]
                if unit_norm:
                    nrm = sqrt(lx * lx + ly * ly + lz * lz)
                    lx /= nrm; ly /= nrm; lz /= nrm
                # H = skew(l) @ T_i, rows h0, h1, h2
                for cidx in range(3):
                    h0[cidx] = -lz * T[i, 1, cidx] + ly * T[i, 2, cidx]
                    h1[cidx] = lz * T[i, 0, cidx] - lx * T[i, 2, cidx]
                    h2[cidx] = -ly * T[i, 0, cidx] + lx * T[i, 1, cidx]
                y0 = h0[0] * p[i, 0] + h0[1] * p[i, 1] + h0[2] * p[i, 2]
                y1 = h1[0] * p[i, 0] + h1[1] * p[i, 1] + h1[2] * p[i, 2]
                y2 = h2[0] * p[i, 0] + h2[1] * p[i, 1] + h2[2] * p[i, 2]
                for r in range(3):
                    for cidx in range(3):
                        A[r][cidx] += h0[r] * h0[cidx] + h1[r] * h1[cidx] + h2[r] * h2[cidx]
                    bb[r] += h0[r] * y0 + h1[r] * y1 + h2[r] * y2
            _solve3(A, bb, sol)
            out[d, 0] = sol[0]; out[d, 1] = sol[1]; out[d, 2] = sol[2]
    return out_arr


def batch_lost(double[:, :, ::1] xbar, double[:, :, ::1] T, double[:, ::1] p,
               double[::1] sigma_x):
    cdef Py_ssize_t D = xbar.shape[0], n = xbar.shape[1]
    out_arr = np.empty((D, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    ell_arr = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] ell = ell_arr
    cdef Py_ssize_t d, i, j, r, cidx
    cdef double[3][3] A
    cdef double[3] bb, sol
    cdef double[3] m0, m1
    cdef double cx, cy, cz, dx_, dy_, dz_, num, den, gamma, q2
    cdef double lx, ly, lz, y0, y1

    with nogil:
        for d in range(D):
            for r in range(3):
                bb[r] = 0.0
                for cidx in range(3):
                    A[r][cidx] = 0.0
            # localization-frame LOS: ell = T^T xbar
            for i in range(n):
                for r in range(3):
                    ell[i, r] = (T[i, 0, r] * xbar[d, i, 0]
                                 + T[i, 1, r] * xbar[d, i, 1]
                                 + T[i, 2, r] * xbar[d, i, 2])
            for i in range(n):
                j = (i + 1) % n
                dx_ = p[j, 0] - p[i, 0]; dy_ = p[j, 1] - p[i, 1]; dz_ = p[j, 2] - p[i, 2]
                cx = dy_ * ell[j, 2] - dz_ * ell[j, 1]
                cy = dz_ * ell[j, 0] - dx_ * ell[j, 2]
                cz = dx_ * ell[j, 1] - dy_ * ell[j, 0]
                num = sqrt(cx * cx + cy * cy + cz * cz)
                cx = ell[i, 1] * ell[j, 2] - ell[i, 2] * ell[j, 1]
                cy = ell[i, 2] * ell[j, 0] - ell[i, 0] * ell[j, 2]
                cz = ell[i, 0] * ell[j, 1] - ell[i, 1] * ell[j, 0]
                den = sqrt(cx * cx + cy * cy + cz * cz)
                gamma = num / den
                q2 = 1.0 / (sigma_x[i] * gamma)
                q2 = q2 * q2
                lx = xbar[d, i, 0]; ly = xbar[d, i, 1]; lz = xbar[d, i, 2]
                for cidx in range(3):
                    m0[cidx] = -lz * T[i, 1, cidx] + ly * T[i, 2, cidx]
                    m1[cidx] = lz * T[i, 0, cidx] - lx * T[i, 2, cidx]
                y0 = m0[0] * p[i, 0] + m0[1] * p[i, 1] + m0[2] * p[i, 2]
                y1 = m1[0] * p[i, 0] + m1[1] * p[i, 1] + m1[2] * p[i, 2]
                _row_accumulate(m0, m1, y0, y1, q2, A, bb)
            _solve3(A, bb, sol)
            out[d, 0] = sol[0]; out[d, 1] = sol[1]; out[d, 2] = sol[2]
    return out_arr


def batch_range2(double[:, :, ::1] xbar, double[:, :, ::1] T, double[:, ::1] p):
    cdef Py_ssize_t D = xbar.shape[0]
    out_arr = np.empty((D, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t d, r
    cdef double[3] a1, a2
    cdef double n1, n2, c, h1, h2, det, rho1, rho2
    cdef double dx_ = p[1, 0] - p[0, 0]
    cdef double dy_ = p[1, 1] - p[0, 1]
    cdef double dz_ = p[1, 2] - p[0, 2]

    with nogil:
        for d in range(D):
            for r in range(3):
                a1[r] = (T[0, 0, r] * xbar[d, 0, 0] + T[0, 1, r] * xbar[d, 0, 1]
                         + T[0, 2, r] * xbar[d, 0, 2])
                a2[r] = (T[1, 0, r] * xbar[d, 1, 0] + T[1, 1, r] * xbar[d, 1, 1]
                         + T[1, 2, r] * xbar[d, 1, 2])
            n1 = sqrt(a1[0] ** 2 + a1[1] ** 2 + a1[2] ** 2)
            n2 = sqrt(a2[0] ** 2 + a2[1] ** 2 + a2[2] ** 2)
            for r in range(3):
                a1[r] /= n1
                a2[r] /= n2
            c = a1[0] * a2[0] + a1[1] * a2[1] + a1[2] * a2[2]
            h1 = a1[0] * dx_ + a1[1] * dy_ + a1[2] * dz_
            h2 = a2[0] * dx_ + a2[1] * dy_ + a2[2] * dz_
            det = c * c - 1.0
            rho1 = (h1 - c * h2) / det
            rho2 = (c * h1 - h2) / det
            out[d, 0] = 0.5 * (p[0, 0] - rho1 * a1[0] + p[1, 0] - rho2 * a2[0])
            out[d, 1] = 0.5 * (p[0, 1] - rho1 * a1[1] + p[1, 1] - rho2 * a2[1])
            out[d, 2] = 0.5 * (p[0, 2] - rho1 * a1[2] + p[1, 2] - rho2 * a2[2])
    return out_arr


def batch_quat(double[:, :, ::1] xbar, double[:, ::1] T, double[:, ::1] p,
               double[::1] w):
    """Shared-attitude two-point optimal correction, then triangulation."""
    cdef Py_ssize_t D = xbar.shape[0]
    corr_arr = np.empty((D, 2, 3), dtype=np.float64)
    cdef double[:, :, ::1] corr = corr_arr
    cdef double w1 = w[0], w2 = w[1]
    cdef double bx = p[1, 0] - p[0, 0]
    cdef double by = p[1, 1] - p[0, 1]
    cdef double bz = p[1, 2] - p[0, 2]
    cdef double dd = T[0, 0] * bx + T[0, 1] * by + T[0, 2] * bz
    cdef double ee = T[1, 0] * bx + T[1, 1] * by + T[1, 2] * bz
    cdef double ff = T[2, 0] * bx + T[2, 1] * by + T[2, 2] * bz
    cdef Py_ssize_t d
    cdef double xt1, yt1, xt2, yt2, resid, h2, h1, h0
    cdef double disc, sq, qq, lamA, lamB, lam, cA, cB
    cdef double Dq, cx1, cy1, cx2, cy2, m

    with nogil:
        for d in range(D):
            xt1 = xbar[d, 0, 0]; yt1 = xbar[d, 0, 1]
            xt2 = xbar[d, 1, 0]; yt2 = xbar[d, 1, 1]
            resid = ff * (xt2 * yt1 - xt1 * yt2) + ee * (xt1 - xt2) + dd * (yt2 - yt1)
            h2 = ff * ff * w1 * w2 * resid
            h1 = -2.0 * w1 * w2 * (
                ff * ff * (w1 * xt1 * xt1 + w1 * yt1 * yt1 + w2 * xt2 * xt2 + w2 * yt2 * yt2)
                - 2.0 * ff * (dd * w1 * xt1 + dd * w2 * xt2 + ee * w1 * yt1 + ee * w2 * yt2)
                + (dd * dd + ee * ee) * (w1 + w2))
            h0 = 4.0 * (w1 * w2) * (w1 * w2) * resid

            m = fabs(h1)
            if fabs(h0) > m:
                m = fabs(h0)
            if m < 1.0:
                m = 1.0
            if ff == 0.0 or fabs(h2) < 1e-9 * m:
                lam = -h0 / h1
            else:
                disc = h1 * h1 - 4.0 * h2 * h0
                if disc < 0.0:
                    disc = 0.0
                sq = sqrt(disc)
                qq = -0.5 * (h1 + copysign(sq, h1))
                lamA = qq / h2
                lamB = h0 / qq if qq != 0.0 else lamA
                # evaluate cost at both roots
                Dq = ff * ff * lamA * lamA - 4.0 * w1 * w2
                cx1 = (dd * ff * lamA * lamA + 2 * w2 * (ee - ff * yt2) * lamA - 4 * w1 * w2 * xt1) / Dq
                cy1 = (ee * ff * lamA * lamA + 2 * w2 * (ff * xt2 - dd) * lamA - 4 * w1 * w2 * yt1) / Dq
                cx2 = (dd * ff * lamA * lamA + 2 * w1 * (ff * yt1 - ee) * lamA - 4 * w1 * w2 * xt2) / Dq
                cy2 = (ee * ff * lamA * lamA + 2 * w1 * (dd - ff * xt1) * lamA - 4 * w1 * w2 * yt2) / Dq
                cA = w1 * ((cx1 - xt1) ** 2 + (cy1 - yt1) ** 2) + w2 * ((cx2 - xt2) ** 2 + (cy2 - yt2) ** 2)
                Dq = ff * ff * lamB * lamB - 4.0 * w1 * w2
                cx1 = (dd * ff * lamB * lamB + 2 * w2 * (ee - ff * yt2) * lamB - 4 * w1 * w2 * xt1) / Dq
                cy1 = (ee * ff * lamB * lamB + 2 * w2 * (ff * xt2 - dd) * lamB - 4 * w1 * w2 * yt1) / Dq
                cx2 = (dd * ff * lamB * lamB + 2 * w1 * (ff * yt1 - ee) * lamB - 4 * w1 * w2 * xt2) / Dq
                cy2 = (ee * ff * lamB * lamB + 2 * w1 * (dd - ff * xt1) * lamB - 4 * w1 * w2 * yt2) / Dq
                cB = w1 * ((cx1 - xt1) ** 2 + (cy1 - yt1) ** 2) + w2 * ((cx2 - xt2) ** 2 + (cy2 - yt2) ** 2)
                lam = lamA if cA <= cB else lamB

            Dq = ff * ff * lam * lam - 4.0 * w1 * w2
            corr[d, 0, 0] = (dd * ff * lam * lam + 2 * w2 * (ee - ff * yt2) * lam - 4 * w1 * w2 * xt1) / Dq
            corr[d, 0, 1] = (ee * ff * lam * lam + 2 * w2 * (ff * xt2 - dd) * lam - 4 * w1 * w2 * yt1) / Dq
            corr[d, 0, 2] = 1.0
            corr[d, 1, 0] = (dd * ff * lam * lam + 2 * w1 * (ff * yt1 - ee) * lam - 4 * w1 * w2 * xt2) / Dq
            corr[d, 1, 1] = (ee * ff * lam * lam + 2 * w1 * (dd - ff * xt1) * lam - 4 * w1 * w2 * yt2) / Dq
            corr[d, 1, 2] = 1.0

    T2_arr = np.stack([np.asarray(T), np.asarray(T)])
    return batch_dlt(corr_arr, T2_arr, np.asarray(p))
