# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled quadratic-family kernels.

Same contracts as ``fsmfg._purekernels`` (the pure-numpy reference); see
that module for the conventions.  All loops run in C over double buffers;
neighbor tables must be pre-clipped to valid indices (absent moves carry a
zero occupancy factor, so any in-range index is safe).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef inline void _hvec_neg(const double[:] u, const double[:] f, double[:] out, int d) noexcept nogil:
    # out = -h(u, f):  h_i = f_i - 0.5 sum_j [(u_i - u_j)^+]^2
    cdef int i, j
    cdef double acc, diff
    for i in range(d):
        acc = 0.0
        for j in range(d):
            diff = u[i] - u[j]
            if diff > 0.0:
                acc += diff * diff
        out[i] = -(f[i] - 0.5 * acc)


cdef inline void _kflow(const double[:] th, const double[:] u, double[:] out, int d) noexcept nogil:
    cdef int i, j
    cdef double r, flow
    for i in range(d):
        out[i] = 0.0
    for j in range(d):
        for i in range(d):
            if i == j:
                continue
            r = u[j] - u[i]
            if r > 0.0:
                flow = th[j] * r
                out[i] += flow
                out[j] -= flow


def quad_hj_backward(theta_in, theta_dot_in, A_in, b_in, uT_in, double dt):
    theta_arr = np.ascontiguousarray(theta_in, dtype=np.float64)
    cdef const double[:, ::1] theta = theta_arr
    cdef int M = theta_arr.shape[0] - 1
    cdef int d = theta_arr.shape[1]
    fvals_arr = theta_arr @ np.ascontiguousarray(A_in, dtype=np.float64).T \
        + np.asarray(b_in, dtype=np.float64)
    cdef const double[:, ::1] fvals = np.ascontiguousarray(fvals_arr)
    cdef const double[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)

    cdef bint have_dot = theta_dot_in is not None
    cdef const double[:, ::1] tdot
    if have_dot:
        tdot = np.ascontiguousarray(theta_dot_in, dtype=np.float64)

    u_arr = np.empty((M + 1, d), dtype=np.float64)
    udot_arr = np.empty((M + 1, d), dtype=np.float64)
    cdef double[:, ::1] u = u_arr
    cdef double[:, ::1] udot = udot_arr

    scratch = np.empty((6, d), dtype=np.float64)
    cdef double[:, ::1] w = scratch
    cdef double[::1] y = np.asarray(uT_in, dtype=np.float64).copy()
    cdef double h = -dt
    cdef int i, j, k
    cdef double mid, acc

    for i in range(d):
        u[M, i] = y[i]
    _hvec_neg(y, fvals[M], udot[M], d)

    for k in range(M, 0, -1):
        # theta and coupling at the interval midpoint (Hermite when slopes exist)
        for i in range(d):
            mid = 0.5 * (theta[k - 1, i] + theta[k, i])
            if have_dot:
                mid += 0.125 * dt * (tdot[k - 1, i] - tdot[k, i])
            w[4, i] = mid
        for i in range(d):
            acc = b[i]
            for j in range(d):
                acc += A[i, j] * w[4, j]
            w[5, i] = acc
        # k1 = udot[k]; k2, k3 at midpoint; k4 at the left node
        for i in range(d):
            w[0, i] = y[i] + 0.5 * h * udot[k, i]
        _hvec_neg(w[0], w[5], w[1], d)                      # k2
        for i in range(d):
            w[0, i] = y[i] + 0.5 * h * w[1, i]
        _hvec_neg(w[0], w[5], w[2], d)                      # k3
        for i in range(d):
            w[0, i] = y[i] + h * w[2, i]
        _hvec_neg(w[0], fvals[k - 1], w[3], d)              # k4
        for i in range(d):
            y[i] = y[i] + (h / 6.0) * (udot[k, i] + 2.0 * w[1, i]
                                       + 2.0 * w[2, i] + w[3, i])
            u[k - 1, i] = y[i]
        _hvec_neg(y, fvals[k - 1], udot[k - 1], d)
    return u_arr, udot_arr


def quad_kolmogorov_forward(u_in, u_dot_in, theta0_in, double dt):
    u_arr = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef const double[:, ::1] u = u_arr
    cdef int M = u_arr.shape[0] - 1
    cdef int d = u_arr.shape[1]
    cdef bint have_dot = u_dot_in is not None
    cdef const double[:, ::1] udot
    if have_dot:
        udot = np.ascontiguousarray(u_dot_in, dtype=np.float64)

    theta_arr = np.empty((M + 1, d), dtype=np.float64)
    tdot_arr = np.empty((M + 1, d), dtype=np.float64)
    cdef double[:, ::1] theta = theta_arr
    cdef double[:, ::1] tdot = tdot_arr

    scratch = np.empty((6, d), dtype=np.float64)
    cdef double[:, ::1] w = scratch
    cdef double[::1] y = np.asarray(theta0_in, dtype=np.float64).copy()
    cdef int i, k

    for i in range(d):
        theta[0, i] = y[i]
    _kflow(y, u[0], tdot[0], d)

    for k in range(M):
        for i in range(d):
            w[4, i] = 0.5 * (u[k, i] + u[k + 1, i])
            if have_dot:
                w[4, i] += 0.125 * dt * (udot[k, i] - udot[k + 1, i])
        for i in range(d):
            w[0, i] = y[i] + 0.5 * dt * tdot[k, i]
        _kflow(w[0], w[4], w[1], d)                         # k2
        for i in range(d):
            w[0, i] = y[i] + 0.5 * dt * w[1, i]
        _kflow(w[0], w[4], w[2], d)                         # k3
        for i in range(d):
            w[0, i] = y[i] + dt * w[2, i]
        _kflow(w[0], u[k + 1], w[3], d)                     # k4
        for i in range(d):
            y[i] = y[i] + (dt / 6.0) * (tdot[k, i] + 2.0 * w[1, i]
                                        + 2.0 * w[2, i] + w[3, i])
            theta[k + 1, i] = y[i]
        _kflow(y, u[k + 1], tdot[k + 1], d)
    return theta_arr, tdot_arr


cdef void _npl_rhs(const double[:, ::1] u, const i64[:, ::1] nvecs, const i64[:, :, ::1] nbr,
                   const double[:, ::1] fvals, double[:, ::1] out,
                   int d, int S) noexcept nogil:
    cdef int s, i, j, k
    cdef i64 nk, sp
    cdef double acc, diff, total, a
    for s in range(S):
        for i in range(d):
            acc = 0.0
            for j in range(d):
                diff = u[i, s] - u[j, s]
                if diff > 0.0:
                    acc += diff * diff
            total = fvals[i, s] - 0.5 * acc
            for k in range(d):
                nk = nvecs[s, k]
                if nk == 0:
                    continue
                sp = nbr[s, i, k]
                for j in range(d):
                    if j == k:
                        continue
                    a = u[k, sp] - u[j, sp]
                    if a > 0.0:
                        total += nk * a * (u[i, nbr[s, j, k]] - u[i, s])
            out[i, s] = -total


def quad_npl_backward(nvecs_in, nbr_in, fvals_in, psiT_in, double dt, int M):
    cdef const i64[:, ::1] nvecs = np.ascontiguousarray(nvecs_in, dtype=np.int64)
    cdef const i64[:, :, ::1] nbr = np.ascontiguousarray(nbr_in, dtype=np.int64)
    fvals_arr = np.ascontiguousarray(fvals_in, dtype=np.float64)
    cdef const double[:, ::1] fvals = fvals_arr
    cdef int d = fvals_arr.shape[0]
    cdef int S = fvals_arr.shape[1]

    field_arr = np.empty((M + 1, d, S), dtype=np.float64)
    cdef double[:, :, ::1] field = field_arr
    y_arr = np.ascontiguousarray(psiT_in, dtype=np.float64).copy()
    cdef double[:, ::1] y = y_arr
    stage = np.empty((5, d, S), dtype=np.float64)
    cdef double[:, :, ::1] w = stage
    cdef double h = -dt
    cdef int i, s, k

    for i in range(d):
        for s in range(S):
            field[M, i, s] = y[i, s]
    for k in range(M, 0, -1):
        _npl_rhs(y, nvecs, nbr, fvals, w[0], d, S)          # k1
        for i in range(d):
            for s in range(S):
                w[4, i, s] = y[i, s] + 0.5 * h * w[0, i, s]
        _npl_rhs(w[4], nvecs, nbr, fvals, w[1], d, S)       # k2
        for i in range(d):
            for s in range(S):
                w[4, i, s] = y[i, s] + 0.5 * h * w[1, i, s]
        _npl_rhs(w[4], nvecs, nbr, fvals, w[2], d, S)       # k3
        for i in range(d):
            for s in range(S):
                w[4, i, s] = y[i, s] + h * w[2, i, s]
        _npl_rhs(w[4], nvecs, nbr, fvals, w[3], d, S)       # k4
        for i in range(d):
            for s in range(S):
                y[i, s] = y[i, s] + (h / 6.0) * (w[0, i, s] + 2.0 * w[1, i, s]
                                                 + 2.0 * w[2, i, s] + w[3, i, s])
                field[k - 1, i, s] = y[i, s]
    return field_arr


cdef void _joint_rhs(const double[:, ::1] p, const double[:, ::1] u, const i64[:, ::1] nvecs,
                     const i64[:, :, ::1] nbr, double[:, ::1] out,
                     int d, int S) noexcept nogil:
    cdef int s, i, j, k
    cdef i64 nk, sp
    cdef double pi, r, flow
    for i in range(d):
        for s in range(S):
            out[i, s] = 0.0
    for s in range(S):
        for i in range(d):
            pi = p[i, s]
            for j in range(d):
                if j == i:
                    continue
                r = u[i, s] - u[j, s]
                if r > 0.0:
                    flow = r * pi
                    out[j, s] += flow
                    out[i, s] -= flow
            for k in range(d):
                nk = nvecs[s, k]
                if nk == 0:
                    continue
                sp = nbr[s, i, k]
                for j in range(d):
                    if j == k:
                        continue
                    r = u[k, sp] - u[j, sp]
                    if r > 0.0:
                        flow = nk * r * pi
                        out[i, s] -= flow
                        out[i, nbr[s, j, k]] += flow


def quad_jointlaw_forward(field_in, nvecs_in, nbr_in, p0_in, double dt):
    field_arr = np.ascontiguousarray(field_in, dtype=np.float64)
    cdef const double[:, :, ::1] field = field_arr
    cdef const i64[:, ::1] nvecs = np.ascontiguousarray(nvecs_in, dtype=np.int64)
    cdef const i64[:, :, ::1] nbr = np.ascontiguousarray(nbr_in, dtype=np.int64)
    cdef int M = field_arr.shape[0] - 1
    cdef int d = field_arr.shape[1]
    cdef int S = field_arr.shape[2]

    law_arr = np.empty((M + 1, d, S), dtype=np.float64)
    cdef double[:, :, ::1] law = law_arr
    y_arr = np.ascontiguousarray(p0_in, dtype=np.float64).copy()
    cdef double[:, ::1] y = y_arr
    stage = np.empty((6, d, S), dtype=np.float64)
    cdef double[:, :, ::1] w = stage
    cdef int i, s, k

    for i in range(d):
        for s in range(S):
            law[0, i, s] = y[i, s]
    for k in range(M):
        for i in range(d):
            for s in range(S):
                w[5, i, s] = 0.5 * (field[k, i, s] + field[k + 1, i, s])
        _joint_rhs(y, field[k], nvecs, nbr, w[0], d, S)     # k1
        for i in range(d):
            for s in range(S):
                w[4, i, s] = y[i, s] + 0.5 * dt * w[0, i, s]
        _joint_rhs(w[4], w[5], nvecs, nbr, w[1], d, S)      # k2
        for i in range(d):
            for s in range(S):
                w[4, i, s] = y[i, s] + 0.5 * dt * w[1, i, s]
        _joint_rhs(w[4], w[5], nvecs, nbr, w[2], d, S)      # k3
        for i in range(d):
            for s in range(S):
                w[4, i, s] = y[i, s] + dt * w[2, i, s]
        _joint_rhs(w[4], field[k + 1], nvecs, nbr, w[3], d, S)  # k4
        for i in range(d):
            for s in range(S):
                y[i, s] = y[i, s] + (dt / 6.0) * (w[0, i, s] + 2.0 * w[1, i, s]
                                                  + 2.0 * w[2, i, s] + w[3, i, s])
                law[k + 1, i, s] = y[i, s]
    return law_arr
