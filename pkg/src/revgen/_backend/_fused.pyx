# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Same contract as the numpy backend (see revgen._backend).  Loss and cotangent
accumulation is per-row, so results do not depend on the OpenMP thread count;
the spin-evolution arithmetic mirrors the numpy expressions operation for
operation to keep trajectories bit-identical across backends.
"""

import numpy as np

cimport numpy as cnp
cimport openmp
from cython.parallel cimport prange
from libc.math cimport exp, pow

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64
ctypedef cnp.int8_t i8
ctypedef cnp.uint8_t u8


def set_num_threads(int n):
    if n > 0:
        openmp.omp_set_num_threads(n)


cdef inline f64 _rval(f64 r2, const f64* coef_a, int nb,
                      f64 imq_beta, f64 imq_c2) noexcept nogil:
    cdef f64 out = 0.0
    cdef int b
    for b in range(nb):
        out += exp(r2 * coef_a[b])
    if imq_c2 > 0.0:
        out += pow(imq_c2 / (imq_c2 + r2), imq_beta)
    return out


cdef inline f64 _rweight(f64 r2, const f64* coef_a, const f64* coef_w, int nb,
                         f64 imq_beta, f64 imq_c2, f64 imq_wc) noexcept nogil:
    cdef f64 out = 0.0
    cdef int b
    for b in range(nb):
        out += exp(r2 * coef_a[b]) * coef_w[b]
    if imq_c2 > 0.0:
        out += imq_wc / pow(imq_c2 + r2, imq_beta + 1.0)
    return out


def pair_mmd_cotangents(object s_in, object sp_in, object bandwidths,
                        double imq_beta, double imq_c, bint want_cot=True):
    cdef cnp.ndarray[f64, ndim=2, mode="c"] s = np.ascontiguousarray(s_in, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] sp = np.ascontiguousarray(sp_in, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], d = s.shape[1]
    cdef cnp.ndarray[f64, ndim=1] bw = np.asarray(bandwidths, dtype=np.float64)
    cdef int nb = bw.shape[0]
    cdef cnp.ndarray[f64, ndim=1] coef_a = np.empty(nb)
    cdef cnp.ndarray[f64, ndim=1] coef_w = np.empty(nb)
    cdef int b
    for b in range(nb):
        coef_a[b] = -0.5 / (bw[b] * bw[b])
        coef_w[b] = 1.0 / (bw[b] * bw[b])
    cdef f64 imq_c2 = imq_c * imq_c if imq_c > 0.0 else 0.0
    cdef f64 imq_wc = 2.0 * imq_beta * pow(imq_c2, imq_beta) if imq_c > 0.0 else 0.0

    cdef cnp.ndarray[f64, ndim=1] row_xx = np.zeros(n)
    cdef cnp.ndarray[f64, ndim=1] row_xy = np.zeros(n)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] cot = np.zeros((n, d)) if want_cot else np.zeros((1, 1))

    cdef Py_ssize_t i, j, kk
    cdef f64 dxx, dxy, diff, acc_xx, acc_xy, wxx, wxy
    cdef f64* ca = &coef_a[0]
    cdef f64* cw = &coef_w[0]
    cdef bint wc = want_cot
    with nogil:
        for i in prange(n, schedule='static'):
            acc_xx = 0.0
            acc_xy = 0.0
            for j in range(n):
                dxx = 0.0
                dxy = 0.0
                for kk in range(d):
                    diff = s[i, kk] - s[j, kk]
                    dxx = dxx + diff * diff
                    diff = sp[i, kk] - sp[j, kk]
                    dxx = dxx + diff * diff
                    diff = s[i, kk] - sp[j, kk]
                    dxy = dxy + diff * diff
                    diff = sp[i, kk] - s[j, kk]
                    dxy = dxy + diff * diff
                acc_xx = acc_xx + _rval(dxx, ca, nb, imq_beta, imq_c2)
                acc_xy = acc_xy + _rval(dxy, ca, nb, imq_beta, imq_c2)
                if wc:
                    wxx = _rweight(dxx, ca, cw, nb, imq_beta, imq_c2, imq_wc)
                    wxy = _rweight(dxy, ca, cw, nb, imq_beta, imq_c2, imq_wc)
                    for kk in range(d):
                        cot[i, kk] += (s[i, kk] - sp[j, kk]) * wxy \
                            - (s[i, kk] - s[j, kk]) * wxx
            row_xx[i] = acc_xx
            row_xy[i] = acc_xy

    cdef f64 sum_xx = 0.0, sum_xy = 0.0
    for i in range(n):
        sum_xx += row_xx[i]
        sum_xy += row_xy[i]
    cdef f64 mmd = (2.0 / (<f64> n * <f64> n)) * (sum_xx - sum_xy)
    if not want_cot:
        return mmd, None
    return mmd, np.asarray(cot) * (4.0 / (<f64> n * <f64> n))


def hybrid_pair_mmd_cotangents(object x_in, object xp_in, object k_in, object kp_in,
                               int n_modes, object bandwidths, bint want_cot=True):
    cdef cnp.ndarray[f64, ndim=2, mode="c"] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] xp = np.ascontiguousarray(xp_in, dtype=np.float64)
    cdef cnp.ndarray[i64, ndim=1] k = np.ascontiguousarray(k_in, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] kp = np.ascontiguousarray(kp_in, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[f64, ndim=1] bw = np.asarray(bandwidths, dtype=np.float64)
    cdef int nb = bw.shape[0]
    cdef cnp.ndarray[f64, ndim=1] coef_a = np.empty(nb)
    cdef cnp.ndarray[f64, ndim=1] coef_w = np.empty(nb)
    cdef int b
    for b in range(nb):
        coef_a[b] = -0.5 / (bw[b] * bw[b])
        coef_w[b] = 1.0 / (bw[b] * bw[b])

    cdef cnp.ndarray[f64, ndim=1] row_xx = np.zeros(n)
    cdef cnp.ndarray[f64, ndim=1] row_xy = np.zeros(n)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] cot_x = np.zeros((n, d)) if want_cot else np.zeros((1, 1))
    cdef cnp.ndarray[f64, ndim=2, mode="c"] cot_a = np.zeros((n, n_modes)) if want_cot else np.zeros((1, 1))

    cdef Py_ssize_t i, j, kk
    cdef f64 dxx, dxy, diff, acc_xx, acc_xy, rxx, rxy, wxx, wxy
    cdef bint ind_xx, ind_xy, same_kp, kp_eq_k
    cdef f64* ca = &coef_a[0]
    cdef f64* cw = &coef_w[0]
    cdef bint wc = want_cot
    with nogil:
        for i in prange(n, schedule='static'):
            acc_xx = 0.0
            acc_xy = 0.0
            for j in range(n):
                dxx = 0.0
                dxy = 0.0
                for kk in range(d):
                    diff = x[i, kk] - x[j, kk]
                    dxx = dxx + diff * diff
                    diff = xp[i, kk] - xp[j, kk]
                    dxx = dxx + diff * diff
                    diff = x[i, kk] - xp[j, kk]
                    dxy = dxy + diff * diff
                    diff = xp[i, kk] - x[j, kk]
                    dxy = dxy + diff * diff
                same_kp = kp[i] == kp[j]
                kp_eq_k = kp[i] == k[j]
                ind_xx = (k[i] == k[j]) and same_kp
                ind_xy = (k[i] == kp[j]) and kp_eq_k
                rxx = _rval(dxx, ca, nb, 0.0, 0.0)
                rxy = _rval(dxy, ca, nb, 0.0, 0.0)
                if ind_xx:
                    acc_xx = acc_xx + rxx
                if ind_xy:
                    acc_xy = acc_xy + rxy
                if wc:
                    if ind_xx:
                        wxx = _rweight(dxx, ca, cw, nb, 0.0, 0.0, 0.0)
                        for kk in range(d):
                            cot_x[i, kk] -= (x[i, kk] - x[j, kk]) * wxx
                    if ind_xy:
                        wxy = _rweight(dxy, ca, cw, nb, 0.0, 0.0, 0.0)
                        for kk in range(d):
                            cot_x[i, kk] += (x[i, kk] - xp[j, kk]) * wxy
                    if same_kp:
                        cot_a[i, k[j]] += rxx
                    if kp_eq_k:
                        cot_a[i, kp[j]] -= rxy
            row_xx[i] = acc_xx
            row_xy[i] = acc_xy

    cdef f64 sum_xx = 0.0, sum_xy = 0.0
    for i in range(n):
        sum_xx += row_xx[i]
        sum_xy += row_xy[i]
    cdef f64 mmd = (2.0 / (<f64> n * <f64> n)) * (sum_xx - sum_xy)
    if not want_cot:
        return mmd, None, None
    cdef f64 scale = 4.0 / (<f64> n * <f64> n)
    return mmd, np.asarray(cot_x) * scale, np.asarray(cot_a) * scale


def evolve_ising_mixture(object spins_in, object neighbors_in, double beta,
                         double coupling, double field_h, double p_global,
                         object move_u_in, object sites_in, object logu_in):
    cdef cnp.ndarray[i8, ndim=2, mode="c"] s = np.array(spins_in, dtype=np.int8)
    cdef cnp.ndarray[i64, ndim=2, mode="c"] nbr = np.ascontiguousarray(neighbors_in, dtype=np.int64)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] move_u = np.ascontiguousarray(move_u_in, dtype=np.float64)
    cdef cnp.ndarray[i64, ndim=2, mode="c"] sites = np.ascontiguousarray(sites_in, dtype=np.int64)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] logu = np.ascontiguousarray(logu_in, dtype=np.float64)
    cdef Py_ssize_t n_steps = move_u.shape[0], n_chains = s.shape[0], n_sites = s.shape[1]
    cdef f64 two_j = 2.0 * coupling
    cdef f64 two_h = 2.0 * field_h

    cdef Py_ssize_t t, c, q
    cdef i64 site, si, nsum, ssum
    cdef f64 de
    with nogil:
        for c in prange(n_chains, schedule='static'):
            for t in range(n_steps):
                if move_u[t, c] < p_global:
                    ssum = 0
                    for q in range(n_sites):
                        ssum = ssum + s[c, q]
                    de = two_h * ssum
                    if logu[t, c] < -(beta * de):
                        for q in range(n_sites):
                            s[c, q] = -s[c, q]
                else:
                    site = sites[t, c]
                    si = s[c, site]
                    nsum = s[c, nbr[site, 0]] + s[c, nbr[site, 1]] \
                        + s[c, nbr[site, 2]] + s[c, nbr[site, 3]]
                    de = two_j * (si * nsum) + two_h * si
                    if logu[t, c] < -(beta * de):
                        s[c, site] = -s[c, site]
    return np.asarray(s)


def evolve_ising_multispin(object spins_in, object bonds_in, double beta,
                           double coupling, double field_h,
                           object flip_masks_in, object logu_in):
    cdef cnp.ndarray[i8, ndim=2, mode="c"] s = np.array(spins_in, dtype=np.int8)
    cdef cnp.ndarray[i64, ndim=2, mode="c"] bonds = np.ascontiguousarray(bonds_in, dtype=np.int64)
    cdef cnp.ndarray[u8, ndim=3, mode="c"] masks = np.ascontiguousarray(flip_masks_in, dtype=np.uint8)
    cdef cnp.ndarray[f64, ndim=2, mode="c"] logu = np.ascontiguousarray(logu_in, dtype=np.float64)
    cdef Py_ssize_t n_steps = masks.shape[0], n_chains = s.shape[0], n_sites = s.shape[2]
    cdef Py_ssize_t n_bonds = bonds.shape[0]

    cdef Py_ssize_t t, c, q, e
    cdef i64 dbond, dsite, sa, sb, fa, fb
    cdef f64 de
    with nogil:
        for c in prange(n_chains, schedule='static'):
            for t in range(n_steps):
                dbond = 0
                dsite = 0
                for e in range(n_bonds):
                    sa = s[c, bonds[e, 0]]
                    sb = s[c, bonds[e, 1]]
                    fa = -sa if masks[t, c, bonds[e, 0]] else sa
                    fb = -sb if masks[t, c, bonds[e, 1]] else sb
                    dbond = dbond + (fa * fb - sa * sb)
                for q in range(n_sites):
                    if masks[t, c, q]:
                        dsite = dsite - 2 * s[c, q]
                de = (-coupling) * dbond + (-field_h) * dsite
                if logu[t, c] < -(beta * de):
                    for q in range(n_sites):
                        if masks[t, c, q]:
                            s[c, q] = -s[c, q]
    return np.asarray(s)
