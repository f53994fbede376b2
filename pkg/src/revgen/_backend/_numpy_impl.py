"""Pure-numpy backend for the hot kernels.

The pair-loss functions exploit the swap structure of the batches: with
x_i = (s_i, s'_i) and y_i = (s'_i, s_i),

    ||x_i - x_j||^2 = ||y_i - y_j||^2      and
    ||x_i - y_j||^2 = ||y_i - x_j||^2  (symmetric in i, j),

so only two distance matrices are needed and the V-statistic collapses to
(2/N^2) (sum K_xx - sum K_xy).

The Ising evolution arithmetic (delta-energy expressions and acceptance
comparisons against pre-drawn log-uniforms) is kept in float-op lockstep with
the Cython implementation so both backends yield bit-identical chains.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


def _radial_value(r2, bandwidths, imq_beta, imq_c):
    out = np.zeros_like(r2)
    for s in bandwidths:
        out += np.exp(r2 * (-0.5 / (s * s)))
    if imq_c > 0.0:
        c2 = imq_c * imq_c
        out += (c2 / (c2 + r2)) ** imq_beta
    return out


def _radial_weight(r2, bandwidths, imq_beta, imq_c):
    out = np.zeros_like(r2)
    for s in bandwidths:
        out += np.exp(r2 * (-0.5 / (s * s))) / (s * s)
    if imq_c > 0.0:
        c2 = imq_c * imq_c
        out += 2.0 * imq_beta * c2**imq_beta / (c2 + r2) ** (imq_beta + 1.0)
    return out


def pair_mmd_cotangents(s, sp, bandwidths, imq_beta, imq_c, want_cot=True):
    """MMD^2 V-statistic between (s, s') pairs and their swaps, plus
    d MMD^2 / d s_i with every s'_j held fixed.

    s, sp: (N, d) float64.  Returns (mmd, cot) with cot None when not wanted.
    """
    s = np.ascontiguousarray(s, dtype=np.float64)
    sp = np.ascontiguousarray(sp, dtype=np.float64)
    n = s.shape[0]
    d_xx = cdist(s, s, "sqeuclidean") + cdist(sp, sp, "sqeuclidean")
    d_sp = cdist(s, sp, "sqeuclidean")
    d_xy = d_sp + d_sp.T
    k_xx = _radial_value(d_xx, bandwidths, imq_beta, imq_c)
    k_xy = _radial_value(d_xy, bandwidths, imq_beta, imq_c)
    mmd = (2.0 / (n * n)) * (k_xx.sum() - k_xy.sum())
    if not want_cot:
        return mmd, None
    w_xx = _radial_weight(d_xx, bandwidths, imq_beta, imq_c)
    w_xy = _radial_weight(d_xy, bandwidths, imq_beta, imq_c)
    # cot_i = (4/N^2) sum_j [ (s_i - s'_j) w_xy[i,j] - (s_i - s_j) w_xx[i,j] ]
    cot = (4.0 / (n * n)) * (
        (w_xy.sum(axis=1) - w_xx.sum(axis=1))[:, None] * s
        - w_xy @ sp
        + w_xx @ s
    )
    return mmd, cot


def hybrid_pair_mmd_cotangents(x, xp, k, kp, n_modes, bandwidths, want_cot=True):
    """Product-kernel pair MMD for hybrid states (x_i, k_i) -> (x'_i, k'_i).

    Returns (mmd, cot_x, cot_onehot); cot_onehot[i] is the gradient with
    respect to the one-hot relaxation of mode k_i.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    k = np.asarray(k, dtype=np.int64)
    kp = np.asarray(kp, dtype=np.int64)
    n = x.shape[0]
    d_xx = cdist(x, x, "sqeuclidean") + cdist(xp, xp, "sqeuclidean")
    d_sp = cdist(x, xp, "sqeuclidean")
    d_xy = d_sp + d_sp.T
    i_xx = (k[:, None] == k[None, :]) & (kp[:, None] == kp[None, :])
    i_xy = (k[:, None] == kp[None, :]) & (kp[:, None] == k[None, :])
    r_xx = _radial_value(d_xx, bandwidths, 0.0, 0.0)
    r_xy = _radial_value(d_xy, bandwidths, 0.0, 0.0)
    mmd = (2.0 / (n * n)) * ((r_xx * i_xx).sum() - (r_xy * i_xy).sum())
    if not want_cot:
        return mmd, None, None
    w_xx = _radial_weight(d_xx, bandwidths, 0.0, 0.0) * i_xx
    w_xy = _radial_weight(d_xy, bandwidths, 0.0, 0.0) * i_xy
    cot_x = (4.0 / (n * n)) * (
        (w_xy.sum(axis=1) - w_xx.sum(axis=1))[:, None] * x
        - w_xy @ xp
        + w_xx @ x
    )
    # one-hot slot gradient:
    # cot_a[i] = (4/N^2) sum_j [ R_xx[i,j] 1(k'_i = k'_j) e_{k_j}
    #                           - R_xy[i,j] 1(k'_i = k_j) e_{k'_j} ]
    onehot_k = np.eye(n_modes)[k]
    onehot_kp = np.eye(n_modes)[kp]
    a_xx = r_xx * (kp[:, None] == kp[None, :])
    a_xy = r_xy * (kp[:, None] == k[None, :])
    cot_onehot = (4.0 / (n * n)) * (a_xx @ onehot_k - a_xy @ onehot_kp)
    return mmd, cot_x, cot_onehot


def evolve_ising_mixture(spins, neighbors, beta, coupling, field_h, p_global,
                         move_u, sites, logu):
    """m Metropolis steps per chain; each step flips one uniformly chosen
    spin with probability 1 - p_global, all spins otherwise.

    spins: (B, N) int8; move_u, logu: (m, B) float64; sites: (m, B) int64.
    Returns the evolved copy.
    """
    s = np.array(spins, dtype=np.int8)
    n_steps = move_u.shape[0]
    rows = np.arange(s.shape[0])
    for t in range(n_steps):
        glob = move_u[t] < p_global
        site = sites[t]
        si = s[rows, site].astype(np.int64)
        nsum = s[rows[:, None], neighbors[site]].sum(axis=1, dtype=np.int64)
        de_single = (2.0 * coupling) * (si * nsum) + (2.0 * field_h) * si
        de_global = (2.0 * field_h) * s.sum(axis=1, dtype=np.int64)
        de = np.where(glob, de_global, de_single)
        acc = logu[t] < -(beta * de)
        gflip = glob & acc
        s[gflip] = -s[gflip]
        sflip = (~glob) & acc
        s[rows[sflip], site[sflip]] *= -1
    return s


def evolve_ising_multispin(spins, bonds, beta, coupling, field_h, flip_masks, logu):
    """m Metropolis steps per chain; step t flips the mask flip_masks[t].

    spins: (B, N) int8; flip_masks: (m, B, N) uint8; logu: (m, B) float64.
    """
    s = np.array(spins, dtype=np.int8)
    n_steps = flip_masks.shape[0]
    b0, b1 = bonds[:, 0], bonds[:, 1]
    for t in range(n_steps):
        flipped = np.where(flip_masks[t] != 0, -s, s)
        s64 = s.astype(np.int64)
        f64 = flipped.astype(np.int64)
        dbond = (f64[:, b0] * f64[:, b1]).sum(axis=1) - (s64[:, b0] * s64[:, b1]).sum(axis=1)
        dsite = f64.sum(axis=1) - s64.sum(axis=1)
        de = (-coupling) * dbond + (-field_h) * dsite
        acc = logu[t] < -(beta * de)
        s[acc] = flipped[acc]
    return s
