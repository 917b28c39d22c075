"""Compiled inner loops for constraint projection and effective-weight recovery."""
from __future__ import annotations

import math

import numba as nb
import numpy as np

FREE, CONTINUOUS, ONE_BIT = 0, 1, 2


@nb.njit(cache=True, inline="always")
def _project(z, lo, hi, mode):
    a = abs(z)
    if a < lo:
        a = lo
    elif a > hi:
        a = hi
    if mode == FREE:
        if abs(z) == 0.0:
            return complex(a, 0.0)
        return z * (a / abs(z))
    if mode == CONTINUOUS and z.imag >= 0.0:
        if abs(z) == 0.0:
            return complex(a, 0.0)
        return z * (a / abs(z))
    # lower half plane (continuous) or one-bit: nearest of 0 / 180 degrees
    if z.real >= 0.0:
        return complex(a, 0.0)
    return complex(-a, 0.0)


@nb.njit(cache=True)
def project_matrix(z, lo, hi, mode):
    out = np.empty_like(z)
    flat_in = z.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = _project(flat_in[i], lo, hi, mode)
    return out


@nb.njit(cache=True)
def program_columns(U, V, counts, lo, hi, mode, thetas, tol):
    """Project superposed states, one program per row of ``U``.

    U: (P, K, N) per-program atom weights (already scaled); V: (K, J) code
    states per distinct segment column with multiplicities ``counts``.
    For each program, tries every global rotation in ``thetas`` and keeps the
    first whose coherent retained fraction is within ``tol`` of the best.
    Returns projected columns (P, N, J), chosen rotation index (P,), retained fraction (P,).
    """
    P, K, N = U.shape
    J = V.shape[1]
    R = thetas.shape[0]
    Q = np.zeros((P, N, J), dtype=np.complex128)
    rot = np.zeros(P, dtype=np.int64)
    kept = np.zeros(P, dtype=np.float64)
    metric = np.zeros(R, dtype=np.float64)
    cos_t = np.cos(thetas)
    sin_t = np.sin(thetas)
    zr = np.empty((N, J))
    zi = np.empty((N, J))
    za = np.empty((N, J))
    amp = np.empty((N, J))
    for p in range(P):
        pn = 0.0
        zn = 0.0
        for n in range(N):
            for j in range(J):
                z = 0j
                for k in range(K):
                    z += U[p, k, n] * V[k, j]
                zr[n, j] = z.real
                zi[n, j] = z.imag
                m = math.sqrt(z.real * z.real + z.imag * z.imag)
                za[n, j] = m
                a = min(max(m, lo), hi)
                amp[n, j] = a
                pn += counts[j] * a * a
                zn += counts[j] * m * m
        # |q| equals the clipped amplitude for every rotation, so only the
        # overlap <P, Z> depends on the rotation
        for r in range(R):
            ct = cos_t[r]
            st = sin_t[r]
            o_re = 0.0
            o_im = 0.0
            for n in range(N):
                for j in range(J):
                    xr = zr[n, j] * ct - zi[n, j] * st
                    xi = zr[n, j] * st + zi[n, j] * ct
                    a = amp[n, j]
                    c = counts[j]
                    if mode == 0 or (mode == 1 and xi >= 0.0):
                        o_re += c * a * za[n, j]
                    elif xr >= 0.0:
                        o_re += c * a * xr
                        o_im -= c * a * xi
                    else:
                        o_re -= c * a * xr
                        o_im += c * a * xi
            if pn > 0.0 and zn > 0.0:
                metric[r] = (o_re * o_re + o_im * o_im) / (pn * zn)
            else:
                metric[r] = 0.0
        best = metric.max()
        b = 0
        for r in range(R):
            if metric[r] >= best * (1.0 - tol):
                b = r
                break
        rot[p] = b
        kept[p] = metric[b]
        e = complex(cos_t[b], sin_t[b])
        for n in range(N):
            for j in range(J):
                Q[p, n, j] = _project(complex(zr[n, j], zi[n, j]) * e, lo, hi, mode)
    return Q, rot, kept


@nb.njit(cache=True)
def scan_points(F1, F2, E1, S1, E2, S2, G1, G2, lag0, w):
    """Detection value per focus point from precomputed path signals.

    F1: projected fixed reference component (L,); F2: fixed surveillance
    component (L,).  E*: per-path signals (I, L) with segment-column index
    S* (I, L); G*: per-point path gains per column (P, I, J).  For each point
    the reference and surveillance signals are assembled, and the normalised
    correlation is searched over lags ``lag0[p] - w .. lag0[p] + w``.
    Returns values (P,), chosen lag (P,) and reference energy (P,).
    """
    P = G1.shape[0]
    L = F1.shape[0]
    I1 = E1.shape[0]
    I2 = E2.shape[0]
    out = np.zeros(P, dtype=np.complex128)
    lag = np.zeros(P, dtype=np.int64)
    energy = np.zeros(P, dtype=np.float64)
    y1 = np.empty(L, dtype=np.complex128)
    y2 = np.empty(L, dtype=np.complex128)
    for p in range(P):
        for t in range(L):
            y1[t] = F1[t]
            y2[t] = F2[t]
        for i in range(I1):
            for t in range(L):
                y1[t] += G1[p, i, S1[i, t]] * E1[i, t]
        for i in range(I2):
            for t in range(L):
                y2[t] += G2[p, i, S2[i, t]] * E2[i, t]
        den = 0.0
        for t in range(L):
            den += y1[t].real * y1[t].real + y1[t].imag * y1[t].imag
        energy[p] = den
        best = -1.0
        for l in range(lag0[p] - w, lag0[p] + w + 1):
            lo = max(0, -l)
            hi = min(L, L - l)
            acc = 0j
            for t in range(lo, hi):
                acc += y1[t] * np.conj(y2[t + l])
            mag = abs(acc)
            if mag > best:
                best = mag
                lag[p] = l
                out[p] = acc
        if den > 0.0:
            out[p] = out[p] / den
    return out, lag, energy
