"""Numba versions of the packed GRU recurrence.

Same contracts as the numpy kernels. Matrix products go through ``np.dot``
(BLAS). libm's scalar ``exp``/``tanh`` are the bottleneck inside a jitted
loop, so the gate nonlinearities use a branch-free exponential (Cody-Waite
range reduction plus a degree-13 Taylor polynomial, within ~2 ulp of libm)
that LLVM can pipeline.
"""

import numpy as np
from numba import njit

_FASTMATH = {"nnan", "ninf", "nsz", "contract"}

_LOG2E = 1.4426950408889634
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_SHIFTER = 6755399441055744.0  # 1.5 * 2**52, rounds to nearest integer
_SHIFTER_BITS = int(np.array([_SHIFTER]).view(np.int64)[0])


@njit(cache=True, nogil=True, fastmath=_FASTMATH, error_model="numpy")
def exp_inplace(x, scratch):
    """``x[:] = exp(x)`` for a 1-d contiguous array; inputs clamped to +-708."""
    n = x.shape[0]
    for i in range(n):
        v = min(max(x[i], -708.0), 708.0)
        y = v * _LOG2E + _SHIFTER
        scratch[i] = y
        k = y - _SHIFTER
        r = v - k * _LN2_HI - k * _LN2_LO
        p = 1.0 / 6227020800.0
        p = p * r + 1.0 / 479001600.0
        p = p * r + 1.0 / 39916800.0
        p = p * r + 1.0 / 3628800.0
        p = p * r + 1.0 / 362880.0
        p = p * r + 1.0 / 40320.0
        p = p * r + 1.0 / 5040.0
        p = p * r + 1.0 / 720.0
        p = p * r + 1.0 / 120.0
        p = p * r + 1.0 / 24.0
        p = p * r + 1.0 / 6.0
        p = p * r + 0.5
        p = p * r + 1.0
        p = p * r + 1.0
        x[i] = p
    bits = scratch[:n].view(np.int64)
    for i in range(n):
        bits[i] = (bits[i] - _SHIFTER_BITS + 1023) << 52
    scale = bits.view(np.float64)
    for i in range(n):
        x[i] *= scale[i]


@njit(cache=True, nogil=True, fastmath=_FASTMATH, error_model="numpy")
def sigmoid_inplace(a, e, scratch):
    n = a.shape[0]
    for i in range(n):
        e[i] = -abs(a[i])
    exp_inplace(e[:n], scratch)
    for i in range(n):
        num = 1.0 if a[i] >= 0.0 else e[i]
        a[i] = num / (1.0 + e[i])


@njit(cache=True, nogil=True, fastmath=_FASTMATH, error_model="numpy")
def tanh_inplace(a, e, scratch):
    n = a.shape[0]
    for i in range(n):
        e[i] = -2.0 * abs(a[i])
    exp_inplace(e[:n], scratch)
    for i in range(n):
        t = (1.0 - e[i]) / (1.0 + e[i])
        a[i] = t if a[i] >= 0.0 else -t


@njit(cache=True, nogil=True, error_model="numpy")
def _step(xp, lo, n, w_t, b, h, uzr_t, uh_t, z, r, hh, zrow, xbuf, gbuf, rhbuf, cbuf, e, scratch):
    """Advance the first ``n`` rows of ``h`` one step.

    Gates land in ``z``/``r``/``hh`` starting at row ``zrow``; inputs are
    read from ``xp`` starting at row ``lo``.
    """
    hidden = h.shape[1]
    hp = h[:n]
    np.dot(xp[lo : lo + n], w_t, xbuf[:n])
    np.dot(hp, uzr_t, gbuf[:n])
    for i in range(n):
        row = zrow + i
        for j in range(hidden):
            z[row, j] = (xbuf[i, j] + b[j]) + gbuf[i, j]
        for j in range(hidden):
            r[row, j] = (xbuf[i, hidden + j] + b[hidden + j]) + gbuf[i, hidden + j]
    sigmoid_inplace(z[zrow : zrow + n].reshape(-1), e, scratch)
    sigmoid_inplace(r[zrow : zrow + n].reshape(-1), e, scratch)
    for i in range(n):
        for j in range(hidden):
            rhbuf[i, j] = r[zrow + i, j] * hp[i, j]
    np.dot(rhbuf[:n], uh_t, cbuf[:n])
    for i in range(n):
        row = zrow + i
        for j in range(hidden):
            hh[row, j] = (xbuf[i, 2 * hidden + j] + b[2 * hidden + j]) + cbuf[i, j]
    tanh_inplace(hh[zrow : zrow + n].reshape(-1), e, scratch)
    for i in range(n):
        row = zrow + i
        for j in range(hidden):
            zv = z[row, j]
            h[i, j] = (1.0 - zv) * hp[i, j] + zv * hh[row, j]


@njit(cache=True, nogil=True)
def forward_packed(xp, w, b, offsets, counts, uzr_t, uh_t, h, hprev, z, r, hh):
    batch, hidden = h.shape
    w_t = np.ascontiguousarray(w.T)
    xbuf = np.empty((batch, 3 * hidden))
    gbuf = np.empty((batch, 2 * hidden))
    rhbuf = np.empty((batch, hidden))
    cbuf = np.empty((batch, hidden))
    e = np.empty(batch * hidden)
    scratch = np.empty(batch * hidden)
    for t in range(counts.shape[0]):
        n = counts[t]
        lo = offsets[t]
        hprev[lo : lo + n] = h[:n]
        _step(xp, lo, n, w_t, b, h, uzr_t, uh_t, z, r, hh, lo, xbuf, gbuf, rhbuf, cbuf, e, scratch)
    return h


@njit(cache=True, nogil=True)
def forward_final(xp, w, b, offsets, counts, uzr_t, uh_t, h):
    batch, hidden = h.shape
    w_t = np.ascontiguousarray(w.T)
    z = np.empty((batch, hidden))
    r = np.empty((batch, hidden))
    hh = np.empty((batch, hidden))
    xbuf = np.empty((batch, 3 * hidden))
    gbuf = np.empty((batch, 2 * hidden))
    rhbuf = np.empty((batch, hidden))
    cbuf = np.empty((batch, hidden))
    e = np.empty(batch * hidden)
    scratch = np.empty(batch * hidden)
    for t in range(counts.shape[0]):
        _step(xp, offsets[t], counts[t], w_t, b, h, uzr_t, uh_t, z, r, hh, 0,
              xbuf, gbuf, rhbuf, cbuf, e, scratch)
    return h


@njit(cache=True, nogil=True)
def _flush(rows, dzr_buf, dh_buf, hp_buf, rh_buf, x_buf, dw, db, du, acc_zr, acc_h, acc_w):
    hidden = hp_buf.shape[1]
    d = x_buf.shape[1]
    np.dot(dzr_buf[:rows].T, hp_buf[:rows], acc_zr)
    np.dot(dh_buf[:rows].T, rh_buf[:rows], acc_h)
    for j in range(2 * hidden):
        for c in range(hidden):
            du[j, c] += acc_zr[j, c]
    for j in range(hidden):
        for c in range(hidden):
            du[2 * hidden + j, c] += acc_h[j, c]
    np.dot(dzr_buf[:rows].T, x_buf[:rows], acc_w[: 2 * hidden])
    np.dot(dh_buf[:rows].T, x_buf[:rows], acc_w[2 * hidden :])
    for j in range(3 * hidden):
        for c in range(d):
            dw[j, c] += acc_w[j, c]
    for i in range(rows):
        for j in range(2 * hidden):
            db[j] += dzr_buf[i, j]
        for j in range(hidden):
            db[2 * hidden + j] += dh_buf[i, j]


@njit(cache=True, nogil=True, error_model="numpy")
def backward_packed(dh, xp, hprev, z, r, hh, offsets, counts, uzr, uh, dw, db, du):
    batch, hidden = dh.shape
    d = xp.shape[1]
    # weight gradients are accumulated over several steps per GEMM
    cap = max(batch, 512)
    dzr_buf = np.empty((cap, 2 * hidden))
    dh_buf = np.empty((cap, hidden))
    hp_buf = np.empty((cap, hidden))
    rh_buf = np.empty((cap, hidden))
    x_buf = np.empty((cap, d))
    acc_zr = np.empty((2 * hidden, hidden))
    acc_h = np.empty((hidden, hidden))
    acc_w = np.empty((3 * hidden, d))
    drh = np.empty_like(dh)
    back = np.empty_like(dh)
    rows = 0
    for t in range(counts.shape[0] - 1, -1, -1):
        n = counts[t]
        lo = offsets[t]
        if rows + n > cap:
            _flush(rows, dzr_buf, dh_buf, hp_buf, rh_buf, x_buf, dw, db, du, acc_zr, acc_h, acc_w)
            rows = 0
        da_h = dh_buf[rows : rows + n]
        da_zr = dzr_buf[rows : rows + n]
        x_buf[rows : rows + n] = xp[lo : lo + n]
        hp_buf[rows : rows + n] = hprev[lo : lo + n]
        for i in range(n):
            row = lo + i
            for j in range(hidden):
                hv = hh[row, j]
                da_h[i, j] = dh[i, j] * z[row, j] * (1.0 - hv * hv)
                rh_buf[rows + i, j] = r[row, j] * hprev[row, j]
        np.dot(da_h, uh, drh[:n])
        for i in range(n):
            row = lo + i
            for j in range(hidden):
                g = dh[i, j]
                zv = z[row, j]
                rv = r[row, j]
                hpv = hprev[row, j]
                da_zr[i, j] = g * (hh[row, j] - hpv) * zv * (1.0 - zv)
                da_zr[i, hidden + j] = drh[i, j] * hpv * rv * (1.0 - rv)
                dh[i, j] = g * (1.0 - zv) + drh[i, j] * rv
        np.dot(da_zr, uzr, back[:n])
        for i in range(n):
            for j in range(hidden):
                dh[i, j] += back[i, j]
        rows += n
    if rows > 0:
        _flush(rows, dzr_buf, dh_buf, hp_buf, rh_buf, x_buf, dw, db, du, acc_zr, acc_h, acc_w)
    return dh
