"""Pure-numpy GRU recurrence over a packed, length-sorted batch.

Rows of a packed block are laid out step by step: step ``t`` occupies rows
``offsets[t]:offsets[t] + counts[t]`` and covers the ``counts[t]`` longest
sequences (the batch is sorted by length, descending, so active sequences are
always a prefix). Sequences that have finished simply stop being updated,
which is what makes padding inert.

Shared argument conventions::

    xp     (P, d)   packed inputs
    w, b   (3H, d), (3H,)  stacked input weights / biases, [z | r | candidate]
    uzr    (2H, H)  stacked [U_z; U_r];  uzr_t is its transpose
    uh     (H, H)   U_h;                uh_t is its transpose
    h      (B, H)   hidden state, updated in place
"""

import numpy as np


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _step(xt, hp, w, b, uzr_t, uh_t):
    hidden = hp.shape[1]
    xproj = xt @ w.T + b
    gates = xproj[:, : 2 * hidden] + hp @ uzr_t
    zt = _sigmoid(gates[:, :hidden])
    rt = _sigmoid(gates[:, hidden:])
    ht = np.tanh(xproj[:, 2 * hidden :] + (rt * hp) @ uh_t)
    return zt, rt, ht


def forward_packed(xp, w, b, offsets, counts, uzr_t, uh_t, h, hprev, z, r, hh):
    """Run the recurrence, writing per-row caches into hprev/z/r/hh."""
    for t in range(len(counts)):
        n = counts[t]
        lo = offsets[t]
        hi = lo + n
        hp = h[:n]
        hprev[lo:hi] = hp
        zt, rt, ht = _step(xp[lo:hi], hp, w, b, uzr_t, uh_t)
        z[lo:hi] = zt
        r[lo:hi] = rt
        hh[lo:hi] = ht
        h[:n] = (1.0 - zt) * hp + zt * ht
    return h


def forward_final(xp, w, b, offsets, counts, uzr_t, uh_t, h):
    for t in range(len(counts)):
        n = counts[t]
        lo = offsets[t]
        hp = h[:n]
        zt, rt, ht = _step(xp[lo : lo + n], hp, w, b, uzr_t, uh_t)
        h[:n] = (1.0 - zt) * hp + zt * ht
    return h


def backward_packed(dh, xp, hprev, z, r, hh, offsets, counts, uzr, uh, dw, db, du):
    """Backpropagate ``dh`` (B, H) through time.

    Weight gradients are accumulated into ``dw``, ``db`` and ``du`` (3H, H);
    ``dh`` ends up holding dL/dh0 and is returned.
    """
    hidden = dh.shape[1]
    for t in range(len(counts) - 1, -1, -1):
        n = counts[t]
        lo = offsets[t]
        hi = lo + n
        g = dh[:n]
        hp = hprev[lo:hi]
        zt = z[lo:hi]
        rt = r[lo:hi]
        ht = hh[lo:hi]
        da_h = g * zt * (1.0 - ht * ht)
        drh = da_h @ uh
        da_zr = np.empty((n, 2 * hidden))
        da_zr[:, :hidden] = g * (ht - hp) * zt * (1.0 - zt)
        da_zr[:, hidden:] = drh * hp * rt * (1.0 - rt)
        dh[:n] = g * (1.0 - zt) + drh * rt + da_zr @ uzr
        du[: 2 * hidden] += da_zr.T @ hp
        du[2 * hidden :] += da_h.T @ (rt * hp)
        xt = xp[lo:hi]
        db[: 2 * hidden] += da_zr.sum(axis=0)
        db[2 * hidden :] += da_h.sum(axis=0)
        dw[: 2 * hidden] += da_zr.T @ xt
        dw[2 * hidden :] += da_h.T @ xt
    return dh
