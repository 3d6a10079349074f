"""Batched sequence kernels for the grouped (multi-timescale) LSTM.

Two interchangeable backends compute the same thing:

* ``numba`` -- whole time loop compiled with ``@njit``; gate math fused per unit.
* ``numpy`` -- vectorised over batch and active units, Python loop over time.

The numba path is used when numba imports and ``MTLSTM_DISABLE_NUMBA`` is unset
(or ``0``). Both take weights pre-gathered per *activity pattern*: for pattern
``p`` with ``n = nact[p]`` active units ``idx[p, :n]``, rows ``Wp[p, :4n]`` hold
the input/forget/output/candidate gate rows of those units, in that order.
Inactive units copy ``h`` and ``c`` forward unchanged.

Shapes: ``X (T, B, D)``, states ``(T+1, B, H)``, cached gates ``(T, B, 4, H)``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_disabled = os.environ.get("MTLSTM_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled


# ---------------------------------------------------------------- numpy path


def _sig(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def forward_numpy(X, h0, c0, Wp, bp, idx, nact, pat):
    T, B, D = X.shape
    H = h0.shape[1]
    Hs = np.empty((T + 1, B, H))
    Cs = np.empty((T + 1, B, H))
    G = np.empty((T, B, 4, H))
    Hs[0] = h0
    Cs[0] = c0
    Z = np.empty((B, D + H))
    for t in range(T):
        p = pat[t]
        n = nact[p]
        u = idx[p, :n]
        Z[:, :D] = X[t]
        Z[:, D:] = Hs[t]
        A = Z @ Wp[p, : 4 * n].T + bp[p, : 4 * n]
        i = _sig(A[:, :n])
        f = _sig(A[:, n : 2 * n])
        o = _sig(A[:, 2 * n : 3 * n])
        g = np.tanh(A[:, 3 * n :])
        c = f * Cs[t][:, u] + i * g
        Hs[t + 1] = Hs[t]
        Cs[t + 1] = Cs[t]
        Cs[t + 1][:, u] = c
        Hs[t + 1][:, u] = o * np.tanh(c)
        G[t, :, 0, u] = i.T
        G[t, :, 1, u] = f.T
        G[t, :, 2, u] = o.T
        G[t, :, 3, u] = g.T
    return Hs, Cs, G


def backward_numpy(X, Hs, Cs, G, dHout, Wp, idx, nact, pat, dhT, dcT):
    T, B, D = X.shape
    H = Hs.shape[2]
    dWp = np.zeros_like(Wp)
    dbp = np.zeros((Wp.shape[0], Wp.shape[1]))
    dX = np.zeros((T, B, D))
    dh = dhT.copy()
    dc = dcT.copy()
    Z = np.empty((B, D + H))
    for t in range(T - 1, -1, -1):
        p = pat[t]
        n = nact[p]
        u = idx[p, :n]
        dh += dHout[t]
        i = G[t, :, 0, u].T
        f = G[t, :, 1, u].T
        o = G[t, :, 2, u].T
        g = G[t, :, 3, u].T
        tc = np.tanh(Cs[t + 1][:, u])
        dhu = dh[:, u]
        dcu = dc[:, u] + dhu * o * (1.0 - tc * tc)
        dA = np.empty((B, 4 * n))
        dA[:, :n] = dcu * g * i * (1.0 - i)
        dA[:, n : 2 * n] = dcu * Cs[t][:, u] * f * (1.0 - f)
        dA[:, 2 * n : 3 * n] = dhu * tc * o * (1.0 - o)
        dA[:, 3 * n :] = dcu * i * (1.0 - g * g)
        dc[:, u] = dcu * f
        dh[:, u] = 0.0
        Z[:, :D] = X[t]
        Z[:, D:] = Hs[t]
        dWp[p, : 4 * n] += dA.T @ Z
        dbp[p, : 4 * n] += dA.sum(axis=0)
        dZ = dA @ Wp[p, : 4 * n]
        dX[t] = dZ[:, :D]
        dh += dZ[:, D:]
    return dWp, dbp, dX, dh, dc


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True, inline="always")
    def _sig_scalar(x):
        if x >= 0.0:
            return 1.0 / (1.0 + np.exp(-x))
        e = np.exp(x)
        return e / (1.0 + e)

    @numba.njit(cache=True, inline="always")
    def _tanh_scalar(x):
        # libm tanh is ~3x slower than exp here
        if x >= 0.0:
            e = np.exp(-2.0 * x)
            return (1.0 - e) / (1.0 + e)
        e = np.exp(2.0 * x)
        return (e - 1.0) / (1.0 + e)

    @numba.njit(cache=True)
    def forward_numba(X, h0, c0, Wp, bp, idx, nact, pat):
        T, B, D = X.shape
        H = h0.shape[1]
        Hs = np.empty((T + 1, B, H))
        Cs = np.empty((T + 1, B, H))
        G = np.empty((T, B, 4, H))
        Hs[0] = h0
        Cs[0] = c0
        Z = np.empty((B, D + H))
        for t in range(T):
            p = pat[t]
            n = nact[p]
            for b in range(B):
                for d in range(D):
                    Z[b, d] = X[t, b, d]
                for j in range(H):
                    Z[b, D + j] = Hs[t, b, j]
            A = np.dot(Z, Wp[p, : 4 * n].T)
            Hs[t + 1] = Hs[t]
            Cs[t + 1] = Cs[t]
            for b in range(B):
                for j in range(n):
                    un = idx[p, j]
                    ig = _sig_scalar(A[b, j] + bp[p, j])
                    fg = _sig_scalar(A[b, n + j] + bp[p, n + j])
                    og = _sig_scalar(A[b, 2 * n + j] + bp[p, 2 * n + j])
                    gg = _tanh_scalar(A[b, 3 * n + j] + bp[p, 3 * n + j])
                    c = fg * Cs[t, b, un] + ig * gg
                    Cs[t + 1, b, un] = c
                    Hs[t + 1, b, un] = og * _tanh_scalar(c)
                    G[t, b, 0, un] = ig
                    G[t, b, 1, un] = fg
                    G[t, b, 2, un] = og
                    G[t, b, 3, un] = gg
        return Hs, Cs, G

    @numba.njit(cache=True)
    def backward_numba(X, Hs, Cs, G, dHout, Wp, idx, nact, pat, dhT, dcT):
        T, B, D = X.shape
        H = Hs.shape[2]
        dWp = np.zeros_like(Wp)
        dbp = np.zeros((Wp.shape[0], Wp.shape[1]))
        dX = np.zeros((T, B, D))
        dh = dhT.copy()
        dc = dcT.copy()
        Z = np.empty((B, D + H))
        for t in range(T - 1, -1, -1):
            p = pat[t]
            n = nact[p]
            dh += dHout[t]
            dA = np.empty((B, 4 * n))
            for b in range(B):
                for j in range(n):
                    un = idx[p, j]
                    ig = G[t, b, 0, un]
                    fg = G[t, b, 1, un]
                    og = G[t, b, 2, un]
                    gg = G[t, b, 3, un]
                    tc = _tanh_scalar(Cs[t + 1, b, un])
                    dhu = dh[b, un]
                    dcu = dc[b, un] + dhu * og * (1.0 - tc * tc)
                    dA[b, j] = dcu * gg * ig * (1.0 - ig)
                    dA[b, n + j] = dcu * Cs[t, b, un] * fg * (1.0 - fg)
                    dA[b, 2 * n + j] = dhu * tc * og * (1.0 - og)
                    dA[b, 3 * n + j] = dcu * ig * (1.0 - gg * gg)
                    dc[b, un] = dcu * fg
                    dh[b, un] = 0.0
                for d in range(D):
                    Z[b, d] = X[t, b, d]
                for j in range(H):
                    Z[b, D + j] = Hs[t, b, j]
            dWp[p, : 4 * n] += np.dot(dA.T, Z)
            for r in range(4 * n):
                s = 0.0
                for b in range(B):
                    s += dA[b, r]
                dbp[p, r] += s
            dZ = np.dot(dA, Wp[p, : 4 * n])
            for b in range(B):
                for d in range(D):
                    dX[t, b, d] = dZ[b, d]
                for j in range(H):
                    dh[b, j] += dZ[b, D + j]
        return dWp, dbp, dX, dh, dc

else:  # pragma: no cover
    forward_numba = backward_numba = None


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def seq_forward(X, h0, c0, Wp, bp, idx, nact, pat, use_numba: bool | None = None):
    fn = forward_numba if (USE_NUMBA if use_numba is None else use_numba) else forward_numpy
    return fn(X, h0, c0, Wp, bp, idx, nact, pat)


def seq_backward(X, Hs, Cs, G, dHout, Wp, idx, nact, pat, dhT, dcT, use_numba: bool | None = None):
    fn = backward_numba if (USE_NUMBA if use_numba is None else use_numba) else backward_numpy
    return fn(X, Hs, Cs, G, dHout, Wp, idx, nact, pat, dhT, dcT)
