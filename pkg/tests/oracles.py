"""Independent reference implementations used by the tests.

Nothing here calls the package's sequence kernels: the LSTM step is written
with scalar ``math`` loops, and losses for finite differences are built by
composing single steps.
"""

import math

import numpy as np

from mtlstm.lstm import CellState, LstmParams, connectivity_mask, mts_step


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scripted_step(x, h, c, W, b, periods, sizes, t):
    """One grouped LSTM step, element by element."""
    H = len(h)
    z = list(x) + list(h)
    group = [g for g, s in enumerate(sizes) for _ in range(s)]
    h2, c2 = list(h), list(c)
    for u in range(H):
        if t % periods[group[u]] != 0:
            continue
        a = [sum(W[k * H + u][j] * z[j] for j in range(len(z))) + b[k * H + u] for k in range(4)]
        i, f, o, g = _sig(a[0]), _sig(a[1]), _sig(a[2]), math.tanh(a[3])
        c2[u] = f * c[u] + i * g
        h2[u] = o * math.tanh(c2[u])
    return h2, c2


def random_params(rng, D, H, O, scale=0.5):
    return LstmParams(
        rng.normal(0, scale, size=(4 * H, D + H)),
        rng.normal(0, scale, size=4 * H),
        rng.normal(0, scale, size=(O, H)),
        rng.normal(0, scale, size=O),
    )


def composed_outputs(xs, params, schedule, connectivity="full"):
    """Head outputs of a sequence built from single ``mts_step`` calls."""
    st = CellState.zeros(params.hidden_size)
    out = []
    for x in xs:
        st = mts_step(x, st, params, schedule, connectivity)
        out.append(params.Wy @ st.h + params.by)
    return np.array(out)


def composed_loss(xs, targets, params, schedule, loss="rmse", connectivity="full"):
    Y = composed_outputs(xs, params, schedule, connectivity)
    if loss == "rmse":
        return math.sqrt(float(np.mean((Y - targets) ** 2)))
    Z = Y - Y.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(targets)), targets]))


def finite_difference(xs, targets, params, schedule, loss="rmse", connectivity="full", eps=1e-5):
    """Central differences for every parameter entry."""
    grads = {}
    mask = connectivity_mask(schedule, params.input_size, connectivity)
    for name in LstmParams.NAMES:
        base = getattr(params, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            if name == "W" and mask is not None and mask[idx] == 0:
                continue
            old = base[idx]
            base[idx] = old + eps
            fp = composed_loss(xs, targets, params, schedule, loss, connectivity)
            base[idx] = old - eps
            fm = composed_loss(xs, targets, params, schedule, loss, connectivity)
            base[idx] = old
            g[idx] = (fp - fm) / (2 * eps)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()))
    return worst


def brute_window_count(n, input_len, step, horizon):
    count, o = 0, 0
    while o + input_len + horizon <= n:
        count += 1
        o += step
    return count


def standard_lstm(xs, targets, params):
    """Monolithic LSTM, RMSE loss: outputs, loss and textbook BPTT gradients.

    Written against plain numpy (no package kernels, no groups), so it is an
    independent reference for the all-ones-period case.
    """
    W, b, Wy, by = params.W, params.b, params.Wy, params.by
    H = params.hidden_size
    T = len(xs)
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))
    h, c = np.zeros(H), np.zeros(H)
    cache, ys = [], []
    for x in xs:
        z = np.concatenate([x, h])
        a = W @ z + b
        i, f, o, g = sig(a[:H]), sig(a[H : 2 * H]), sig(a[2 * H : 3 * H]), np.tanh(a[3 * H :])
        c_prev = c
        c = f * c + i * g
        h = o * np.tanh(c)
        cache.append((z, i, f, o, g, c_prev, c))
        ys.append(Wy @ h + by)
    Y = np.array(ys)
    diff = Y - targets
    loss = math.sqrt(float(np.mean(diff**2)))
    dY = diff / (diff.size * loss)
    gW, gb, gWy, gby = np.zeros_like(W), np.zeros_like(b), np.zeros_like(Wy), np.zeros_like(by)
    dh_next, dc_next = np.zeros(H), np.zeros(H)
    for t in reversed(range(T)):
        z, i, f, o, g, c_prev, c = cache[t]
        h = o * np.tanh(c)
        gWy += np.outer(dY[t], h)
        gby += dY[t]
        dh = Wy.T @ dY[t] + dh_next
        dc = dc_next + dh * o * (1 - np.tanh(c) ** 2)
        da = np.concatenate([dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dh * np.tanh(c) * o * (1 - o), dc * i * (1 - g**2)])
        gW += np.outer(da, z)
        gb += da
        dz = W.T @ da
        dh_next = dz[len(z) - H :]
        dc_next = dc * f
    return Y, loss, {"W": gW, "b": gb, "Wy": gWy, "by": gby}
