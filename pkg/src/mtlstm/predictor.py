"""Autoregressive rollout of a trained next-step model and label mapping."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import LABEL_NAMES, MONOTONE_ATTRS, EncodingSpec
from .lstm import GroupSchedule, LstmParams, NumericError, forward_sequence, label_probabilities


def snap_categoricals(vec, spec: EncodingSpec) -> np.ndarray:
    """Replace every categorical block by the one-hot of its argmax (lowest index wins ties)."""
    out = np.array(vec, dtype=np.float64, copy=True)
    for off, w in spec.categorical_blocks():
        block = out[..., off : off + w]
        hot = np.argmax(block, axis=-1)
        block[...] = 0.0
        np.put_along_axis(block, hot[..., None], 1.0, axis=-1)
    return out


def _monotone_index(spec: EncodingSpec) -> np.ndarray:
    return np.array([spec.index_of(a) for a in MONOTONE_ATTRS], dtype=np.int64)


def rollout(
    params: LstmParams,
    schedule: GroupSchedule,
    window,
    horizon: int,
    spec: EncodingSpec | None = None,
    connectivity: str = "full",
    refeed: str = "carry",
    use_numba: bool | None = None,
) -> np.ndarray:
    """Predict ``horizon`` vectors past the end of ``window``.

    ``window`` is ``(L, D)`` or a batch ``(N, L, D)``. Each prediction is snapped
    (when ``spec`` is given), count-like features are floored at their previous
    value, and the result is fed back as the next input. ``refeed="carry"``
    continues the recurrent state; ``refeed="literal"`` re-reads the last ``L``
    vectors from a zero state on every iteration.
    """
    W = np.asarray(window, dtype=np.float64)
    single = W.ndim == 2
    if single:
        W = W[None]
    N, L, D = W.shape
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    mono = _monotone_index(spec) if spec is not None else None
    out = np.empty((horizon, N, D))
    X = np.ascontiguousarray(W.swapaxes(0, 1))

    def finish(y, prev, k):
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite prediction at rollout iteration {k}")
        if spec is not None:
            y = snap_categoricals(y, spec)
            y[:, mono] = np.maximum(y[:, mono], prev[:, mono])
        return y

    if refeed == "carry":
        Y, cache = forward_sequence(X, params, schedule, connectivity, 0, None, use_numba)
        state = cache.final_state
        y = finish(Y[-1], X[-1], 0)
        out[0] = y
        for k in range(1, horizon):
            Y, cache = forward_sequence(y[None], params, schedule, connectivity, L + k - 1, state, use_numba)
            state = cache.final_state
            y = finish(Y[-1], y, k)
            out[k] = y
    elif refeed == "literal":
        buf = X
        prev = X[-1]
        for k in range(horizon):
            Y, _ = forward_sequence(buf, params, schedule, connectivity, 0, None, use_numba)
            y = finish(Y[-1], prev, k)
            out[k] = y
            buf = np.concatenate([buf[1:], y[None]], axis=0)
            prev = y
    else:
        raise ValueError(f"unknown refeed mode {refeed!r}")
    out = out.swapaxes(0, 1)
    return out[0] if single else out


def map_labels(mapper: LstmParams, features, use_numba: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-step argmax labels and the softmax probabilities behind them."""
    F = np.asarray(features, dtype=np.float64)
    if F.shape[-1] != mapper.input_size:
        raise ValueError(f"feature size {F.shape[-1]} does not match mapper input {mapper.input_size}")
    if F.ndim == 3:
        P = label_probabilities(mapper, np.ascontiguousarray(F.swapaxes(0, 1)), use_numba).swapaxes(0, 1)
    else:
        P = label_probabilities(mapper, F, use_numba)
    return np.argmax(P, axis=-1), P


@dataclass
class Forecast:
    window_id: str
    vectors: np.ndarray
    labels: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.labels)

    def to_json(self, with_vectors: bool = False) -> str:
        obj = {
            "window_id": self.window_id,
            "horizon": self.horizon,
            "labels": [LABEL_NAMES[int(l)] for l in self.labels],
        }
        if with_vectors:
            obj["vectors"] = [[float(v) for v in row] for row in self.vectors]
        return json.dumps(obj, separators=(",", ":"))


def forecast(
    params: LstmParams,
    schedule: GroupSchedule,
    mapper: LstmParams,
    windows,
    horizon: int,
    spec: EncodingSpec,
    window_ids=None,
    connectivity: str = "full",
    refeed: str = "carry",
) -> list[Forecast]:
    W = np.asarray(windows, dtype=np.float64)
    if W.ndim == 2:
        W = W[None]
    vecs = rollout(params, schedule, W, horizon, spec, connectivity, refeed)
    labels, _ = map_labels(mapper, vecs)
    ids = window_ids if window_ids is not None else [str(i) for i in range(len(W))]
    return [Forecast(str(i), v, l) for i, v, l in zip(ids, vecs, labels)]


def write_forecasts(forecasts, path, with_vectors: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in forecasts:
            fh.write(f.to_json(with_vectors))
            fh.write("\n")


def read_forecasts(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
