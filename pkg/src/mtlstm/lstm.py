"""Multi-timescale (grouped-clock) LSTM: cell, sequence pass, BPTT, training.

The hidden layer is split into ``k`` contiguous groups. Group ``i`` runs its
ordinary LSTM update only at steps ``t`` with ``t % periods[i] == 0``; on other
steps its ``h`` and ``c`` slices are carried over verbatim. A schedule whose
periods are all 1 is an ordinary LSTM.

Gate rows are stacked ``[input; forget; output; candidate]`` in ``W`` with
shape ``(4H, D+H)``; every gate reads the concatenation ``x || h_prev``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .tensor import (
    AdamState,
    NumericError,
    PROB_FLOOR,
    ShapeError,
    adam_step,
    clip_by_global_norm,
    sigmoid,
    softmax,
)

log = logging.getLogger(__name__)

CONNECTIVITY = ("full", "clockwork")
N_LABELS = 11


class ScheduleError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class GroupSchedule:
    sizes: tuple[int, ...]
    periods: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        periods = tuple(int(p) for p in self.periods)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "periods", periods)
        if len(sizes) < 1:
            raise ScheduleError("schedule needs at least one group")
        if len(sizes) != len(periods):
            raise ScheduleError("sizes and periods must have the same length")
        if any(s < 1 for s in sizes):
            raise ScheduleError("group sizes must be positive")
        if any(p < 1 for p in periods):
            raise ScheduleError("periods must be positive")
        if any(b < a for a, b in zip(periods, periods[1:])):
            raise ScheduleError("periods must be non-decreasing")
        if periods[0] != 1:
            raise ScheduleError("the first period must be 1")

    @classmethod
    def split(cls, hidden_size: int, periods) -> "GroupSchedule":
        """Near-equal group sizes, larger groups first (64 over 3 -> 22/21/21)."""
        k = len(periods)
        if hidden_size < k:
            raise ScheduleError("hidden size smaller than group count")
        base, extra = divmod(hidden_size, k)
        sizes = [base + (1 if i < extra else 0) for i in range(k)]
        return cls(tuple(sizes), tuple(periods))

    @classmethod
    def standard(cls, hidden_size: int) -> "GroupSchedule":
        return cls((hidden_size,), (1,))

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def hidden_size(self) -> int:
        return sum(self.sizes)

    def group_of_unit(self) -> np.ndarray:
        return np.repeat(np.arange(self.k), self.sizes)

    def unit_mask(self, t: int) -> np.ndarray:
        act = np.array([t % p == 0 for p in self.periods])
        return act[self.group_of_unit()]

    def as_dict(self) -> dict:
        return {"sizes": list(self.sizes), "periods": list(self.periods)}


def active_groups(t: int, schedule: GroupSchedule) -> set[int]:
    if t < 0:
        raise ValueError("step index must be >= 0")
    return {i for i, p in enumerate(schedule.periods) if t % p == 0}


# ---------------------------------------------------------------- parameters


@dataclass
class LstmParams:
    W: np.ndarray
    b: np.ndarray
    Wy: np.ndarray
    by: np.ndarray

    NAMES = ("W", "b", "Wy", "by")

    @classmethod
    def init(cls, input_size: int, hidden_size: int, output_size: int, seed: int = 0) -> "LstmParams":
        rng = np.random.default_rng([seed, 0])
        H, D = hidden_size, input_size
        lim = 1.0 / np.sqrt(H)
        W = rng.uniform(-lim, lim, size=(4 * H, D + H))
        Wy = rng.uniform(-lim, lim, size=(output_size, H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        return cls(W, b, Wy, np.zeros(output_size))

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden_size

    @property
    def output_size(self) -> int:
        return self.Wy.shape[0]

    def gate(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        H = self.hidden_size
        return self.W[k * H : (k + 1) * H], self.b[k * H : (k + 1) * H]

    W_i = property(lambda s: s.gate(0)[0])
    W_f = property(lambda s: s.gate(1)[0])
    W_o = property(lambda s: s.gate(2)[0])
    W_g = property(lambda s: s.gate(3)[0])
    b_i = property(lambda s: s.gate(0)[1])
    b_f = property(lambda s: s.gate(1)[1])
    b_o = property(lambda s: s.gate(2)[1])
    b_g = property(lambda s: s.gate(3)[1])

    def to_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "LstmParams":
        return cls(*(np.ascontiguousarray(d[n], dtype=np.float64) for n in cls.NAMES))

    def copy(self) -> "LstmParams":
        return LstmParams.from_dict({k: v.copy() for k, v in self.to_dict().items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.to_dict().values())

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Per-gate tensors as written to checkpoints."""
        out = {}
        for k, g in enumerate("ifog"):
            w, b = self.gate(k)
            out[f"W_{g}"] = w
            out[f"b_{g}"] = b
        out["W_y"] = self.Wy
        out["b_y"] = self.by
        return out

    @classmethod
    def from_named_tensors(cls, t: dict[str, np.ndarray]) -> "LstmParams":
        W = np.concatenate([t[f"W_{g}"] for g in "ifog"], axis=0)
        b = np.concatenate([t[f"b_{g}"] for g in "ifog"])
        return cls(W, b, t["W_y"], t["b_y"])


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, hidden_size: int) -> "CellState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size), 0)


def connectivity_mask(schedule: GroupSchedule, input_size: int, mode: str) -> np.ndarray | None:
    """Mask on ``W`` for clockwork connectivity: a group reads itself and slower groups only."""
    if mode not in CONNECTIVITY:
        raise ValueError(f"unknown connectivity {mode!r}")
    if mode == "full":
        return None
    per = np.asarray(schedule.periods)[schedule.group_of_unit()]
    rec = (per[None, :] >= per[:, None]).astype(np.float64)
    H = schedule.hidden_size
    m = np.ones((4 * H, input_size + H))
    m[:, input_size:] = np.tile(rec, (4, 1))
    return m


def _effective_W(params: LstmParams, schedule: GroupSchedule, connectivity: str) -> np.ndarray:
    m = connectivity_mask(schedule, params.input_size, connectivity)
    return params.W if m is None else params.W * m


# ---------------------------------------------------------------- single step


def lstm_step(x, h, c, params: LstmParams):
    """Monolithic LSTM step (all units update). Returns ``(h, c)``."""
    z = np.concatenate([x, h])
    a = params.W @ z + params.b
    H = params.hidden_size
    i = sigmoid(a[:H])
    f = sigmoid(a[H : 2 * H])
    o = sigmoid(a[2 * H : 3 * H])
    g = np.tanh(a[3 * H :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def mts_step(x, state: CellState, params: LstmParams, schedule: GroupSchedule, connectivity: str = "full") -> CellState:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_size,) or state.h.shape != (params.hidden_size,):
        raise ShapeError("mts_step: input or state has the wrong size")
    if schedule.hidden_size != params.hidden_size:
        raise ShapeError("schedule does not partition the hidden layer")
    if not (np.all(np.isfinite(state.h)) and np.all(np.isfinite(state.c))):
        raise NumericError("non-finite cell state")
    eff = LstmParams(_effective_W(params, schedule, connectivity), params.b, params.Wy, params.by)
    h_new, c_new = lstm_step(x, state.h, state.c, eff)
    mask = schedule.unit_mask(state.t)
    return CellState(np.where(mask, h_new, state.h), np.where(mask, c_new, state.c), state.t + 1)


# ---------------------------------------------------------------- sequences


@dataclass
class SeqCache:
    X: np.ndarray
    Hs: np.ndarray
    Cs: np.ndarray
    G: np.ndarray
    Wp: np.ndarray
    idx: np.ndarray
    nact: np.ndarray
    pat: np.ndarray
    rows: list
    single: bool

    @property
    def final_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.Hs[-1], self.Cs[-1]


def _patterns(schedule: GroupSchedule, t0: int, T: int):
    """Activity pattern id per step, plus unit indices per pattern."""
    H = schedule.hidden_size
    starts = np.concatenate([[0], np.cumsum(schedule.sizes)])
    keys: dict[tuple, int] = {}
    pat = np.empty(T, dtype=np.int64)
    units = []
    for s in range(T):
        key = tuple(i for i, p in enumerate(schedule.periods) if (t0 + s) % p == 0)
        if key not in keys:
            keys[key] = len(units)
            units.append(np.concatenate([np.arange(starts[i], starts[i + 1]) for i in key]))
        pat[s] = keys[key]
    idx = np.zeros((len(units), H), dtype=np.int64)
    nact = np.zeros(len(units), dtype=np.int64)
    rows = []
    for p, u in enumerate(units):
        idx[p, : len(u)] = u
        nact[p] = len(u)
        rows.append(np.concatenate([u + k * H for k in range(4)]))
    return pat, idx, nact, rows


def _gather(W, b, rows):
    P = len(rows)
    Wp = np.zeros((P, W.shape[0], W.shape[1]))
    bp = np.zeros((P, W.shape[0]))
    for p, r in enumerate(rows):
        Wp[p, : len(r)] = W[r]
        bp[p, : len(r)] = b[r]
    return Wp, bp


def hidden_sequence(
    xs,
    params: LstmParams,
    schedule: GroupSchedule,
    connectivity: str = "full",
    t0: int = 0,
    state: tuple[np.ndarray, np.ndarray] | None = None,
    use_numba: bool | None = None,
) -> SeqCache:
    X = np.asarray(xs, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[:, None, :]
    if X.ndim != 3 or X.shape[0] < 1:
        raise ShapeError("expected a non-empty (T, D) or (T, B, D) sequence")
    T, B, D = X.shape
    if D != params.input_size:
        raise ShapeError(f"input size {D} != model input size {params.input_size}")
    if schedule.hidden_size != params.hidden_size:
        raise ShapeError("schedule does not partition the hidden layer")
    H = params.hidden_size
    if state is None:
        h0, c0 = np.zeros((B, H)), np.zeros((B, H))
    else:
        h0 = np.ascontiguousarray(np.broadcast_to(state[0], (B, H)), dtype=np.float64)
        c0 = np.ascontiguousarray(np.broadcast_to(state[1], (B, H)), dtype=np.float64)
    pat, idx, nact, rows = _patterns(schedule, t0, T)
    Wp, bp = _gather(_effective_W(params, schedule, connectivity), params.b, rows)
    X = np.ascontiguousarray(X)
    Hs, Cs, G = kernels.seq_forward(X, h0, c0, Wp, bp, idx, nact, pat, use_numba)
    return SeqCache(X, Hs, Cs, G, Wp, idx, nact, pat, rows, single)


def head(params: LstmParams, Hs: np.ndarray) -> np.ndarray:
    return Hs @ params.Wy.T + params.by


def forward_sequence(
    xs,
    params: LstmParams,
    schedule: GroupSchedule,
    connectivity: str = "full",
    t0: int = 0,
    state=None,
    use_numba: bool | None = None,
) -> tuple[np.ndarray, SeqCache]:
    """Run the sequence from ``state`` (zeros by default) and apply the linear head.

    Output ``t`` is ``W_y h_t + b_y``, the one-step-ahead prediction.
    """
    cache = hidden_sequence(xs, params, schedule, connectivity, t0, state, use_numba)
    Y = head(params, cache.Hs[1:])
    if not np.all(np.isfinite(Y)):
        raise NumericError("non-finite model output")
    return (Y[:, 0] if cache.single else Y), cache


def _loss_and_dY(Y, targets, loss: str):
    if loss == "rmse":
        T_ = np.asarray(targets, dtype=np.float64)
        if T_.shape != Y.shape:
            raise ShapeError(f"targets {T_.shape} do not match outputs {Y.shape}")
        diff = Y - T_
        value = float(np.sqrt(np.mean(diff * diff)))
        if value == 0.0:
            return 0.0, np.zeros_like(Y)
        return value, diff / (diff.size * value)
    if loss == "cross_entropy":
        tgt = np.asarray(targets)
        if tgt.shape != Y.shape[:-1]:
            raise ShapeError(f"label targets {tgt.shape} do not match outputs {Y.shape[:-1]}")
        if tgt.size and (tgt.min() < 0 or tgt.max() >= Y.shape[-1]):
            raise IndexError("label out of range")
        P = softmax(Y)
        pt = np.take_along_axis(P, tgt[..., None], axis=-1)[..., 0]
        n = pt.size
        value = float(-np.mean(np.log(np.maximum(pt, PROB_FLOOR))))
        dY = P.copy()
        np.put_along_axis(dY, tgt[..., None], np.take_along_axis(dY, tgt[..., None], axis=-1) - 1.0, axis=-1)
        dY[pt < PROB_FLOOR] = 0.0
        return value, dY / n
    raise ValueError(f"unknown loss {loss!r}")


def bptt(
    xs,
    targets,
    params: LstmParams,
    schedule: GroupSchedule,
    loss: str = "rmse",
    connectivity: str = "full",
    t0: int = 0,
    use_numba: bool | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Exact loss gradient through the unrolled grouped LSTM.

    ``rmse`` is taken over every output element; ``cross_entropy`` is the mean
    over steps of the softmax-head log loss (probabilities floored at 1e-12).
    Inactive groups pass their incoming ``dh``/``dc`` straight to the previous step.
    """
    cache = hidden_sequence(xs, params, schedule, connectivity, t0, None, use_numba)
    Hs = cache.Hs
    Y = head(params, Hs[1:])
    tg = np.asarray(targets)
    if cache.single:
        tg = tg[:, None] if loss == "cross_entropy" else tg.reshape(Y.shape)
    value, dY = _loss_and_dY(Y, tg, loss)
    dWy = np.einsum("tbo,tbh->oh", dY, Hs[1:])
    dby = dY.sum(axis=(0, 1))
    dHout = np.ascontiguousarray(dY @ params.Wy)
    B, H = Hs.shape[1], Hs.shape[2]
    zeros = np.zeros((B, H))
    dWp, dbp, _, _, _ = kernels.seq_backward(
        cache.X, Hs, cache.Cs, cache.G, dHout, cache.Wp, cache.idx, cache.nact, cache.pat, zeros, zeros, use_numba
    )
    dW = np.zeros_like(params.W)
    db = np.zeros_like(params.b)
    for p, r in enumerate(cache.rows):
        dW[r] += dWp[p, : len(r)]
        db[r] += dbp[p, : len(r)]
    m = connectivity_mask(schedule, params.input_size, connectivity)
    if m is not None:
        dW *= m
    grads = {"W": dW, "b": db, "Wy": dWy, "by": dby}
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k}")
    return value, grads


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.001
    clip_norm: float | None = 5.0
    seed: int = 0


@dataclass
class TrainResult:
    params: LstmParams
    history: list[float] = field(default_factory=list)


def _fit(params, schedule, connectivity, X, Y, loss, cfg: TrainConfig, use_numba=None) -> TrainResult:
    N = X.shape[0]
    if N == 0:
        raise TrainingError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 1])
    p = params.to_dict()
    state = AdamState.zeros_like(p, learning_rate=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        total, count = 0.0, 0
        for s in range(0, N, cfg.batch_size):
            sel = np.sort(order[s : s + cfg.batch_size])
            xb = np.ascontiguousarray(X[sel].swapaxes(0, 1))
            yb = np.ascontiguousarray(Y[sel].swapaxes(0, 1))
            try:
                value, grads = bptt(xb, yb, LstmParams.from_dict(p), schedule, loss, connectivity, 0, use_numba)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {s // cfg.batch_size}: {exc}") from exc
            if not np.isfinite(value):
                raise TrainingError(f"epoch {epoch}, batch {s // cfg.batch_size}: non-finite loss")
            if cfg.clip_norm is not None:
                grads = clip_by_global_norm(grads, cfg.clip_norm)
            p, state = adam_step(p, grads, state)
            total += value * len(sel)
            count += len(sel)
        history.append(total / count)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return TrainResult(LstmParams.from_dict(p), history)


def train(
    sequences,
    params: LstmParams,
    schedule: GroupSchedule,
    config: TrainConfig | None = None,
    connectivity: str = "full",
    use_numba: bool | None = None,
) -> TrainResult:
    """Teacher-forced next-step regression on ``(N, L, D)`` windows.

    Input at step ``t`` is the true vector ``t``; target is the true vector ``t+1``.
    The loss is RMSE over the batch. Each epoch records the sample-weighted mean
    of the pre-update batch losses.
    """
    cfg = config or TrainConfig()
    S = np.asarray(sequences, dtype=np.float64)
    if S.ndim != 3 or S.shape[0] == 0:
        raise TrainingError("empty dataset")
    if S.shape[1] < 2:
        raise TrainingError("windows need at least two steps")
    if S.shape[2] != params.input_size or params.output_size != params.input_size:
        raise ShapeError("window feature size does not match the model")
    return _fit(params, schedule, connectivity, S[:, :-1], S[:, 1:], "rmse", cfg, use_numba)


def train_mapper(
    features,
    labels,
    config: TrainConfig | None = None,
    hidden_size: int = 64,
    n_labels: int = N_LABELS,
    use_numba: bool | None = None,
) -> TrainResult:
    """Per-step softmax classifier on a standard single-group LSTM.

    ``features`` is ``(N, L, D)``; ``labels`` is ``(N, L)`` of class indices.
    """
    cfg = config or TrainConfig(epochs=20, batch_size=32)
    F = np.asarray(features, dtype=np.float64)
    Lb = np.asarray(labels, dtype=np.int64)
    if F.ndim != 3 or F.shape[0] == 0:
        raise TrainingError("empty dataset")
    if Lb.shape != F.shape[:2]:
        raise ShapeError("labels must align with feature windows")
    if Lb.min() < 0 or Lb.max() >= n_labels:
        raise IndexError(f"label out of range 0..{n_labels - 1}")
    params = LstmParams.init(F.shape[2], hidden_size, n_labels, cfg.seed)
    return _fit(params, GroupSchedule.standard(hidden_size), "full", F, Lb, "cross_entropy", cfg, use_numba)


def label_probabilities(params: LstmParams, features, use_numba: bool | None = None) -> np.ndarray:
    """Softmax over labels at each step; ``(L, D) -> (L, 11)`` or batched."""
    Y, _ = forward_sequence(features, params, GroupSchedule.standard(params.hidden_size), use_numba=use_numba)
    return softmax(Y)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"MTLSTMCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: LstmParams
    schedule: GroupSchedule
    connectivity: str = "full"
    seed: int = 0
    head: str = "linear"
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = ckpt.params.named_tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "input_size": ckpt.params.input_size,
        "hidden_size": ckpt.params.hidden_size,
        "output_size": ckpt.params.output_size,
        "head": ckpt.head,
        "schedule": ckpt.schedule.as_dict(),
        "connectivity": ckpt.connectivity,
        "seed": int(ckpt.seed),
        "meta": ckpt.meta,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors.items()],
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(hb)))
        fh.write(hb)
        for t in tensors.values():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    off = 16 + hlen
    tensors = {}
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        tensors[spec["name"]] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(spec["shape"]).astype(np.float64)
        off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after tensors")
    sch = header["schedule"]
    return Checkpoint(
        params=LstmParams.from_named_tensors(tensors),
        schedule=GroupSchedule(tuple(sch["sizes"]), tuple(sch["periods"])),
        connectivity=header["connectivity"],
        seed=header["seed"],
        head=header["head"],
        meta=header.get("meta", {}),
    )
