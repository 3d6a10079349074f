"""Baseline, k-fold cross-validation, accuracy and reporting."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import RunConfig
from .data import LABEL_NAMES, ROLES, FeatureSeries, fit_encoding, window_offsets
from .lstm import GroupSchedule, LstmParams, TrainConfig, TrainingError, train, train_mapper
from .predictor import map_labels, rollout

log = logging.getLogger(__name__)

MODEL_TITLES = {"mt-lstm": "Multi-timescale LSTM", "lstm": "LSTM", "baseline1": "Baseline 1"}


# ---------------------------------------------------------------- baseline 1


def baseline1_fit(labels) -> int:
    """Most frequent label; ties go to the lowest class index."""
    flat = np.concatenate([np.ravel(np.asarray(l, dtype=np.int64)) for l in labels]) if len(labels) else np.array([])
    if flat.size == 0:
        raise ValueError("baseline needs at least one training label")
    return int(np.argmax(np.bincount(flat, minlength=len(LABEL_NAMES))))


def baseline1_predict(label: int, horizon: int) -> np.ndarray:
    return np.full(horizon, label, dtype=np.int64)


# ---------------------------------------------------------------- accuracy


def accuracy(pred, truth) -> Fraction:
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty sequences")
    return Fraction(int(np.count_nonzero(p == t)), p.size)


def mean_accuracy(scores) -> Fraction:
    """Unweighted mean of per-window accuracies."""
    scores = list(scores)
    if not scores:
        raise ValueError("no windows to score")
    return sum(scores, Fraction(0)) / len(scores)


def standard_error(values) -> float:
    """Sample standard deviation over folds divided by sqrt(k)."""
    v = np.asarray([float(x) for x in values])
    if v.size < 2:
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


# ---------------------------------------------------------------- folds


@dataclass(frozen=True)
class WindowRef:
    series: int
    offset: int
    team: str
    role: str


@dataclass
class FoldPlan:
    assignment: np.ndarray  # fold id per window
    k: int
    mode: str
    seed: int

    def test(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()


def kfold_split(windows, k: int = 10, mode: str = "window", seed: int = 0, groups=None) -> FoldPlan:
    """Deterministic partition of windows into ``k`` folds.

    ``window`` mode shuffles windows and deals contiguous near-equal chunks.
    ``team`` mode shuffles the distinct ``groups`` (one id per window, e.g. team)
    and deals whole groups round-robin, so a team never straddles folds.
    """
    n = len(windows)
    if n < k:
        raise ValueError(f"need at least {k} windows for {k} folds, got {n}")
    rng = np.random.default_rng([seed, 2])
    assignment = np.empty(n, dtype=np.int64)
    if mode == "window":
        for f, chunk in enumerate(np.array_split(rng.permutation(n), k)):
            assignment[chunk] = f
    elif mode == "team":
        if groups is None:
            groups = [w.team for w in windows]
        groups = list(groups)
        uniq = sorted(set(groups))
        if len(uniq) < k:
            raise ValueError(f"need at least {k} teams for grouped folds, got {len(uniq)}")
        fold_of = {uniq[j]: i % k for i, j in enumerate(rng.permutation(len(uniq)))}
        assignment[:] = [fold_of[g] for g in groups]
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return FoldPlan(assignment, k, mode, seed)


def enumerate_windows(corpus: list[FeatureSeries], input_len: int, step: int, horizon: int) -> list[WindowRef]:
    out = []
    for i, s in enumerate(corpus):
        for o in window_offsets(len(s), input_len, step, horizon):
            out.append(WindowRef(i, o, s.team_id, s.role))
    return out


# ---------------------------------------------------------------- report


@dataclass
class EvalReport:
    models: list[str]
    k: int
    fold_accuracy: dict[str, list[Fraction]]
    role_fold_accuracy: dict[str, dict[str, list[Fraction]]] = field(default_factory=dict)
    role_windows: dict[str, int] = field(default_factory=dict)
    n_windows: int = 0
    meta: dict = field(default_factory=dict)

    def mean(self, model: str, role: str | None = None) -> float:
        acc = self.fold_accuracy[model] if role is None else self.role_fold_accuracy[role][model]
        return float(np.mean([float(a) for a in acc]))

    def stderr(self, model: str, role: str | None = None) -> float:
        acc = self.fold_accuracy[model] if role is None else self.role_fold_accuracy[role][model]
        return standard_error(acc)

    def to_dict(self) -> dict:
        def fl(xs):
            return [float(x) for x in xs]

        return {
            "models": list(self.models),
            "k": self.k,
            "n_windows": self.n_windows,
            "overall": {m: {"mean": self.mean(m), "stderr": self.stderr(m), "folds": fl(self.fold_accuracy[m])} for m in self.models},
            "roles": {
                r: {
                    "windows": self.role_windows.get(r, 0),
                    **{m: {"mean": self.mean(m, r), "stderr": self.stderr(m, r), "folds": fl(self.role_fold_accuracy[r][m])} for m in self.models},
                }
                for r in self.role_fold_accuracy
            },
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        rows = ["model,role,fold,accuracy"]
        for m in self.models:
            for f, a in enumerate(self.fold_accuracy[m]):
                rows.append(f"{m},all,{f},{float(a):.6f}")
        for r in self.role_fold_accuracy:
            for m in self.models:
                for f, a in enumerate(self.role_fold_accuracy[r][m]):
                    rows.append(f"{m},{r},{f},{float(a):.6f}")
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        w = max(len(MODEL_TITLES.get(m, m)) for m in self.models) + 2
        lines = [f"{'Model':<{w}}Accuracy (%)", "-" * (w + 16)]
        for m in self.models:
            lines.append(f"{MODEL_TITLES.get(m, m):<{w}}{100 * self.mean(m):6.2f} ± {100 * self.stderr(m):.2f}")
        if self.role_fold_accuracy:
            roles = sorted(self.role_fold_accuracy, key=lambda r: (ROLES.index(r) if r in ROLES else len(ROLES), r))
            lines += ["", f"{'Model':<{w}}" + "".join(f"{r.capitalize():>18}" for r in roles), "-" * (w + 18 * len(roles))]
            for m in self.models:
                cells = "".join(f"{f'{100 * self.mean(m, r):6.2f} ± {100 * self.stderr(m, r):.2f}':>18}" for r in roles)
                lines.append(f"{MODEL_TITLES.get(m, m):<{w}}{cells}")
            lines.append(f"{'windows':<{w}}" + "".join(f"{self.role_windows.get(r, 0):>18d}" for r in roles))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- cross-validation


@dataclass
class FoldModels:
    spec: object
    predictors: dict[str, LstmParams]
    schedules: dict[str, GroupSchedule]
    mapper: LstmParams
    baseline: dict[str, int]


def _segment(encoded, refs, start: int, length: int) -> np.ndarray:
    return np.stack([encoded[r.series][r.offset + start : r.offset + start + length] for r in refs])


def _labels(corpus, refs, start: int, length: int) -> np.ndarray:
    return np.stack([corpus[r.series].labels[r.offset + start : r.offset + start + length] for r in refs])


def _train_mask(corpus, refs, span: int) -> list[np.ndarray]:
    masks = [np.zeros(len(s), dtype=bool) for s in corpus]
    for r in refs:
        masks[r.series][r.offset : r.offset + span] = True
    return masks


def fit_fold(corpus, refs: list[WindowRef], cfg: RunConfig, fold_seed: int) -> FoldModels:
    """Encoding, predictors, mapper and baselines from training windows only."""
    L, Hz = cfg.input_len, cfg.horizon
    spec = fit_encoding(corpus, _train_mask(corpus, refs, L + Hz))
    encoded = [spec.encode_series(s) for s in corpus]
    seqs = _segment(encoded, refs, 0, L + Hz)
    D = spec.dim
    predictors, schedules = {}, {}
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.clip_norm, fold_seed)
    for name in ("mt-lstm", "lstm"):
        if name not in cfg.models:
            continue
        sched = cfg.schedule() if name == "mt-lstm" else GroupSchedule.standard(cfg.hidden_size)
        init = LstmParams.init(D, cfg.hidden_size, D, fold_seed)
        log.info("training %s on %d windows", name, len(refs))
        predictors[name] = train(seqs, init, sched, tcfg, cfg.connectivity).params
        schedules[name] = sched
    mapper = None
    if predictors:
        mcfg = TrainConfig(cfg.mapper_epochs, cfg.mapper_batch_size, cfg.mapper_lr, cfg.clip_norm, fold_seed)
        mapper = train_mapper(_segment(encoded, refs, L, Hz), _labels(corpus, refs, L, Hz), mcfg, cfg.mapper_hidden).params
    future = _labels(corpus, refs, L, Hz)
    baseline = {"all": baseline1_fit([future])}
    for role in ROLES:
        sel = [i for i, r in enumerate(refs) if r.role == role]
        if sel:
            baseline[role] = baseline1_fit([future[sel]])
    return FoldModels(spec, predictors, schedules, mapper, baseline)


def predict_fold(corpus, refs: list[WindowRef], models: FoldModels, cfg: RunConfig) -> dict[str, np.ndarray]:
    """Predicted label sequences ``(n, horizon)`` per model for the given windows."""
    L, Hz = cfg.input_len, cfg.horizon
    encoded = [models.spec.encode_series(s) for s in corpus]
    X = _segment(encoded, refs, 0, L)
    out = {}
    for name, params in models.predictors.items():
        vecs = rollout(params, models.schedules[name], X, Hz, models.spec, cfg.connectivity, cfg.refeed)
        out[name] = map_labels(models.mapper, vecs)[0]
    return out


def _subsample(idx: np.ndarray, cap: int | None, seed: int) -> np.ndarray:
    if cap is None or len(idx) <= cap:
        return idx
    rng = np.random.default_rng([seed, 3])
    return np.sort(rng.choice(idx, size=cap, replace=False))


def cross_validate(corpus: list[FeatureSeries], cfg: RunConfig, progress=None) -> EvalReport:
    """k-fold evaluation of every model in ``cfg.models`` with a per-role breakdown."""
    for s in corpus:
        if s.labels is None:
            raise ValueError(f"series {s.player_id}/{s.mission_id} has no ground-truth labels")
    refs = enumerate_windows(corpus, cfg.input_len, cfg.step, cfg.horizon)
    plan = kfold_split(refs, cfg.folds, cfg.split, cfg.seed)
    models = [m for m in ("mt-lstm", "lstm", "baseline1") if m in cfg.models]
    fold_acc = {m: [] for m in models}
    roles = [r for r in ROLES if any(w.role == r for w in refs)]
    role_acc = {r: {m: [] for m in models} for r in roles}
    role_windows = {r: 0 for r in roles}
    L, Hz = cfg.input_len, cfg.horizon
    for f in range(cfg.folds):
        tr = _subsample(plan.train(f), cfg.max_train_windows, cfg.seed * 1000 + f)
        te = plan.test(f)
        tr_refs = [refs[i] for i in tr]
        te_refs = [refs[i] for i in te]
        try:
            fm = fit_fold(corpus, tr_refs, cfg, cfg.seed * 1000 + f)
            preds = predict_fold(corpus, te_refs, fm, cfg)
        except (TrainingError, ArithmeticError) as exc:
            raise TrainingError(f"fold {f}: {exc}") from exc
        truth = _labels(corpus, te_refs, L, Hz)
        preds["baseline1"] = np.tile(baseline1_predict(fm.baseline["all"], Hz), (len(te_refs), 1))
        scores = {m: [accuracy(p, t) for p, t in zip(preds[m], truth)] for m in models}
        for m in models:
            fold_acc[m].append(mean_accuracy(scores[m]))
        for r in roles:
            sel = [i for i, w in enumerate(te_refs) if w.role == r]
            role_windows[r] += len(sel)
            if not sel:
                continue
            for m in models:
                if m == "baseline1":
                    lab = fm.baseline.get(r, fm.baseline["all"])
                    role_acc[r][m].append(mean_accuracy(accuracy(baseline1_predict(lab, Hz), truth[i]) for i in sel))
                else:
                    role_acc[r][m].append(mean_accuracy(scores[m][i] for i in sel))
        if progress is not None:
            progress(f, {m: float(fold_acc[m][-1]) for m in models})
    meta = {"split": cfg.split, "seed": cfg.seed, "config_digest": cfg.digest(), "fold_sizes": plan.sizes()}
    return EvalReport(models, cfg.folds, fold_acc, role_acc, role_windows, len(refs), meta)
