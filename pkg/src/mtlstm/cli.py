"""Command-line entry point: ``mtlstm <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import DESK_SCALE, FIELD_HELP, ConfigValidationError, RunConfig, desk_scale, from_mapping, load_config
from .data import EncodingSpec, TraceError, fit_encoding, label_series, read_trace_file, write_trace_file
from .evaluation import EvalReport, _labels, _segment, _subsample, _train_mask, cross_validate, enumerate_windows
from .lstm import (
    Checkpoint,
    GroupSchedule,
    LstmParams,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    save_checkpoint,
    train,
    train_mapper,
)
from .predictor import forecast, write_forecasts
from .sim import format_histogram, generate_corpus, label_histogram
from .tensor import NumericError

log = logging.getLogger("mtlstm")

COMMANDS = ("gen", "label", "train-predictor", "train-mapper", "rollout", "eval", "report")
MANIFEST_VERSION = 1


class PathError(FileNotFoundError):
    pass


# ---------------------------------------------------------------- helpers


def _fields_help() -> str:
    d = RunConfig()
    lines = ["config fields (file key: default -- meaning):"]
    for f in fields(RunConfig):
        v = getattr(d, f.name)
        v = list(v) if isinstance(v, tuple) else v
        lines.append(f"  {f.name}: {json.dumps(v)} -- {FIELD_HELP[f.name]}")
    lines.append("--desk-scale preset overrides: " + ", ".join(f"{k}={json.dumps(v)}" for k, v in DESK_SCALE.items()))
    return "\n".join(lines)


def resolve_config(args) -> RunConfig:
    if args.config:
        if not Path(args.config).exists():
            raise PathError(f"config file not found: {args.config}")
        cfg = load_config(args.config, desk=args.desk_scale)
    else:
        cfg = desk_scale() if args.desk_scale else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
        over["base_seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    return from_mapping(over, cfg) if over else cfg


def versions() -> dict:
    import networkx
    import numba
    import yaml

    return {
        "mtlstm": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "networkx": networkx.__version__,
        "pyyaml": yaml.__version__,
        "kernel_backend": kernels.backend(),
    }


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs: dict, outputs: list[str]) -> Path:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seeds": {"base_seed": cfg.base_seed, "seed": cfg.seed},
        "inputs": inputs,
        "outputs": sorted(outputs),
        "versions": versions(),
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _trace_dir(args, cfg: RunConfig) -> Path:
    d = Path(args.traces) if getattr(args, "traces", None) else Path(cfg.out) / "traces"
    if not d.is_dir():
        raise PathError(f"trace directory not found: {d}")
    return d


def load_traces(d: Path, cfg: RunConfig) -> list:
    files = sorted(d.glob("*.jsonl"))
    if not files:
        raise PathError(f"no trace files (*.jsonl) in {d}")
    corpus = [read_trace_file(f) for f in files]
    bad = [f.name for f, s in zip(files, corpus) if s.sampling_ms != cfg.sampling_ms]
    if bad:
        raise TraceError(f"traces not sampled at sampling_ms={cfg.sampling_ms}: {', '.join(bad[:5])}")
    return corpus


def _require_labels(corpus) -> None:
    missing = [s.player_id for s in corpus if s.labels is None]
    if missing:
        raise TraceError(f"traces without labels (run `label` first): {', '.join(missing[:5])}")


def _training_windows(corpus, cfg: RunConfig):
    refs = enumerate_windows(corpus, cfg.input_len, cfg.step, cfg.horizon)
    if not refs:
        raise TrainingError("traces are too short for a single window")
    keep = _subsample(np.arange(len(refs)), cfg.max_train_windows, cfg.seed)
    return [refs[i] for i in keep]


def _encoding(corpus, refs, cfg: RunConfig) -> EncodingSpec:
    return fit_encoding(corpus, _train_mask(corpus, refs, cfg.input_len + cfg.horizon))


# ---------------------------------------------------------------- commands


def cmd_gen(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(cfg.n_teams, cfg.base_seed, cfg.sampling_ms)
    names = []
    for s in corpus:
        name = f"{s.player_id}.jsonl"
        write_trace_file(s, tdir / name)
        names.append(f"traces/{name}")
    text, csv = format_histogram(label_histogram(corpus))
    (out / "label_stats.txt").write_text(text, encoding="utf-8")
    (out / "label_stats.csv").write_text(csv, encoding="utf-8")
    write_manifest(out, "gen", cfg, {}, names + ["label_stats.txt", "label_stats.csv"])
    if args.stats:
        print(text, end="")
        print(csv, end="")
    print(f"wrote {len(corpus)} traces to {tdir}")
    return 0


def cmd_label(args, cfg: RunConfig) -> int:
    src = _trace_dir(args, cfg)
    out = Path(cfg.out) / "labeled"
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for f in sorted(src.glob("*.jsonl")):
        s = read_trace_file(f)
        s.labels = label_series(s)
        write_trace_file(s, out / f.name)
        names.append(f"labeled/{f.name}")
    if not names:
        raise PathError(f"no trace files (*.jsonl) in {src}")
    write_manifest(Path(cfg.out), "label", cfg, {"traces": str(src)}, names)
    print(f"labeled {len(names)} traces into {out}")
    return 0


def cmd_train_predictor(args, cfg: RunConfig) -> int:
    src = _trace_dir(args, cfg)
    corpus = load_traces(src, cfg)
    refs = _training_windows(corpus, cfg)
    spec = _encoding(corpus, refs, cfg)
    enc = [spec.encode_series(s) for s in corpus]
    seqs = _segment(enc, refs, 0, cfg.input_len + cfg.horizon)
    sched = cfg.schedule() if args.model == "mt-lstm" else GroupSchedule.standard(cfg.hidden_size)
    init = LstmParams.init(spec.dim, cfg.hidden_size, spec.dim, cfg.seed)
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.clip_norm, cfg.seed)
    res = train(seqs, init, sched, tcfg, cfg.connectivity)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"predictor-{args.model}.ckpt"
    meta = {"model": args.model, "encoding": spec.to_dict(), "history": res.history, "windows": len(refs)}
    save_checkpoint(out / name, Checkpoint(res.params, sched, cfg.connectivity, cfg.seed, "linear", meta))
    write_manifest(out, f"train-predictor-{args.model}", cfg, {"traces": str(src)}, [name])
    print(f"trained {args.model} on {len(refs)} windows; final loss {res.history[-1]:.6f}; wrote {out / name}")
    return 0


def cmd_train_mapper(args, cfg: RunConfig) -> int:
    src = _trace_dir(args, cfg)
    corpus = load_traces(src, cfg)
    _require_labels(corpus)
    refs = _training_windows(corpus, cfg)
    spec = _encoding(corpus, refs, cfg)
    enc = [spec.encode_series(s) for s in corpus]
    feats = _segment(enc, refs, cfg.input_len, cfg.horizon)
    labels = _labels(corpus, refs, cfg.input_len, cfg.horizon)
    mcfg = TrainConfig(cfg.mapper_epochs, cfg.mapper_batch_size, cfg.mapper_lr, cfg.clip_norm, cfg.seed)
    res = train_mapper(feats, labels, mcfg, cfg.mapper_hidden)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"model": "mapper", "encoding": spec.to_dict(), "history": res.history, "windows": len(refs)}
    save_checkpoint(out / "mapper.ckpt", Checkpoint(res.params, GroupSchedule.standard(cfg.mapper_hidden), "full", cfg.seed, "softmax", meta))
    write_manifest(out, "train-mapper", cfg, {"traces": str(src)}, ["mapper.ckpt"])
    print(f"trained mapper on {len(refs)} windows; final loss {res.history[-1]:.6f}; wrote {out / 'mapper.ckpt'}")
    return 0


def cmd_rollout(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    ck_path = Path(args.checkpoint) if args.checkpoint else out / "predictor-mt-lstm.ckpt"
    mp_path = Path(args.mapper) if args.mapper else out / "mapper.ckpt"
    for p in (ck_path, mp_path):
        if not p.exists():
            raise PathError(f"checkpoint not found: {p}")
    ck = load_checkpoint(ck_path)
    mp = load_checkpoint(mp_path)
    spec = EncodingSpec.from_dict(ck.meta["encoding"])
    src = _trace_dir(args, cfg)
    corpus = load_traces(src, cfg)
    refs = enumerate_windows(corpus, cfg.input_len, cfg.step, cfg.horizon)
    if not refs:
        raise TrainingError("traces are too short for a single window")
    enc = [spec.encode_series(s) for s in corpus]
    X = _segment(enc, refs, 0, cfg.input_len)
    ids = [f"{corpus[r.series].player_id}@{r.offset}" for r in refs]
    fc = forecast(ck.params, ck.schedule, mp.params, X, cfg.horizon, spec, ids, ck.connectivity, cfg.refeed)
    name = f"forecasts-{ck.meta.get('model', 'model')}.jsonl"
    write_forecasts(fc, out / name, with_vectors=args.vectors)
    write_manifest(out, "rollout", cfg, {"checkpoint": str(ck_path), "mapper": str(mp_path), "traces": str(src)}, [name])
    print(f"wrote {len(fc)} forecasts to {out / name}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.traces:
        corpus = load_traces(_trace_dir(args, cfg), cfg)
        _require_labels(corpus)
        inputs = {"traces": args.traces}
    else:
        corpus = generate_corpus(cfg.n_teams, cfg.base_seed, cfg.sampling_ms)
        inputs = {"generated": {"n_teams": cfg.n_teams, "base_seed": cfg.base_seed}}

    def progress(f, acc):
        log.info("fold %d: %s", f, ", ".join(f"{m} {a:.4f}" for m, a in acc.items()))

    report = cross_validate(corpus, cfg, progress)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_manifest(out, "eval", cfg, inputs, ["report.txt", "report.csv", "report.json"])
    print(report.to_json() if args.json else report.to_text(), end="")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    path = Path(args.report) if args.report else Path(cfg.out) / "report.json"
    if not path.exists():
        raise PathError(f"report not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True))
        return 0
    from fractions import Fraction

    rep = EvalReport(
        data["models"],
        data["k"],
        {m: [Fraction(a) for a in v["folds"]] for m, v in data["overall"].items()},
        {r: {m: [Fraction(a) for a in d[m]["folds"]] for m in data["models"]} for r, d in data["roles"].items()},
        {r: d["windows"] for r, d in data["roles"].items()},
        data["n_windows"],
        data.get("meta", {}),
    )
    print(rep.to_text(), end="")
    return 0


HANDLERS = {
    "gen": cmd_gen,
    "label": cmd_label,
    "train-predictor": cmd_train_predictor,
    "train-mapper": cmd_train_mapper,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "report": cmd_report,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key-value config file (YAML mapping) or a run manifest")
    common.add_argument("--seed", type=int, metavar="N", help="sets both seed and base_seed")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config's out)")
    common.add_argument("--desk-scale", action="store_true", help="apply the small, 1 s sampling preset before the file")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON where supported")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(
        prog="mtlstm",
        description="Multi-timescale LSTM behavior forecasting on synthetic search-and-rescue traces.",
        epilog=_fields_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    kw = {"parents": [common], "epilog": _fields_help(), "formatter_class": argparse.RawDescriptionHelpFormatter}

    g = sub.add_parser("gen", help="generate a synthetic trace corpus", **kw)
    g.add_argument("--stats", action="store_true", help="print the label histogram (text and CSV)")
    l = sub.add_parser("label", help="assign heuristic labels to traces", **kw)
    l.add_argument("--traces", metavar="DIR")
    tp = sub.add_parser("train-predictor", help="train a next-step feature predictor", **kw)
    tp.add_argument("--traces", metavar="DIR")
    tp.add_argument("--model", choices=("mt-lstm", "lstm"), default="mt-lstm")
    tm = sub.add_parser("train-mapper", help="train the feature-to-label mapper", **kw)
    tm.add_argument("--traces", metavar="DIR")
    r = sub.add_parser("rollout", help="forecast labels for every window of the traces", **kw)
    r.add_argument("--traces", metavar="DIR")
    r.add_argument("--checkpoint", metavar="PATH")
    r.add_argument("--mapper", metavar="PATH")
    r.add_argument("--vectors", action="store_true", help="include predicted feature vectors")
    e = sub.add_parser("eval", help="k-fold cross-validation of all models", **kw)
    e.add_argument("--traces", metavar="DIR", help="evaluate labeled traces instead of a generated corpus")
    rp = sub.add_parser("report", help="print a saved evaluation report", **kw)
    rp.add_argument("--report", metavar="PATH")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](args, cfg)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PathError, TraceError, TrainingError, NumericError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
