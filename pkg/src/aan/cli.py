"""Command-line surface: synth, train, eval, predict, gradcheck.

Option resolution order is command-line flag, then ``AAN_<FLAG>`` environment
variable, then config-file entry (simple ``key = value`` lines), then preset
default. Every command is deterministic given ``--seed``. Exit codes: 0
success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import checks
from . import dataio as D
from . import models as M
from . import training as TR
from .errors import AanError, ParameterError, TrainingError

_DEFAULT_PRESET = {
    "feature": "cognimuse_feature",
    "temporal": "cognimuse_temporal",
    "feature_temporal": "cognimuse_temporal",
}


@dataclass
class RunConfig:
    """Resolved configuration for a train/eval/predict run."""

    model: str
    target: str
    preset: str
    data: Path
    out: Path
    seed: int
    n_layers: int
    n_heads: int
    train: TR.TrainConfig


@dataclass
class FoldReport:
    index: int
    movie_id: str
    n_test: int
    n_predicted: int
    mse: float
    pcc: float
    best_epoch: int
    epochs: int


@dataclass
class EvalReport:
    """Pooled metrics plus per-clip prediction traces, one list per movie."""

    pooled_mse: float
    pooled_pcc: float
    folds: list[FoldReport] = field(default_factory=list)
    traces: dict[str, list[tuple[int, float | None, float]]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# option resolution
# ---------------------------------------------------------------------------


def _read_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip().strip('"')
    return values


def _resolve(name: str, flag_value, file_values: dict[str, str], cast, default=None):
    if flag_value is not None:
        return flag_value
    env = os.environ.get(f"AAN_{name.upper()}")
    if env is not None:
        return cast(env)
    if name in file_values:
        return cast(file_values[name])
    return default


def _resolve_run_config(args) -> RunConfig:
    file_values = _read_config_file(args.config) if args.config else {}
    model = _resolve("model", args.model, file_values, str, "feature")
    target = _resolve("target", args.target, file_values, str, "arousal")
    if model not in _DEFAULT_PRESET:
        raise ParameterError(f"unknown model {model!r}; expected one of {sorted(_DEFAULT_PRESET)}")
    preset_name = _resolve("preset", args.preset, file_values, str) or _DEFAULT_PRESET[model]
    base = TR.get_preset(preset_name, target)
    seed = _resolve("seed", args.seed, file_values, int, 42)
    overrides = {
        "learning_rate": _resolve("learning_rate", args.learning_rate, file_values, float),
        "max_epochs": _resolve("max_epochs", args.max_epochs, file_values, int),
        "dropout_rate": _resolve("dropout_rate", args.dropout_rate, file_values, float),
        "batch_size": _resolve("batch_size", args.batch_size, file_values, int),
        "patience": _resolve("patience", args.patience, file_values, int),
        "seq_len": _resolve("seq_len", args.seq_len, file_values, int),
    }
    train = replace(
        base, seed=seed, **{k: v for k, v in overrides.items() if v is not None}
    )
    data = _resolve("data", getattr(args, "data", None), file_values, Path)
    out = _resolve("out", getattr(args, "out", None), file_values, Path)
    if data is None or out is None:
        raise ParameterError("--data and --out are required (flag, AAN_ env var, or config file)")
    return RunConfig(
        model=model,
        target=target,
        preset=preset_name,
        data=Path(data),
        out=Path(out),
        seed=seed,
        n_layers=_resolve("n_layers", args.n_layers, file_values, int, 2),
        n_heads=_resolve("n_heads", args.n_heads, file_values, int, 2),
        train=train,
    )


# ---------------------------------------------------------------------------
# shared harness pieces
# ---------------------------------------------------------------------------


def _load_dataset(data_dir: Path):
    manifest = D.load_manifest(data_dir / "manifest.json")
    if not manifest:
        raise D.ManifestParseError(f"{data_dir}/manifest.json is empty")
    features = D.load_features(data_dir, manifest)
    return manifest, features


def _fold_examples(run: RunConfig, rows, features):
    by_id = {r.clip_id: r for r in features}
    if run.model == "feature":
        return [
            TR.FeatureExample(by_id[row.clip_id], row.label(run.target)) for row in rows
        ]
    windows = D.build_windows(rows, features, run.train.seq_len or 5)
    return [TR.SequenceExample(w.records, w.targets(run.target)) for w in windows]


def _fit_with_lr_fallback(run: RunConfig, examples, fold_seed: int):
    """Fit, halving into lr/10 retries if the loss diverges."""
    config = replace(run.train, seed=fold_seed)
    model_config = M.ModelConfig(n_heads=run.n_heads, n_layers=run.n_layers)
    for attempt in range(3):
        try:
            return TR.fit(run.model, examples, None, config, model_config)
        except TrainingError as exc:
            if attempt == 2:
                raise
            new_lr = config.learning_rate / 10.0
            print(
                f"warning: {exc}; retrying with learning_rate={new_lr:g}",
                file=sys.stderr,
            )
            config = replace(config, learning_rate=new_lr)
    raise AssertionError("unreachable")


def _predict_test_fold(run: RunConfig, params, test_rows, features):
    """Held-out predictions for one test movie: [(segment_index, truth, pred)]."""
    by_id = {r.clip_id: r for r in features}
    rows = sorted(test_rows, key=lambda r: (r.movie_id, r.segment_index))
    if run.model == "feature":
        inputs = M.stack_records([by_id[row.clip_id] for row in rows])
        preds = M.feature_forward_batch(inputs, params).data
        return [
            (row.segment_index, _maybe_label(row, run.target), float(pred))
            for row, pred in zip(rows, preds)
        ]
    seq_len = params.seq_len
    windows = D.build_windows(rows, features, seq_len)
    if not windows:
        return []
    inputs = M.stack_windows([w.records for w in windows])
    forward = (
        M.temporal_forward_batch if run.model == "temporal" else M.feature_temporal_forward_batch
    )
    preds = M.autoregressive_predict_batch(inputs, params, forward=forward)
    return [
        (w.rows[-1].segment_index, _maybe_label(w.rows[-1], run.target), float(pred))
        for w, pred in zip(windows, preds)
    ]


def _maybe_label(row, target: str) -> float | None:
    label = getattr(row, target)
    return None if label is None else label.value


def _write_trace(path: Path, movie_id: str, trace, with_truth: bool) -> None:
    with open(path, "w") as fh:
        if with_truth:
            fh.write("movie_id,segment_index,ground_truth,prediction\n")
            for seg, truth, pred in trace:
                fh.write(f"{movie_id},{seg},{truth:.10g},{pred:.10g}\n")
        else:
            fh.write("movie_id,segment_index,prediction\n")
            for seg, _, pred in trace:
                fh.write(f"{movie_id},{seg},{pred:.10g}\n")


def _results_table(run: RunConfig, report: EvalReport) -> str:
    t = run.train
    lines = [
        "# results",
        f"# model={run.model} target={run.target} preset={run.preset} seed={run.seed}",
        f"# n_layers={run.n_layers} n_heads={run.n_heads} dropout_rate={t.dropout_rate:g} "
        f"learning_rate={t.learning_rate:g} batch_size={t.batch_size} max_epochs={t.max_epochs} "
        f"patience={t.patience} seq_len={t.seq_len if t.seq_len is not None else '-'}",
        "fold,test_movie,n_test,n_predicted,mse,pcc,best_epoch,epochs",
    ]
    for f in report.folds:
        lines.append(
            f"{f.index},{f.movie_id},{f.n_test},{f.n_predicted},"
            f"{f.mse:.10g},{f.pcc:.10g},{f.best_epoch},{f.epochs}"
        )
    n_test = sum(f.n_test for f in report.folds)
    n_pred = sum(f.n_predicted for f in report.folds)
    lines.append(
        f"pooled,all,{n_test},{n_pred},{report.pooled_mse:.10g},{report.pooled_pcc:.10g},,"
    )
    return "\n".join(lines) + "\n"


def run_folds(run: RunConfig, retrain: bool) -> EvalReport:
    """Leave-one-movie-out loop shared by the train and eval commands."""
    manifest, features = _load_dataset(run.data)
    folds = D.split_leave_one_movie_out(manifest)
    run.out.mkdir(parents=True, exist_ok=True)
    all_preds: list[float] = []
    all_truth: list[float] = []
    report = EvalReport(pooled_mse=0.0, pooled_pcc=0.0)
    for index, (train_rows, test_rows) in enumerate(folds):
        movie = test_rows[0].movie_id
        params_path = run.out / f"fold_{movie}_params.npz"
        best_epoch = epochs = 0
        if params_path.exists() and not retrain:
            kind, params = M.load_params(params_path)
            if kind != run.model:
                raise ParameterError(
                    f"{params_path} holds a {kind!r} model, requested {run.model!r}"
                )
            meta = M.read_params_meta(params_path)
            best_epoch = meta.get("best_epoch", 0)
            epochs = meta.get("epochs", 0)
        else:
            examples = _fold_examples(run, train_rows, features)
            try:
                result = _fit_with_lr_fallback(run, examples, run.seed + index)
            except TrainingError as exc:
                raise TrainingError(
                    f"fold {index} (movie {movie}): {exc}", epoch=exc.epoch
                ) from exc
            params = result.params
            best_epoch, epochs = result.best_epoch, len(result.log)
            M.save_params(
                params_path, run.model, params,
                extra={"best_epoch": best_epoch, "epochs": epochs},
            )
            (run.out / f"fold_{movie}_log.csv").write_text(TR.format_training_log(result.log))
        trace = _predict_test_fold(run, params, test_rows, features)
        _write_trace(run.out / f"fold_{movie}_predictions.csv", movie, trace, with_truth=True)
        report.traces[movie] = trace
        preds = [pred for _, _, pred in trace]
        truth = [t for _, t, _ in trace]
        fold_mse, fold_pcc = D.pooled_metrics(preds, truth) if len(preds) >= 2 else (0.0, 0.0)
        report.folds.append(
            FoldReport(
                index=index,
                movie_id=movie,
                n_test=len(test_rows),
                n_predicted=len(preds),
                mse=fold_mse,
                pcc=fold_pcc,
                best_epoch=best_epoch,
                epochs=epochs,
            )
        )
        all_preds.extend(preds)
        all_truth.extend(truth)
    report.pooled_mse, report.pooled_pcc = D.pooled_metrics(all_preds, all_truth)
    (run.out / "results.csv").write_text(_results_table(run, report))
    return report


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = D.SyntheticSpec(
        n_movies=args.movies,
        segments_per_movie=args.segments,
        seed=args.seed if args.seed is not None else 42,
        noise_std=args.noise_std,
        smoothing_window=args.smoothing_window,
    )
    manifest, records = D.synth_generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.save_manifest(out / "manifest.json", manifest)
    D.save_features(out, manifest, records, fmt=args.format)
    print(f"wrote {len(manifest)} segments over {spec.n_movies} movies to {out}")
    return 0


def cmd_train(args) -> int:
    run = _resolve_run_config(args)
    report = run_folds(run, retrain=True)
    print(f"pooled mse={report.pooled_mse:.6g} pcc={report.pooled_pcc:.6g}")
    print(f"results table: {run.out / 'results.csv'}")
    return 0


def cmd_eval(args) -> int:
    run = _resolve_run_config(args)
    report = run_folds(run, retrain=False)
    print(f"pooled mse={report.pooled_mse:.6g} pcc={report.pooled_pcc:.6g}")
    print(f"results table: {run.out / 'results.csv'}")
    return 0


def cmd_predict(args) -> int:
    run = _resolve_run_config(args)
    params_path = run.out / f"fold_{args.movie}_params.npz"
    if not params_path.exists():
        raise ParameterError(
            f"no parameters file {params_path}; run `aan train` first (usage)"
        )
    kind, params = M.load_params(params_path)
    if kind != run.model:
        raise ParameterError(f"{params_path} holds a {kind!r} model, requested {run.model!r}")
    manifest, features = _load_dataset(run.data)
    rows = [r for r in manifest if r.movie_id == args.movie]
    if not rows:
        raise ParameterError(f"movie {args.movie!r} not present in {run.data}")
    trace = _predict_test_fold(run, params, rows, features)
    with_truth = all(truth is not None for _, truth, _ in trace)
    out_file = Path(args.trace_out) if args.trace_out else run.out / f"trace_{args.movie}.csv"
    _write_trace(out_file, args.movie, trace, with_truth)
    print(f"wrote {len(trace)} prediction rows to {out_file}")
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.run_gradient_suite()
    print(checks.format_suite_report(results))
    failed = [name for name, report in results if not report.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", type=Path, help="dataset directory (manifest + feature files)")
    sub.add_argument("--out", type=Path, help="output directory")
    sub.add_argument("--model", choices=sorted(_DEFAULT_PRESET), help="model variant")
    sub.add_argument("--target", choices=("arousal", "valence"), help="affect dimension")
    sub.add_argument("--preset", help="hyperparameter preset name")
    sub.add_argument("--config", type=Path, help="key = value config file")
    sub.add_argument("--seed", type=int, help="base random seed (fold i uses seed+i)")
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--max-epochs", dest="max_epochs", type=int)
    sub.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--patience", type=int)
    sub.add_argument("--seq-len", dest="seq_len", type=int)
    sub.add_argument("--n-layers", dest="n_layers", type=int)
    sub.add_argument("--n-heads", dest="n_heads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aan",
        description="Self-attention affect prediction: train and evaluate on movie features.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="generate a synthetic planted-signal dataset")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--movies", type=int, default=8)
    synth.add_argument("--segments", type=int, default=120)
    synth.add_argument("--seed", type=int, default=42)
    synth.add_argument("--noise-std", dest="noise_std", type=float, default=0.1)
    synth.add_argument("--smoothing-window", dest="smoothing_window", type=int, default=9)
    synth.add_argument("--format", choices=("binary", "text", "both"), default="both")
    synth.set_defaults(func=cmd_synth)

    train = subs.add_parser("train", help="train leave-one-movie-out folds")
    _add_run_options(train)
    train.set_defaults(func=cmd_train)

    evaluate = subs.add_parser("eval", help="evaluate folds (trains folds missing parameters)")
    _add_run_options(evaluate)
    evaluate.set_defaults(func=cmd_eval)

    predict = subs.add_parser("predict", help="write a per-segment prediction trace for one movie")
    _add_run_options(predict)
    predict.add_argument("--movie", required=True, help="movie id (must be a test fold)")
    predict.add_argument("--trace-out", dest="trace_out", type=Path, help="trace file path")
    predict.set_defaults(func=cmd_predict)

    gradcheck = subs.add_parser("gradcheck", help="run the finite-difference gradient suite")
    gradcheck.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AanError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
