"""Command-line interface: gen, train, eval, ablate, gradcheck.

Every command is a non-interactive batch job driven by one YAML config.
Progress goes to standard error and results go to files, with one
exception: gradcheck prints its single number to standard output.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure,
3 benchmark-assertion failure (ablate only).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import TRAINING_MODES, RunConfig, load_run_config
from .contrastive import (
    BatchEmbeddings,
    TEMPERATURE_MAX,
    TEMPERATURE_MIN,
    grad_check,
)
from .data import Study, filter_test_studies, split_patients
from .encoders import (
    MODE_ORDER,
    EncoderParams,
    EncodingMode,
    encode_report,
    encode_study,
)
from .errors import (
    ConfigError,
    EchoBenchError,
    StorageFormatError,
    TrainingDivergedError,
)
from .metrics import (
    MetricsReport,
    ablation_table,
    report_from_ranks,
    retrieval_ranks,
    run_ablation,
)
from .plots import plot_ablation_bars, plot_rank_histogram, plot_training_curves
from .rng import Rng
from .storage import (
    atomic_write_text,
    canonical_json,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
    write_embeddings,
    write_history_csv,
    write_history_json,
    write_metrics_json,
    write_rank_csv,
)
from .synthgen import generate_dataset
from .trainer import train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_ASSERTION = 3

#: Environment variable holding the evaluation worker-thread count.
THREADS_ENV = "ECHOBENCH_EVAL_THREADS"

GRADCHECK_TOLERANCE = 1e-5

_MODE_BY_KEY = {mode.key: mode for mode in MODE_ORDER}


def _log(message: str) -> None:
    print(message, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """Argparse variant that reports usage problems as ConfigError."""

    def error(self, message):
        raise ConfigError(message)


def _dataset_dir(run: RunConfig) -> Path:
    return run.out / "dataset"


def _train_dir(run: RunConfig, mode: EncodingMode) -> Path:
    return run.out / "train" / mode.key


def _eval_dir(run: RunConfig, mode: EncodingMode) -> Path:
    return run.out / "eval" / mode.key


def _checkpoint_path(run: RunConfig, mode: EncodingMode) -> Path:
    return _train_dir(run, mode) / "checkpoint.bin"


def _eval_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


def _load_dataset(run: RunConfig) -> tuple[list[Study], dict[str, str]]:
    ds_dir = _dataset_dir(run)
    try:
        return read_dataset(ds_dir)
    except FileNotFoundError as exc:
        raise ConfigError(
            f"dataset not found under {ds_dir}; run the gen command first"
        ) from exc


def _split_sets(
    studies: list[Study], splits: dict[str, str]
) -> dict[str, list[Study]]:
    out: dict[str, list[Study]] = {"train": [], "valid": [], "test": []}
    for study in studies:
        out[splits[study.study_id]].append(study)
    return out


def _load_params(run: RunConfig, mode: EncodingMode, explicit: str | None) -> EncoderParams:
    weights_mode = (
        EncodingMode.MULTI_VIDEO if mode is EncodingMode.MULTI_VIDEO_4CH else mode
    )
    path = Path(explicit) if explicit else _checkpoint_path(run, weights_mode)
    try:
        params = read_checkpoint(path)
    except FileNotFoundError as exc:
        raise ConfigError(
            f"missing checkpoint for mode {weights_mode.key}: {path}; "
            f"run train --mode {weights_mode.key} first"
        ) from exc
    if params.dims != run.dims:
        raise ConfigError(
            f"checkpoint dims {params.dims} do not match config dims {run.dims}"
        )
    return params


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------


def _dataset_summary(
    studies: list[Study], splits: dict[str, str], run: RunConfig
) -> tuple[str, dict]:
    from .data import VIEW_ORDER

    split_names = ("train", "valid", "test")
    study_counts = {name: 0 for name in split_names}
    clip_counts = {view: {name: 0 for name in split_names} for view in VIEW_ORDER}
    for study in studies:
        split = splits[study.study_id]
        study_counts[split] += 1
        for clip in study.clips:
            clip_counts[clip.view][split] += 1
    patients = len({s.patient_id for s in studies})
    ratios = ":".join(f"{r:g}" for r in run.split_ratios)

    lines = [
        f"studies: {len(studies)} "
        f"(train {study_counts['train']} / valid {study_counts['valid']} "
        f"/ test {study_counts['test']})",
        f"patients: {patients}",
        f"split ratios: {ratios}",
        "",
        f"{'view':<6}{'train':>8}{'valid':>8}{'test':>8}{'total':>8}",
    ]
    totals = {name: 0 for name in split_names}
    for view in VIEW_ORDER:
        row = clip_counts[view]
        total = sum(row.values())
        for name in split_names:
            totals[name] += row[name]
        lines.append(
            f"{view.value:<6}{row['train']:>8}{row['valid']:>8}"
            f"{row['test']:>8}{total:>8}"
        )
    lines.append(
        f"{'total':<6}{totals['train']:>8}{totals['valid']:>8}"
        f"{totals['test']:>8}{sum(totals.values()):>8}"
    )
    text = "\n".join(lines) + "\n"
    payload = {
        "studies": {**study_counts, "total": len(studies)},
        "patients": patients,
        "split_ratios": list(run.split_ratios),
        "clips": {
            view.value: dict(clip_counts[view]) for view in VIEW_ORDER
        },
        "clip_total": sum(totals.values()),
    }
    return text, payload


def cmd_gen(run: RunConfig) -> int:
    _log(f"generating {run.gen.n_studies} studies (seed {run.seed})")
    studies = generate_dataset(run.gen)
    patients = sorted({s.patient_id for s in studies})
    assignment = split_patients(patients, run.split_ratios, Rng(run.split_seed()))
    ds_dir = _dataset_dir(run)
    write_dataset(ds_dir, studies, assignment)
    splits = {s.study_id: assignment.split_of(s.patient_id) for s in studies}
    text, payload = _dataset_summary(studies, splits, run)
    atomic_write_text(ds_dir / "summary.txt", text)
    atomic_write_text(ds_dir / "summary.json", canonical_json(payload))
    _log(f"wrote dataset to {ds_dir}")
    _log(text.rstrip("\n"))
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(run: RunConfig, mode: EncodingMode) -> int:
    if not mode.trains_own_weights:
        raise ConfigError(
            f"mode {mode.key} reuses {EncodingMode.MULTI_VIDEO.key} weights; "
            f"train {EncodingMode.MULTI_VIDEO.key} instead"
        )
    studies, splits = _load_dataset(run)
    sets = _split_sets(studies, splits)
    cfg = run.train_config(mode)
    _log(
        f"training {mode.key}: {cfg.total_steps} steps, batch {cfg.batch_size}, "
        f"{len(sets['train'])} train / {len(sets['valid'])} valid studies"
    )
    params, history = train(cfg, sets["train"], sets["valid"], dims=run.dims)
    out_dir = _train_dir(run, mode)
    write_checkpoint(out_dir / "checkpoint.bin", params)
    write_history_csv(out_dir / "history.csv", history)
    write_history_json(out_dir / "history.json", history)
    plot_training_curves(history, out_dir / "training.png")
    final_loss = history.steps[-1].loss
    _log(f"finished: final loss {final_loss:.4f}, wrote {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def _encode_pool(
    params: EncoderParams, pool: list[Study], mode: EncodingMode
) -> tuple[list, list]:
    study_embs = [(s.study_id, encode_study(params, s, mode)) for s in pool]
    report_embs = [(s.study_id, encode_report(params, s.report)) for s in pool]
    return study_embs, report_embs


def cmd_eval(run: RunConfig, mode: EncodingMode, checkpoint: str | None) -> int:
    params = _load_params(run, mode, checkpoint)
    studies, splits = _load_dataset(run)
    pool = filter_test_studies(_split_sets(studies, splits)["test"])
    threads = _eval_threads()
    _log(f"evaluating {mode.key} on {len(pool)} test studies")
    study_embs, report_embs = _encode_pool(params, pool, mode)
    ranks_v2r, ranks_r2v = retrieval_ranks(study_embs, report_embs, threads=threads)
    report = report_from_ranks(
        mode, ranks_v2r, ranks_r2v, pool_size=len(pool), recall_ks=run.recall_ks
    )
    out_dir = _eval_dir(run, mode)
    write_embeddings(out_dir / "study_embeddings.bin", study_embs)
    write_embeddings(out_dir / "report_embeddings.bin", report_embs)
    write_metrics_json(out_dir / "metrics.json", report)
    write_rank_csv(
        out_dir / "ranks_v2r.csv",
        list(zip((sid for sid, _ in study_embs), ranks_v2r)),
    )
    write_rank_csv(
        out_dir / "ranks_r2v.csv",
        list(zip((rid for rid, _ in report_embs), ranks_r2v)),
    )
    plot_rank_histogram(
        ranks_v2r, ranks_r2v, out_dir / "rank_histogram.png", title=mode.key
    )
    _log(
        f"{mode.key}: MCMRR v2r {report.mcmrr_v2r:.3f}, r2v {report.mcmrr_r2v:.3f}; "
        f"wrote {out_dir}"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# ablate
# --------------------------------------------------------------------------


def _benchmark_assertions(reports: list[MetricsReport]) -> tuple[list[str], bool]:
    by_mode = {r.mode: r for r in reports}
    mv = by_mode[EncodingMode.MULTI_VIDEO]
    mv4 = by_mode[EncodingMode.MULTI_VIDEO_4CH]
    sv = by_mode[EncodingMode.SINGLE_VIDEO]
    si = by_mode[EncodingMode.SINGLE_IMAGE]
    lines: list[str] = []
    all_ok = True

    def check(label: str, ok: bool) -> None:
        nonlocal all_ok
        lines.append(f"{'PASS' if ok else 'FAIL'} {label}")
        all_ok = all_ok and ok

    for direction in ("v2r", "r2v"):
        def value(report: MetricsReport) -> float:
            return getattr(report, f"mcmrr_{direction}")

        for label, left, right in (
            (f"{mv.mode.key} < {mv4.mode.key}", mv, mv4),
            (f"{mv.mode.key} < {sv.mode.key}", mv, sv),
            (f"{sv.mode.key} < {si.mode.key}", sv, si),
        ):
            check(
                f"[{direction}] MCMRR {label} "
                f"({value(left):.3f} vs {value(right):.3f})",
                value(left) < value(right),
            )
        ratio = value(si) / value(sv)
        check(
            f"[{direction}] MCMRR {si.mode.key} / {sv.mode.key} >= 1.3 "
            f"(got {ratio:.2f})",
            ratio >= 1.3,
        )
        chance_bar = 0.6 * (mv.pool_size + 1) / 2
        for report in reports:
            check(
                f"[{direction}] MCMRR {report.mode.key} beats chance "
                f"({value(report):.2f} < {chance_bar:.2f})",
                value(report) < chance_bar,
            )
        gap = abs(value(mv4) - value(sv)) / value(sv)
        lines.append(
            f"INFO [{direction}] |{mv4.mode.key} - {sv.mode.key}| / {sv.mode.key} "
            f"= {gap:.3f} (seed-averaged threshold 0.25)"
        )
    return lines, all_ok


def cmd_ablate(run: RunConfig) -> int:
    params_by_mode = {
        mode: _load_params(run, mode, None) for mode in TRAINING_MODES
    }
    studies, splits = _load_dataset(run)
    pool = filter_test_studies(_split_sets(studies, splits)["test"])
    threads = _eval_threads()
    _log(f"ablation over {len(pool)} test studies, modes: "
         + ", ".join(m.key for m in MODE_ORDER))
    reports = run_ablation(
        params_by_mode, pool, recall_ks=run.recall_ks, threads=threads
    )
    out_dir = run.out / "ablation"
    table = ablation_table(reports)
    payload = {"modes": [r.to_dict() for r in reports]}
    assertions, all_ok = _benchmark_assertions(reports)
    atomic_write_text(out_dir / "table.txt", table + "\n")
    atomic_write_text(out_dir / "ablation.json", canonical_json(payload))
    atomic_write_text(out_dir / "assertions.txt", "\n".join(assertions) + "\n")
    plot_ablation_bars(reports, out_dir / "ablation.png")
    _log(table)
    for line in assertions:
        _log(line)
    _log(f"wrote {out_dir}")
    return EXIT_OK if all_ok else EXIT_ASSERTION


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------


def cmd_gradcheck(seed: int, batch: int, dim: int, eps: float) -> int:
    if batch < 2:
        raise ConfigError(f"batch must be >= 2 for a contrastive loss, got {batch}")
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    rng = Rng(seed)
    video = rng.standard_normal((batch, dim))
    text = rng.standard_normal((batch, dim))
    log_tau = np.log(TEMPERATURE_MIN) + rng.next_float() * (
        np.log(TEMPERATURE_MAX) - np.log(TEMPERATURE_MIN)
    )
    batch_embs = BatchEmbeddings(
        video=video, text=text, temperature=float(np.exp(log_tau))
    )
    error = grad_check(batch_embs, eps=eps)
    print(f"max relative error: {error:.6e}")
    ok = error < GRADCHECK_TOLERANCE
    _log(f"gradcheck {'passed' if ok else 'FAILED'} (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_ASSERTION


# --------------------------------------------------------------------------
# parser and dispatch
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="echobench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override global seed")
        p.add_argument("--out", default=None, help="override output directory")

    p_gen = sub.add_parser("gen", help="generate the dataset")
    add_common(p_gen)

    p_train = sub.add_parser("train", help="train one encoding mode")
    add_common(p_train)
    p_train.add_argument(
        "--mode",
        required=True,
        choices=[m.key for m in TRAINING_MODES],
        help="encoding mode to train",
    )

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    add_common(p_eval)
    p_eval.add_argument(
        "--mode",
        required=True,
        choices=[m.key for m in MODE_ORDER],
        help="encoding mode to evaluate",
    )
    p_eval.add_argument(
        "--checkpoint",
        default=None,
        help="checkpoint path (default: the mode's own training output)",
    )

    p_ablate = sub.add_parser("ablate", help="evaluate all modes and compare")
    add_common(p_ablate)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--batch", type=int, default=8)
    p_grad.add_argument("--dim", type=int, default=16)
    p_grad.add_argument("--eps", type=float, default=1e-4)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(args.seed, args.batch, args.dim, args.eps)
    run = load_run_config(args.config, seed_override=args.seed, out_override=args.out)
    if args.command == "gen":
        return cmd_gen(run)
    if args.command == "train":
        return cmd_train(run, _MODE_BY_KEY[args.mode])
    if args.command == "eval":
        return cmd_eval(run, _MODE_BY_KEY[args.mode], args.checkpoint)
    if args.command == "ablate":
        return cmd_ablate(run)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args)
    except ConfigError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except StorageFormatError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        _log(f"training diverged: {exc}")
        return EXIT_RUNTIME
    except OSError as exc:
        _log(f"io error: {exc}")
        return EXIT_RUNTIME
    except EchoBenchError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
