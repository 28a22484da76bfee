import argparse
from pathlib import Path
from typing import List

import pandas as pd

from src.cli import (
    add_eval_arguments,
    add_sweep_arguments,
    eval_config,
    float_list,
    int_list,
    run_store_url,
    sweep_spec,
)
from src.core.config import resolve_threads
from src.core.logging import CommandAuditor
from src.schemas.evaluation import EvalSlice, Metric
from src.schemas.models import DLAE_RECIPE_NAMES, ModelKind, SolverConfig
from src.schemas.normalization import NormKind
from src.services.experiment_service import NOISE_RATIOS, ExperimentService
from src.services.interaction_service import InteractionService
from src.services.report_service import ReportService

DEFAULT_TIMING_SPECS = ["lae/none/lambda=100.0", "lae/dan/lambda=1.0,alpha=0.2,beta=0.4"]


def _csv_words(text: str) -> List[str]:
    return [word.strip() for word in text.split(",") if word.strip()]


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    sweep = subparsers.add_parser("sweep", parents=parents, help="Hyperparameter sweep with validation selection")
    sweep.add_argument("--data", type=Path, required=True)
    sweep.add_argument("--models", type=_csv_words, default=[ModelKind.LAE.value], help="e.g. lae,ease,dlae")
    sweep.add_argument("--recipes", type=_csv_words, default=[NormKind.NONE.value],
                       help=f"e.g. none,rw,sym,dan (dlae is skipped outside {DLAE_RECIPE_NAMES})")
    add_sweep_arguments(sweep)
    add_eval_arguments(sweep)
    sweep.add_argument("--curves", type=_csv_words, default=[],
                       help="Parameters to write metric curves for, e.g. alpha,beta")
    sweep.add_argument("--out", type=Path, required=True)
    sweep.set_defaults(handler=cmd_sweep)

    ablate = subparsers.add_parser("ablate", parents=parents,
                                   help="Compare normalization methods, each with its own tuned grid")
    ablate.add_argument("--data", type=Path, required=True)
    ablate.add_argument("--model", choices=[m.value for m in ModelKind if m != ModelKind.DLAE],
                        default=ModelKind.LAE.value)
    add_sweep_arguments(ablate)
    add_eval_arguments(ablate)
    ablate.add_argument("--out", type=Path, required=True)
    ablate.set_defaults(handler=cmd_ablate)

    noise = subparsers.add_parser("noise", parents=parents, help="Relative metric drop under injected training noise")
    noise.add_argument("--data", type=Path, required=True)
    noise.add_argument("--ratios", type=float_list, default=NOISE_RATIOS, help="Noise ratios in percent")
    noise.add_argument("--seeds", type=int_list, default=None, help="Noise seeds (default: --seed and the next two)")
    noise.add_argument("--model-spec", action="append", default=None,
                       help="Model spec (repeatable); without it the default families are tuned on validation")
    add_sweep_arguments(noise)
    add_eval_arguments(noise)
    noise.add_argument("--out", type=Path, required=True)
    noise.set_defaults(handler=cmd_noise)

    timing = subparsers.add_parser("timing", parents=parents, help="Fit and batched inference wall time")
    timing.add_argument("--data", type=Path, required=True)
    timing.add_argument("--model-spec", action="append", default=None, help="Model spec (repeatable)")
    timing.add_argument("--repeats", type=int, default=3)
    timing.add_argument("--k", type=int, default=20)
    timing.add_argument("--batch-size", type=int, default=None, help="Users per scoring block")
    timing.add_argument("--out", type=Path, required=True)
    timing.set_defaults(handler=cmd_timing)


def cmd_sweep(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Writes leaderboard.tsv (full grid), winners.tsv and curve_<param>.tsv"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    spec = sweep_spec(args, args.models, args.recipes)
    board = ExperimentService.run_sweep(bundle, spec, resolve_threads(args.threads), run_store_url(args.out))

    frame = ReportService.leaderboard_frame(board)
    ReportService.write_tsv(frame, args.out / "leaderboard.tsv")
    winners = frame[frame["selected"] == 1]
    ReportService.write_tsv(winners, args.out / "winners.tsv")
    print(winners[["label", "spec"] + [c for c in frame.columns if c.startswith("val_")]].to_csv(
        sep="\t", index=False, lineterminator="\n"), end="")

    for param in args.curves:
        curve = ReportService.curve_frame(ExperimentService.sweep_curve(board, param))
        if curve.empty:
            continue
        ReportService.write_tsv(curve, args.out / f"curve_{param}.tsv")
        if args.plots:
            sel = spec.selection
            part = curve[(curve["metric"] == sel.metric.value) & (curve["k"] == sel.k)]
            part = part.assign(series=part["label"] + " " + part["slice"])
            ReportService.plot_curve(part, "param_value", "value", "series", args.out / f"curve_{param}.png",
                                     title=f"{sel.metric.value}@{sel.k} over {param}")


def cmd_ablate(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Writes ablation.tsv and the underlying leaderboard.tsv"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    spec = sweep_spec(args)
    rows, board = ExperimentService.run_ablation(
        bundle, spec, ModelKind(args.model), resolve_threads(args.threads), run_store_url(args.out)
    )
    frame = ReportService.ablation_frame(rows)
    ReportService.write_tsv(frame, args.out / "ablation.tsv")
    ReportService.write_tsv(ReportService.leaderboard_frame(board), args.out / "leaderboard.tsv")
    print(frame[["method", "aoa", "head", "tail"]].to_csv(sep="\t", index=False, lineterminator="\n"), end="")


def cmd_noise(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Writes noise.tsv (one row per model, ratio and slice)"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    threads = resolve_threads(args.threads)
    if args.model_spec:
        models = [SolverConfig.from_spec(text) for text in args.model_spec]
    else:
        models = ExperimentService.tuned_noise_models(bundle, sweep_spec(args), threads, run_store_url(args.out))
    seeds = args.seeds if args.seeds else [args.seed, args.seed + 1, args.seed + 2]
    cfg = eval_config(args)
    k = max(cfg.k_list)

    rows = ExperimentService.run_noise(bundle, models, args.ratios, seeds, cfg, k)
    frame = ReportService.noise_frame(rows)
    ReportService.write_tsv(frame, args.out / "noise.tsv")
    aoa = frame[frame["slice"] == EvalSlice.AOA.value]
    print(aoa[["model", "spec", "ratio_percent", "value", "relative_drop"]].to_csv(
        sep="\t", index=False, lineterminator="\n"), end="")
    if args.plots and not aoa.empty:
        ReportService.plot_curve(aoa, "ratio_percent", "relative_drop", "spec", args.out / "noise.png",
                                 title=f"{EvalSlice.AOA.value} {Metric.NDCG.value}@{k} relative drop")


def cmd_timing(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Writes timing.tsv"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    models = [SolverConfig.from_spec(text) for text in (args.model_spec or DEFAULT_TIMING_SPECS)]
    rows = ExperimentService.run_timing(
        bundle, models, args.repeats, resolve_threads(args.threads), args.k, args.batch_size
    )
    frame = ReportService.timing_frame(rows)
    ReportService.write_tsv(frame, args.out / "timing.tsv")
    print(frame[["model", "fit_seconds", "infer_seconds"]].to_csv(sep="\t", index=False, lineterminator="\n"), end="")
    if len(frame) > 1:
        base = frame["fit_seconds"].iloc[0]
        ratios = pd.DataFrame({"model": frame["model"], "fit_ratio": frame["fit_seconds"] / base})
        print(ratios.to_csv(sep="\t", index=False, lineterminator="\n"), end="")
