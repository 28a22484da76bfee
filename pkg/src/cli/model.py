import argparse
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from src.cli import add_eval_arguments, eval_config
from src.core.config import resolve_threads
from src.core.errors import ConfigurationError
from src.core.logging import CommandAuditor, logger
from src.schemas.models import DLAE_RECIPE_NAMES, ItemModel, ModelKind, SolverConfig
from src.schemas.normalization import NormKind, NormRecipe
from src.services.evaluation_service import EvaluationService
from src.services.interaction_service import InteractionService
from src.services.model_service import MASK_SENTINEL, ModelService
from src.services.report_service import ReportService

MODEL_FILE = "model.lare"
POPULARITY = "mostpop"


def add_model_arguments(parser: argparse.ArgumentParser, allow_file: bool = True) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--model", default=None,
                       help="lae | ease | dlae | mostpop, or a full spec such as lae/dan/lambda=1,alpha=0.2,beta=0.4 "
                            f"(dlae accepts {DLAE_RECIPE_NAMES} normalization only)")
    group.add_argument("--norm", choices=[k.value for k in NormKind], default=NormKind.NONE.value,
                       help=f"Normalization recipe; dlae combines only with {DLAE_RECIPE_NAMES}")
    group.add_argument("--lambda", dest="lam", type=float, default=None)
    group.add_argument("--p", dest="dropout_p", type=float, default=None, help="DLAE dropout probability")
    group.add_argument("--alpha", type=float, default=0.0)
    group.add_argument("--beta", type=float, default=0.0)
    group.add_argument("--gamma", type=float, default=0.0, help="Column-wise exponent")
    group.add_argument("--wide", action="store_true", help="Allow alpha/beta outside the default ranges")
    if allow_file:
        group.add_argument("--model-file", type=Path, default=None, help="Model saved by `fit`")


def solver_config(args: argparse.Namespace) -> SolverConfig:
    """SolverConfig from either a spec string or the individual model flags"""
    if not args.model:
        raise ConfigurationError("--model is required")
    if "/" in args.model:
        return SolverConfig.from_spec(args.model)
    recipe = NormRecipe(
        kind=NormKind(args.norm), alpha=args.alpha, beta=args.beta, gamma_col=args.gamma, allow_wide=args.wide
    )
    lam = args.lam
    if lam is None and args.dropout_p is None:
        lam = 1.0 if recipe.kind not in (NormKind.NONE, NormKind.COLUMNWISE) else 100.0
        logger.info("No --lambda given; using %s", lam)
    try:
        config = SolverConfig(model=ModelKind(args.model), lam=lam, dropout_p=args.dropout_p, recipe=recipe)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e
    config.check_compatible()
    return config


def _resolve_model(args: argparse.Namespace, bundle, auditor: CommandAuditor) -> Optional[ItemModel]:
    """Load --model-file, or fit --model on the bundle's train split; None for most-popular"""
    if getattr(args, "model_file", None) is not None:
        model = ModelService.load(args.model_file)
        if model.item_ids != bundle.train.item_ids:
            raise ConfigurationError(f"{args.model_file} was fitted on a different item vocabulary")
        return model
    if args.model == POPULARITY:
        return None
    return ModelService.fit(
        bundle.train, solver_config(args), threads=resolve_threads(args.threads), dataset_hash=auditor.dataset_hash
    )


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    fit = subparsers.add_parser("fit", parents=parents, help="Fit one model on the training split")
    fit.add_argument("--data", type=Path, required=True, help="Prepared data directory")
    add_model_arguments(fit, allow_file=False)
    fit.add_argument("--out", type=Path, required=True, help="Output directory")
    fit.set_defaults(handler=cmd_fit)

    evaluate = subparsers.add_parser("evaluate", parents=parents, help="Evaluate a model on the test or validation split")
    evaluate.add_argument("--data", type=Path, required=True)
    add_model_arguments(evaluate)
    evaluate.add_argument("--split", choices=["test", "validation"], default="test")
    add_eval_arguments(evaluate)
    evaluate.add_argument("--out", type=Path, default=None)
    evaluate.set_defaults(handler=cmd_evaluate)

    topk = subparsers.add_parser("topk", parents=parents, help="Per-user top-K lists with head/tail tags")
    topk.add_argument("--data", type=Path, required=True)
    add_model_arguments(topk)
    topk.add_argument("--split", choices=["test", "validation"], default="test")
    topk.add_argument("--users", default=None, help="Comma-separated user ids (default: the first --limit users)")
    topk.add_argument("--limit", type=int, default=10)
    topk.add_argument("--k", type=int, default=20)
    topk.add_argument("--head-fraction", type=float, default=0.2)
    topk.add_argument("--out", type=Path, default=None)
    topk.set_defaults(handler=cmd_topk)


def cmd_fit(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Fit and save a model; the saved file is re-read to validate it"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.dataset_hash(bundle.train)
    config = solver_config(args)
    model = ModelService.fit(
        bundle.train, config, threads=resolve_threads(args.threads), dataset_hash=auditor.dataset_hash
    )
    path = args.out / MODEL_FILE
    ModelService.save(model, path)
    ModelService.load(path)

    summary = pd.DataFrame([{
        "label": config.label,
        "spec": config.spec,
        "users": model.fit_stats.users,
        "items": model.n,
        "interactions": model.fit_stats.interactions,
        "residual_ok": int(model.fit_stats.residual is None or model.fit_stats.residual <= 1e-6),
    }])
    ReportService.write_tsv(summary, args.out / "fit.tsv")
    print(f"{config.label}\t{config.spec}\t{path}")


def cmd_evaluate(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Evaluate and print the slice summary; writes eval.tsv with --out"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    cfg = eval_config(args)
    model = _resolve_model(args, bundle, auditor)
    if model is None:
        report = EvaluationService.evaluate_popularity(bundle, cfg, split=args.split)
        label = "Most-pop"
    else:
        report = EvaluationService.evaluate(model, bundle, cfg, split=args.split)
        label = model.config.label

    print(EvaluationService.format_summary(report, title=f"{label} ({args.split})"))
    if args.out is not None:
        frame = ReportService.eval_report_frame(report, model=label, split=args.split)
        ReportService.write_tsv(frame, args.out / "eval.tsv")


def cmd_topk(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Top-K items of selected evaluation users, each tagged head or tail"""
    bundle = InteractionService.read_bundle(args.data)
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    target = EvaluationService.pick_split(bundle, args.split)
    model = _resolve_model(args, bundle, auditor)

    user_ids = target.foldin.user_ids
    if args.users:
        wanted = [u.strip() for u in args.users.split(",") if u.strip()]
        position = {uid: idx for idx, uid in enumerate(user_ids)}
        missing = [u for u in wanted if u not in position]
        if missing:
            raise ConfigurationError(f"users not in the {args.split} split: {', '.join(missing)}")
        rows = [position[u] for u in wanted]
    else:
        rows = list(range(min(args.limit, len(user_ids))))

    foldin = target.foldin.matrix[rows]
    if model is None:
        scores = ModelService.popularity_scores(bundle.train, foldin)
    else:
        scores = ModelService.score_matrix(model.weights, foldin)
    head = EvaluationService.top_fraction_mask(bundle.train.item_degrees, args.head_fraction)
    k = min(args.k, bundle.train.cols)

    records = []
    for offset, u in enumerate(rows):
        truth = set(target.heldout.user_items(u).tolist())
        for rank, item in enumerate(EvaluationService.rank_topk(scores[offset], k), start=1):
            records.append({
                "user": user_ids[u],
                "rank": rank,
                "item": bundle.train.item_ids[item],
                "score": float(scores[offset, item]) if scores[offset, item] > MASK_SENTINEL else float("nan"),
                "group": "head" if head[item] else "tail",
                "heldout": int(item in truth),
            })
    frame = pd.DataFrame(records, columns=["user", "rank", "item", "score", "group", "heldout"])
    print(frame.to_csv(sep="\t", index=False, lineterminator="\n"), end="")
    if args.out is not None:
        ReportService.write_tsv(frame, args.out / "topk.tsv")
    if len(frame):
        logger.info("Head share of the listed items: %.3f", float(np.mean(frame["group"] == "head")))
