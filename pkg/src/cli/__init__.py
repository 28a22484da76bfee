"""Command-line sub-commands; each module registers its parsers on the shared sub-parser set."""
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.core.config import settings
from src.db.session import database_url_for
from src.schemas.evaluation import EvalConfig, EvalSlice, Metric
from src.schemas.experiments import SelectionMetric, SweepSpec
from src.schemas.models import ModelKind
from src.schemas.normalization import NormKind


def float_list(text: str) -> List[float]:
    """Comma-separated floats, or a `start:stop:step` range"""
    text = text.strip()
    if ":" in text:
        from src.services.normalization_service import grid_from_range

        try:
            start, stop, step = (float(part) for part in text.split(":"))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad range '{text}' (expected start:stop:step)") from e
        return grid_from_range(start, stop, step)
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad number list '{text}'") from e


def int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad integer list '{text}'") from e


def add_eval_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("evaluation")
    group.add_argument("--k", dest="k_list", type=int_list, default=[20], help="Cut-offs, e.g. 20 or 10,20,50")
    group.add_argument("--head-fraction", type=float, default=0.2, help="Share of items counted as head")
    group.add_argument("--unbiased-gamma", type=float, default=2.0, help="Propensity exponent")
    group.add_argument("--active-fraction", type=float, default=0.2, help="Share of users counted as active")
    group.add_argument("--no-mask-seen", dest="mask_seen", action="store_false",
                       help="Keep fold-in items in the ranking")


def add_sweep_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("grid")
    group.add_argument("--lambda-grid", type=float_list, default=None, help="Regularization grid")
    group.add_argument("--p-grid", type=float_list, default=None, help="DLAE dropout grid")
    group.add_argument("--alpha-grid", type=float_list, default=None, help="Item exponent grid (0:0.5:0.1)")
    group.add_argument("--beta-grid", type=float_list, default=None, help="User exponent grid (0:1:0.1)")
    group.add_argument("--gamma-grid", type=float_list, default=None, help="Column exponent grid")
    group.add_argument("--select", default="AOA,NDCG,20", help="Selection metric as slice,metric,K")


def eval_config(args: argparse.Namespace) -> EvalConfig:
    return EvalConfig(
        k_list=args.k_list,
        head_fraction=args.head_fraction,
        unbiased_gamma=args.unbiased_gamma,
        active_fraction=args.active_fraction,
        mask_seen=args.mask_seen,
    )


def selection_metric(text: str) -> SelectionMetric:
    parts = [part.strip() for part in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"--select must be slice,metric,K, got '{text}'")
    return SelectionMetric(slice=EvalSlice(parts[0]), metric=Metric(parts[1]), k=int(parts[2]))


def sweep_spec(
    args: argparse.Namespace,
    models: Optional[List[str]] = None,
    recipes: Optional[List[str]] = None,
) -> SweepSpec:
    fields: Dict[str, Any] = {
        "lambda_grid": args.lambda_grid,
        "p_grid": args.p_grid,
        "alpha_grid": args.alpha_grid,
        "beta_grid": args.beta_grid,
        "gamma_grid": args.gamma_grid,
        "selection": selection_metric(args.select),
        "eval": eval_config(args),
    }
    if models:
        fields["models"] = [ModelKind(m) for m in models]
    if recipes:
        fields["recipes"] = [NormKind(r) for r in recipes]
    return SweepSpec(**fields)


def run_store_url(out_dir: Optional[Path]) -> Optional[str]:
    """Run-store URL of an output directory (created on demand)"""
    if out_dir is None and not settings.DATABASE_URL:
        return None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    return database_url_for(out_dir)
