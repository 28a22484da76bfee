import argparse
from pathlib import Path
from typing import List

from src.cli import float_list
from src.cli.model import _resolve_model, add_model_arguments
from src.core.errors import CapacityError
from src.core.logging import CommandAuditor, logger
from src.schemas.analysis import EdgePolicy, HomophilyConfig
from src.schemas.normalization import NormKind, NormRecipe
from src.services.analysis_service import AnalysisService
from src.services.interaction_service import InteractionService
from src.services.report_service import ReportService

# Symmetric gram recipes whose spectra are reported
SPECTRUM_RECIPES = [
    NormRecipe(kind=NormKind.NONE),
    NormRecipe(kind=NormKind.SYM),
    NormRecipe(kind=NormKind.DAN, alpha=0.5, beta=0.5),
]


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "analyze",
        parents=parents,
        help="Dataset statistics, spectra and weight distributions",
        description="Gini index and weighted homophily of the training matrix, normalized gram spectra, "
                    "spectra of B against beta and (with a model) head/tail weight distributions.",
    )
    parser.add_argument("--data", type=Path, required=True)
    add_model_arguments(parser)
    parser.add_argument("--betas", type=float_list, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    parser.add_argument("--spectrum-lambda", type=float, default=1.0, help="Regularization of the beta spectra")
    parser.add_argument("--delta", type=float, default=1.5, help="Homophily intersection exponent")
    parser.add_argument("--homophily-policy", choices=[p.value for p in EdgePolicy], default=EdgePolicy.ALL.value)
    parser.add_argument("--homophily-samples", type=int, default=100_000)
    parser.add_argument("--head-fraction", type=float, default=0.2)
    parser.add_argument("--bins", type=int, default=20)
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=cmd_analyze)


def cmd_analyze(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Writes stats.tsv, spectra.tsv, spectrum_beta.tsv and (with a model) weights.tsv"""
    bundle = InteractionService.read_bundle(args.data)
    train = bundle.train
    auditor.dataset_hash = InteractionService.dataset_hash(train)

    homophily = HomophilyConfig(
        delta=args.delta,
        edge_policy=EdgePolicy(args.homophily_policy),
        sample_count=args.homophily_samples,
        seed=args.seed,
    )
    stats = AnalysisService.dataset_stats(train, homophily)
    ReportService.write_tsv(ReportService.stats_frame(stats), args.out / "stats.tsv")
    print(f"gini_item\t{stats.gini_item!r}\nhomophily_w\t{stats.homophily_w!r}")

    try:
        grams = [AnalysisService.gram_spectrum(train, recipe) for recipe in SPECTRUM_RECIPES]
        ReportService.write_tsv(ReportService.spectra_frame(grams), args.out / "spectra.tsv")
        by_beta = AnalysisService.spectrum_vs_beta(train, args.betas, args.spectrum_lambda)
        ReportService.write_tsv(ReportService.spectra_frame(by_beta, "beta", args.betas), args.out / "spectrum_beta.tsv")
        if args.plots:
            ReportService.plot_spectra(by_beta, [f"beta={b}" for b in args.betas], args.out / "spectrum_beta.png")
    except CapacityError as e:
        logger.warning("Spectra skipped: %s", str(e))

    if args.model or args.model_file:
        model = _resolve_model(args, bundle, auditor)
        if model is not None:
            dist = AnalysisService.weight_distribution(model, args.head_fraction, args.bins)
            ReportService.write_tsv(ReportService.weight_distribution_frame(dist), args.out / "weights.tsv")
            print(f"head_mean\t{dist.head.mean!r}\ntail_mean\t{dist.tail.mean!r}")
            if args.plots:
                ReportService.plot_weight_distribution(dist, args.out / "weights.png")
