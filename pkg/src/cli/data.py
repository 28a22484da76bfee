import argparse
from pathlib import Path
from typing import List

import pandas as pd

from src.cli import float_list
from src.core.logging import CommandAuditor, logger
from src.schemas.analysis import EdgePolicy, HomophilyConfig
from src.schemas.interactions import SplitProtocol
from src.services.analysis_service import AnalysisService
from src.services.interaction_service import InteractionService
from src.services.report_service import ReportService


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "prepare",
        parents=parents,
        help="Ingest an event log, k-core filter and split it",
        description="Ingest a raw event log, apply k-core filtering and write a split bundle with dataset statistics.",
    )
    parser.add_argument("--input", type=Path, required=True, help="Raw event log (user item [rating [timestamp]])")
    parser.add_argument("--format", choices=["tsv", "csv"], default="tsv")
    parser.add_argument("--threshold", type=float, default=None, help="Keep records with rating >= threshold")
    parser.add_argument("--k-core", type=int, default=1, help="Minimum user and item degree")
    parser.add_argument("--k-user", type=int, default=None, help="Minimum user degree (overrides --k-core)")
    parser.add_argument("--k-item", type=int, default=None, help="Minimum item degree (overrides --k-core)")
    parser.add_argument("--protocol", choices=[p.value for p in SplitProtocol], default=SplitProtocol.STRONG.value)
    parser.add_argument("--ratios", type=float_list, default=[0.8, 0.1, 0.1],
                        help="train,validation,test shares (two values: no validation)")
    parser.add_argument("--foldin-fraction", type=float, default=0.8)
    parser.add_argument("--homophily-policy", choices=[p.value for p in EdgePolicy], default=EdgePolicy.ALL.value)
    parser.add_argument("--homophily-samples", type=int, default=100_000)
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.set_defaults(handler=cmd_prepare)


def cmd_prepare(args: argparse.Namespace, auditor: CommandAuditor) -> None:
    """Ingest, filter and split; writes the bundle files and stats.tsv"""
    X = InteractionService.ingest(args.input, args.format, args.threshold)
    k_user = args.k_user if args.k_user is not None else args.k_core
    k_item = args.k_item if args.k_item is not None else args.k_core
    X = InteractionService.k_core(X, k_user, k_item)

    bundle = InteractionService.split(
        X, SplitProtocol(args.protocol), args.ratios, args.foldin_fraction, seed=args.seed
    )
    auditor.dataset_hash = InteractionService.bundle_hash(bundle)
    InteractionService.write_bundle(bundle, args.out)

    homophily = HomophilyConfig(
        edge_policy=EdgePolicy(args.homophily_policy), sample_count=args.homophily_samples, seed=args.seed
    )
    frames = [
        ReportService.stats_frame(AnalysisService.dataset_stats(X, homophily), "filtered"),
        ReportService.stats_frame(AnalysisService.dataset_stats(bundle.train, homophily), "train"),
    ]
    ReportService.write_tsv(pd.concat(frames, ignore_index=True), args.out / "stats.tsv")
    logger.info("Prepared %s (dataset hash %s)", args.out, auditor.dataset_hash)
