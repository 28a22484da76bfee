import asyncio
import hashlib
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sqlalchemy import select
from sqlalchemy.exc import SQLAlchemyError

from src.core.errors import ContractError, LarexError
from src.core.logging import logger
from src.db.models import SweepResult
from src.db.session import session_scope
from src.schemas.evaluation import EvalConfig, EvalReport, EvalSlice, Metric
from src.schemas.experiments import (
    AblationRow,
    CurveRow,
    Leaderboard,
    LeaderboardRow,
    NoiseRow,
    SweepSpec,
    TimingRow,
)
from src.schemas.interactions import NoiseConfig, SplitBundle
from src.schemas.models import DLAE_RECIPES, ModelKind, SolverConfig
from src.schemas.normalization import NormKind, NormRecipe
from src.services.evaluation_service import EvaluationService
from src.services.interaction_service import InteractionService
from src.services.model_service import ModelService
from src.services.normalization_service import (
    ALPHA_GRID,
    BETA_GRID,
    DROPOUT_GRID,
    GAMMA_GRID,
    NormalizationService,
)

# Normalization methods compared in the ablation, in table order
ABLATION_METHODS: List[Tuple[str, NormKind]] = [
    ("W/O", NormKind.NONE),
    ("RW", NormKind.RW),
    ("Sym", NormKind.SYM),
    ("User", NormKind.USER),
    ("Item", NormKind.ITEM),
    ("ColNorm", NormKind.COLUMNWISE),
    ("DAN", NormKind.DAN),
]

# Model families compared under noise
NOISE_FAMILIES: List[Tuple[ModelKind, NormKind]] = [
    (ModelKind.LAE, NormKind.NONE),
    (ModelKind.DLAE, NormKind.NONE),
    (ModelKind.LAE, NormKind.ITEM),
    (ModelKind.LAE, NormKind.DAN),
]

NOISE_RATIOS = [0.0, 2.0, 5.0, 10.0, 20.0]


class ExperimentService:
    """Hyperparameter sweeps, normalization ablation, noise robustness and timing"""

    # ---------- Sweeps ----------

    @staticmethod
    def grid_configs(spec: SweepSpec) -> List[SolverConfig]:
        """
        Expand a sweep spec into solver configs in grid order.

        Order: model, recipe, alpha, beta, gamma, then regularization. DLAE is
        swept over dropout_p and skipped for recipes it cannot be combined with.
        """
        configs: List[SolverConfig] = []
        for model in spec.models:
            for kind in spec.recipes:
                if model == ModelKind.DLAE and kind not in DLAE_RECIPES:
                    logger.warning("Skipping DLAE with %s normalization (not combinable)", kind.value)
                    continue
                alphas = (spec.alpha_grid or ALPHA_GRID) if kind in (NormKind.DAN, NormKind.ITEM) else [0.0]
                betas = (spec.beta_grid or BETA_GRID) if kind in (NormKind.DAN, NormKind.USER) else [0.0]
                gammas = (spec.gamma_grid or GAMMA_GRID) if kind == NormKind.COLUMNWISE else [0.0]
                for alpha in alphas:
                    for beta in betas:
                        for gamma in gammas:
                            recipe = NormRecipe(kind=kind, alpha=alpha, beta=beta, gamma_col=gamma)
                            if model == ModelKind.DLAE:
                                for p in spec.p_grid or DROPOUT_GRID:
                                    configs.append(SolverConfig(model=model, dropout_p=p, recipe=recipe))
                            else:
                                lambdas = spec.lambda_grid or NormalizationService.default_lambda_grid(model, kind)
                                for lam in lambdas:
                                    configs.append(SolverConfig(model=model, lam=lam, recipe=recipe))
        return configs

    @staticmethod
    def config_key(dataset_hash: str, cfg: EvalConfig, config: SolverConfig) -> str:
        """Run-store key of one grid point: dataset, evaluation settings and model spec"""
        eval_hash = hashlib.sha256(cfg.model_dump_json().encode()).hexdigest()[:8]
        return f"{dataset_hash}/{eval_hash}/{config.spec}"

    @staticmethod
    def evaluate_point(bundle: SplitBundle, config: SolverConfig, spec: SweepSpec) -> LeaderboardRow:
        """Fit one grid point and evaluate it on validation and test; failures are recorded"""
        try:
            start = time.perf_counter()
            model = ModelService.fit(bundle.train, config)
            fit_seconds = time.perf_counter() - start
            validation = EvaluationService.evaluate(model, bundle, spec.eval, split="validation")
            test = EvaluationService.evaluate(model, bundle, spec.eval, split="test")
            sel = spec.selection
            return LeaderboardRow(
                label=config.label,
                spec=config.spec,
                params=config.to_params(),
                validation_value=validation.value(sel.slice, sel.metric, sel.k),
                validation=validation,
                test=test,
                fit_seconds=fit_seconds,
            )
        except (LarexError, ArithmeticError, ValueError, KeyError) as e:
            logger.warning("Grid point %s failed: %s", config.spec, str(e))
            return LeaderboardRow(
                label=config.label,
                spec=config.spec,
                params=config.to_params(),
                status="failed",
                error=f"{type(e).__name__}: {e}",
            )

    @staticmethod
    def run_sweep(
        bundle: SplitBundle,
        spec: SweepSpec,
        threads: int = 1,
        database_url: Optional[str] = None,
    ) -> Leaderboard:
        """Synchronous wrapper around `run_sweep_async`"""
        return asyncio.run(ExperimentService.run_sweep_async(bundle, spec, threads, database_url))

    @staticmethod
    async def run_sweep_async(
        bundle: SplitBundle,
        spec: SweepSpec,
        threads: int = 1,
        database_url: Optional[str] = None,
    ) -> Leaderboard:
        """
        Evaluate every grid point and select each label's winner on validation.

        Grid points run in a worker pool of `threads` threads. With a run store,
        completed points are read back instead of refit and new ones are written
        as they finish, so an interrupted sweep resumes where it stopped.

        Args:
            bundle: Split bundle with a validation split
            spec: Grid and selection metric
            threads: Maximum concurrent fits
            database_url: Optional run store

        Returns:
            Leaderboard in grid order with winners marked

        Raises:
            ContractError: If the bundle has no validation split
        """
        if bundle.validation is None:
            raise ContractError("sweeps select on validation; prepare the data with three split ratios")
        configs = ExperimentService.grid_configs(spec)
        if not configs:
            raise ContractError("sweep grid is empty")
        dataset_hash = InteractionService.bundle_hash(bundle)
        keys = [ExperimentService.config_key(dataset_hash, spec.eval, c) for c in configs]

        cached = ExperimentService._load_cached(database_url, keys, spec)
        pending = [(key, config) for key, config in zip(keys, configs) if key not in cached]
        logger.info(
            "Sweep over %d grid points (%d cached, %d to run, %d workers)",
            len(configs), len(cached), len(pending), threads
        )

        semaphore = asyncio.Semaphore(max(1, threads))

        async def run_one(key: str, config: SolverConfig) -> Tuple[str, LeaderboardRow]:
            async with semaphore:
                row = await asyncio.to_thread(ExperimentService.evaluate_point, bundle, config, spec)
            # Store writes happen on the event loop thread, one at a time
            ExperimentService._store(database_url, key, dataset_hash, row)
            return key, row

        results = await asyncio.gather(*(run_one(key, config) for key, config in pending))
        by_key: Dict[str, LeaderboardRow] = dict(cached)
        by_key.update(dict(results))

        rows = [by_key[key].model_copy(update={"selected": False}) for key in keys]
        ExperimentService._mark_winners(rows)
        failed = sum(1 for row in rows if row.status != "ok")
        if failed:
            logger.warning("%d of %d grid points failed", failed, len(rows))
        return Leaderboard(selection=spec.selection, rows=rows)

    @staticmethod
    def sweep_curve(board: Leaderboard, param: str, split: str = "test") -> List[CurveRow]:
        """
        Metric-vs-parameter curves from a full sweep grid.

        For every label and every value of `param` (e.g. alpha) the grid point
        with the best validation value is kept, and its metrics on `split` are
        reported one row per (slice, metric, K).
        """
        best: Dict[Tuple[str, float], LeaderboardRow] = {}
        for row in board.rows:
            value = row.params.get(param)
            if row.status != "ok" or value is None or isinstance(value, str):
                continue
            key = (row.label, float(value))
            current = best.get(key)
            if current is None or row.validation_value > current.validation_value:  # type: ignore[operator]
                best[key] = row

        curve = []
        for (label, value), row in sorted(best.items(), key=lambda item: (item[0][0], item[0][1])):
            report = row.test if split == "test" else row.validation
            if report is None:
                continue
            for metric_row in report.rows:
                curve.append(CurveRow(
                    label=label,
                    param=param,
                    param_value=value,
                    split=split,
                    slice=metric_row.slice,
                    metric=metric_row.metric,
                    k=metric_row.k,
                    value=metric_row.value,
                    spec=row.spec,
                ))
        return curve

    @staticmethod
    def _mark_winners(rows: List[LeaderboardRow]) -> None:
        """Highest validation value per label; ties go to the earlier grid point"""
        best: Dict[str, int] = {}
        for idx, row in enumerate(rows):
            if row.status != "ok" or row.validation_value is None:
                continue
            current = best.get(row.label)
            if current is None or row.validation_value > rows[current].validation_value:  # type: ignore[operator]
                best[row.label] = idx
        for idx in best.values():
            rows[idx].selected = True

    @staticmethod
    def _load_cached(database_url: Optional[str], keys: Sequence[str], spec: SweepSpec) -> Dict[str, LeaderboardRow]:
        if not database_url:
            return {}
        try:
            with session_scope(database_url) as db:
                stored = db.execute(
                    select(SweepResult).where(SweepResult.config_key.in_(list(keys)), SweepResult.status == "ok")
                ).scalars().all()
                cached = {}
                for result in stored:
                    validation = EvalReport.model_validate(result.validation_report)
                    sel = spec.selection
                    cached[result.config_key] = LeaderboardRow(
                        label=result.label,
                        spec=result.params["spec"],
                        params={k: v for k, v in result.params.items() if k != "spec"},
                        validation_value=validation.value(sel.slice, sel.metric, sel.k),
                        validation=validation,
                        test=EvalReport.model_validate(result.test_report),
                        fit_seconds=result.fit_seconds,
                    )
                return cached
        except (SQLAlchemyError, KeyError, ValueError) as e:
            logger.warning("Could not read cached sweep results: %s", str(e))
            return {}

    @staticmethod
    def _store(database_url: Optional[str], key: str, dataset_hash: str, row: LeaderboardRow) -> None:
        if not database_url:
            return
        try:
            with session_scope(database_url) as db:
                existing = db.execute(select(SweepResult).where(SweepResult.config_key == key)).scalar_one_or_none()
                if existing is not None:
                    db.delete(existing)
                    db.flush()
                db.add(SweepResult(
                    config_key=key,
                    label=row.label,
                    params={**row.params, "spec": row.spec},
                    dataset_hash=dataset_hash,
                    status=row.status,
                    validation_metric=row.validation_value,
                    validation_report=row.validation.model_dump(mode="json") if row.validation else None,
                    test_report=row.test.model_dump(mode="json") if row.test else None,
                    fit_seconds=row.fit_seconds,
                    error=row.error,
                ))
        except SQLAlchemyError as e:
            logger.warning("Failed to store sweep result %s: %s", key, str(e))

    # ---------- Ablation ----------

    @staticmethod
    def run_ablation(
        bundle: SplitBundle,
        spec: Optional[SweepSpec] = None,
        model: ModelKind = ModelKind.LAE,
        threads: int = 1,
        database_url: Optional[str] = None,
    ) -> Tuple[List[AblationRow], Leaderboard]:
        """
        Tune every normalization method separately and compare them on test.

        Returns:
            (rows: Most-pop first then one per method, the underlying leaderboard)
        """
        base = spec or SweepSpec()
        sweep = base.model_copy(update={"models": [model], "recipes": [kind for _, kind in ABLATION_METHODS]})
        board = ExperimentService.run_sweep(bundle, sweep, threads, database_url)
        k = sweep.selection.k

        rows = [ExperimentService._ablation_row(
            "Most-pop", None, EvaluationService.evaluate_popularity(bundle, sweep.eval), k
        )]
        for method, kind in ABLATION_METHODS:
            label = SolverConfig(model=model, lam=1.0, recipe=NormRecipe(kind=kind)).label
            winner = board.winner(label)
            if winner is None or winner.test is None:
                logger.warning("No successful grid point for %s; omitted from the ablation", method)
                continue
            rows.append(ExperimentService._ablation_row(method, winner.spec, winner.test, k))
        return rows, board

    @staticmethod
    def _ablation_row(method: str, spec: Optional[str], report: EvalReport, k: int) -> AblationRow:
        def get(slice_: EvalSlice, metric: Metric) -> float:
            try:
                return report.value(slice_, metric, k)
            except KeyError:
                return 0.0

        return AblationRow(
            method=method,
            spec=spec,
            k=k,
            aoa=get(EvalSlice.AOA, Metric.NDCG),
            head=get(EvalSlice.HEAD, Metric.NDCG),
            tail=get(EvalSlice.TAIL, Metric.NDCG),
            aoa_recall=get(EvalSlice.AOA, Metric.RECALL),
            head_recall=get(EvalSlice.HEAD, Metric.RECALL),
            tail_recall=get(EvalSlice.TAIL, Metric.RECALL),
        )

    # ---------- Noise ----------

    @staticmethod
    def tuned_noise_models(
        bundle: SplitBundle,
        spec: Optional[SweepSpec] = None,
        threads: int = 1,
        database_url: Optional[str] = None,
    ) -> List[SolverConfig]:
        """Sweep the default noise model families on clean data and return each winner"""
        base = spec or SweepSpec()
        configs = []
        for model, kind in NOISE_FAMILIES:
            sweep = base.model_copy(update={"models": [model], "recipes": [kind]})
            board = ExperimentService.run_sweep(bundle, sweep, threads, database_url)
            winners = board.winners()
            if not winners:
                logger.warning("No successful grid point for %s/%s", model.value, kind.value)
                continue
            configs.append(SolverConfig.from_spec(winners[0].spec))
        return configs

    @staticmethod
    def run_noise(
        bundle: SplitBundle,
        models: Sequence[SolverConfig],
        ratios: Sequence[float] = NOISE_RATIOS,
        seeds: Sequence[int] = (0, 1, 2),
        cfg: Optional[EvalConfig] = None,
        k: int = 20,
    ) -> List[NoiseRow]:
        """
        Inject noise into the training split, refit and evaluate on the clean test split.

        The relative drop (perf(r) - perf(0)) / perf(0) is computed per seed and
        averaged; slices use the clean training popularity. Results are kept per
        model spec, so configs sharing a display label stay apart.

        Raises:
            InsufficientCellsError: If a ratio needs more unobserved cells than exist
        """
        cfg = cfg or EvalConfig(k_list=[k])
        if k not in cfg.k_list:
            cfg = cfg.model_copy(update={"k_list": sorted(set(cfg.k_list) | {k})})
        ratios = sorted(set(float(r) for r in ratios) | {0.0})
        models = list({config.spec: config for config in models}.values())
        clean_popularity = bundle.train.item_degrees

        # values[(spec, slice)][ratio] -> list over seeds
        values: Dict[Tuple[str, EvalSlice], Dict[float, List[float]]] = {}
        for seed in seeds:
            for ratio in ratios:
                noisy = InteractionService.inject_noise(bundle.train, NoiseConfig(ratio_percent=ratio, seed=seed))
                noisy_bundle = bundle.with_train(noisy)
                for config in models:
                    model = ModelService.fit(noisy, config, allow_isolated=True)
                    report = EvaluationService.evaluate(
                        model, noisy_bundle, cfg, split="test", popularity=clean_popularity
                    )
                    for row in report.rows:
                        if row.metric == Metric.NDCG and row.k == k:
                            values.setdefault((config.spec, row.slice), {}).setdefault(ratio, []).append(row.value)
            logger.info("Noise run for seed %d done", seed)

        rows: List[NoiseRow] = []
        for config in models:
            for slice_ in EvalSlice:
                per_ratio = values.get((config.spec, slice_))
                if not per_ratio or 0.0 not in per_ratio:
                    continue
                base = np.asarray(per_ratio[0.0])
                for ratio in ratios:
                    current = np.asarray(per_ratio.get(ratio, []))
                    if current.size != base.size:
                        continue
                    if np.any(base == 0):
                        logger.warning("%s %s baseline is 0; relative drop undefined", config.spec, slice_.value)
                        drop = float("nan")
                    else:
                        drop = float(np.mean((current - base) / base))
                    rows.append(NoiseRow(
                        model=config.label,
                        spec=config.spec,
                        ratio_percent=ratio,
                        slice=slice_,
                        metric=Metric.NDCG,
                        k=k,
                        value=float(current.mean()),
                        relative_drop=drop,
                        seeds=int(current.size),
                    ))
        return rows

    # ---------- Timing ----------

    @staticmethod
    def run_timing(
        bundle: SplitBundle,
        models: Sequence[SolverConfig],
        repeats: int = 3,
        threads: int = 1,
        k: int = 20,
        batch_size: Optional[int] = None,
    ) -> List[TimingRow]:
        """
        Wall-clock fit time and batched top-K inference time over the test users.

        Each figure is the minimum over `repeats` runs.
        """
        if repeats < 1:
            raise ContractError("repeats must be at least 1")
        rows = []
        foldin = bundle.test.foldin.matrix
        top = min(k, bundle.train.cols)
        for config in models:
            fit_times, infer_times = [], []
            model = None
            for _ in range(repeats):
                start = time.perf_counter()
                model = ModelService.fit(bundle.train, config, threads=threads)
                fit_times.append(time.perf_counter() - start)
            for _ in range(repeats):
                start = time.perf_counter()
                for _, block in ModelService.iter_score_batches(model.weights, foldin, True, batch_size):
                    np.argsort(-block, axis=1, kind="stable")[:, :top]
                infer_times.append(time.perf_counter() - start)
            rows.append(TimingRow(
                model=config.label,
                spec=config.spec,
                fit_seconds=min(fit_times),
                infer_seconds=min(infer_times),
                users=foldin.shape[0],
                items=bundle.train.cols,
            ))
            logger.info("Timing %s: fit %.4fs, infer %.4fs", config.label, rows[-1].fit_seconds, rows[-1].infer_seconds)
        return rows
