import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src import __version__
from src.core.logging import logger
from src.schemas.analysis import DatasetStats, SpectrumReport, WeightDistribution
from src.schemas.evaluation import EvalReport
from src.schemas.experiments import (
    AblationRow,
    CurveRow,
    Leaderboard,
    NoiseRow,
    RunManifest,
    TimingRow,
)

MANIFEST_NAME = "manifest.json"


class ReportService:
    """TSV tables, run manifests and optional static plots of command results"""

    # ---------- TSV ----------

    @staticmethod
    def write_tsv(frame: pd.DataFrame, path: Path) -> Path:
        """Write a table as TSV (no index, repr floats, LF line endings)"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, sep="\t", index=False, lineterminator="\n", na_rep="nan")
        logger.info("Wrote %s (%d rows)", path, len(frame))
        return path

    @staticmethod
    def rows_frame(rows: Sequence[Any]) -> pd.DataFrame:
        """Frame of pydantic rows, enum members written by value"""
        return pd.DataFrame([row.model_dump(mode="json") for row in rows])

    @staticmethod
    def eval_report_frame(report: EvalReport, **extra: Any) -> pd.DataFrame:
        """One line per (slice, metric, K); `extra` columns are prepended"""
        frame = ReportService.rows_frame(report.rows)
        for position, (name, value) in enumerate(extra.items()):
            frame.insert(position, name, value)
        return frame

    @staticmethod
    def leaderboard_frame(board: Leaderboard) -> pd.DataFrame:
        """
        Full sweep grid: parameters, validation selection value and every
        test metric as `test_<slice>_<metric>@<K>` columns.

        Fit times are left out so reruns produce identical files.
        """
        records: List[Dict[str, Any]] = []
        for row in board.rows:
            record: Dict[str, Any] = {"label": row.label, "spec": row.spec}
            record.update(row.params)
            record["status"] = row.status
            record["selected"] = int(row.selected)
            record[f"val_{board.selection.label.replace(' ', '_')}"] = row.validation_value
            if row.test is not None:
                for metric_row in row.test.rows:
                    record[f"test_{metric_row.slice.value}_{metric_row.metric.value}@{metric_row.k}"] = metric_row.value
            record["error"] = row.error or ""
            records.append(record)
        frame = pd.DataFrame(records)
        # error last, metric columns in first-seen order
        return frame[[c for c in frame.columns if c != "error"] + ["error"]]

    @staticmethod
    def stats_frame(stats: DatasetStats, name: str = "train") -> pd.DataFrame:
        return pd.DataFrame([{"matrix": name, **stats.model_dump()}])

    @staticmethod
    def spectra_frame(reports: Sequence[SpectrumReport], key: str = "", values: Optional[Sequence[Any]] = None) -> pd.DataFrame:
        """Long table (source, [key], rank, eigenvalue)"""
        records = []
        for idx, report in enumerate(reports):
            for rank, eigenvalue in enumerate(report.eigenvalues):
                record: Dict[str, Any] = {"source": report.source}
                if key and values is not None:
                    record[key] = values[idx]
                record["rank"] = rank
                record["eigenvalue"] = float(eigenvalue)
                records.append(record)
        return pd.DataFrame(records)

    @staticmethod
    def weight_distribution_frame(dist: WeightDistribution) -> pd.DataFrame:
        """Per-group summary and histogram counts over the shared bins"""
        records = []
        for group in (dist.head, dist.tail):
            for idx, count in enumerate(group.histogram):
                records.append({
                    "group": group.group,
                    "items": group.items,
                    "mean": group.mean,
                    "std": group.std,
                    "bin_lo": dist.bin_edges[idx],
                    "bin_hi": dist.bin_edges[idx + 1],
                    "count": count,
                })
        return pd.DataFrame(records)

    @staticmethod
    def ablation_frame(rows: Sequence[AblationRow]) -> pd.DataFrame:
        frame = ReportService.rows_frame(rows)
        frame["spec"] = frame["spec"].fillna("")
        return frame

    @staticmethod
    def noise_frame(rows: Sequence[NoiseRow]) -> pd.DataFrame:
        return ReportService.rows_frame(rows)

    @staticmethod
    def timing_frame(rows: Sequence[TimingRow]) -> pd.DataFrame:
        return ReportService.rows_frame(rows)

    @staticmethod
    def curve_frame(rows: Sequence[CurveRow]) -> pd.DataFrame:
        return ReportService.rows_frame(rows)

    # ---------- Manifest ----------

    @staticmethod
    def config_hash(arguments: Dict[str, Any]) -> str:
        """Hash of the resolved command arguments (paths as strings, keys sorted)"""
        canonical = json.dumps(arguments, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    @staticmethod
    def write_manifest(
        out_dir: Path,
        command: str,
        arguments: Dict[str, Any],
        seed: int,
        wall_seconds: float,
        dataset_hash: Optional[str] = None,
    ) -> Path:
        """Write (or replace) the single manifest.json of an output directory"""
        clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in arguments.items() if not callable(v)}
        manifest = RunManifest(
            command=command,
            config_hash=ReportService.config_hash(clean),
            dataset_hash=dataset_hash,
            seed=seed,
            version=__version__,
            wall_seconds=wall_seconds,
            created_at=datetime.now(timezone.utc),
            arguments=clean,
        )
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path

    # ---------- Plots ----------

    @staticmethod
    def _pyplot():
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        return plt

    @staticmethod
    def plot_spectra(reports: Sequence[SpectrumReport], labels: Sequence[str], path: Path) -> Path:
        """Eigenvalue-vs-rank curves, one per report"""
        plt = ReportService._pyplot()
        fig, ax = plt.subplots(figsize=(6, 4))
        for report, label in zip(reports, labels):
            ax.plot(np.arange(report.size), report.eigenvalues, label=label)
        ax.set_xlabel("rank")
        ax.set_ylabel("eigenvalue")
        ax.grid(True)
        ax.legend(loc="upper right", fontsize="small")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return Path(path)

    @staticmethod
    def plot_weight_distribution(dist: WeightDistribution, path: Path) -> Path:
        """Head and tail histograms of column-mean weights"""
        plt = ReportService._pyplot()
        fig, ax = plt.subplots(figsize=(6, 4))
        edges = np.asarray(dist.bin_edges)
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = np.diff(edges)
        for group, color in ((dist.head, "tab:red"), (dist.tail, "tab:blue")):
            ax.bar(centers, group.histogram, width=width, alpha=0.5, color=color, label=f"{group.group} ({group.items})")
        ax.set_xlabel("column-mean weight")
        ax.set_ylabel("items")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return Path(path)

    @staticmethod
    def plot_curve(frame: pd.DataFrame, x: str, y: str, group: str, path: Path, title: str = "") -> Path:
        """Line per `group` value of `y` against `x`"""
        plt = ReportService._pyplot()
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, part in frame.groupby(group, sort=True):
            part = part.sort_values(x)
            ax.plot(part[x], part[y], marker="o", label=str(name))
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        if title:
            ax.set_title(title)
        ax.grid(True)
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return Path(path)
