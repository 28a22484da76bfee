from datetime import datetime
from typing import Any, Optional
from sqlalchemy import Integer, String, Text, Float, DateTime, JSON, CheckConstraint, func
from sqlalchemy.orm import Mapped, mapped_column

from src.db.base import Base


# ---------- Audit ----------
class RunLog(Base):
    __tablename__ = "run_log"
    run_log_id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    started_at: Mapped["datetime"] = mapped_column(DateTime(timezone=True), server_default=func.now())
    command: Mapped[str] = mapped_column(String(32), nullable=False, index=True)
    arguments: Mapped[dict[str, Any]] = mapped_column(JSON, default=dict, nullable=False)
    exit_code: Mapped[int] = mapped_column(Integer, nullable=False)
    duration_seconds: Mapped[float] = mapped_column(Float, nullable=False)
    seed: Mapped[Optional[int]] = mapped_column(Integer)
    dataset_hash: Mapped[Optional[str]] = mapped_column(String(64))
    error_details: Mapped[Optional[str]] = mapped_column(Text)


# ---------- Sweeps ----------
class SweepResult(Base):
    __tablename__ = "sweep_result"
    sweep_result_id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    config_key: Mapped[str] = mapped_column(String(128), unique=True, nullable=False)
    label: Mapped[str] = mapped_column(String(64), nullable=False)
    params: Mapped[dict[str, Any]] = mapped_column(JSON, nullable=False)
    dataset_hash: Mapped[str] = mapped_column(String(64), nullable=False, index=True)
    status: Mapped[str] = mapped_column(String(16), nullable=False)
    validation_metric: Mapped[Optional[float]] = mapped_column(Float)
    validation_report: Mapped[Optional[dict[str, Any]]] = mapped_column(JSON)
    test_report: Mapped[Optional[dict[str, Any]]] = mapped_column(JSON)
    fit_seconds: Mapped[Optional[float]] = mapped_column(Float)
    error: Mapped[Optional[str]] = mapped_column(Text)
    created_at: Mapped["datetime"] = mapped_column(DateTime(timezone=True), server_default=func.now())

    __table_args__ = (
        CheckConstraint("status in ('ok','failed')", name="status"),
    )
