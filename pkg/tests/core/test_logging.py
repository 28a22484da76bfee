"""Tests for core.logging: exit-code mapping and the command auditor."""
from pathlib import Path

import pytest
from pydantic import BaseModel, Field, ValidationError
from sqlalchemy import select

from src.core.errors import (
    CapacityError,
    ConfigurationError,
    ContractError,
    DataFormatError,
    EmptyAfterFilterError,
    InsufficientCellsError,
    ModelFormatError,
    NumericalError,
)
from src.core.logging import (
    EXIT_IO,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_UNEXPECTED,
    EXIT_USAGE,
    CommandAuditor,
    install_error_handlers,
    resolve_error,
)
from src.db.models import RunLog
from src.db.session import database_url_for, session_scope


class _Positive(BaseModel):
    value: int = Field(..., gt=0)


class TestResolveError:
    """Test exception to exit-code mapping."""

    @pytest.mark.parametrize("exc, code", [
        (ConfigurationError("bad flag"), EXIT_USAGE),
        (InsufficientCellsError("too dense"), EXIT_USAGE),
        (ContractError("zero degree"), EXIT_USAGE),
        (CapacityError("gram", 100, 10), EXIT_USAGE),
        (EmptyAfterFilterError("nothing left"), EXIT_USAGE),
        (FileNotFoundError("missing.tsv"), EXIT_USAGE),
        (NumericalError("not SPD", pivot=2), EXIT_NUMERICAL),
        (DataFormatError("bad record", line=3), EXIT_IO),
        (ModelFormatError("bad magic"), EXIT_IO),
        (PermissionError("denied"), EXIT_IO),
        (RuntimeError("boom"), EXIT_UNEXPECTED),
    ])
    def test_exit_codes(self, exc, code):
        """Test each error class maps to its exit code."""
        assert resolve_error(exc)[0] == code

    def test_validation_error_detail(self):
        """Test pydantic validation errors are usage errors with a field path."""
        with pytest.raises(ValidationError) as exc_info:
            _Positive(value=0)
        code, title, detail = resolve_error(exc_info.value)
        assert code == EXIT_USAGE
        assert title == "Validation Error"
        assert detail.startswith("value:")

    def test_unexpected_error_hides_details(self):
        """Test unexpected errors get a generic message."""
        _, title, detail = resolve_error(KeyError("internal"))
        assert title == "Internal Error"
        assert "internal" not in detail

    def test_install_error_handlers_prints_to_stderr(self, capsys):
        """Test the user-facing message goes to stderr."""
        code = install_error_handlers(DataFormatError("missing item field", line=7))
        captured = capsys.readouterr()
        assert code == EXIT_IO
        assert captured.out == ""
        assert "error [Data Format Error]: line 7: missing item field" in captured.err


class TestErrors:
    """Test error payloads."""

    def test_data_format_line_prefix(self):
        """Test the line number is carried and prefixed."""
        err = DataFormatError("bad rating", line=12)
        assert err.line == 12
        assert str(err) == "line 12: bad rating"

    def test_numerical_pivot(self):
        """Test the failing pivot is carried."""
        assert NumericalError("not SPD", pivot=4).pivot == 4

    def test_capacity_message(self):
        """Test capacity errors name the size and the cap."""
        err = CapacityError("eig_sym", 5000, 4096)
        assert (err.size, err.cap) == (5000, 4096)
        assert "5000" in str(err) and "4096" in str(err)


class TestCommandAuditor:
    """Test run logging around commands."""

    def test_success_writes_run_log(self, tmp_path):
        """Test a successful command appends a RunLog row."""
        with CommandAuditor("fit", {"data": Path("/tmp/data"), "k_list": [20]}, out_dir=tmp_path, seed=3) as auditor:
            auditor.dataset_hash = "abc123"

        assert auditor.exit_code == EXIT_OK
        with session_scope(database_url_for(tmp_path)) as db:
            rows = db.execute(select(RunLog)).scalars().all()
            assert len(rows) == 1
            assert rows[0].command == "fit"
            assert rows[0].exit_code == EXIT_OK
            assert rows[0].seed == 3
            assert rows[0].dataset_hash == "abc123"
            assert rows[0].arguments == {"data": "/tmp/data", "k_list": [20]}
            assert rows[0].error_details is None

    def test_failure_records_exit_code_and_reraises(self, tmp_path):
        """Test a failing command is logged with its exit code and the error propagates."""
        with pytest.raises(NumericalError):
            with CommandAuditor("evaluate", {}, out_dir=tmp_path) as auditor:
                raise NumericalError("Cholesky failed", pivot=0)

        assert auditor.exit_code == EXIT_NUMERICAL
        with session_scope(database_url_for(tmp_path)) as db:
            row = db.execute(select(RunLog)).scalar_one()
            assert row.exit_code == EXIT_NUMERICAL
            assert "Cholesky failed" in row.error_details

    def test_missing_out_dir_skips_run_store(self, tmp_path, mocker):
        """Test nothing is written when the output directory does not exist."""
        scope = mocker.patch("src.db.session.session_scope")
        with CommandAuditor("prepare", {}, out_dir=tmp_path / "absent"):
            pass
        scope.assert_not_called()

    def test_run_store_failure_is_a_warning(self, tmp_path, mocker, caplog):
        """Test run-store failures never change the outcome."""
        mocker.patch("src.db.session.session_scope", side_effect=RuntimeError("disk full"))
        with CommandAuditor("analyze", {}, out_dir=tmp_path) as auditor:
            pass
        assert auditor.exit_code == EXIT_OK
        assert "Failed to log to run store" in caplog.text
