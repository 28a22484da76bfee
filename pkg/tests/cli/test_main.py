"""End-to-end tests for the larex command line."""
import json

import pandas as pd
import pytest

from src.core.logging import EXIT_OK, EXIT_USAGE
from src.main import build_parser, main
from tests.utils.factories import write_event_log

LAE_SPEC = "lae/dan/lambda=1,alpha=0.2,beta=0.4"
SMALL_SWEEP = ["--lambda-grid", "1,100", "--select", "AOA,NDCG,10", "--k", "10"]


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    """Strong-generalization bundle prepared once for the module"""
    root = tmp_path_factory.mktemp("cli")
    log = write_event_log(root / "events.tsv", seed=5)
    assert main(["prepare", "--input", str(log), "--out", str(root / "data")]) == EXIT_OK
    return root / "data"


def _read(path):
    return pd.read_csv(path, sep="\t")


class TestParser:
    """Test argument parsing."""

    def test_version(self, capsys):
        """Test --version prints and exits cleanly."""
        with pytest.raises(SystemExit) as excinfo:
            build_parser().parse_args(["--version"])
        assert excinfo.value.code == 0
        assert "larex" in capsys.readouterr().out

    def test_missing_required_flag(self):
        """Test argparse errors exit with the usage code."""
        with pytest.raises(SystemExit) as excinfo:
            main(["fit"])
        assert excinfo.value.code == EXIT_USAGE

    def test_command_required(self):
        """Test a subcommand is mandatory."""
        with pytest.raises(SystemExit):
            main([])


class TestPrepare:
    """Test the prepare command."""

    def test_writes_bundle(self, prepared):
        """Test bundle files, stats and the manifest are written."""
        for name in ("train", "validation.foldin", "validation.heldout", "test.foldin", "test.heldout"):
            assert (prepared / f"{name}.larex").exists()
        assert (prepared / "bundle.tsv").exists()
        stats = _read(prepared / "stats.tsv")
        assert len(stats) == 2
        manifest = json.loads((prepared / "manifest.json").read_text())
        assert manifest["command"] == "prepare"
        assert manifest["seed"] == 0

    def test_missing_input(self, tmp_path, capsys):
        """Test a missing input file is a usage error."""
        code = main(["prepare", "--input", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "out")])
        assert code == EXIT_USAGE
        assert "error [" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, event_log, tmp_path):
        """Test the same input and seed give identical files."""
        for name in ("a", "b"):
            assert main(["prepare", "--input", str(event_log), "--out", str(tmp_path / name), "--seed", "4"]) == EXIT_OK
        for name in ("stats.tsv", "bundle.tsv", "train.larex", "test.heldout.larex"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_weak_protocol(self, event_log, tmp_path):
        """Test the weak protocol also prepares a full bundle."""
        code = main(["prepare", "--input", str(event_log), "--protocol", "weak", "--out", str(tmp_path / "weak")])
        assert code == EXIT_OK
        assert (tmp_path / "weak" / "validation.heldout.larex").exists()


class TestModelCommands:
    """Test fit, evaluate and topk."""

    def test_fit_ease(self, prepared, tmp_path, capsys):
        """Test fit saves a model and a summary row."""
        out = tmp_path / "ease"
        assert main(["fit", "--data", str(prepared), "--model", "ease", "--lambda", "50", "--out", str(out)]) == EXIT_OK
        assert (out / "model.lare").exists()
        summary = _read(out / "fit.tsv")
        assert summary["label"].tolist() == ["EASE"]
        assert summary["residual_ok"].tolist() == [1]
        assert "EASE" in capsys.readouterr().out

    def test_fit_rejects_dlae_with_dan(self, prepared, tmp_path):
        """Test DLAE with item-adaptive normalization is a usage error."""
        code = main(["fit", "--data", str(prepared), "--model", "dlae/dan/p=0.5,alpha=0.2", "--out", str(tmp_path)])
        assert code == EXIT_USAGE

    def test_fit_dlae_with_user_normalization(self, prepared, tmp_path):
        """Test DLAE fits under user normalization."""
        code = main(["fit", "--data", str(prepared), "--model", "dlae/user/p=0.5,beta=0.5", "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "model.lare").exists()

    def test_help_states_dlae_recipes(self, capsys):
        """Test fit --help lists the recipes DLAE accepts."""
        with pytest.raises(SystemExit) as excinfo:
            build_parser().parse_args(["fit", "--help"])
        assert excinfo.value.code == 0
        text = " ".join(capsys.readouterr().out.split())
        assert "dlae combines only with none, user, columnwise" in text

    def test_evaluate_saved_model(self, prepared, tmp_path, capsys):
        """Test evaluating a model file writes eval.tsv."""
        model_dir = tmp_path / "model"
        assert main(["fit", "--data", str(prepared), "--model", LAE_SPEC, "--out", str(model_dir)]) == EXIT_OK
        capsys.readouterr()

        out = tmp_path / "eval"
        code = main([
            "evaluate", "--data", str(prepared), "--model-file", str(model_dir / "model.lare"),
            "--k", "5,10", "--out", str(out),
        ])
        assert code == EXIT_OK
        frame = _read(out / "eval.tsv")
        assert set(frame["k"]) == {5, 10}
        assert set(frame["split"]) == {"test"}
        assert "LAE_DAN" in capsys.readouterr().out

    def test_evaluate_popularity(self, prepared, tmp_path):
        """Test the most-popular baseline evaluates without a fit."""
        out = tmp_path / "pop"
        code = main(["evaluate", "--data", str(prepared), "--model", "mostpop", "--split", "validation",
                     "--k", "10", "--out", str(out)])
        assert code == EXIT_OK
        frame = _read(out / "eval.tsv")
        assert set(frame["model"]) == {"Most-pop"}
        assert set(frame["split"]) == {"validation"}

    def test_evaluate_without_model(self, prepared):
        """Test --model or --model-file is required."""
        assert main(["evaluate", "--data", str(prepared)]) == EXIT_USAGE

    def test_topk(self, prepared, tmp_path):
        """Test topk lists K items per user, none of them seen."""
        out = tmp_path / "topk"
        code = main(["topk", "--data", str(prepared), "--model", "lae", "--lambda", "10",
                     "--limit", "3", "--k", "5", "--out", str(out)])
        assert code == EXIT_OK
        frame = _read(out / "topk.tsv")
        assert frame["user"].nunique() == 3
        assert len(frame) == 15
        assert set(frame["group"]) <= {"head", "tail"}
        assert frame.groupby("user")["rank"].apply(list).map(lambda r: r == [1, 2, 3, 4, 5]).all()

    def test_topk_unknown_user(self, prepared, tmp_path):
        """Test unknown user ids are a usage error."""
        code = main(["topk", "--data", str(prepared), "--model", "mostpop", "--users", "no-such-user",
                     "--out", str(tmp_path)])
        assert code == EXIT_USAGE


class TestAnalyze:
    """Test the analyze command."""

    def test_outputs(self, prepared, tmp_path, capsys):
        """Test stats, spectra and weight distributions are written."""
        out = tmp_path / "analysis"
        code = main(["analyze", "--data", str(prepared), "--model", "lae/sym/lambda=1",
                     "--betas", "0,0.5,1", "--out", str(out), "--plots"])
        assert code == EXIT_OK
        for name in ("stats.tsv", "spectra.tsv", "spectrum_beta.tsv", "weights.tsv",
                     "spectrum_beta.png", "weights.png"):
            assert (out / name).exists()
        printed = capsys.readouterr().out
        assert "gini_item" in printed
        assert "homophily_w" in printed

    def test_without_model(self, prepared, tmp_path):
        """Test weights.tsv is only written for a model."""
        out = tmp_path / "analysis"
        assert main(["analyze", "--data", str(prepared), "--out", str(out)]) == EXIT_OK
        assert (out / "stats.tsv").exists()
        assert not (out / "weights.tsv").exists()


class TestExperiments:
    """Test sweep, ablate, noise and timing."""

    def test_sweep(self, prepared, tmp_path):
        """Test the leaderboard covers the grid and marks one winner per family."""
        out = tmp_path / "sweep"
        code = main(["sweep", "--data", str(prepared), "--recipes", "none,sym", "--curves", "lambda",
                     *SMALL_SWEEP, "--out", str(out)])
        assert code == EXIT_OK
        board = _read(out / "leaderboard.tsv")
        assert len(board) == 4
        winners = _read(out / "winners.tsv")
        assert sorted(winners["label"]) == ["LAE", "LAE_Sym"]
        assert (out / "curve_lambda.tsv").exists()
        assert (out / "runs.db").exists()

    def test_sweep_is_deterministic(self, prepared, tmp_path):
        """Test two runs with the same seed give the same leaderboard bytes."""
        for name in ("a", "b"):
            code = main(["sweep", "--data", str(prepared), "--recipes", "rw", *SMALL_SWEEP,
                         "--out", str(tmp_path / name)])
            assert code == EXIT_OK
        first = (tmp_path / "a" / "leaderboard.tsv").read_bytes()
        assert first == (tmp_path / "b" / "leaderboard.tsv").read_bytes()

    def test_sweep_bad_selection(self, prepared, tmp_path):
        """Test a selection K outside the evaluated cut-offs is rejected."""
        code = main(["sweep", "--data", str(prepared), "--lambda-grid", "1", "--select", "AOA,NDCG,50",
                     "--k", "10", "--out", str(tmp_path)])
        assert code == EXIT_USAGE

    def test_ablate(self, prepared, tmp_path):
        """Test the ablation lists Most-pop first."""
        out = tmp_path / "ablate"
        code = main(["ablate", "--data", str(prepared), *SMALL_SWEEP, "--alpha-grid", "0.2",
                     "--beta-grid", "0.5", "--gamma-grid", "0.5", "--out", str(out)])
        assert code == EXIT_OK
        frame = _read(out / "ablation.tsv")
        assert frame["method"].iloc[0] == "Most-pop"
        assert len(frame) > 1
        assert (out / "leaderboard.tsv").exists()

    def test_noise(self, prepared, tmp_path):
        """Test noise rows per model and ratio."""
        out = tmp_path / "noise"
        code = main(["noise", "--data", str(prepared), "--model-spec", "lae/none/lambda=10",
                     "--ratios", "0,5", "--seeds", "0", "--k", "10", "--out", str(out)])
        assert code == EXIT_OK
        frame = _read(out / "noise.tsv")
        assert set(frame["ratio_percent"]) == {0.0, 5.0}
        clean = frame[frame["ratio_percent"] == 0.0]
        # slices with a zero baseline report nan
        assert (clean["relative_drop"].fillna(0.0) == 0.0).all()

    def test_timing(self, prepared, tmp_path):
        """Test one timing row per model spec."""
        out = tmp_path / "timing"
        code = main(["timing", "--data", str(prepared), "--repeats", "1", "--k", "10", "--out", str(out)])
        assert code == EXIT_OK
        frame = _read(out / "timing.tsv")
        assert len(frame) == 2
        assert (frame["fit_seconds"] >= 0).all()


class TestConfigFile:
    """Test --config overrides."""

    def test_section_overrides(self, prepared, tmp_path):
        """Test a [fit] table supplies flags; unrelated top-level keys are ignored."""
        config = tmp_path / "larex.toml"
        config.write_text('k_list = [10]\n\n[fit]\nmodel = "lae"\nlam = 5.0\n')
        out = tmp_path / "fit"
        assert main(["fit", "--data", str(prepared), "--out", str(out), "--config", str(config)]) == EXIT_OK
        summary = _read(out / "fit.tsv")
        assert "lambda=5" in summary["spec"].iloc[0]

    def test_unknown_section_key(self, prepared, tmp_path):
        """Test an unknown key in the command's table is a usage error."""
        config = tmp_path / "larex.toml"
        config.write_text('[fit]\nmodel = "lae"\nmystery = 1\n')
        code = main(["fit", "--data", str(prepared), "--out", str(tmp_path / "fit"), "--config", str(config)])
        assert code == EXIT_USAGE

    def test_bad_choice(self, prepared, tmp_path):
        """Test config values are checked against the flag's choices."""
        config = tmp_path / "larex.toml"
        config.write_text('[fit]\nmodel = "lae"\nnorm = "zca"\n')
        code = main(["fit", "--data", str(prepared), "--out", str(tmp_path / "fit"), "--config", str(config)])
        assert code == EXIT_USAGE
