import numpy as np
import pytest

from arealbayes import fileio
from arealbayes.cli import main


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("sim")
    assert run(["simulate", "--outdir", outdir, "--rows", "8", "--cols", "8",
                "--seed", "3", "--model", "M3"]) == 0
    return outdir


class TestSimulate:
    def test_emits_all_inputs(self, simulated):
        for name in (
            "adjacency.csv", "areas.csv", "indicators_raw.csv", "extremes.csv",
            "strata.csv", "rates.csv", "truth.csv",
        ):
            assert (simulated / name).exists(), name

    def test_suppression_writes_empty_cells(self, tmp_path):
        assert run(["simulate", "--outdir", tmp_path, "--rows", "4", "--cols", "4",
                    "--seed", "1", "--suppressed", "3"]) == 0
        table = fileio.read_strata(tmp_path / "strata.csv")
        suppressed_rows = np.isnan(table.deaths).all(axis=1)
        assert suppressed_rows.sum() == 3


class TestPrep:
    def test_outputs_standardized_imputed_counts_covariates(self, simulated, tmp_path):
        assert run([
            "prep", "--outdir", tmp_path,
            "--indicators-raw", simulated / "indicators_raw.csv",
            "--areas", simulated / "areas.csv",
            "--extremes", simulated / "extremes.csv",
            "--strata", simulated / "strata.csv",
        ]) == 0
        panel = fileio.read_indicators(tmp_path / "indicators.csv")
        assert np.isfinite(panel.values).all()
        means = panel.values.mean(axis=0)
        assert np.max(np.abs(means)) < 0.2  # imputation shifts the exact zero
        ids, observed, expected = fileio.read_counts(tmp_path / "counts.csv")
        assert np.isfinite(expected).all()
        assert abs(observed.sum() - expected.sum()) < 1e-6  # derived rates balance
        cov_ids, ice, factors, names = fileio.read_covariates(tmp_path / "covariates.csv")
        assert np.all((ice >= -1) & (ice <= 1))
        assert factors.shape == (64, 0)

    def test_schema_error_is_one_line_and_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "indicators_raw.csv"
        bad.write_text("area_id,x\n0,1.0\n1,zap\n")
        code = run(["prep", "--outdir", tmp_path, "--indicators-raw", bad])
        assert code == 2
        err = capsys.readouterr().err
        assert err.count("\n") == 1
        assert err.startswith("error: SchemaError:")
        assert "indicators_raw.csv:3" in err
        assert "'x'" in err


class TestFitStage1:
    def test_retained_draw_arithmetic(self, simulated, tmp_path):
        prep_dir = tmp_path / "prep"
        assert run([
            "prep", "--outdir", prep_dir,
            "--indicators-raw", simulated / "indicators_raw.csv",
            "--areas", simulated / "areas.csv",
        ]) == 0
        out = tmp_path / "stage1.csv"
        assert run([
            "fit-stage1",
            "--indicators", prep_dir / "indicators.csv",
            "--adjacency", simulated / "adjacency.csv",
            "--out", out,
            "--iters", "2000", "--burnin", "500", "--thin", "5",
            "--chains", "2", "--seed", "11",
        ]) == 0
        archive = fileio.read_archive(out)
        assert archive.n_chains == 2
        assert archive.n_retained == 300
        assert archive.iterations[0] == 505
        assert archive.iterations[-1] == 2000

    def test_dimension_mismatch_names_both_files(self, simulated, tmp_path, capsys):
        short = tmp_path / "short.csv"
        short.write_text("area_id,x,y\n0,0.1,0.2\n1,,0.3\n2,0.0,0.1\n")
        code = run([
            "fit-stage1", "--indicators", short,
            "--adjacency", simulated / "adjacency.csv",
            "--areas", simulated / "areas.csv",
            "--out", tmp_path / "a.csv",
        ])
        assert code == 2
        err = capsys.readouterr().err
        assert "short.csv" in err and "areas.csv" in err


@pytest.fixture(scope="module")
def full_pipeline(tmp_path_factory, simulated):
    """simulate -> prep -> fit-stage1 -> scores -> prep -> fit-stage2."""
    work = tmp_path_factory.mktemp("pipeline")
    assert run([
        "prep", "--outdir", work,
        "--indicators-raw", simulated / "indicators_raw.csv",
        "--areas", simulated / "areas.csv",
        "--extremes", simulated / "extremes.csv",
        "--strata", simulated / "strata.csv",
    ]) == 0
    assert run([
        "fit-stage1",
        "--indicators", work / "indicators.csv",
        "--adjacency", simulated / "adjacency.csv",
        "--out", work / "stage1.csv",
        "--iters", "600", "--burnin", "200", "--thin", "4",
        "--chains", "2", "--seed", "21",
    ]) == 0
    assert run([
        "summarize", "--archive", work / "stage1.csv",
        "--what", "factor-scores", "--factor-name", "health",
        "--areas", simulated / "areas.csv",
        "--out", work / "scores.csv",
    ]) == 0
    assert run([
        "prep", "--outdir", work,
        "--extremes", simulated / "extremes.csv",
        "--factor-scores", work / "scores.csv",
    ]) == 0
    assert run([
        "fit-stage2",
        "--counts", work / "counts.csv",
        "--covariates", work / "covariates.csv",
        "--adjacency", simulated / "adjacency.csv",
        "--model", "M3", "--out", work / "stage2.csv",
        "--iters", "2500", "--burnin", "800", "--thin", "5",
        "--chains", "2", "--seed", "22",
    ]) == 0
    return work, simulated


class TestFitStage2AndSummaries:
    def test_pipeline_files_exist(self, full_pipeline):
        work, _ = full_pipeline
        archive = fileio.read_archive(work / "stage2.csv")
        assert set(archive.param_names) == {"beta", "phi", "v", "tau_phi", "tau_v"}

    def test_m4_runs_on_same_covariates(self, full_pipeline):
        work, simulated = full_pipeline
        assert run([
            "fit-stage2",
            "--counts", work / "counts.csv",
            "--covariates", work / "covariates.csv",
            "--adjacency", simulated / "adjacency.csv",
            "--model", "M4", "--out", work / "stage2_m4.csv",
            "--iters", "300", "--burnin", "100", "--thin", "4",
            "--chains", "1", "--seed", "23",
        ]) == 0
        archive = fileio.read_archive(work / "stage2_m4.csv")
        assert "delta" in archive.param_names

    def test_laplace_mode(self, full_pipeline):
        work, simulated = full_pipeline
        out = work / "laplace.csv"
        assert run([
            "fit-stage2",
            "--counts", work / "counts.csv",
            "--covariates", work / "covariates.csv",
            "--adjacency", simulated / "adjacency.csv",
            "--model", "M3", "--out", out, "--laplace",
            "--tau-phi", "5", "--tau-v", "5",
        ]) == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "term,estimate,sd"
        assert len(rows) == 4  # header + intercept, ice, health

    def test_summaries(self, full_pipeline):
        work, simulated = full_pipeline
        archive_bytes = (work / "stage2.csv").read_bytes()
        common = [
            "--counts", work / "counts.csv",
            "--covariates", work / "covariates.csv",
            "--adjacency", simulated / "adjacency.csv",
            "--model", "M3",
        ]
        for what, header in [
            ("fixed-effects", "term,mean,sd,q025,q975,rate_ratio,rr_q025,rr_q975"),
            ("hyperparameters", "param,mean,mode,q025,q975"),
            ("relative-risk", "area_id,rr_mean,rr_q025,rr_q975"),
            ("risk-exceedance", "area_id,p_rr_gt_1.25,p_rr_gt_1.5,p_rr_gt_2.0"),
        ]:
            out = work / f"{what}.csv"
            assert run([
                "summarize", "--archive", work / "stage2.csv",
                "--what", what, "--out", out, *common,
            ]) == 0
            assert out.read_text().splitlines()[0] == header
        # summarize never mutates archives
        assert (work / "stage2.csv").read_bytes() == archive_bytes
        # qualitative sign pattern of the generative truth: segregation
        # effect negative with interval excluding 0, factor effect positive
        rows = (work / "fixed-effects.csv").read_text().splitlines()
        ice = dict(zip(rows[0].split(","), rows[2].split(",")))
        factor = dict(zip(rows[0].split(","), rows[3].split(",")))
        assert float(ice["q975"]) < 0
        assert float(factor["mean"]) > 0

    def test_stage1_summaries(self, full_pipeline):
        work, simulated = full_pipeline
        for what in ("loadings", "quintiles", "exceedance"):
            out = work / f"{what}.csv"
            assert run([
                "summarize", "--archive", work / "stage1.csv",
                "--what", what, "--out", out,
                "--areas", simulated / "areas.csv",
            ]) == 0
            assert out.exists()

    def test_diagnose_archive(self, full_pipeline, capsys):
        work, _ = full_pipeline
        out = work / "diag.csv"
        assert run([
            "diagnose", "--archive", work / "stage2.csv",
            "--params", "beta,tau_v", "--out", out,
        ]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("param,index,rhat,ess")
        assert len(lines) == 1 + 3 + 1  # 3 beta coords + tau_v

    def test_diagnose_morans_i(self, full_pipeline, capsys):
        work, simulated = full_pipeline
        assert run([
            "diagnose", "--morans-i",
            "--input", work / "covariates.csv", "--column", "ice",
            "--adjacency", simulated / "adjacency.csv",
        ]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "variable,morans_i,z_score,p_value"


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, simulated, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("iters = 400\nburnin = 100\nthin = 4\nchains = 1\nseed = 5\n")
        prep_dir = tmp_path / "p"
        run([
            "prep", "--outdir", prep_dir,
            "--indicators-raw", simulated / "indicators_raw.csv",
            "--areas", simulated / "areas.csv",
        ])
        out = tmp_path / "s1.csv"
        assert run([
            "--config", conf, "fit-stage1",
            "--indicators", prep_dir / "indicators.csv",
            "--adjacency", simulated / "adjacency.csv",
            "--out", out, "--thin", "2",
        ]) == 0
        archive = fileio.read_archive(out)
        assert archive.config.n_iter == 400  # from config
        assert archive.config.thin == 2      # flag wins
        assert archive.config.n_chains == 1
