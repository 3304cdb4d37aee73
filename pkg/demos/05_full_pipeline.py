"""The batch pipeline, end to end, through the command-line interface.

simulate -> prep -> fit-stage1 -> factor scores -> covariates ->
fit-stage2 -> summaries, all in a temporary directory. Takes ~30 s.
"""

import tempfile
from pathlib import Path

from arealbayes.cli import main

work = Path(tempfile.mkdtemp(prefix="arealbayes_demo_"))
sim = work / "sim"
print(f"working in {work}\n")


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ arealbayes " + " ".join(argv))
    code = main(argv)
    assert code == 0, f"exit code {code}"


run("simulate", "--outdir", sim, "--rows", "10", "--cols", "10", "--seed", "1",
    "--model", "M4", "--suppressed", "4")
run("prep", "--outdir", work,
    "--indicators-raw", sim / "indicators_raw.csv",
    "--areas", sim / "areas.csv",
    "--extremes", sim / "extremes.csv",
    "--strata", sim / "strata.csv",
    "--rates", sim / "rates.csv")
run("diagnose", "--morans-i", "--input", work / "covariates.csv",
    "--column", "ice", "--adjacency", sim / "adjacency.csv")
run("fit-stage1", "--indicators", work / "indicators.csv",
    "--adjacency", sim / "adjacency.csv", "--out", work / "stage1.csv",
    "--iters", "2000", "--burnin", "500", "--thin", "5", "--chains", "2",
    "--seed", "2")
run("summarize", "--archive", work / "stage1.csv", "--what", "loadings",
    "--out", work / "loadings.csv")
run("summarize", "--archive", work / "stage1.csv", "--what", "factor-scores",
    "--factor-name", "health_behavior", "--areas", sim / "areas.csv",
    "--out", work / "scores.csv")
run("prep", "--outdir", work, "--extremes", sim / "extremes.csv",
    "--factor-scores", work / "scores.csv")
run("fit-stage2", "--counts", work / "counts.csv",
    "--covariates", work / "covariates.csv",
    "--adjacency", sim / "adjacency.csv", "--model", "M4",
    "--out", work / "stage2.csv",
    "--iters", "2500", "--burnin", "800", "--thin", "5", "--chains", "2",
    "--seed", "3")
run("diagnose", "--archive", work / "stage2.csv", "--params", "beta,tau_v,tau_delta",
    "--out", work / "diagnostics.csv")
for what in ("fixed-effects", "hyperparameters", "relative-risk",
             "risk-exceedance", "delta"):
    run("summarize", "--archive", work / "stage2.csv", "--what", what,
        "--out", work / f"{what}.csv",
        "--counts", work / "counts.csv",
        "--covariates", work / "covariates.csv",
        "--adjacency", sim / "adjacency.csv", "--model", "M4")

print("\noutputs:")
for path in sorted(work.glob("*.csv")):
    print(" ", path.name)
print("\nfixed effects table:")
print((work / "fixed-effects.csv").read_text())
