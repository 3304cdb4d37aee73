import numpy as np
import pytest

from arealbayes.errors import ValidationError
from arealbayes.mcmc import (
    ChainArchive,
    McmcConfig,
    effective_sample_size,
    gelman_rubin,
    gelman_rubin_sequences,
    posterior_summary,
    spawn_generators,
)


def archive_from_chains(chains, **config_kwargs):
    n = len(chains[0]["x"])
    defaults = dict(n_chains=len(chains), n_iter=2 * n, burn_in=n, thin=1, seed=0)
    defaults.update(config_kwargs)
    config = McmcConfig(**defaults)
    return ChainArchive(chains, config.retained_iterations(), config)


class TestConfig:
    def test_default_protocol_retains_1200(self):
        config = McmcConfig()
        assert config.n_retained == 1200
        stamps = config.retained_iterations()
        assert stamps[0] == 40_050
        assert stamps[-1] == 100_000

    def test_retained_stamps_arithmetic(self):
        config = McmcConfig(n_chains=1, n_iter=100, burn_in=30, thin=7, seed=1)
        stamps = config.retained_iterations()
        assert stamps.tolist() == [37, 44, 51, 58, 65, 72, 79, 86, 93, 100]
        assert all(config.is_retained(s) for s in stamps)
        assert sum(config.is_retained(i) for i in range(1, 101)) == len(stamps)

    def test_validation(self):
        with pytest.raises(ValidationError):
            McmcConfig(burn_in=100, n_iter=100)
        with pytest.raises(ValidationError):
            McmcConfig(thin=0)
        with pytest.raises(ValidationError):
            McmcConfig(n_chains=0)

    def test_spawned_generators_are_reproducible_and_distinct(self):
        a = [g.standard_normal(4) for g in spawn_generators(33, 3)]
        b = [g.standard_normal(4) for g in spawn_generators(33, 3)]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        assert not np.allclose(a[0], a[1])


class TestGelmanRubin:
    def test_same_target_is_near_one(self):
        rngs = spawn_generators(4, 2)
        chains = [{"x": rng.standard_normal(1000)} for rng in rngs]
        assert gelman_rubin(archive_from_chains(chains), "x") < 1.05

    def test_disjoint_chains_blow_up(self):
        rngs = spawn_generators(4, 2)
        chains = [
            {"x": rngs[0].standard_normal(500)},
            {"x": rngs[1].standard_normal(500) + 100.0},
        ]
        assert gelman_rubin(archive_from_chains(chains), "x") > 10

    def test_hand_computed_two_by_six(self):
        c1 = np.array([1.0, 2.0, 3.0, 2.0, 1.0, 2.0])
        c2 = np.array([2.0, 3.0, 4.0, 3.0, 2.0, 1.0])

        def by_hand(seqs):
            m = len(seqs)
            length = len(seqs[0])
            means = [sum(s) / length for s in seqs]
            grand = sum(means) / m
            b = length / (m - 1) * sum((mu - grand) ** 2 for mu in means)
            w = (
                sum(sum((v - mu) ** 2 for v in s) / (length - 1) for s, mu in zip(seqs, means))
                / m
            )
            var_plus = (length - 1) / length * w + b / length
            return (var_plus / w) ** 0.5

        plain = gelman_rubin_sequences([c1, c2], split=False)
        assert abs(plain - by_hand([c1, c2])) < 1e-12
        split = gelman_rubin_sequences([c1, c2], split=True)
        halves = [c1[:3], c1[3:], c2[:3], c2[3:]]
        assert abs(split - by_hand(halves)) < 1e-12

    def test_single_chain_rejected(self):
        chains = [{"x": np.arange(20.0)}]
        with pytest.raises(ValidationError, match="2 chains"):
            gelman_rubin(archive_from_chains(chains), "x")

    def test_vector_param_reports_worst_component(self):
        rngs = spawn_generators(4, 2)
        good = [rng.standard_normal(400) for rng in rngs]
        bad = [good[0] * 1.0, good[1] + 50.0]
        chains = [
            {"x": np.column_stack([good[c], bad[c]])} for c in range(2)
        ]
        arch = archive_from_chains(chains)
        assert gelman_rubin(arch, "x", index=0) < 1.05
        assert gelman_rubin(arch, "x") > 5


class TestEffectiveSampleSize:
    def test_independent_draws(self):
        rng = np.random.default_rng(0)
        chains = [{"x": rng.standard_normal(10_000)}]
        ess = effective_sample_size(archive_from_chains(chains), "x")
        assert 0.8 <= ess / 10_000 <= 1.2

    def test_ar1_matches_closed_form(self):
        rho = 0.9
        rng = np.random.default_rng(1)
        n = 40_000
        x = np.empty(n)
        x[0] = rng.standard_normal()
        innov = rng.standard_normal(n) * np.sqrt(1 - rho**2)
        for t in range(1, n):
            x[t] = rho * x[t - 1] + innov[t]
        ess = effective_sample_size(archive_from_chains([{"x": x}]), "x")
        target = (1 - rho) / (1 + rho)
        assert target / 1.5 <= ess / n <= target * 1.5

    def test_constant_chain_flagged_degenerate(self):
        chains = [{"x": np.ones(100)}]
        with pytest.warns(UserWarning, match="degenerate"):
            ess = effective_sample_size(archive_from_chains(chains), "x")
        assert ess == 0.0

    def test_too_few_draws_rejected(self):
        chains = [{"x": np.arange(10.0)}]
        with pytest.raises(ValidationError, match="50"):
            effective_sample_size(archive_from_chains(chains), "x")


class TestPosteriorSummary:
    def test_small_example(self):
        chains = [{"x": np.array([1.0, 2.0]) }, {"x": np.array([3.0, 4.0])}]
        s = posterior_summary(archive_from_chains(chains), "x")
        assert s.mean == 2.5
        assert s.median == 2.5

    def test_quantiles_match_sort_oracle(self):
        rng = np.random.default_rng(5)
        draws = rng.standard_normal(501)
        chains = [{"x": draws}]
        s = posterior_summary(archive_from_chains(chains), "x")
        srt = np.sort(draws)

        def interp_quantile(q):
            pos = q * (len(srt) - 1)
            lo = int(np.floor(pos))
            frac = pos - lo
            hi = min(lo + 1, len(srt) - 1)
            return srt[lo] * (1 - frac) + srt[hi] * frac

        assert s.q025 == pytest.approx(interp_quantile(0.025), abs=1e-12)
        assert s.median == pytest.approx(interp_quantile(0.5), abs=1e-12)
        assert s.q975 == pytest.approx(interp_quantile(0.975), abs=1e-12)

    def test_single_draw_degenerate(self):
        chains = [{"x": np.array([7.0])}]
        s = posterior_summary(archive_from_chains(chains), "x")
        assert s == (7.0, 0.0, 7.0, 7.0, 7.0)

    def test_invariant_to_chain_order(self):
        rngs = spawn_generators(2, 3)
        chains = [{"x": rng.standard_normal(200)} for rng in rngs]
        arch = archive_from_chains(chains)
        flipped = arch.reordered([2, 0, 1])
        assert posterior_summary(arch, "x") == posterior_summary(flipped, "x")
        assert gelman_rubin(arch, "x") == gelman_rubin(flipped, "x")


class TestArchive:
    def test_mismatched_params_rejected(self):
        with pytest.raises(ValidationError, match="mismatched"):
            ChainArchive(
                [{"x": np.zeros(5)}, {"y": np.zeros(5)}],
                np.arange(5),
                McmcConfig(n_chains=2, n_iter=10, burn_in=5, thin=1, seed=0),
            )

    def test_get_pools_chain_major(self):
        chains = [{"x": np.array([1.0, 2.0])}, {"x": np.array([3.0, 4.0])}]
        arch = archive_from_chains(chains)
        assert arch.get("x").tolist() == [1.0, 2.0, 3.0, 4.0]
        assert arch.total_draws == 4
