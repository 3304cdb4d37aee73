"""Stage 2: Poisson spatially-varying-coefficient models M1 through M4.

Counts follow ``Y_i | mu_i ~ Poisson(mu_i * E_i)`` with a log link:

    M1: log mu_i = b0 + b1 x_i
    M2: M1 + sum_m beta_m f_im          (latent factor scores as covariates)
    M3: M2 + v_i + phi_i                (ICAR + unstructured convolution)
    M4: M3 + x_i * delta_i              (ICAR prior on the local covariate
                                         effect around the global b1)

Fixed effects get N(0, 1000) priors; the precisions tau = 1/sigma^2 of
phi, v and delta get Gamma(shape 1, rate 0.5) priors by default, with the
diffuse Gamma(1, 0.0005) available for sensitivity runs.

The reference estimator is an adaptive Metropolis-within-Gibbs sampler:
per-coordinate random-walk updates for beta, single-site updates for phi,
v and delta (the latter two against their ICAR prior conditionals), and
conjugate Gamma draws for the precisions with the rank of each ICAR block
corrected per connected component. After every v or delta sweep the field
is recentered and the subtracted mean absorbed into b0 (for v) or b1 (for
delta), which leaves every area's linear predictor unchanged on a
connected graph. Step sizes adapt toward 0.44 acceptance during burn-in
only and are frozen afterwards.

A Newton-mode Laplace approximation at fixed precisions is provided as an
independent cross-check and for empirical-Bayes selection of the
precisions over a user grid.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy import special, stats

from . import icar
from .errors import DimensionMismatchError, ValidationError
from .graph import SpatialGraph
from .icar import IcarField
from .mcmc import ChainArchive, McmcConfig, model_hash

__all__ = [
    "RUNGS",
    "SvcModelSpec",
    "SvcModelState",
    "PoissonLikelihood",
    "GaussianLikelihood",
    "linear_predictor",
    "linear_predictor_vector",
    "loglik_poisson",
    "center_and_absorb",
    "beta_log_acceptance_ratio",
    "fit_stage2_mcmc",
    "fit_stage2_laplace",
    "laplace_precision_grid",
    "LaplaceFit",
    "predictor_draws",
    "compute_dic",
    "compute_waic",
    "dic_components",
    "waic_components",
    "relative_risk_summary",
    "risk_exceedance",
    "rate_ratio",
    "format_rate_ratio",
    "precision_summary",
]

RUNGS = ("M1", "M2", "M3", "M4")
PREDICTOR_BOUND = 50.0


@dataclass
class SvcModelSpec:
    """Model rung, data columns and prior constants for one Stage-2 fit."""

    rung: str
    covariate: np.ndarray
    offsets: np.ndarray
    latent_factors: np.ndarray | None = None
    beta_prior_variance: float = 1000.0
    precision_prior_shape: float = 1.0
    precision_prior_rate: float = 0.5

    def __post_init__(self):
        if self.rung not in RUNGS:
            raise ValidationError(f"rung must be one of {RUNGS}, got {self.rung!r}")
        self.covariate = np.asarray(self.covariate, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        if self.covariate.ndim != 1:
            raise ValidationError("covariate must be a vector")
        if self.offsets.shape != self.covariate.shape:
            raise DimensionMismatchError("offsets and covariate must align")
        if not np.isfinite(self.covariate).all():
            raise ValidationError(
                "covariate has missing values; apply a drop-node or impute "
                "policy before building the model spec"
            )
        if not (self.offsets > 0).all():
            raise ValidationError("offsets (expected counts) must be positive")
        if self.latent_factors is not None:
            self.latent_factors = np.asarray(self.latent_factors, dtype=float)
            if self.latent_factors.ndim != 2 or self.latent_factors.shape[0] != self.n_areas:
                raise DimensionMismatchError("latent_factors must be (n_areas, m)")
        if self.rung != "M1" and self.latent_factors is None:
            raise ValidationError(f"rung {self.rung} needs latent factor scores")
        if not self.beta_prior_variance > 0:
            raise ValidationError("beta_prior_variance must be positive")
        if not (self.precision_prior_shape > 0 and self.precision_prior_rate > 0):
            raise ValidationError("precision prior parameters must be positive")

    @property
    def n_areas(self) -> int:
        return len(self.covariate)

    @property
    def n_factors(self) -> int:
        if self.rung == "M1" or self.latent_factors is None:
            return 0
        return self.latent_factors.shape[1]

    @property
    def has_convolution(self) -> bool:
        return self.rung in ("M3", "M4")

    @property
    def has_svc(self) -> bool:
        return self.rung == "M4"

    @property
    def n_fixed(self) -> int:
        return 2 + self.n_factors

    def fixed_design(self) -> np.ndarray:
        """Design of the fixed effects: intercept, covariate, factor scores."""
        cols = [np.ones(self.n_areas), self.covariate]
        if self.n_factors:
            cols.extend(self.latent_factors.T)
        return np.column_stack(cols)


@dataclass
class SvcModelState:
    """One MCMC state; blocks beyond the active rung stay None."""

    beta: np.ndarray
    phi: np.ndarray | None = None
    v: IcarField | None = None
    delta: IcarField | None = None
    tau_phi: float | None = None
    tau_v: float | None = None
    tau_delta: float | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.phi is not None:
            self.phi = np.asarray(self.phi, dtype=float)


def _check_rung_state(state: SvcModelState, spec: SvcModelSpec) -> None:
    if len(state.beta) != spec.n_fixed:
        raise ValidationError(
            f"rung {spec.rung} needs {spec.n_fixed} fixed effects, "
            f"state has {len(state.beta)}"
        )
    if spec.has_convolution != (state.phi is not None and state.v is not None):
        raise ValidationError(
            f"rung {spec.rung} and state disagree on convolution effects"
        )
    if spec.has_svc != (state.delta is not None):
        raise ValidationError(f"rung {spec.rung} and state disagree on delta")


def linear_predictor_vector(state: SvcModelState, spec: SvcModelSpec) -> np.ndarray:
    """log mu for every area under the active rung."""
    _check_rung_state(state, spec)
    theta = spec.fixed_design() @ state.beta
    if spec.has_convolution:
        theta = theta + state.v.values + state.phi
    if spec.has_svc:
        theta = theta + spec.covariate * state.delta.values
    return theta


def linear_predictor(state: SvcModelState, spec: SvcModelSpec, i: int) -> float:
    return float(linear_predictor_vector(state, spec)[i])


class PoissonLikelihood:
    """Poisson(mu E) outcome; NaN counts are suppressed areas."""

    def __init__(self, counts: np.ndarray, offsets: np.ndarray):
        y = np.asarray(counts, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        if y.shape != offsets.shape:
            raise DimensionMismatchError("counts and offsets must align")
        mask = np.isfinite(y)
        if (y[mask] < 0).any():
            raise ValidationError("counts must be nonnegative")
        if not np.allclose(y[mask], np.rint(y[mask])):
            raise ValidationError("counts must be integers")
        self.y = y
        self.offsets = offsets
        self.mask = mask
        self.obs = np.flatnonzero(mask)
        self.y_obs = y[mask]
        self.e_obs = offsets[mask]
        self._const = float(np.sum(self.y_obs * np.log(self.e_obs) - special.gammaln(self.y_obs + 1)))

    def loglik(self, theta: np.ndarray) -> float:
        t = theta[self.obs]
        return float(self.y_obs @ t - self.e_obs @ np.exp(t)) + self._const

    def delta_sum(self, theta: np.ndarray, theta_new: np.ndarray) -> float:
        t0 = theta[self.obs]
        t1 = theta_new[self.obs]
        return float(self.y_obs @ (t1 - t0) - self.e_obs @ (np.exp(t1) - np.exp(t0)))

    def point_terms(self, theta_matrix: np.ndarray) -> np.ndarray:
        """(draws, n_observed) pointwise log densities for DIC/WAIC."""
        t = theta_matrix[:, self.obs]
        return (
            self.y_obs[None, :] * (t + np.log(self.e_obs)[None, :])
            - self.e_obs[None, :] * np.exp(t)
            - special.gammaln(self.y_obs + 1)[None, :]
        )

    def grad_hess_diag(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rate = np.where(self.mask, self.offsets * np.exp(np.clip(theta, -700, 700)), 0.0)
        grad = np.where(self.mask, self.y - rate, 0.0)
        return grad, rate


class GaussianLikelihood:
    """Identity-link Gaussian outcome, used for exactness cross-checks."""

    def __init__(self, y: np.ndarray, noise_variance: float):
        y = np.asarray(y, dtype=float)
        if not noise_variance > 0:
            raise ValidationError("noise_variance must be positive")
        self.y = y
        self.noise_variance = float(noise_variance)
        self.mask = np.isfinite(y)
        self.obs = np.flatnonzero(self.mask)
        self.y_obs = y[self.mask]

    def loglik(self, theta: np.ndarray) -> float:
        r = self.y_obs - theta[self.obs]
        s2 = self.noise_variance
        return float(-0.5 * (r @ r) / s2 - 0.5 * len(r) * math.log(2 * math.pi * s2))

    def delta_sum(self, theta: np.ndarray, theta_new: np.ndarray) -> float:
        r0 = self.y_obs - theta[self.obs]
        r1 = self.y_obs - theta_new[self.obs]
        return float((r0 @ r0 - r1 @ r1) / (2.0 * self.noise_variance))

    def point_terms(self, theta_matrix: np.ndarray) -> np.ndarray:
        r = self.y_obs[None, :] - theta_matrix[:, self.obs]
        s2 = self.noise_variance
        return -0.5 * r * r / s2 - 0.5 * math.log(2 * math.pi * s2)

    def grad_hess_diag(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad = np.where(self.mask, (self.y - theta) / self.noise_variance, 0.0)
        hess = np.where(self.mask, 1.0 / self.noise_variance, 0.0)
        return grad, hess


def _make_likelihood(likelihood, counts, spec, noise_variance):
    if likelihood == "poisson":
        return PoissonLikelihood(counts, spec.offsets)
    if likelihood == "gaussian":
        if noise_variance is None:
            raise ValidationError("gaussian likelihood needs noise_variance")
        return GaussianLikelihood(counts, noise_variance)
    if hasattr(likelihood, "loglik"):
        return likelihood
    raise ValidationError(f"unknown likelihood {likelihood!r}")


def loglik_poisson(state: SvcModelState, spec: SvcModelSpec, counts: np.ndarray) -> float:
    """Poisson log likelihood over observed areas at the state's predictor."""
    lik = PoissonLikelihood(counts, spec.offsets)
    return lik.loglik(linear_predictor_vector(state, spec))


def center_and_absorb(values: np.ndarray, graph: SpatialGraph) -> tuple[np.ndarray, float]:
    """Per-component centering plus the scalar shift a fixed effect absorbs.

    Returns the centered field and the area-weighted mean of the
    subtracted component means. Adding that scalar to the compensating
    fixed effect (the intercept for v, the covariate slope for delta)
    leaves every area's linear predictor unchanged on a connected graph;
    with several components the residual perturbation is the spread of
    the component means around their weighted mean, which the next sweep
    re-equilibrates.
    """
    centered, shifts = icar.center_by_component(values, graph)
    sizes = np.array([len(c) for c in graph.components()], dtype=float)
    return centered, float(shifts @ sizes) / graph.n_areas


def beta_log_acceptance_ratio(
    state: SvcModelState,
    spec: SvcModelSpec,
    counts: np.ndarray,
    k: int,
    proposed: float,
    likelihood="poisson",
    noise_variance: float | None = None,
) -> float:
    """Log Metropolis ratio for moving fixed effect k to ``proposed``.

    The random walk proposal is symmetric, so this is the posterior
    density log ratio; by construction it is antisymmetric under swapping
    the current and proposed values.
    """
    lik = _make_likelihood(likelihood, counts, spec, noise_variance)
    theta = linear_predictor_vector(state, spec)
    col = spec.fixed_design()[:, k]
    theta_new = theta + col * (proposed - state.beta[k])
    prior = (state.beta[k] ** 2 - proposed**2) / (2.0 * spec.beta_prior_variance)
    return lik.delta_sum(theta, theta_new) + prior


# ---------------------------------------------------------------------------
# the Metropolis-within-Gibbs sampler
# ---------------------------------------------------------------------------


def _site_sweep(
    values: list,
    theta: list,
    exp_theta: list,
    coef: list | None,
    lik_y: list,
    lik_e: list,
    lik_obs: list,
    gaussian_s2: float | None,
    prior_prec_scale: float,
    prior_kind: str,
    nbr_idx,
    nbr_w,
    wplus_eff,
    steps: list,
    normals: list,
    log_us: list,
    adapt_gamma: float,
    div_counter: list,
) -> int:
    """One ascending single-site Metropolis sweep over a latent field.

    ``prior_kind`` is "icar" (conditional mean from current neighbours,
    precision ``tau * w_{i+}``; islands fall back to N(0, 1/tau)) or
    "iid" (N(0, 1/tau)). ``coef`` multiplies the field in the predictor
    (None means 1). Mutates values, theta, exp_theta and steps in place and
    returns the number of accepted moves.
    """
    n = len(values)
    accepted = 0
    exp = math.exp
    for i in range(n):
        step = steps[i]
        cur = values[i]
        prop = cur + step * normals[i]
        c = 1.0 if coef is None else coef[i]
        t_old = theta[i]
        t_new = t_old + c * (prop - cur)
        if t_new > PREDICTOR_BOUND or t_new < -PREDICTOR_BOUND:
            div_counter[0] += 1
            if adapt_gamma:
                steps[i] = step * exp(-adapt_gamma * 0.44)
            continue
        if prior_kind == "icar":
            nbs = nbr_idx[i]
            if nbs:
                s = 0.0
                for j, w in zip(nbs, nbr_w[i]):
                    s += w * values[j]
                m = s / wplus_eff[i]
                pp = prior_prec_scale * wplus_eff[i]
            else:
                m = 0.0
                pp = prior_prec_scale
        else:
            m = 0.0
            pp = prior_prec_scale
        d_old = cur - m
        d_new = prop - m
        logr = 0.5 * pp * (d_old * d_old - d_new * d_new)
        e_new = 0.0
        if lik_obs[i]:
            if gaussian_s2 is None:
                e_new = exp(t_new)
                logr += lik_y[i] * (t_new - t_old) - lik_e[i] * (e_new - exp_theta[i])
            else:
                r_old = lik_y[i] - t_old
                r_new = lik_y[i] - t_new
                logr += (r_old * r_old - r_new * r_new) / (2.0 * gaussian_s2)
        if logr >= 0.0 or log_us[i] < logr:
            values[i] = prop
            theta[i] = t_new
            if lik_obs[i] and gaussian_s2 is None:
                exp_theta[i] = e_new
            accepted += 1
            acc_prob = 1.0
        else:
            acc_prob = exp(logr) if logr > -700 else 0.0
        if adapt_gamma:
            steps[i] = step * exp(adapt_gamma * (acc_prob - 0.44))
    return accepted


def _run_stage2_chain(payload):
    (
        spec, counts, graph, config, entropy,
        likelihood_name, noise_variance, sample_precisions, initial_precisions,
    ) = payload
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    lik = _make_likelihood(likelihood_name, counts, spec, noise_variance)
    gaussian_s2 = lik.noise_variance if isinstance(lik, GaussianLikelihood) else None

    n = spec.n_areas
    X = spec.fixed_design()
    K = spec.n_fixed
    prior_a = spec.precision_prior_shape
    prior_b = spec.precision_prior_rate
    beta_var = spec.beta_prior_variance

    nbr_idx, nbr_w, wplus_eff, _ = icar._sweep_cache(graph)

    # deterministic start
    beta = np.zeros(K)
    if gaussian_s2 is None:
        beta[0] = math.log(max(lik.y_obs.sum(), 0.5) / lik.e_obs.sum())
    else:
        beta[0] = float(np.mean(lik.y_obs))
    phi = np.zeros(n) if spec.has_convolution else None
    v = np.zeros(n) if spec.has_convolution else None
    delta = np.zeros(n) if spec.has_svc else None
    taus = {"tau_phi": 2.0, "tau_v": 2.0, "tau_delta": 2.0}
    if initial_precisions:
        taus.update(initial_precisions)

    theta_np = X @ beta
    coef_x = spec.covariate.tolist()
    lik_y = lik.y.tolist() if gaussian_s2 is None else np.where(lik.mask, lik.y, 0.0).tolist()
    lik_e = lik.offsets.tolist() if gaussian_s2 is None else [0.0] * n
    lik_obs = lik.mask.tolist()

    step_beta = np.full(K, 0.1)
    step_phi = [0.3] * n
    step_v = [0.3] * n
    step_delta = [0.3] * n

    half_burn = config.burn_in // 2
    late_proposals = 0
    late_divergent = 0

    keep: dict[str, list] = {"beta": []}
    if spec.has_convolution:
        keep.update({"phi": [], "v": [], "tau_phi": [], "tau_v": []})
    if spec.has_svc:
        keep.update({"delta": [], "tau_delta": []})
    accept_counts = {"beta": 0, "phi": 0, "v": 0, "delta": 0}
    proposal_counts = {"beta": 0, "phi": 0, "v": 0, "delta": 0}

    for it in range(1, config.n_iter + 1):
        in_burn = it <= config.burn_in
        gamma = it ** -0.6 if in_burn else 0.0
        late = in_burn and it > half_burn

        # fixed effects, per coordinate
        for k in range(K):
            prop = beta[k] + step_beta[k] * rng.standard_normal()
            dtheta = X[:, k] * (prop - beta[k])
            theta_new = theta_np + dtheta
            proposal_counts["beta"] += 1
            if late:
                late_proposals += 1
            if np.max(np.abs(theta_new)) > PREDICTOR_BOUND:
                if late:
                    late_divergent += 1
                acc_prob = 0.0
            else:
                logr = lik.delta_sum(theta_np, theta_new) + (
                    beta[k] ** 2 - prop**2
                ) / (2.0 * beta_var)
                if logr >= 0 or math.log(rng.random()) < logr:
                    beta[k] = prop
                    theta_np = theta_new
                    accept_counts["beta"] += 1
                    acc_prob = 1.0
                else:
                    acc_prob = math.exp(logr) if logr > -700 else 0.0
            if gamma:
                step_beta[k] *= math.exp(gamma * (acc_prob - 0.44))

        if spec.has_convolution:
            theta = theta_np.tolist()
            exp_theta = np.exp(np.clip(theta_np, -700, 700)).tolist()

            div = [0]
            phi_list = phi.tolist()
            acc = _site_sweep(
                phi_list, theta, exp_theta, None, lik_y, lik_e, lik_obs,
                gaussian_s2, taus["tau_phi"], "iid",
                nbr_idx, nbr_w, wplus_eff, step_phi,
                rng.standard_normal(n).tolist(), np.log(rng.random(n)).tolist(),
                gamma, div,
            )
            accept_counts["phi"] += acc
            proposal_counts["phi"] += n
            if late:
                late_proposals += n
                late_divergent += div[0]
            phi = np.asarray(phi_list)

            div = [0]
            v_list = v.tolist()
            acc = _site_sweep(
                v_list, theta, exp_theta, None, lik_y, lik_e, lik_obs,
                gaussian_s2, taus["tau_v"], "icar",
                nbr_idx, nbr_w, wplus_eff, step_v,
                rng.standard_normal(n).tolist(), np.log(rng.random(n)).tolist(),
                gamma, div,
            )
            accept_counts["v"] += acc
            proposal_counts["v"] += n
            if late:
                late_proposals += n
                late_divergent += div[0]
            v, shift = center_and_absorb(np.asarray(v_list), graph)
            beta[0] += shift

            if spec.has_svc:
                theta_np = X @ beta + phi + v + spec.covariate * delta
                theta = theta_np.tolist()
                exp_theta = np.exp(np.clip(theta_np, -700, 700)).tolist()
                div = [0]
                delta_list = delta.tolist()
                acc = _site_sweep(
                    delta_list, theta, exp_theta, coef_x, lik_y, lik_e, lik_obs,
                    gaussian_s2, taus["tau_delta"], "icar",
                    nbr_idx, nbr_w, wplus_eff, step_delta,
                    rng.standard_normal(n).tolist(), np.log(rng.random(n)).tolist(),
                    gamma, div,
                )
                accept_counts["delta"] += acc
                proposal_counts["delta"] += n
                if late:
                    late_proposals += n
                    late_divergent += div[0]
                delta, shift = center_and_absorb(np.asarray(delta_list), graph)
                beta[1] += shift

            theta_np = X @ beta + phi + v
            if spec.has_svc:
                theta_np = theta_np + spec.covariate * delta

            if sample_precisions:
                taus["tau_phi"] = float(
                    rng.gamma(prior_a + n / 2.0, 1.0 / (prior_b + float(phi @ phi) / 2.0))
                )
                quad, rank = icar.quad_form_and_rank(graph, v)
                taus["tau_v"] = float(
                    rng.gamma(prior_a + rank / 2.0, 1.0 / (prior_b + quad / 2.0))
                )
                if spec.has_svc:
                    quad, rank = icar.quad_form_and_rank(graph, delta)
                    taus["tau_delta"] = float(
                        rng.gamma(prior_a + rank / 2.0, 1.0 / (prior_b + quad / 2.0))
                    )

        if it == config.burn_in and late_proposals:
            frac = late_divergent / late_proposals
            if frac > 0.10:
                raise RuntimeError(
                    f"persistent divergence: {frac:.1%} of proposals in the "
                    f"late burn-in pushed |log mu| past {PREDICTOR_BOUND}; "
                    "check offsets and covariate scaling"
                )

        if config.is_retained(it):
            keep["beta"].append(beta.copy())
            if spec.has_convolution:
                keep["phi"].append(phi.copy())
                keep["v"].append(v.copy())
                keep["tau_phi"].append(taus["tau_phi"])
                keep["tau_v"].append(taus["tau_v"])
            if spec.has_svc:
                keep["delta"].append(delta.copy())
                keep["tau_delta"].append(taus["tau_delta"])

    draws = {name: np.array(vals) for name, vals in keep.items()}
    rates = {
        blk: accept_counts[blk] / proposal_counts[blk]
        for blk in accept_counts
        if proposal_counts[blk]
    }
    return draws, rates


def fit_stage2_mcmc(
    spec: SvcModelSpec,
    counts: np.ndarray,
    graph: SpatialGraph,
    config: McmcConfig | None = None,
    likelihood: str = "poisson",
    noise_variance: float | None = None,
    sample_precisions: bool = True,
    initial_precisions: dict | None = None,
    n_workers: int = 1,
) -> ChainArchive:
    """Sample the active rung's posterior and return the thinned archive.

    Suppressed areas (NaN counts) stay in the graph, their random effects
    driven by the prior, and contribute no likelihood. With
    ``sample_precisions=False`` the precisions stay at
    ``initial_precisions``, which is how the Laplace cross-check matches
    hyperparameters.
    """
    if config is None:
        config = McmcConfig()
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (spec.n_areas,):
        raise DimensionMismatchError("counts length must equal n_areas")
    if graph.n_areas != spec.n_areas:
        raise DimensionMismatchError(
            f"graph has {graph.n_areas} areas, spec has {spec.n_areas}"
        )
    _make_likelihood(likelihood, counts, spec, noise_variance)  # validate early

    entropies = [
        int(s.generate_state(1)[0])
        for s in np.random.SeedSequence(config.seed).spawn(config.n_chains)
    ]
    payloads = [
        (
            spec, counts, graph, config, entropies[c],
            likelihood, noise_variance, sample_precisions, initial_precisions,
        )
        for c in range(config.n_chains)
    ]
    started = time.time()
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_stage2_chain, payloads))
    else:
        results = [_run_stage2_chain(p) for p in payloads]
    metadata = {
        "model": f"stage2_svc_{spec.rung}",
        "model_hash": model_hash(
            spec.rung, spec.beta_prior_variance, spec.precision_prior_shape,
            spec.precision_prior_rate, spec.n_areas, spec.n_factors,
            graph.n_edges, config, likelihood,
        ),
        "likelihood": likelihood,
        "wall_time_s": f"{time.time() - started:.3f}",
    }
    for c, (_, rates) in enumerate(results):
        metadata[f"chain{c}_acceptance"] = ";".join(
            f"{blk}={rate:.3f}" for blk, rate in sorted(rates.items())
        )
    return ChainArchive(
        [draws for draws, _ in results],
        config.retained_iterations(),
        config,
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# Laplace approximation at fixed precisions
# ---------------------------------------------------------------------------


def _component_basis(graph: SpatialGraph) -> np.ndarray:
    """Orthonormal basis of the per-component sum-to-zero subspace.

    Components of size m contribute m - 1 Helmert columns; islands keep a
    single identity column because the island policy gives them a proper
    independent prior rather than a constraint.
    """
    n = graph.n_areas
    cols = []
    for idx in graph.components():
        m = len(idx)
        if m == 1:
            col = np.zeros(n)
            col[idx[0]] = 1.0
            cols.append(col)
            continue
        for k in range(1, m):
            col = np.zeros(n)
            col[idx[:k]] = 1.0
            col[idx[k]] = -k
            cols.append(col / math.sqrt(k * (k + 1)))
    return np.column_stack(cols) if cols else np.zeros((n, 0))


class LaplaceFit(NamedTuple):
    state: SvcModelState
    beta_sd: np.ndarray
    covariance: np.ndarray
    design: np.ndarray
    gradient_norm: float
    n_newton: int
    log_marginal: float


def fit_stage2_laplace(
    spec: SvcModelSpec,
    counts: np.ndarray,
    graph: SpatialGraph,
    precisions: dict | None = None,
    likelihood: str = "poisson",
    noise_variance: float | None = None,
    max_newton: int = 100,
    grad_tol: float = 1e-9,
) -> LaplaceFit:
    """Gaussian approximation of the latent field at fixed precisions.

    Newton-Raphson climbs log-likelihood plus log-prior of the joint
    latent vector (beta, phi, v, delta), the ICAR blocks parameterised in
    their sum-to-zero subspaces so the objective is strictly concave. The
    returned mode and curvature define the Gaussian approximation to the
    latent field's full conditional; ``log_marginal`` is the resulting
    approximate log marginal of the fixed precisions (up to a constant),
    the quantity :func:`laplace_precision_grid` maximises.

    Diverging steps are halved; more than 50 halvings on one step raises
    with the current gradient norm.
    """
    counts = np.asarray(counts, dtype=float)
    lik = _make_likelihood(likelihood, counts, spec, noise_variance)
    if graph.n_areas != spec.n_areas:
        raise DimensionMismatchError("graph and spec disagree on n_areas")
    precisions = dict(precisions or {})
    tau_phi = float(precisions.get("tau_phi", 2.0))
    tau_v = float(precisions.get("tau_v", 2.0))
    tau_delta = float(precisions.get("tau_delta", 2.0))

    n = spec.n_areas
    X = spec.fixed_design()
    K = spec.n_fixed
    blocks = [("beta", X)]
    prior_blocks = [np.full(K, 1.0 / spec.beta_prior_variance)]
    dense_prior: list[tuple[int, np.ndarray]] = []
    if spec.has_convolution:
        blocks.append(("phi", np.eye(n)))
        prior_blocks.append(np.full(n, tau_phi))
        U = _component_basis(graph)
        Qp = icar.precision_matrix(graph, island_proper=True)
        Kv = U.T @ Qp @ U
        blocks.append(("v", U))
        dense_prior.append((sum(b.shape[1] for _, b in blocks[:-1]), tau_v * Kv))
        prior_blocks.append(None)
        if spec.has_svc:
            blocks.append(("delta", spec.covariate[:, None] * U))
            dense_prior.append((sum(b.shape[1] for _, b in blocks[:-1]), tau_delta * Kv))
            prior_blocks.append(None)

    A = np.hstack([b for _, b in blocks])
    d = A.shape[1]
    P = np.zeros((d, d))
    offset = 0
    for (name, b), diag in zip(blocks, prior_blocks):
        width = b.shape[1]
        if diag is not None:
            P[offset : offset + width, offset : offset + width] = np.diag(diag)
        offset += width
    for off, dense in dense_prior:
        P[off : off + dense.shape[0], off : off + dense.shape[0]] = dense

    u = np.zeros(d)
    if isinstance(lik, PoissonLikelihood):
        u[0] = math.log(max(lik.y_obs.sum(), 0.5) / lik.e_obs.sum())

    def objective(uvec):
        return lik.loglik(A @ uvec) - 0.5 * float(uvec @ P @ uvec)

    obj = objective(u)
    grad_norm = math.inf
    H = None
    for it in range(1, max_newton + 1):
        theta = A @ u
        g_lik, w = lik.grad_hess_diag(theta)
        grad = A.T @ g_lik - P @ u
        grad_norm = float(np.max(np.abs(grad)))
        H = (A.T * w) @ A + P
        if grad_norm < grad_tol:
            break
        step = np.linalg.solve(H, grad)
        t = 1.0
        # acceptance tolerance is relative: near the mode the true
        # improvement sits below the float noise of the objective itself
        slack = 1e-9 * (1.0 + abs(obj))
        for halving in range(51):
            candidate = u + t * step
            cand_obj = objective(candidate)
            if np.isfinite(cand_obj) and cand_obj >= obj - slack:
                break
            t *= 0.5
        else:
            raise RuntimeError(
                f"Newton step failed after 50 halvings; gradient max-norm "
                f"{grad_norm:.3e}"
            )
        u = candidate
        obj = cand_obj
    else:
        if grad_norm >= grad_tol:
            raise RuntimeError(
                f"Newton did not converge in {max_newton} iterations; "
                f"gradient max-norm {grad_norm:.3e}"
            )

    cov = np.linalg.inv(H)
    offset = 0
    parts = {}
    for name, b in blocks:
        width = b.shape[1]
        parts[name] = (b, u[offset : offset + width], offset)
        offset += width
    beta = parts["beta"][1]
    state = SvcModelState(
        beta=beta.copy(),
        phi=parts["phi"][1].copy() if "phi" in parts else None,
        v=IcarField(graph, parts["v"][0] @ parts["v"][1], 1.0 / tau_v) if "v" in parts else None,
        delta=IcarField(graph, _component_basis(graph) @ parts["delta"][1], 1.0 / tau_delta)
        if "delta" in parts
        else None,
        tau_phi=tau_phi if spec.has_convolution else None,
        tau_v=tau_v if spec.has_convolution else None,
        tau_delta=tau_delta if spec.has_svc else None,
    )
    beta_sd = np.sqrt(np.diag(cov)[:K])

    sign_p, logdet_p = np.linalg.slogdet(P)
    sign_h, logdet_h = np.linalg.slogdet(H)
    if sign_p <= 0 or sign_h <= 0:
        raise RuntimeError("prior or curvature matrix is not positive definite")
    log_marginal = (
        lik.loglik(A @ u)
        - 0.5 * float(u @ P @ u)
        + 0.5 * logdet_p
        - 0.5 * logdet_h
    )
    a, b = spec.precision_prior_shape, spec.precision_prior_rate
    if spec.has_convolution:
        log_marginal += float(stats.gamma.logpdf(tau_phi, a, scale=1.0 / b))
        log_marginal += float(stats.gamma.logpdf(tau_v, a, scale=1.0 / b))
    if spec.has_svc:
        log_marginal += float(stats.gamma.logpdf(tau_delta, a, scale=1.0 / b))

    return LaplaceFit(state, beta_sd, cov, A, grad_norm, it, log_marginal)


def laplace_precision_grid(
    spec: SvcModelSpec,
    counts: np.ndarray,
    graph: SpatialGraph,
    grid: Iterable[dict],
    likelihood: str = "poisson",
    noise_variance: float | None = None,
) -> tuple[LaplaceFit, list[tuple[dict, float]]]:
    """Empirical-Bayes precision selection over a user-supplied grid.

    Fits the Laplace mode at every grid point and returns the fit with the
    largest approximate log marginal, plus the whole evaluation table.
    """
    table = []
    best = None
    best_point = None
    for point in grid:
        fit = fit_stage2_laplace(
            spec, counts, graph, point, likelihood, noise_variance
        )
        table.append((dict(point), fit.log_marginal))
        if best is None or fit.log_marginal > best.log_marginal:
            best, best_point = fit, point
    if best is None:
        raise ValidationError("precision grid is empty")
    return best, table


# ---------------------------------------------------------------------------
# draw-based summaries and model comparison
# ---------------------------------------------------------------------------


def predictor_draws(archive: ChainArchive, spec: SvcModelSpec) -> np.ndarray:
    """(draws, n_areas) linear predictors reconstructed from the archive."""
    theta = archive.get("beta") @ spec.fixed_design().T
    names = archive.param_names
    if "phi" in names:
        theta = theta + archive.get("phi") + archive.get("v")
    if "delta" in names:
        theta = theta + archive.get("delta") * spec.covariate[None, :]
    return theta


class DicComponents(NamedTuple):
    dic: float
    mean_deviance: float
    deviance_at_mean: float
    p_d: float


class WaicComponents(NamedTuple):
    waic: float
    lppd: float
    p_waic: float


def _point_terms(archive, spec, counts, likelihood, noise_variance):
    if archive.total_draws < 2:
        raise ValidationError("model comparison needs at least 2 retained draws")
    lik = _make_likelihood(likelihood, np.asarray(counts, dtype=float), spec, noise_variance)
    theta = predictor_draws(archive, spec)
    return lik, theta, lik.point_terms(theta)


def dic_components(
    archive: ChainArchive,
    spec: SvcModelSpec,
    counts: np.ndarray,
    likelihood: str = "poisson",
    noise_variance: float | None = None,
) -> DicComponents:
    """DIC = mean deviance + p_D, with p_D = Dbar - D(mean predictor)."""
    lik, theta, terms = _point_terms(archive, spec, counts, likelihood, noise_variance)
    deviances = -2.0 * terms.sum(axis=1)
    dbar = float(deviances.mean())
    d_hat = -2.0 * float(lik.point_terms(theta.mean(axis=0, keepdims=True)).sum())
    p_d = dbar - d_hat
    return DicComponents(dbar + p_d, dbar, d_hat, p_d)


def waic_components(
    archive: ChainArchive,
    spec: SvcModelSpec,
    counts: np.ndarray,
    likelihood: str = "poisson",
    noise_variance: float | None = None,
) -> WaicComponents:
    """WAIC = -2 (lppd - p_WAIC), pointwise over observed areas.

    lppd sums log mean predictive density per area; p_WAIC sums the
    per-area sample variance (n-1 denominator) of the log densities.
    """
    _, _, terms = _point_terms(archive, spec, counts, likelihood, noise_variance)
    s = terms.shape[0]
    lppd = float(np.sum(special.logsumexp(terms, axis=0) - math.log(s)))
    p_waic = float(np.sum(np.var(terms, axis=0, ddof=1)))
    return WaicComponents(-2.0 * (lppd - p_waic), lppd, p_waic)


def compute_dic(archive, spec, counts, **kwargs) -> float:
    return dic_components(archive, spec, counts, **kwargs).dic


def compute_waic(archive, spec, counts, **kwargs) -> float:
    return waic_components(archive, spec, counts, **kwargs).waic


def relative_risk_summary(
    archive: ChainArchive, spec: SvcModelSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior mean and 95% interval of exp(linear predictor) per area.

    "Relative risk" here is always the multiplicative departure
    exp(log mu) from the expected count, the convention used throughout
    this package.
    """
    theta = predictor_draws(archive, spec)
    rr = np.exp(theta)
    lo, hi = np.quantile(rr, [0.025, 0.975], axis=0)
    return rr.mean(axis=0), lo, hi


def risk_exceedance(
    archive: ChainArchive,
    spec: SvcModelSpec,
    thresholds: tuple[float, ...] = (1.25, 1.5, 2.0),
) -> np.ndarray:
    """P(relative risk > t) per area, one column per threshold."""
    theta = predictor_draws(archive, spec)
    out = np.empty((spec.n_areas, len(thresholds)))
    for j, t in enumerate(thresholds):
        out[:, j] = (theta > math.log(t)).mean(axis=0)
    return out


class RateRatio(NamedTuple):
    point: float
    lower: float
    upper: float


def rate_ratio(draws: np.ndarray) -> RateRatio:
    """exp-scale effect of a unit covariate change from coefficient draws.

    The point estimate is exp of the posterior mean; the interval is the
    exp-transformed equal-tailed 95% interval of the draws.
    """
    draws = np.asarray(draws, dtype=float)
    lo, hi = np.quantile(draws, [0.025, 0.975])
    return RateRatio(float(np.exp(draws.mean())), float(np.exp(lo)), float(np.exp(hi)))


def format_rate_ratio(rr: RateRatio, label: str = "beta") -> str:
    return (
        f"e^{label} = {rr.point:.3f}, 95% credible interval: "
        f"{rr.lower:.3f}, {rr.upper:.3f}"
    )


def precision_summary(archive: ChainArchive, param: str) -> dict:
    """Posterior mean, kernel-density mode and 95% interval of a precision.

    Reported value conventions differ across software, so both the mean
    and an approximate posterior mode are returned.
    """
    draws = archive.get(param)
    if draws.ndim != 1:
        raise ValidationError("precision parameters are scalar")
    lo, hi = np.quantile(draws, [0.025, 0.975])
    if np.ptp(draws) == 0:
        mode = float(draws[0])
    else:
        kde = stats.gaussian_kde(draws)
        grid = np.linspace(draws.min(), draws.max(), 512)
        mode = float(grid[np.argmax(kde(grid))])
    return {
        "mean": float(draws.mean()),
        "mode": mode,
        "lower": float(lo),
        "upper": float(hi),
    }
