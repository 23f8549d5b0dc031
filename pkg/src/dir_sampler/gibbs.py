"""The full-conditional updates and the sweep that composes them.

One sweep updates, in order: latent utilities, ability paths, growth
rates, test effects, test-effect precisions, daily effects, daily-effect
precisions, the system-noise precision (retrospective mode only), and the
per-item mixture scales.  Every update conditions on the current values of
everything else, so the sweep leaves the joint posterior invariant.

All conditionals are derived under the objective priors (flat-positive on
growth, x^(-3/2) on each precision); ``PriorSpec`` exposes the conjugate
generalization (normal / gamma hyperparameters) whose default values
reproduce those priors exactly.  Proper values are used by the
joint-distribution sampler tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ffbs
from .distributions import Rng, sample_gamma, sample_ks, sample_truncated_normal
from .errors import ConfigError, NumericError
from .model import Dataset, LatentState, ModelConstants, theta_offsets


@dataclass(frozen=True)
class PriorSpec:
    """Conjugate prior hyperparameters for growth and the three precisions.

    The precision priors are Gamma-form pi(x) ∝ x^(shape-1) exp(-rate x);
    the defaults (shape -1/2, rate 0) give the objective x^(-3/2) prior,
    and growth_prior_variance = inf gives the flat positive growth prior.
    """

    growth_prior_variance: float = math.inf
    precision_prior_shape: float = -0.5
    precision_prior_rate: float = 0.0

    def require_proper(self) -> None:
        if not (self.growth_prior_variance < math.inf
                and self.precision_prior_shape > 0.0 and self.precision_prior_rate > 0.0):
            raise ConfigError("proper priors required here")


OBJECTIVE_PRIORS = PriorSpec()


class SweepWorkspace:
    """Precomputed index tables and scratch buffers for one dataset.

    Holds everything the updates need to run as flat array operations:
    gather indices between the item/test/day/individual levels, reduceat
    boundaries, the truncated lapses, per-individual prior parameters, and
    the blockwise machinery for the sum-zero test-effect draw (grouped by
    tests-per-day so each group solves one batched SPD system).
    """

    def __init__(self, data: Dataset, constants: ModelConstants,
                 freeze_effect_precisions: bool = False):
        self.data = data
        self.constants = constants
        self.freeze_effect_precisions = freeze_effect_precisions
        n, n_days, n_tests = data.n_individuals, data.n_days, data.n_tests

        self.test_day = np.repeat(np.arange(n_days), data.tests_per_day)
        self.item_test = np.repeat(np.arange(n_tests), data.items_per_test)
        self.item_day = self.test_day[self.item_test]
        self.day_individual = np.repeat(np.arange(n), data.days)
        self.item_difficulty = data.difficulty[self.item_test]

        self.theta_start = theta_offsets(data)
        day_within = np.arange(n_days) - data.day_start[self.day_individual]
        self.day_theta = self.theta_start[self.day_individual] + day_within + 1
        self.day_theta_prev = self.day_theta - 1
        self.item_theta = self.day_theta[self.item_day]

        # reduceat starts: first item of each day, first item of each test,
        # and per-individual boundaries at the day/test/item levels
        self.day_item_start = data.item_start[data.test_start[:-1]]
        self.indiv_test_start = data.test_start[data.day_start]
        self.indiv_item_start = data.item_start[self.indiv_test_start]

        self.lapse_trunc = np.minimum(data.lapse, constants.delta_tmax)
        self.inv_lapse = 1.0 / data.lapse

        priors = [constants.prior_for(g) for g in data.group]
        self.init_mean = np.array([p[0] for p in priors], dtype=float)
        self.init_var = np.array([p[1] for p in priors], dtype=float)

        # sum-zero test-effect machinery, grouped by tests-per-day
        self.single_test_days = np.flatnonzero(data.tests_per_day == 1)
        self.eta_groups = []
        for s in sorted(set(data.tests_per_day[data.tests_per_day >= 2].tolist())):
            days = np.flatnonzero(data.tests_per_day == s)
            tests = data.test_start[days][:, None] + np.arange(s)[None, :]
            eye = np.eye(s - 1)
            prior_corr = eye + 1.0  # 2 on the diagonal, 1 off it
            self.eta_groups.append((s, days, tests, eye, prior_corr))

        self.tests_per_individual = np.add.reduceat(data.tests_per_day, data.day_start[:-1])
        self.psi = np.empty(data.n_items)

    def refresh_obs_precision(self, state: LatentState) -> None:
        """psi = 1/(4 nu^2 + sigma^2) for the current mixture scales."""
        np.multiply(state.ks_scale, state.ks_scale, out=self.psi)
        self.psi *= 4.0
        self.psi += self.constants.sigma ** 2
        np.reciprocal(self.psi, out=self.psi)

    def theta_slice(self, i: int) -> slice:
        return slice(self.theta_start[i], self.theta_start[i + 1])

    def item_mean(self, state: LatentState) -> np.ndarray:
        """Per-item latent-utility mean: theta - a + day effect + test effect."""
        return (state.theta[self.item_theta] - self.item_difficulty
                + state.day_effect[self.item_day] + state.test_effect[self.item_test])


def update_latent_utilities(rng: Rng, state: LatentState, work: SweepWorkspace) -> None:
    """Truncated-normal draw of each item's latent utility, sign-matched to
    the observed response."""
    mean = work.item_mean(state)
    var = 1.0 / work.psi
    correct = work.data.response == 1
    out = state.latent_utility
    if np.any(correct):
        out[correct] = sample_truncated_normal(rng, mean[correct], var[correct], "positive")
    if not np.all(correct):
        wrong = ~correct
        out[wrong] = sample_truncated_normal(rng, mean[wrong], var[wrong], "negative")


def update_abilities(rng: Rng, state: LatentState, work: SweepWorkspace) -> None:
    """Forward-filter / backward-sample each individual's ability path."""
    data, rho = work.data, work.constants.rho
    z = (state.latent_utility + work.item_difficulty - state.day_effect[work.item_day]
         - state.test_effect[work.item_test] - 1.0 / rho)
    prec_sum = np.add.reduceat(work.psi, work.day_item_start)
    weighted = np.add.reduceat(work.psi * z, work.day_item_start)
    for i in range(data.n_individuals):
        lo, hi = data.day_start[i], data.day_start[i + 1]
        lapse = data.lapse[lo:hi]
        try:
            filt = ffbs.filter_from_day_sums(
                prec_sum[lo:hi], weighted[lo:hi], lapse, work.lapse_trunc[lo:hi],
                float(state.growth[i]), state.drift_precision, rho,
                float(work.init_mean[i]), float(work.init_var[i]))
            path = ffbs.backward_sample(rng, filt, lapse, state.drift_precision, rho)
        except NumericError as exc:
            raise NumericError(f"ability update, individual {i}: {exc}") from exc
        state.theta[work.theta_slice(i)] = path


def _growth_moments(state: LatentState, work: SweepWorkspace):
    """Per-individual sufficient statistics of the growth conditional."""
    theta_prev = state.theta[work.day_theta_prev]
    diff = state.theta[work.day_theta] - theta_prev
    u = 1.0 - work.constants.rho * theta_prev
    x = work.lapse_trunc * u
    starts = work.data.day_start[:-1]
    num = np.add.reduceat(x * diff * work.inv_lapse, starts)
    den = np.add.reduceat(x * x * work.inv_lapse, starts)
    return num, den


def update_growth(rng: Rng, state: LatentState, work: SweepWorkspace,
                  priors: PriorSpec = OBJECTIVE_PRIORS) -> None:
    """Positive-truncated-normal draw of each individual's growth rate."""
    num, den = _growth_moments(state, work)
    precision = state.drift_precision * den + 1.0 / priors.growth_prior_variance
    if np.any(~np.isfinite(precision)) or np.any(precision <= 0.0):
        bad = int(np.flatnonzero(~(precision > 0.0) | ~np.isfinite(precision))[0])
        raise NumericError(f"growth update, individual {bad}: degenerate precision "
                           f"(all 1 - rho*theta terms may be zero)")
    mean = state.drift_precision * num / precision
    state.growth[:] = sample_truncated_normal(rng, mean, 1.0 / precision, "positive")


def update_test_effects(rng: Rng, state: LatentState, work: SweepWorkspace) -> None:
    """Blockwise constrained-MVN draw of each day's test effects.

    Days with a single test get effect 0; otherwise the free coordinates
    (all tests but the last) are drawn from their Gaussian conditional and
    the last effect closes the sum to zero.
    """
    resid = (state.latent_utility - state.theta[work.item_theta] + work.item_difficulty
             - state.day_effect[work.item_day])
    prec_test = np.add.reduceat(work.psi, work.data.item_start[:-1])
    obs_test = np.add.reduceat(work.psi * resid, work.data.item_start[:-1])
    state.test_effect[work.data.test_start[work.single_test_days]] = 0.0
    for s, days, tests, eye, prior_corr in work.eta_groups:
        p = prec_test[tests]          # (m, s)
        b = obs_test[tests]
        tau = state.test_effect_precision[work.day_individual[days]]
        m_mat = (eye * p[:, :-1, None] + p[:, -1, None, None]
                 + tau[:, None, None] * prior_corr)
        rhs = b[:, :-1] - b[:, -1:]
        try:
            cov = np.linalg.inv(m_mat)
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"test-effect system not SPD for {s}-test days") from exc
        mean = np.einsum("mij,mj->mi", cov, rhs)
        z = rng.standard_normal((len(days), s - 1))
        free = mean + np.einsum("mij,mj->mi", chol, z)
        state.test_effect[tests[:, :-1]] = free
        state.test_effect[tests[:, -1]] = -free.sum(axis=1)


def _guarded_gamma(rng: Rng, shape, rate_fn, redraw, what: str):
    """Gamma draw with the degenerate-rate guard: a zero rate triggers one
    redraw of the offending latent block, then a hard error."""
    rate = rate_fn()
    if np.any(rate == 0.0):
        redraw()
        rate = rate_fn()
        if np.any(rate == 0.0):
            raise NumericError(f"{what}: gamma rate degenerate after block redraw")
    return sample_gamma(rng, shape, rate)


def update_test_effect_precision(rng: Rng, state: LatentState, work: SweepWorkspace,
                                 priors: PriorSpec = OBJECTIVE_PRIORS) -> None:
    if work.freeze_effect_precisions:
        return
    data = work.data
    shape = priors.precision_prior_shape + (work.tests_per_individual - data.days) / 2.0
    if np.any(shape <= 0.0):
        bad = int(np.flatnonzero(shape <= 0.0)[0])
        raise ConfigError(f"test-effect precision shape nonpositive for individual {bad}; "
                          "dataset should have been rejected by the validation gate")

    def rate():
        per = np.add.reduceat(state.test_effect ** 2, work.indiv_test_start[:-1])
        return priors.precision_prior_rate + per / 2.0

    state.test_effect_precision[:] = _guarded_gamma(
        rng, shape, rate, lambda: update_test_effects(rng, state, work),
        "test-effect precision")


def update_day_effects(rng: Rng, state: LatentState, work: SweepWorkspace) -> None:
    """Normal draw of each (individual, day) random effect."""
    resid = (state.latent_utility - state.theta[work.item_theta] + work.item_difficulty
             - state.test_effect[work.item_test])
    num = np.add.reduceat(work.psi * resid, work.day_item_start)
    prec = (np.add.reduceat(work.psi, work.day_item_start)
            + state.day_effect_precision[work.day_individual])
    noise = rng.standard_normal(work.data.n_days)
    state.day_effect[:] = num / prec + noise / np.sqrt(prec)


def update_day_effect_precision(rng: Rng, state: LatentState, work: SweepWorkspace,
                                priors: PriorSpec = OBJECTIVE_PRIORS) -> None:
    if work.freeze_effect_precisions:
        return
    data = work.data
    shape = priors.precision_prior_shape + data.days / 2.0
    if np.any(shape <= 0.0):
        bad = int(np.flatnonzero(shape <= 0.0)[0])
        raise ConfigError(f"day-effect precision shape nonpositive for individual {bad}; "
                          "dataset should have been rejected by the validation gate")

    def rate():
        per = np.add.reduceat(state.day_effect ** 2, data.day_start[:-1])
        return priors.precision_prior_rate + per / 2.0

    state.day_effect_precision[:] = _guarded_gamma(
        rng, shape, rate, lambda: update_day_effects(rng, state, work),
        "day-effect precision")


def update_drift_precision(rng: Rng, state: LatentState, work: SweepWorkspace,
                           priors: PriorSpec = OBJECTIVE_PRIORS,
                           mode: str = "retrospective") -> None:
    """Gamma draw of the shared system-noise precision; held fixed on-line."""
    if mode == "online":
        return
    data = work.data
    shape = priors.precision_prior_shape + np.sum(data.days) / 2.0
    if shape <= 0.0:
        raise ConfigError("drift precision shape nonpositive; dataset should have "
                          "been rejected by the validation gate")

    def rate():
        theta_prev = state.theta[work.day_theta_prev]
        resid = (state.theta[work.day_theta] - theta_prev
                 - state.growth[work.day_individual]
                 * (1.0 - work.constants.rho * theta_prev) * work.lapse_trunc)
        return priors.precision_prior_rate + float(np.sum(resid * resid * work.inv_lapse)) / 2.0

    state.drift_precision = float(_guarded_gamma(
        rng, shape, rate, lambda: update_abilities(rng, state, work), "drift precision"))


def update_ks_scales(rng: Rng, state: LatentState, work: SweepWorkspace) -> None:
    """One Metropolis-Hastings proposal per item for the mixture scales,
    proposing from the Kolmogorov-Smirnov law itself."""
    resid = state.latent_utility - work.item_mean(state)
    sigma_sq = work.constants.sigma ** 2
    proposal = sample_ks(rng, work.data.n_items)
    s_old = sigma_sq + 4.0 * state.ks_scale ** 2
    s_new = sigma_sq + 4.0 * proposal ** 2
    log_ratio = 0.5 * (np.log(s_old) - np.log(s_new)) \
        - 0.5 * resid * resid * (1.0 / s_new - 1.0 / s_old)
    accept = rng.random(work.data.n_items) < np.exp(np.minimum(log_ratio, 0.0))
    state.ks_scale[accept] = proposal[accept]
    work.refresh_obs_precision(state)


_SWEEP_STEPS = (
    ("latent utilities", lambda rng, st, wk, pr, mode: update_latent_utilities(rng, st, wk)),
    ("abilities", lambda rng, st, wk, pr, mode: update_abilities(rng, st, wk)),
    ("growth", lambda rng, st, wk, pr, mode: update_growth(rng, st, wk, pr)),
    ("test effects", lambda rng, st, wk, pr, mode: update_test_effects(rng, st, wk)),
    ("test-effect precision",
     lambda rng, st, wk, pr, mode: update_test_effect_precision(rng, st, wk, pr)),
    ("day effects", lambda rng, st, wk, pr, mode: update_day_effects(rng, st, wk)),
    ("day-effect precision",
     lambda rng, st, wk, pr, mode: update_day_effect_precision(rng, st, wk, pr)),
    ("drift precision",
     lambda rng, st, wk, pr, mode: update_drift_precision(rng, st, wk, pr, mode)),
    ("mixture scales", lambda rng, st, wk, pr, mode: update_ks_scales(rng, st, wk)),
)


def gibbs_sweep(rng: Rng, state: LatentState, work: SweepWorkspace,
                mode: str = "retrospective",
                priors: PriorSpec = OBJECTIVE_PRIORS) -> LatentState:
    """Apply all nine updates in order, mutating and returning ``state``."""
    work.refresh_obs_precision(state)
    for name, step in _SWEEP_STEPS:
        try:
            step(rng, state, work, priors, mode)
        except ConfigError:
            raise
        except (NumericError, ValueError, FloatingPointError,
                np.linalg.LinAlgError) as exc:
            raise NumericError(f"sweep aborted in {name} update: {exc}") from exc
    return state


def state_invariant_violations(state: LatentState, work: SweepWorkspace) -> list:
    """Invariant checks (used by tests): sum-zero test effects, response-
    consistent utility signs, positive precisions/scales, nonneg growth."""
    data = work.data
    problems = []
    day_sums = np.add.reduceat(state.test_effect, data.test_start[:-1])
    if np.any(np.abs(day_sums) > 1e-12):
        problems.append("test effects do not sum to zero within a day")
    if np.any(state.test_effect[data.test_start[work.single_test_days]] != 0.0):
        problems.append("single-test day has nonzero test effect")
    correct = data.response == 1
    if np.any(state.latent_utility[correct] <= 0.0):
        problems.append("correct response with nonpositive latent utility")
    if np.any(state.latent_utility[~correct] > 0.0):
        problems.append("incorrect response with positive latent utility")
    if np.any(state.growth < 0.0):
        problems.append("negative growth rate")
    for name in ("day_effect_precision", "test_effect_precision"):
        if np.any(getattr(state, name) <= 0.0):
            problems.append(f"nonpositive {name}")
    if not state.drift_precision > 0.0:
        problems.append("nonpositive drift_precision")
    if np.any(state.ks_scale <= 0.0):
        problems.append("nonpositive mixture scale")
    if not np.all(np.isfinite(state.theta)):
        problems.append("non-finite ability")
    return problems
