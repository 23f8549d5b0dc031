"""Block update of one individual's ability path.

Conditional on everything else, the shifted ability lam_t = theta_t - 1/rho
follows a scalar dynamic linear model: lam_t = g_t lam_{t-1} + w_t with
w_t ~ N(0, lapse_t / drift_precision) and every item on day t contributing
a pseudo-observation z = lam_t + noise of known precision.  The forward
filter accumulates the day posteriors N(mu_t, V_t); the backward pass then
draws the whole path from its joint Gaussian conditional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import Rng
from .errors import NumericError

# Variances are propagated directly (not precisions); anything at or below
# this floor means the update has degenerated and we fail loudly.
_VAR_FLOOR = 1e-300


@dataclass(frozen=True)
class AbilityInputs:
    """One individual's slice of the quantities the path update conditions on.

    Item-level arrays are flat over the individual's days;
    ``item_day_start`` gives the first item index of each day (length T+1).
    """

    latent_utility: np.ndarray   # per item
    difficulty: np.ndarray       # per item (test difficulty repeated per item)
    day_effect: np.ndarray       # per item
    test_effect: np.ndarray      # per item
    obs_precision: np.ndarray    # per item, 1 / (4 ks_scale^2 + sigma^2)
    item_day_start: np.ndarray   # (T+1,)
    lapse: np.ndarray            # (T,)
    lapse_trunc: np.ndarray      # (T,), lapse capped at the growth horizon
    growth: float
    drift_precision: float
    init_mean: float             # group prior mean for theta at day 0
    init_var: float              # group prior variance


@dataclass
class FilterState:
    transition: np.ndarray    # g_t, (T,)
    prior_mean: np.ndarray    # d_t, (T,)
    prior_var: np.ndarray     # R_t, (T,)
    post_mean: np.ndarray     # mu_t, (T+1,), index 0 = day-0 prior
    post_var: np.ndarray      # V_t, (T+1,)
    pseudo_obs: np.ndarray    # z per item (shifted residual the filter saw)
    backward_mean: np.ndarray = field(default=None)  # h_t, (T,), set when sampled
    backward_var: np.ndarray = field(default=None)   # H_t, (T,)


def _check_var(v: float, what: str, day: int) -> None:
    if not (v > _VAR_FLOOR) or not np.isfinite(v):
        raise NumericError(f"{what} variance degenerate at day {day}: {v!r}")


def filter_from_day_sums(prec_sum: np.ndarray, weighted_obs_sum: np.ndarray,
                         lapse: np.ndarray, lapse_trunc: np.ndarray,
                         growth: float, drift_precision: float, rho: float,
                         init_mean: float, init_var: float) -> FilterState:
    """Forward filter given per-day Sum(psi) and Sum(psi * z).

    This is the hot-loop entry point; ``forward_filter`` assembles the day
    sums from item-level inputs and delegates here.
    """
    t_total = len(lapse)
    g = 1.0 - growth * rho * lapse_trunc
    d = np.empty(t_total)
    r = np.empty(t_total)
    mu = np.empty(t_total + 1)
    v = np.empty(t_total + 1)
    mu[0] = init_mean - 1.0 / rho
    v[0] = init_var
    _check_var(v[0], "initial", 0)
    g_list = g.tolist()
    noise_var = (lapse / drift_precision).tolist()
    prec_list = prec_sum.tolist()
    obs_list = weighted_obs_sum.tolist()
    mu_t, v_t = mu[0], v[0]
    for t in range(t_total):
        g_t = g_list[t]
        d_t = g_t * mu_t
        r_t = g_t * g_t * v_t + noise_var[t]
        if not r_t > _VAR_FLOOR:
            _check_var(r_t, "one-step prior", t + 1)
        v_t = 1.0 / (prec_list[t] + 1.0 / r_t)
        mu_t = v_t * (d_t / r_t + obs_list[t])
        d[t] = d_t
        r[t] = r_t
        mu[t + 1] = mu_t
        v[t + 1] = v_t
    if not np.all(np.isfinite(mu)):
        bad = int(np.flatnonzero(~np.isfinite(mu))[0])
        raise NumericError(f"filter mean non-finite at day {bad}")
    return FilterState(transition=g, prior_mean=d, prior_var=r, post_mean=mu,
                       post_var=v, pseudo_obs=None)


def forward_filter(inputs: AbilityInputs, rho: float) -> FilterState:
    """Run the filter over one individual's days."""
    z = (inputs.latent_utility + inputs.difficulty - inputs.day_effect
         - inputs.test_effect - 1.0 / rho)
    starts = inputs.item_day_start
    prec_sum = np.add.reduceat(inputs.obs_precision, starts[:-1])
    weighted = np.add.reduceat(inputs.obs_precision * z, starts[:-1])
    filt = filter_from_day_sums(prec_sum, weighted, inputs.lapse, inputs.lapse_trunc,
                                inputs.growth, inputs.drift_precision, rho,
                                inputs.init_mean, inputs.init_var)
    filt.pseudo_obs = z
    return filt


def backward_sample(rng: Rng, filt: FilterState, lapse: np.ndarray,
                    drift_precision: float, rho: float) -> np.ndarray:
    """Draw the ability path theta_0..theta_T from its joint conditional."""
    t_total = len(filt.transition)
    mu, v, g = filt.post_mean, filt.post_var, filt.transition
    phi = drift_precision
    noise = rng.standard_normal(t_total + 1).tolist()
    lam = np.empty(t_total + 1)
    h = np.empty(t_total)
    cap_h = np.empty(t_total)
    _check_var(v[t_total], "filtered", t_total)
    lam_next = mu[t_total] + math.sqrt(v[t_total]) * noise[t_total]
    lam[t_total] = lam_next
    g_list, mu_list, v_list = g.tolist(), mu.tolist(), v.tolist()
    inv_lapse = (phi / lapse).tolist()
    for t in range(t_total - 1, -1, -1):
        v_t = v_list[t]
        if not v_t > _VAR_FLOOR:
            _check_var(v_t, "filtered", t)
        pull = inv_lapse[t] * g_list[t]  # transition at day t+1 uses g[t], lapse[t]
        h_t = 1.0 / (pull * g_list[t] + 1.0 / v_t)
        if not h_t > _VAR_FLOOR:
            _check_var(h_t, "backward", t)
        mean_t = h_t * (mu_list[t] / v_t + pull * lam_next)
        lam_next = mean_t + math.sqrt(h_t) * noise[t]
        lam[t] = lam_next
        h[t] = mean_t
        cap_h[t] = h_t
    filt.backward_mean = h
    filt.backward_var = cap_h
    theta = lam + 1.0 / rho
    if not np.all(np.isfinite(theta)):
        raise NumericError("sampled ability path contains non-finite values")
    return theta
