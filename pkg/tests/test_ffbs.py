"""Ability-path update vs an independent dense-Gaussian oracle.

The oracle assembles the joint precision matrix of the shifted path
lam_0..lam_T directly from the prior, transition, and observation terms
and solves it densely; the filter/sampler recursions must reproduce its
prefix marginals exactly and its joint law in Monte Carlo.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dir_sampler import AbilityInputs, NumericError, backward_sample, forward_filter, make_rng

from conftest import mc_se_mean


def make_inputs(z_by_day, psi_by_day, lapse, growth, drift_precision,
                init_mean, init_var, rho, delta_tmax=14.0):
    z = np.concatenate([np.asarray(d, dtype=float) for d in z_by_day])
    psi = np.concatenate([np.asarray(p, dtype=float) for p in psi_by_day])
    counts = [len(d) for d in z_by_day]
    starts = np.concatenate([[0], np.cumsum(counts)])
    lapse = np.asarray(lapse, dtype=float)
    # pseudo-data enters as utility + difficulty - effects - 1/rho; build it
    # from utilities alone with difficulties/effects zeroed
    return AbilityInputs(
        latent_utility=z + 1.0 / rho, difficulty=np.zeros_like(z),
        day_effect=np.zeros_like(z), test_effect=np.zeros_like(z),
        obs_precision=psi, item_day_start=starts, lapse=lapse,
        lapse_trunc=np.minimum(lapse, delta_tmax), growth=growth,
        drift_precision=drift_precision, init_mean=init_mean, init_var=init_var)


def dense_posterior(inputs: AbilityInputs, rho: float, upto: int | None = None):
    """Exact N(mean, cov) of lam_0..lam_upto given data on days 1..upto."""
    t_total = len(inputs.lapse) if upto is None else upto
    g = 1.0 - inputs.growth * rho * inputs.lapse_trunc
    dim = t_total + 1
    prec = np.zeros((dim, dim))
    lin = np.zeros(dim)
    prec[0, 0] = 1.0 / inputs.init_var
    lin[0] = (inputs.init_mean - 1.0 / rho) / inputs.init_var
    for t in range(1, dim):
        w = inputs.drift_precision / inputs.lapse[t - 1]
        prec[t, t] += w
        prec[t - 1, t - 1] += g[t - 1] ** 2 * w
        prec[t - 1, t] -= g[t - 1] * w
        prec[t, t - 1] -= g[t - 1] * w
        lo, hi = inputs.item_day_start[t - 1], inputs.item_day_start[t]
        psi = inputs.obs_precision[lo:hi]
        z = (inputs.latent_utility + inputs.difficulty - inputs.day_effect
             - inputs.test_effect)[lo:hi] - 1.0 / rho
        prec[t, t] += psi.sum()
        lin[t] += np.sum(psi * z)
    cov = np.linalg.inv(prec)
    return cov @ lin, cov


# ---------------------------------------------------------------------------
# forward filter
# ---------------------------------------------------------------------------

def test_flat_prior_single_observation():
    rho = 0.118
    psi = 0.9
    z = 1.3
    inputs = make_inputs([[z]], [[psi]], [2.0], growth=0.0, drift_precision=1.0,
                         init_mean=0.0, init_var=1e6, rho=rho)
    filt = forward_filter(inputs, rho)
    assert filt.post_mean[1] == pytest.approx(z, abs=1e-3)
    assert filt.post_var[1] == pytest.approx(1.0 / psi, rel=1e-3)


def test_hand_conjugate_instance():
    # mu_G=0, V_G=1, rho=0.118, c=0, phi=1, lapse=1, one item psi=1, z=2
    rho = 0.118
    inputs = make_inputs([[2.0]], [[1.0]], [1.0], growth=0.0, drift_precision=1.0,
                         init_mean=0.0, init_var=1.0, rho=rho)
    filt = forward_filter(inputs, rho)
    # two-line conjugate-normal oracle: prior lam_1 ~ N(-1/rho, 2), obs z=2, psi=1
    prior_mean, prior_var = -1.0 / rho, 2.0
    post_var = 1.0 / (1.0 + 1.0 / prior_var)
    post_mean = post_var * (prior_mean / prior_var + 2.0)
    assert filt.post_var[1] == pytest.approx(post_var, abs=1e-12)
    assert filt.post_mean[1] == pytest.approx(post_mean, abs=1e-12)


def test_constant_pseudodata_monotone_approach():
    rho = 0.118
    t_total = 12
    z_target = 3.0
    inputs = make_inputs([[z_target]] * t_total, [[1.0]] * t_total, [1.0] * t_total,
                         growth=0.0, drift_precision=1.0, init_mean=-4.0, init_var=1.0,
                         rho=rho)
    filt = forward_filter(inputs, rho)
    gaps = np.abs(filt.post_mean[1:] - z_target)
    assert np.all(np.diff(gaps) < 0.0)


@given(st.integers(1, 5), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_filter_marginals_match_dense_prefix_posteriors(t_total, seed):
    rng = np.random.default_rng(seed)
    rho = float(rng.uniform(0.05, 0.3))
    z_by_day = [rng.normal(0.0, 3.0, size=rng.integers(1, 4)).tolist()
                for _ in range(t_total)]
    psi_by_day = [rng.uniform(0.2, 1.5, size=len(z)).tolist() for z in z_by_day]
    inputs = make_inputs(z_by_day, psi_by_day, rng.uniform(0.5, 20.0, t_total),
                         growth=float(rng.uniform(0.0, 0.05)),
                         drift_precision=float(rng.uniform(0.5, 50.0)),
                         init_mean=float(rng.normal()), init_var=float(rng.uniform(0.5, 2.0)),
                         rho=rho)
    filt = forward_filter(inputs, rho)
    for upto in range(t_total + 1):
        mean, cov = dense_posterior(inputs, rho, upto=upto)
        assert filt.post_mean[upto] == pytest.approx(mean[upto], rel=1e-9, abs=1e-9)
        assert filt.post_var[upto] == pytest.approx(cov[upto, upto], rel=1e-9)


# ---------------------------------------------------------------------------
# backward sampling
# ---------------------------------------------------------------------------

def test_zero_system_noise_follows_system_equation():
    rho = 0.118
    t_total = 4
    growth = 0.01
    lapse = [3.0, 17.0, 2.0, 9.0]
    inputs = make_inputs([[0.5, -0.2]] * t_total, [[1.0, 0.8]] * t_total, lapse,
                         growth=growth, drift_precision=1e12, init_mean=0.0,
                         init_var=1.0, rho=rho)
    filt = forward_filter(inputs, rho)
    theta = backward_sample(make_rng(0), filt, inputs.lapse, inputs.drift_precision, rho)
    for t in range(1, t_total + 1):
        predicted = theta[t - 1] + growth * (1.0 - rho * theta[t - 1]) * \
            inputs.lapse_trunc[t - 1]
        assert theta[t] == pytest.approx(predicted, abs=1e-4)


def test_backward_sampling_deterministic():
    rho = 0.2
    inputs = make_inputs([[1.0], [0.0], [2.0]], [[1.0]] * 3, [1.0, 2.0, 3.0],
                         growth=0.01, drift_precision=2.0, init_mean=0.0,
                         init_var=1.0, rho=rho)
    filt = forward_filter(inputs, rho)
    a = backward_sample(make_rng(42), filt, inputs.lapse, inputs.drift_precision, rho)
    b = backward_sample(make_rng(42), filt, inputs.lapse, inputs.drift_precision, rho)
    assert np.array_equal(a, b)


def test_backward_fills_smoothing_fields():
    rho = 0.2
    inputs = make_inputs([[1.0], [0.0]], [[1.0]] * 2, [1.0, 1.0], growth=0.0,
                         drift_precision=1.0, init_mean=0.0, init_var=1.0, rho=rho)
    filt = forward_filter(inputs, rho)
    backward_sample(make_rng(1), filt, inputs.lapse, inputs.drift_precision, rho)
    assert filt.backward_var is not None and np.all(filt.backward_var > 0.0)


def test_numeric_error_carries_day_context():
    rho = 0.118
    inputs = make_inputs([[1.0]], [[1.0]], [1.0], growth=0.0, drift_precision=np.inf,
                         init_mean=0.0, init_var=1e-320, rho=rho)
    with pytest.raises(NumericError):
        forward_filter(inputs, rho)


def sample_paths(inputs, rho, n_paths, seed):
    filt = forward_filter(inputs, rho)
    rng = make_rng(seed)
    t_total = len(inputs.lapse)
    out = np.empty((n_paths, t_total + 1))
    for j in range(n_paths):
        out[j] = backward_sample(rng, filt, inputs.lapse, inputs.drift_precision, rho)
    return out


def test_joint_law_matches_dense_posterior_small():
    # light version of the T=3 check (the acceptance suite runs the full one)
    rho = 0.118
    inputs = make_inputs([[0.4, -1.0], [2.0, 1.2], [0.1, 0.3]],
                         [[1.0, 0.7], [0.9, 1.1], [0.5, 1.3]],
                         [4.0, 11.0, 2.0], growth=0.004, drift_precision=4.0,
                         init_mean=0.0, init_var=1.0, rho=rho)
    n_paths = 20_000
    paths = sample_paths(inputs, rho, n_paths, seed=5) - 1.0 / rho
    mean, cov = dense_posterior(inputs, rho)
    for t in range(4):
        se = np.sqrt(cov[t, t] / n_paths)
        assert abs(paths[:, t].mean() - mean[t]) < 4.0 * se
    emp_cov = np.cov(paths.T)
    for a in range(4):
        for b in range(4):
            se = np.sqrt((cov[a, a] * cov[b, b] + cov[a, b] ** 2) / n_paths)
            assert abs(emp_cov[a, b] - cov[a, b]) < 5.0 * se
