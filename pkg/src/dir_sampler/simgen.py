"""Forward simulation of datasets from the model, with ground truth kept.

The generator draws ability paths from the system equation, assigns each
test a difficulty tracking the current ability, layers on daily/test
random effects and per-item difficulty deviations, and emits Bernoulli
responses from the logistic observation equation.  The returned truth is
index-aligned with the dataset for coverage scoring.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .distributions import make_rng
from .errors import ConfigError, DataError
from .model import Dataset, ModelConstants, theta_offsets, validate_dataset

SIM_GROUP = "sim"
TRUTH_FILE = "truth.csv"


def paper_lapse_schedule(n_days: int) -> np.ndarray:
    """Lapse between consecutive test days: 10+t up to the midpoint, t-10
    after it (t counted from 1)."""
    t = np.arange(1, n_days + 1, dtype=float)
    return np.where(t <= n_days // 2, 10.0 + t, t - 10.0)


@dataclass(frozen=True)
class SimConfig:
    """Truth values and layout for one simulated cohort.

    Counts are shared by all individuals; the per-individual truth vectors
    must have length ``n_individuals``.  ``lapse_table`` overrides the
    default schedule (shape (n_individuals, days), strictly positive).
    """

    n_individuals: int
    days: int
    tests_per_day: int
    items_per_test: int
    growth: Sequence[float]
    day_effect_precision: Sequence[float]
    test_effect_precision: Sequence[float]
    drift_precision: float
    sigma: float
    rho: float
    delta_tmax: float
    difficulty_halfwidth: float = 0.1
    init_mean: float = 0.0
    init_var: float = 1.0
    lapse_table: object = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_individuals", "days", "tests_per_day", "items_per_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("growth", "day_effect_precision", "test_effect_precision"):
            vec = np.asarray(getattr(self, name), dtype=float)
            if vec.shape != (self.n_individuals,):
                raise ConfigError(f"{name} must have one value per individual")
            if name != "growth" and np.any(vec <= 0.0):
                raise ConfigError(f"{name} values must be > 0")
        if np.any(np.asarray(self.growth, dtype=float) < 0.0):
            raise ConfigError("growth values must be >= 0")
        for name in ("drift_precision", "sigma", "rho", "delta_tmax", "init_var"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be > 0")
        if self.lapse_table is not None:
            table = np.asarray(self.lapse_table, dtype=float)
            if table.shape != (self.n_individuals, self.days):
                raise ConfigError("lapse_table must be (n_individuals, days)")
            if np.any(table <= 0.0):
                raise ConfigError("lapse_table entries must be > 0")
        elif self.days < 20:
            # the default schedule's second branch (t - 10) goes nonpositive
            raise ConfigError("default lapse schedule needs days >= 20; "
                              "provide lapse_table for shorter designs")

    def lapses(self) -> np.ndarray:
        if self.lapse_table is not None:
            return np.asarray(self.lapse_table, dtype=float)
        return np.tile(paper_lapse_schedule(self.days), (self.n_individuals, 1))

    def constants(self) -> ModelConstants:
        return ModelConstants(sigma=self.sigma, rho=self.rho, delta_tmax=self.delta_tmax,
                              group_prior={SIM_GROUP: (self.init_mean, self.init_var)})


def paper_default_config(seed: int = 0) -> SimConfig:
    """The 10-individual, 50-day, 4-test, 10-item reference design."""
    return SimConfig(
        n_individuals=10, days=50, tests_per_day=4, items_per_test=10,
        growth=(0.0055, 0.0065, 0.0026, 0.0037, 0.0061,
                0.0047, 0.0035, 0.0043, 0.0039, 0.0015),
        day_effect_precision=(2.0408, 1.3333, 1.8182, 1.2346, 1.5873,
                              1.0, 2.2222, 1.0526, 1.1494, 2.0),
        test_effect_precision=(4.0, 3.1250, 4.3478, 2.7027, 3.7037,
                               2.8571, 4.0, 2.2222, 9.0909, 4.5455),
        drift_precision=1.0 / 0.0218 ** 2,
        sigma=0.7333, rho=0.1180, delta_tmax=14.0,
        seed=seed,
    )


@dataclass
class SimTruth:
    """Realized latent values behind a simulated dataset."""

    theta: np.ndarray                    # flat ability paths, days 0..T per individual
    growth: np.ndarray
    day_effect_precision: np.ndarray
    test_effect_precision: np.ndarray
    drift_precision: float
    day_effect: np.ndarray               # (total days,)
    test_effect: np.ndarray              # (total tests,)
    item_deviation: np.ndarray           # (total items,)
    theta_start: np.ndarray              # (n+1,) offsets into theta


def constrained_test_effects(rng, precision: float, n_tests: int,
                             size: int) -> np.ndarray:
    """Draw ``size`` rows of test effects ~ N(0, 1/precision I) conditioned
    to sum to zero, by centering iid draws (the projection is exact: the
    centered vector has the conditioned law's covariance (I - J/S)/tau)."""
    raw = rng.normal(0.0, 1.0 / np.sqrt(precision), size=(size, n_tests))
    return raw - raw.mean(axis=1, keepdims=True)


def simulate_dataset(cfg: SimConfig) -> tuple:
    """Generate (Dataset, SimTruth) from the forward model.

    If the propriety gate rejects the realized responses (a near-impossible
    event for non-degenerate configs), the Bernoulli layer alone is redrawn
    up to 100 times before giving up.
    """
    rng = make_rng(cfg.seed)
    n, t_total, s, k = cfg.n_individuals, cfg.days, cfg.tests_per_day, cfg.items_per_test
    growth = np.asarray(cfg.growth, dtype=float)
    delta_prec = np.asarray(cfg.day_effect_precision, dtype=float)
    tau_prec = np.asarray(cfg.test_effect_precision, dtype=float)
    lapse = cfg.lapses()
    lapse_trunc = np.minimum(lapse, cfg.delta_tmax)

    theta = np.empty((n, t_total + 1))
    theta[:, 0] = rng.normal(cfg.init_mean, np.sqrt(cfg.init_var), size=n)
    for t in range(1, t_total + 1):
        drift = rng.normal(0.0, np.sqrt(lapse[:, t - 1] / cfg.drift_precision))
        prev = theta[:, t - 1]
        theta[:, t] = prev + growth * (1.0 - cfg.rho * prev) * lapse_trunc[:, t - 1] + drift

    day_effect = rng.normal(0.0, 1.0 / np.sqrt(delta_prec)[:, None], size=(n, t_total))
    difficulty = (theta[:, 1:, None]
                  + rng.uniform(-cfg.difficulty_halfwidth, cfg.difficulty_halfwidth,
                                size=(n, t_total, s)))
    test_effect = np.empty((n, t_total, s))
    for i in range(n):
        test_effect[i] = constrained_test_effects(rng, tau_prec[i], s, t_total)
    item_dev = rng.normal(0.0, cfg.sigma, size=(n, t_total, s, k))

    logit = (theta[:, 1:, None, None] - difficulty[..., None]
             + day_effect[..., None, None] + test_effect[..., None] + item_dev)
    prob = 1.0 / (1.0 + np.exp(-logit))

    groups = [SIM_GROUP] * n
    lapse_nested = [lapse[i].tolist() for i in range(n)]
    diff_nested = [[difficulty[i, t].tolist() for t in range(t_total)] for i in range(n)]
    data = None
    for _ in range(100):
        response = (rng.random(prob.shape) < prob).astype(np.uint8)
        resp_nested = [[[response[i, t, j].tolist() for j in range(s)]
                        for t in range(t_total)] for i in range(n)]
        data = Dataset.from_nested(resp_nested, diff_nested, lapse_nested, groups)
        if validate_dataset(data).passed or cfg.n_individuals == 1:
            break
    else:
        raise DataError("simulated responses kept failing the propriety gate")

    truth = SimTruth(
        theta=theta.reshape(-1),
        growth=growth.copy(),
        day_effect_precision=delta_prec.copy(),
        test_effect_precision=tau_prec.copy(),
        drift_precision=cfg.drift_precision,
        day_effect=day_effect.reshape(-1),
        test_effect=test_effect.reshape(-1),
        item_deviation=item_dev.reshape(-1),
        theta_start=theta_offsets(data),
    )
    return data, truth


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_truth_csv(truth: SimTruth, out_dir) -> Path:
    """Truth values needed for coverage scoring, one quantity per row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / TRUTH_FILE
    n = len(truth.growth)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "individual", "day", "value"])
        for i in range(n):
            lo, hi = truth.theta_start[i], truth.theta_start[i + 1]
            for t, idx in enumerate(range(lo, hi)):
                w.writerow(["theta", i + 1, t, _fmt(truth.theta[idx])])
        for name, vec in (("growth", truth.growth),
                          ("day_effect_precision", truth.day_effect_precision),
                          ("test_effect_precision", truth.test_effect_precision)):
            for i in range(n):
                w.writerow([name, i + 1, "", _fmt(vec[i])])
        w.writerow(["drift_precision", "", "", _fmt(truth.drift_precision)])
    return path


def read_truth_csv(path) -> SimTruth:
    """Read back what ``write_truth_csv`` stores (realized effects are not
    round-tripped; they come back empty)."""
    theta: dict = {}
    per_indiv: dict = {"growth": {}, "day_effect_precision": {},
                       "test_effect_precision": {}}
    drift = None
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["quantity", "individual", "day", "value"]:
            raise DataError(f"{path}: unexpected truth header")
        for row in reader:
            if not row:
                continue
            quantity, indiv, day, value = row
            if quantity == "theta":
                theta[(int(indiv) - 1, int(day))] = float(value)
            elif quantity in per_indiv:
                per_indiv[quantity][int(indiv) - 1] = float(value)
            elif quantity == "drift_precision":
                drift = float(value)
            else:
                raise DataError(f"{path}: unknown truth quantity {quantity!r}")
    if drift is None:
        raise DataError(f"{path}: missing drift_precision row")
    n = max(i for i, _ in theta) + 1
    days = np.array([max(t for j, t in theta if j == i) for i in range(n)])
    starts = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(days + 1, out=starts[1:])
    flat = np.empty(int(starts[-1]))
    for (i, t), val in theta.items():
        flat[starts[i] + t] = val

    def vec(name):
        d = per_indiv[name]
        if sorted(d) != list(range(n)):
            raise DataError(f"{path}: incomplete {name} rows")
        return np.array([d[i] for i in range(n)])

    return SimTruth(theta=flat, growth=vec("growth"),
                    day_effect_precision=vec("day_effect_precision"),
                    test_effect_precision=vec("test_effect_precision"),
                    drift_precision=drift,
                    day_effect=np.empty(0), test_effect=np.empty(0),
                    item_deviation=np.empty(0), theta_start=starts)
