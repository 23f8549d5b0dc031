"""Domain types: observed data, known constants, latent state, configs.

Responses are ragged over (individual, day, test, item).  ``Dataset``
stores them flattened in lexicographic order with offset tables at each
level, so the sampler's hot loop works on contiguous arrays instead of
per-item lookups.  All indices are 0-based internally; the CSV interchange
format is 1-based.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError


def _offsets(counts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=out[1:])
    return out


@dataclass(frozen=True)
class Dataset:
    """Dichotomous responses with known test difficulties and time lapses.

    ``days[i]`` is the number of test days for individual i,
    ``tests_per_day`` / ``items_per_test`` the ragged counts at the next two
    levels, flattened.  ``difficulty`` holds the known ensemble mean
    difficulty (logits) of each test; ``lapse`` the days elapsed since the
    individual's previous test day (strictly positive).  ``group`` selects
    the initial-ability prior for each individual.
    """

    days: np.ndarray                # (n,) int
    tests_per_day: np.ndarray       # (total days,) int
    items_per_test: np.ndarray      # (total tests,) int
    response: np.ndarray            # (total items,) uint8 in {0, 1}
    difficulty: np.ndarray          # (total tests,) float, logits
    lapse: np.ndarray               # (total days,) float, days
    group: tuple                    # (n,) hashable labels
    day_start: np.ndarray = field(repr=False, default=None)   # (n+1,)
    test_start: np.ndarray = field(repr=False, default=None)  # (total days+1,)
    item_start: np.ndarray = field(repr=False, default=None)  # (total tests+1,)

    def __post_init__(self):
        for name in ("days", "tests_per_day", "items_per_test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "response", np.asarray(self.response, dtype=np.uint8))
        object.__setattr__(self, "difficulty", np.asarray(self.difficulty, dtype=float))
        object.__setattr__(self, "lapse", np.asarray(self.lapse, dtype=float))
        object.__setattr__(self, "group", tuple(self.group))
        object.__setattr__(self, "day_start", _offsets(self.days))
        object.__setattr__(self, "test_start", _offsets(self.tests_per_day))
        object.__setattr__(self, "item_start", _offsets(self.items_per_test))
        self._check_structure()

    def _check_structure(self):
        if self.n_individuals < 1:
            raise DataError("dataset has no individuals")
        if len(self.group) != self.n_individuals:
            raise DataError("group labels do not match individual count")
        for name, counts in (("days", self.days), ("tests_per_day", self.tests_per_day),
                             ("items_per_test", self.items_per_test)):
            if np.any(counts < 1):
                raise DataError(f"all {name} counts must be >= 1")
        if len(self.tests_per_day) != self.day_start[-1]:
            raise DataError("tests_per_day length does not match total day count")
        if len(self.items_per_test) != self.test_start[-1]:
            raise DataError("items_per_test length does not match total test count")
        if len(self.response) != self.item_start[-1]:
            raise DataError("response length does not match total item count")
        if len(self.difficulty) != self.n_tests:
            raise DataError("difficulty length does not match total test count")
        if len(self.lapse) != self.n_days:
            raise DataError("lapse length does not match total day count")
        if not np.all(np.isin(self.response, (0, 1))):
            raise DataError("responses must be 0 or 1")
        if np.any(~np.isfinite(self.lapse)) or np.any(self.lapse <= 0.0):
            raise DataError("time lapses must be finite and > 0")
        if np.any(~np.isfinite(self.difficulty)):
            raise DataError("difficulties must be finite")

    @property
    def n_individuals(self) -> int:
        return len(self.days)

    @property
    def n_days(self) -> int:
        return int(self.day_start[-1])

    @property
    def n_tests(self) -> int:
        return int(self.test_start[-1])

    @property
    def n_items(self) -> int:
        return int(self.item_start[-1])

    @classmethod
    def from_nested(cls, responses, difficulties, lapses, groups) -> "Dataset":
        """Build from nested lists responses[i][t][s][l], difficulties[i][t][s],
        lapses[i][t], groups[i]."""
        n = len(responses)
        if not (len(difficulties) == len(lapses) == len(groups) == n):
            raise DataError("nested inputs disagree on individual count")
        days, s_counts, k_counts = [], [], []
        resp_flat, diff_flat, lapse_flat = [], [], []
        for i in range(n):
            if len(difficulties[i]) != len(responses[i]) or len(lapses[i]) != len(responses[i]):
                raise DataError(f"individual {i}: day counts disagree across inputs")
            days.append(len(responses[i]))
            for t, day in enumerate(responses[i]):
                if len(difficulties[i][t]) != len(day):
                    raise DataError(f"individual {i} day {t}: test counts disagree")
                s_counts.append(len(day))
                lapse_flat.append(lapses[i][t])
                for s, test in enumerate(day):
                    k_counts.append(len(test))
                    diff_flat.append(difficulties[i][t][s])
                    resp_flat.extend(test)
        return cls(days=days, tests_per_day=s_counts, items_per_test=k_counts,
                   response=resp_flat, difficulty=diff_flat, lapse=lapse_flat,
                   group=groups)

    def with_responses(self, response) -> "Dataset":
        """Same structure, new response vector (shares all index tables)."""
        response = np.asarray(response, dtype=np.uint8)
        if response.shape != self.response.shape:
            raise DataError("replacement responses have wrong length")
        return replace(self, response=response)

    def individual_prefix(self, i: int, n_days: int) -> "Dataset":
        """Single-individual dataset restricted to the first ``n_days`` days."""
        if not (1 <= n_days <= self.days[i]):
            raise DataError(f"prefix length {n_days} out of range for individual {i}")
        d0 = self.day_start[i]
        days = slice(d0, d0 + n_days)
        t0, t1 = self.test_start[d0], self.test_start[d0 + n_days]
        i0, i1 = self.item_start[t0], self.item_start[t1]
        return Dataset(days=[n_days], tests_per_day=self.tests_per_day[days],
                       items_per_test=self.items_per_test[t0:t1],
                       response=self.response[i0:i1], difficulty=self.difficulty[t0:t1],
                       lapse=self.lapse[days], group=(self.group[i],))


@dataclass(frozen=True)
class ModelConstants:
    """Known quantities: item-deviation sd, growth deceleration, lapse cap,
    and the initial-ability prior (mean, variance in logits) per group."""

    sigma: float          # sd of within-test item difficulty deviations, logits
    rho: float            # growth deceleration rate, 1/logits
    delta_tmax: float     # growth truncation horizon, days
    group_prior: Mapping[object, tuple]

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ConfigError("sigma must be finite and > 0")
        if not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise ConfigError("rho must be finite and > 0")
        if not (self.delta_tmax > 0.0):
            raise ConfigError("delta_tmax must be > 0")
        for label, (mu, v) in self.group_prior.items():
            if not (v > 0.0 and math.isfinite(v) and math.isfinite(mu)):
                raise ConfigError(f"group {label!r}: prior variance must be finite and > 0")

    def prior_for(self, label) -> tuple:
        try:
            return self.group_prior[label]
        except KeyError:
            raise ConfigError(f"no initial-ability prior for group {label!r}") from None


@dataclass
class LatentState:
    """One Gibbs iteration's value of every unknown, flat per dataset layout.

    ``theta`` stacks each individual's ability path (day 0..T_i); the rest
    follow the dataset's day/test/item flattening.  Owned by exactly one
    chain and mutated in place by the sweep.
    """

    theta: np.ndarray                  # (sum_i (T_i+1),)
    growth: np.ndarray                 # (n,), >= 0
    drift_precision: float             # > 0
    day_effect: np.ndarray             # (total days,)
    day_effect_precision: np.ndarray   # (n,), > 0
    test_effect: np.ndarray            # (total tests,)
    test_effect_precision: np.ndarray  # (n,), > 0
    latent_utility: np.ndarray         # (total items,)
    ks_scale: np.ndarray               # (total items,), > 0

    def copy(self) -> "LatentState":
        return LatentState(self.theta.copy(), self.growth.copy(), self.drift_precision,
                           self.day_effect.copy(), self.day_effect_precision.copy(),
                           self.test_effect.copy(), self.test_effect_precision.copy(),
                           self.latent_utility.copy(), self.ks_scale.copy())


def theta_offsets(data: Dataset) -> np.ndarray:
    """Start index of each individual's ability path in the flat theta array."""
    return _offsets(data.days + 1)


def initial_state(data: Dataset) -> LatentState:
    """Starting point for the sweep: zero abilities/growth/effects, unit
    precisions and scales."""
    return LatentState(
        theta=np.zeros(int(np.sum(data.days + 1))),
        growth=np.zeros(data.n_individuals),
        drift_precision=1.0,
        day_effect=np.zeros(data.n_days),
        day_effect_precision=np.ones(data.n_individuals),
        test_effect=np.zeros(data.n_tests),
        test_effect_precision=np.ones(data.n_individuals),
        latent_utility=np.zeros(data.n_items),
        ks_scale=np.ones(data.n_items),
    )


VALID_MODES = ("retrospective", "online")


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 50_000
    burn_in: int = 30_000
    thin: int = 10
    seed: int = 0
    mode: str = "retrospective"
    fixed_drift_sd: float | None = None  # required (and only used) in online mode

    def __post_init__(self):
        if self.mode not in VALID_MODES:
            raise ConfigError(f"mode must be one of {VALID_MODES}, got {self.mode!r}")
        if not (0 <= self.burn_in < self.n_iterations):
            raise ConfigError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if (self.n_iterations - self.burn_in) % self.thin != 0:
            raise ConfigError("n_iterations - burn_in must be divisible by thin")
        if self.mode == "online":
            if self.fixed_drift_sd is None:
                raise ConfigError("online mode requires fixed_drift_sd")
            if not (self.fixed_drift_sd > 0.0 and math.isfinite(self.fixed_drift_sd)):
                raise ConfigError("fixed_drift_sd must be finite and > 0")

    @property
    def n_draws(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


# ---------------------------------------------------------------------------
# Posterior-propriety gate
# ---------------------------------------------------------------------------

CLAUSE_N = "n ≥ 2"
CLAUSE_DAYS = "T_i ≥ 2"
CLAUSE_MULTITEST_DAYS = "at least two days with S_{i,t} ≥ 2"
CLAUSE_MIXED = "one 0 and one 1 observation"
CLAUSE_TEST_SHAPE = "test-effect precision shape (Σ_t S_{i,t} − (T_i+1))/2 > 0"
CLAUSE_DAY_SHAPE = "day-effect precision shape (T_i − 1)/2 > 0"
CLAUSE_DRIFT_SHAPE = "drift precision shape (Σ_i T_i − 1)/2 > 0"


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    failures: tuple  # of (clause, detail) pairs

    def summary(self) -> str:
        if self.passed:
            return "pass"
        return "; ".join(f"{clause} [{detail}]" for clause, detail in self.failures)

    @property
    def clauses(self) -> tuple:
        return tuple(clause for clause, _ in self.failures)


def _mixed_test_count(data: Dataset, day: int) -> int:
    """Number of tests on a (global) day containing both a 0 and a 1."""
    count = 0
    for test in range(data.test_start[day], data.test_start[day + 1]):
        resp = data.response[data.item_start[test]:data.item_start[test + 1]]
        if resp.min() == 0 and resp.max() == 1:
            count += 1
    return count


def individual_propriety_failures(data: Dataset, i: int) -> list:
    """Per-individual pieces of the propriety conditions, as (clause, detail)."""
    failures = []
    t_i = int(data.days[i])
    if t_i < 2:
        failures.append((CLAUSE_DAYS, f"individual {i}: T_i = {t_i}"))
    day_lo, day_hi = data.day_start[i], data.day_start[i + 1]
    multi = [d for d in range(day_lo, day_hi) if data.tests_per_day[d] >= 2]
    if len(multi) < 2:
        failures.append((CLAUSE_MULTITEST_DAYS,
                         f"individual {i}: {len(multi)} day(s) with ≥ 2 tests"))
    else:
        qualifying = sum(1 for d in multi if _mixed_test_count(data, d) >= 2)
        if qualifying < 2:
            failures.append((CLAUSE_MIXED,
                             f"individual {i}: {qualifying} day(s) with ≥ 2 tests "
                             "each having one 0 and one 1 observation"))
    s_total = int(np.sum(data.tests_per_day[day_lo:day_hi]))
    if s_total - (t_i + 1) <= 0:
        failures.append((CLAUSE_TEST_SHAPE,
                         f"individual {i}: (Σ S − (T+1))/2 = {(s_total - t_i - 1) / 2}"))
    if t_i - 1 <= 0:
        failures.append((CLAUSE_DAY_SHAPE, f"individual {i}: (T−1)/2 = {(t_i - 1) / 2}"))
    return failures


def validate_dataset(data: Dataset) -> ValidationReport:
    """Check the posterior-propriety conditions and the gamma-shape
    positivity the full conditionals need.  Pure; returns a report rather
    than raising."""
    failures = []
    if data.n_individuals < 2:
        failures.append((CLAUSE_N, f"n = {data.n_individuals}"))
    for i in range(data.n_individuals):
        failures.extend(individual_propriety_failures(data, i))
    if int(np.sum(data.days)) - 1 <= 0:
        failures.append((CLAUSE_DRIFT_SHAPE, f"Σ T_i = {int(np.sum(data.days))}"))
    return ValidationReport(passed=not failures, failures=tuple(failures))


# ---------------------------------------------------------------------------
# CSV interchange (1-based indices in files)
# ---------------------------------------------------------------------------

RESPONSES_FILE = "responses.csv"
LAPSES_FILE = "lapses.csv"
GROUPS_FILE = "groups.csv"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset_csv(data: Dataset, out_dir) -> list:
    """Write the responses/lapses/groups trio; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rp, lp, gp = out_dir / RESPONSES_FILE, out_dir / LAPSES_FILE, out_dir / GROUPS_FILE
    with rp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["individual", "day", "test", "item", "response", "difficulty"])
        for i in range(data.n_individuals):
            for t, day in enumerate(range(data.day_start[i], data.day_start[i + 1])):
                for s, test in enumerate(range(data.test_start[day], data.test_start[day + 1])):
                    diff = _fmt(data.difficulty[test])
                    for l, item in enumerate(range(data.item_start[test], data.item_start[test + 1])):
                        w.writerow([i + 1, t + 1, s + 1, l + 1, int(data.response[item]), diff])
    with lp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["individual", "day", "lapse_days"])
        for i in range(data.n_individuals):
            for t, day in enumerate(range(data.day_start[i], data.day_start[i + 1])):
                w.writerow([i + 1, t + 1, _fmt(data.lapse[day])])
    with gp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["individual", "group"])
        for i, g in enumerate(data.group):
            w.writerow([i + 1, g])
    return [rp, lp, gp]


def _read_rows(path: Path, expected_header: Sequence[str]) -> list:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(expected_header):
            raise DataError(f"{path}: expected header {','.join(expected_header)}")
        return [row for row in reader if row]


def read_dataset_csv(in_dir) -> Dataset:
    """Read the responses/lapses/groups trio written by ``write_dataset_csv``.

    Row order is free; (individual, day, test, item) keys must be dense and
    1-based, and all items of a test must agree on its difficulty.
    """
    in_dir = Path(in_dir)
    rows = _read_rows(in_dir / RESPONSES_FILE,
                      ["individual", "day", "test", "item", "response", "difficulty"])
    items: dict = {}
    for row in rows:
        i, t, s, l = (int(row[0]) - 1, int(row[1]) - 1, int(row[2]) - 1, int(row[3]) - 1)
        resp = int(row[4])
        key = (i, t, s, l)
        if key in items:
            raise DataError(f"duplicate response row for {tuple(k + 1 for k in key)}")
        items[key] = (resp, float(row[5]))

    lapse_rows = _read_rows(in_dir / LAPSES_FILE, ["individual", "day", "lapse_days"])
    lapses = {(int(r[0]) - 1, int(r[1]) - 1): float(r[2]) for r in lapse_rows}
    group_rows = _read_rows(in_dir / GROUPS_FILE, ["individual", "group"])
    groups = {int(r[0]) - 1: r[1] for r in group_rows}

    n = max(k[0] for k in items) + 1
    nested_resp, nested_diff, nested_lapse, group_list = [], [], [], []
    for i in range(n):
        if i not in groups:
            raise DataError(f"missing group for individual {i + 1}")
        group_list.append(groups[i])
        t_max = max((k[1] for k in items if k[0] == i), default=-1) + 1
        days_r, days_d, days_l = [], [], []
        for t in range(t_max):
            if (i, t) not in lapses:
                raise DataError(f"missing lapse for individual {i + 1} day {t + 1}")
            days_l.append(lapses[(i, t)])
            s_max = max((k[2] for k in items if k[:2] == (i, t)), default=-1) + 1
            tests_r, tests_d = [], []
            for s in range(s_max):
                keys = sorted(k for k in items if k[:3] == (i, t, s))
                if [k[3] for k in keys] != list(range(len(keys))):
                    raise DataError(f"items not dense for individual {i + 1} day {t + 1} "
                                    f"test {s + 1}")
                diffs = {items[k][1] for k in keys}
                if len(diffs) != 1:
                    raise DataError(f"inconsistent difficulty for individual {i + 1} "
                                    f"day {t + 1} test {s + 1}")
                tests_r.append([items[k][0] for k in keys])
                tests_d.append(diffs.pop())
            days_r.append(tests_r)
            days_d.append(tests_d)
        nested_resp.append(days_r)
        nested_diff.append(days_d)
        nested_lapse.append(days_l)
    return Dataset.from_nested(nested_resp, nested_diff, nested_lapse, group_list)
