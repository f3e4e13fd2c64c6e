"""Monte Carlo harness for comparing estimators on simulated paired A/B tests.

Each replicate draws a balanced orthogonal design, user effects under one of
four settings, potential outcomes

    y_ik(x) = intercept + x * beta_k + eps_ik + effect_ik(x),   x in {-1, +1}

optionally converts them to binary or count outcomes, realises them through
the design and removes a fixed number of outcomes per experiment. Estimators
of ``beta_1`` are scored by their MSE relative to the single-experiment
estimator.

User-effect settings:

``a``  iid ``N(0, tau^2)`` per unit, shared by both experiments
``b``  ``w_i' gamma``: ten latent covariates per unit, one shared ``gamma``
``c``  ``w_i' gamma_k``: a separate ``gamma_k`` per experiment
``d``  ``w_i' gamma_1`` in the +1 arm and ``w_i' gamma_2`` in the -1 arm

Every replicate owns an RNG stream keyed by ``(base_seed, rep_index)``, so
results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .core import PairedDataset
from .errors import ConfigError, IndivisibleN, UnknownSetting
from .estimators import (
    collaborative_estimate,
    paired_estimate,
    single_estimate,
)
from .gls import brute_force_gls, gls_partial
from .varcomp import VarianceComponents, estimate_components

SETTINGS = ("a", "b", "c", "d")
OUTCOMES = ("continuous", "binary", "count")
SIM_METHODS = ("single", "paired", "coe", "gls")
LATENT_DIM = 10

GRID_COLUMNS = ("setting", "tau", "n", "missing_rate", "outcome", "method",
                "mse_ratio", "reps")

# Default grid axes for the user-effect robustness study.
DEFAULT_TAUS = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
DEFAULT_MISSING_RATES = (0.1, 0.3)
DEFAULT_NS = (1000, 10000)


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 1000
    beta1: float = 1.0
    beta2: float = 1.0
    sigma1: float = 1.0
    sigma2: float = 1.0
    tau: float = 2.0
    setting: str = "a"
    missing_rate: float = 0.0
    outcome: str = "continuous"
    reps: int = 100
    base_seed: int = 0
    methods: tuple[str, ...] = SIM_METHODS
    intercept: float = 1.0
    # fixed per-unit effects that replace the generated ones (length n)
    user_effects: Optional[tuple[float, ...]] = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n <= 0:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if self.n % 4:
            raise IndivisibleN(f"n={self.n} must be divisible by 4 for an orthogonal design")
        if not isinstance(self.reps, (int, np.integer)) or self.reps < 1:
            raise ConfigError(f"reps must be a positive integer, got {self.reps!r}")
        if self.setting not in SETTINGS:
            raise UnknownSetting(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.outcome not in OUTCOMES:
            raise ConfigError(f"outcome must be one of {OUTCOMES}, got {self.outcome!r}")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if min(self.tau, self.sigma1, self.sigma2) < 0:
            raise ConfigError("tau and sigmas must be nonnegative")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")
        methods = tuple(self.methods)
        if not methods or set(methods) - set(SIM_METHODS):
            raise ConfigError(f"methods must be a nonempty subset of {SIM_METHODS}")
        object.__setattr__(self, "methods", methods)
        if self.user_effects is not None:
            ue = tuple(float(v) for v in self.user_effects)
            if len(ue) != self.n:
                raise ConfigError("user_effects must have one value per unit")
            object.__setattr__(self, "user_effects", ue)


@dataclass(frozen=True, eq=False)
class PotentialOutcomes:
    """Outcomes under both arms of both experiments.

    ``y[i, k, j]`` is unit ``i``'s outcome in experiment ``k + 1`` under arm
    ``+1`` (``j = 0``) or ``-1`` (``j = 1``). ``designs[i, k]`` selects the
    realised arm and ``effects`` holds the user-effect part of ``y``.
    """

    y: np.ndarray
    designs: np.ndarray
    effects: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def realized(self) -> np.ndarray:
        arm = (self.designs == -1).astype(np.intp)
        return np.take_along_axis(self.y, arm[:, :, None], axis=2)[:, :, 0]

    def with_outcomes(self, y: np.ndarray) -> "PotentialOutcomes":
        return PotentialOutcomes(y=y, designs=self.designs, effects=self.effects)


class GridRow(NamedTuple):
    setting: str
    tau: float
    n: int
    missing_rate: float
    outcome: str
    method: str
    mse_ratio: float
    reps: int
    mse: float


@dataclass(frozen=True)
class GridResult:
    rows: tuple[GridRow, ...]

    def ratio(self, method: str, **where) -> float:
        """Look up one MSE ratio; ``where`` filters on row fields."""
        hits = [r for r in self.rows
                if r.method == method and all(getattr(r, k) == v for k, v in where.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match method={method!r}, {where}")
        return hits[0].mse_ratio

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for r in self.rows:
            w.writerow([r.setting, format_float(r.tau), r.n, format_float(r.missing_rate),
                        r.outcome, r.method, format_float(r.mse_ratio), r.reps])
        return buf.getvalue()


def format_float(v: float) -> str:
    return format(float(v), ".17g")


# ------------------------------------------------------------------ RNG


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def replicate_streams(base_seed: int, rep_index: int, count: int = 4):
    """Independent generators for one replicate, keyed by ``(base_seed, rep_index)``."""
    root = np.random.SeedSequence(entropy=base_seed, spawn_key=(rep_index,))
    return [np.random.default_rng(s) for s in root.spawn(count)]


# ----------------------------------------------------------- generators


def generate_designs(n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Random partition of ``n`` units into four equal groups, one per sign pair."""
    if n <= 0 or n % 4:
        raise IndivisibleN(f"n={n} must be a positive multiple of 4")
    rng = _as_rng(seed)
    pairs = np.array([(1, 1), (1, -1), (-1, 1), (-1, -1)], dtype=np.int8)
    cells = rng.permutation(np.repeat(np.arange(4), n // 4))
    x = pairs[cells]
    return x[:, 0].copy(), x[:, 1].copy()


def generate_user_effects(n: int, setting: str, tau: float, seed=None) -> np.ndarray:
    """User effects of shape ``(n, 2, 2)`` indexed ``[unit, experiment, arm]``.

    Arm index 0 is the ``+1`` level. Settings ``a`` and ``b`` give one
    effect per unit, ``c`` one per unit and experiment, ``d`` one per unit
    and arm.
    """
    if setting not in SETTINGS:
        raise UnknownSetting(f"setting must be one of {SETTINGS}, got {setting!r}")
    rng = _as_rng(seed)
    if setting == "a":
        u = tau * rng.standard_normal(n)
        return np.broadcast_to(u[:, None, None], (n, 2, 2)).copy()
    w = rng.standard_normal((n, LATENT_DIM))
    if setting == "b":
        u = w @ (tau * rng.standard_normal(LATENT_DIM))
        return np.broadcast_to(u[:, None, None], (n, 2, 2)).copy()
    g = tau * rng.standard_normal((LATENT_DIM, 2))
    wg = w @ g
    if setting == "c":
        return np.broadcast_to(wg[:, :, None], (n, 2, 2)).copy()
    # d: gamma_1 drives the +1 arm and gamma_2 the -1 arm, in both experiments
    return np.broadcast_to(wg[:, None, :], (n, 2, 2)).copy()


def transform_binary(po: PotentialOutcomes) -> PotentialOutcomes:
    """Threshold every outcome at the median of experiment 1's ``+1`` arm."""
    threshold = float(np.median(po.y[:, 0, 0]))
    return po.with_outcomes((po.y > threshold).astype(np.float64))


def transform_count(po: PotentialOutcomes) -> PotentialOutcomes:
    """``floor(sqrt(y - min y))`` with the minimum over all units, experiments and arms."""
    shifted = po.y - po.y.min()
    return po.with_outcomes(np.floor(np.sqrt(shifted)))


def true_ate(po: PotentialOutcomes, k: int, normalization: str = "2n") -> float:
    """Average treatment effect of experiment ``k`` on the potential outcomes.

    The default ``"2n"`` normalisation divides the summed arm contrasts by
    ``2n``, which puts the ATE on the same scale as ``beta_k`` (the
    contrast between ``x = +1`` and ``x = -1`` is ``2 * beta_k``).
    ``"n"`` gives the plain mean difference.
    """
    if k not in (1, 2):
        raise ValueError(f"experiment must be 1 or 2, got {k!r}")
    total = float(np.sum(po.y[:, k - 1, 0] - po.y[:, k - 1, 1]))
    if normalization == "2n":
        return total / (2 * po.n)
    if normalization == "n":
        return total / po.n
    raise ValueError("normalization must be '2n' or 'n'")


def apply_missingness(ds: PairedDataset, rate: float, seed=None) -> PairedDataset:
    """Drop ``floor(n * rate)`` observed outcomes per experiment, independently."""
    if not 0 <= rate < 1:
        raise ConfigError("missing rate must lie in [0, 1)")
    n = len(ds)
    m = math.floor(n * rate + 1e-9)
    if m == 0:
        return ds
    rng = _as_rng(seed)
    masks = []
    for obs in (ds.obs1, ds.obs2):
        avail = np.flatnonzero(obs)
        drop = rng.choice(avail, size=min(m, avail.size), replace=False)
        keep = np.ones(n, bool)
        keep[drop] = False
        masks.append(keep)
    return ds.with_missing(*masks)


def generate_outcomes(config: SimulationConfig, rep_index: int):
    """Simulate one replicate.

    Returns
    -------
    (PotentialOutcomes, PairedDataset)
        Potential outcomes after any binary/count transform, and the
        realised dataset after missingness.
    """
    n = config.n
    rng_design, rng_effect, rng_noise, rng_missing = replicate_streams(
        config.base_seed, rep_index)
    x1, x2 = generate_designs(n, rng_design)
    designs = np.column_stack([x1, x2])
    if config.user_effects is not None:
        u = np.asarray(config.user_effects)
        effects = np.broadcast_to(u[:, None, None], (n, 2, 2)).copy()
    else:
        effects = generate_user_effects(n, config.setting, config.tau, rng_effect)
    # one noise draw per (unit, experiment), shared by both arms
    eps = rng_noise.standard_normal((n, 2)) * np.array([config.sigma1, config.sigma2])
    beta = np.array([config.beta1, config.beta2])
    arm = np.array([1.0, -1.0])
    y = (config.intercept + arm[None, None, :] * beta[None, :, None]
         + eps[:, :, None] + effects)
    po = PotentialOutcomes(y=y, designs=designs, effects=effects)
    if config.outcome == "binary":
        po = transform_binary(po)
    elif config.outcome == "count":
        po = transform_count(po)
    yr = po.realized()
    ds = PairedDataset.from_arrays(yr[:, 0], x1, yr[:, 1], x2)
    ds = apply_missingness(ds, config.missing_rate, rng_missing)
    return po, ds


# -------------------------------------------------------------- running


def estimate_beta1(ds: PairedDataset, methods: Sequence[str],
                   components: Optional[VarianceComponents] = None) -> dict[str, float]:
    """Estimates of ``beta_1`` for each method, with plug-in components by default."""
    vc = components if components is not None else estimate_components(ds)
    out = {}
    for m in methods:
        if m == "single":
            out[m] = single_estimate(ds, 1)[0]
        elif m == "paired":
            out[m] = paired_estimate(ds)[0]
        elif m == "coe":
            out[m] = collaborative_estimate(ds, vc)[0].estimate
        elif m == "gls":
            out[m] = float(gls_partial(ds, vc).beta[0])
        else:
            raise ConfigError(f"unknown method {m!r}")
    return out


def _score_methods(config: SimulationConfig) -> tuple[str, ...]:
    return ("single",) + tuple(m for m in config.methods if m != "single")


def run_replicate(config: SimulationConfig, rep_index: int) -> tuple[dict[str, float], float]:
    """``(estimates of beta_1 per method, estimand)`` for one replicate.

    The estimand is ``beta1`` for continuous outcomes and the replicate's
    potential-outcome ATE otherwise.
    """
    po, ds = generate_outcomes(config, rep_index)
    est = estimate_beta1(ds, _score_methods(config))
    truth = config.beta1 if config.outcome == "continuous" else true_ate(po, 1)
    return est, truth


def simulate_cell(config: SimulationConfig, threads: int = 1):
    """Estimates (``reps x methods``) and estimands (``reps``) for one cell."""
    methods = _score_methods(config)
    reps = range(config.reps)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: run_replicate(config, r), reps))
    else:
        results = [run_replicate(config, r) for r in reps]
    est = np.array([[res[0][m] for m in methods] for res in results])
    truth = np.array([res[1] for res in results])
    return methods, est, truth


def mse_ratios(config: SimulationConfig, threads: int = 1) -> dict[str, tuple[float, float]]:
    """``{method: (mse, mse / mse_single)}`` for one cell."""
    methods, est, truth = simulate_cell(config, threads)
    mse = np.mean((est - truth[:, None]) ** 2, axis=0)
    base = mse[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = mse / base
    return {m: (float(mse[i]), float(ratio[i])) for i, m in enumerate(methods)}


def run_grid(configs: Iterable[SimulationConfig] | SimulationConfig,
             threads: int = 1) -> GridResult:
    """MSE ratios for every configuration and requested method.

    Cells run in the given order and each method row follows the order of
    ``config.methods``; output is identical for any ``threads``.
    """
    if isinstance(configs, SimulationConfig):
        configs = [configs]
    rows = []
    for cfg in configs:
        res = mse_ratios(cfg, threads)
        for m in cfg.methods:
            mse, ratio = res[m]
            rows.append(GridRow(cfg.setting, float(cfg.tau), cfg.n, float(cfg.missing_rate),
                                cfg.outcome, m, ratio, cfg.reps, mse))
    return GridResult(tuple(rows))


def expand_grid(base: SimulationConfig = SimulationConfig(),
                settings: Sequence[str] = SETTINGS,
                taus: Sequence[float] = DEFAULT_TAUS,
                missing_rates: Sequence[float] = DEFAULT_MISSING_RATES,
                ns: Sequence[int] = DEFAULT_NS,
                outcomes: Sequence[str] = ("continuous",)) -> list[SimulationConfig]:
    """Cartesian product of grid axes applied to ``base``.

    The defaults reproduce the full robustness grid (4 settings, 6 values of
    tau, 2 missing rates, 2 sample sizes).
    """
    return [
        replace(base, setting=s, tau=float(t), missing_rate=float(r), n=int(n), outcome=o)
        for o, s, n, r, t in itertools.product(outcomes, settings, ns, missing_rates, taus)
    ]


def timing_comparison(ns: Sequence[int] = (100, 400, 1000), reps: int = 5,
                      seed: int = 0) -> list[tuple[int, str, float]]:
    """Mean wall-clock seconds of the O(n) estimators versus the dense GLS.

    Returns rows ``(n, method, seconds)`` for ``coe`` (components plus
    estimate), ``gls`` (closed form) and ``gls_dense``.
    """
    rows = []
    for n in ns:
        cfg = SimulationConfig(n=n, reps=reps, base_seed=seed)
        timings = {"coe": 0.0, "gls": 0.0, "gls_dense": 0.0}
        for r in range(reps):
            _, ds = generate_outcomes(cfg, r)
            t0 = time.perf_counter()
            vc = estimate_components(ds)
            collaborative_estimate(ds, vc)
            t1 = time.perf_counter()
            gls_partial(ds, vc)
            t2 = time.perf_counter()
            brute_force_gls(ds, vc, max_outcomes=4 * n)
            t3 = time.perf_counter()
            timings["coe"] += t1 - t0
            timings["gls"] += t2 - t1
            timings["gls_dense"] += t3 - t2
        rows.extend((n, m, t / reps) for m, t in timings.items())
    return rows
