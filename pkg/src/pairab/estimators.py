"""Single, paired and collaborative treatment-effect estimators.

Every estimator is built from the panel sums of a
:class:`~pairab.core.PairedDataset` and runs in O(n). Outcomes are adjusted
for the experiment intercept before the design-weighted sums are formed, so
the estimators stay unbiased when random missingness leaves the arms
slightly unbalanced. Under exactly balanced, orthogonal designs they reduce
to the plain averages ``sum x * y / n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg, stats

from .core import BalanceDiagnostics, PairedDataset, balance_diagnostics
from .errors import NoData, NoPairedData, SingularCovariance
from .gls import gls_partial
from .varcomp import VarianceComponents, estimate_components

METHODS = ("single", "paired", "coe", "gls")
DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class EstimateReport:
    experiment: int
    method: str
    estimate: float
    variance: float
    std_error: float
    ci_lower: float
    ci_upper: float
    level: float
    components: VarianceComponents
    counts: tuple[int, int, int]
    diagnostics: Optional[BalanceDiagnostics] = None

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "method": self.method,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "level": self.level,
        }


@dataclass(frozen=True)
class EfficiencyReport:
    """Variance ratios ``Var(second) / Var(first)`` for one experiment.

    Values below 1 mean the second-named estimator is more efficient.
    """

    experiment: int
    re_single_paired: float
    re_single_coe: float
    re_paired_coe: float


class BlueResult(NamedTuple):
    estimate: float
    variance: float
    weights: np.ndarray


def _check_k(k: int) -> None:
    if k not in (1, 2):
        raise ValueError(f"experiment must be 1 or 2, got {k!r}")


def _sigma2(vc: VarianceComponents, k: int) -> float:
    return vc.sigma1_2 if k == 1 else vc.sigma2_2


def _arm_fit(n: int, sx: float, sy: float, sxy: float) -> tuple[float, float]:
    """Intercept and slope of ``y`` on ``(1, x)`` for a +/-1 design, from sums."""
    n_plus = (n + sx) / 2
    n_minus = (n - sx) / 2
    if n_plus < 0.5 or n_minus < 0.5:
        raise NoData("need at least one outcome in each arm")
    mean_plus = (sy + sxy) / 2 / n_plus
    mean_minus = (sy - sxy) / 2 / n_minus
    return (mean_plus + mean_minus) / 2, (mean_plus - mean_minus) / 2


def _experiment_sums(ds: PairedDataset, k: int):
    """``(n, sum x, sum y, sum x*y)`` over P0 and over the experiment's own panel."""
    s = ds.sums
    if k == 1:
        return ((s.n0, s.s_x1_p0, s.s_y1_p0, s.s_x1y1_p0),
                (s.n1, s.s_x1_p1, s.s_y1_p1, s.s_x1y1_p1))
    return ((s.n0, s.s_x2_p0, s.s_y2_p0, s.s_x2y2_p0),
            (s.n2, s.s_x2_p2, s.s_y2_p2, s.s_x2y2_p2))


def _intercept(ds: PairedDataset, k: int) -> float:
    both, lone = _experiment_sums(ds, k)
    try:
        return _arm_fit(*(a + b for a, b in zip(both, lone)))[0]
    except NoData:
        raise NoData(f"experiment {k} needs at least one outcome in each arm") from None


def single_estimate(ds: PairedDataset, k: int,
                    vc: Optional[VarianceComponents] = None):
    """Half the difference of arm means over every available outcome of
    experiment ``k``.

    This is the least-squares slope of ``y`` on ``(1, x)`` and equals
    ``sum x * y / n`` when the arms are balanced.

    Returns ``(estimate, variance)``; ``variance`` is ``None`` without ``vc``.
    """
    _check_k(k)
    both, lone = _experiment_sums(ds, k)
    n = both[0] + lone[0]
    try:
        est = _arm_fit(*(a + b for a, b in zip(both, lone)))[1]
    except NoData:
        raise NoData(f"experiment {k} needs at least one outcome in each arm") from None
    var = None
    if vc is not None:
        var = (vc.tau2 + _sigma2(vc, k)) / n
    return float(est), var


def _paired_fit(ds: PairedDataset) -> np.ndarray:
    """Least squares of ``z = y1 - y2`` on ``(1, x1, -x2)`` over P0."""
    s = ds.sums
    n0 = s.n0
    if n0 == 0:
        raise NoPairedData("no unit has both outcomes")
    for k, sx in ((1, s.s_x1_p0), (2, s.s_x2_p0)):
        if abs(sx) >= n0:
            raise NoPairedData(f"paired units cover only one arm of experiment {k}")
    gram = np.array([
        [n0, s.s_x1_p0, -s.s_x2_p0],
        [s.s_x1_p0, n0, -s.s_x1x2_p0],
        [-s.s_x2_p0, -s.s_x1x2_p0, n0],
    ], dtype=np.float64)
    rhs = np.array([
        s.s_y1_p0 - s.s_y2_p0,
        s.s_x1y1_p0 - s.s_x1y2_p0,
        s.s_x2y2_p0 - s.s_x2y1_p0,
    ])
    if np.linalg.cond(gram) > 1e12:
        raise NoPairedData("paired designs are collinear; the difference model is not identified")
    return np.linalg.solve(gram, rhs)


def paired_estimate(ds: PairedDataset, vc: Optional[VarianceComponents] = None):
    """Estimates of both effects from within-unit differences on P0.

    Least squares on the difference model with an intercept; equals
    ``(sum x1 z / n0, -sum x2 z / n0)`` for orthogonal balanced designs.

    Returns ``(beta1, beta2, variance)`` where the common variance is
    ``(sigma1^2 + sigma2^2) / n0`` (``None`` without ``vc``).
    """
    theta = _paired_fit(ds)
    n0 = ds.sums.n0
    var = None if vc is None else (vc.sigma1_2 + vc.sigma2_2) / n0
    return float(theta[1]), float(theta[2]), var


def blue_combine(T, S) -> BlueResult:
    """Minimum-variance unbiased linear combination of estimates ``T``
    with covariance ``S``; weights are ``S^-1 1 / (1' S^-1 1)``."""
    T = np.asarray(T, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    d = T.shape[0]
    if S.shape != (d, d):
        raise ValueError("S must be a d x d matrix matching T")
    if not np.allclose(S, S.T, rtol=1e-12, atol=0):
        raise SingularCovariance("covariance matrix is not symmetric")
    try:
        factor = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise SingularCovariance("covariance matrix is not positive definite") from exc
    u = linalg.cho_solve(factor, np.ones(d))
    total = u.sum()
    w = u / total
    return BlueResult(float(w @ T), float(1.0 / total), w)


def coe_weights(vc: VarianceComponents, k: int) -> tuple[float, float, float]:
    """Weights on the P0 difference sum, the P0 outcome sum and the
    single-panel outcome sum for experiment ``k``.

    Expressed over ``D = tau2 (s1 + s2) + s1 s2`` so that ``tau2 = 0`` is
    a regular point: the difference weight vanishes and the estimator
    becomes the single one.
    """
    t, s1, s2 = vc.as_tuple()
    det = t * (s1 + s2) + s1 * s2
    other = s2 if k == 1 else s1
    return t / det, other / det, 1.0 / (t + _sigma2(vc, k))


def collaborative_estimate(ds: PairedDataset, vc: VarianceComponents,
                           level: float = DEFAULT_LEVEL,
                           diagnostics: Optional[BalanceDiagnostics] = None):
    """Collaborative estimates of both effects.

    Combines, for each experiment, the paired statistic and the P0 single
    statistic (correlated through the shared noise) with the single
    statistic from the experiment's unpaired panel. Both single statistics
    use outcomes centred at the experiment's pooled intercept, so that at
    ``tau2 = 0`` the result is exactly :func:`single_estimate`. With no unpaired units
    this reduces to ``(tau2 * paired + sigma_other^2 * single) /
    (tau2 + sigma_other^2)``.

    Returns
    -------
    tuple of EstimateReport
        Reports for experiment 1 and experiment 2.
    """
    s = ds.sums
    if s.n0 == 0:
        raise NoPairedData("no unit has both outcomes")
    paired = _paired_fit(ds)
    reports = []
    for k in (1, 2):
        both, lone = _experiment_sums(ds, k)
        c = _intercept(ds, k)
        # centred sums x * (y - c) on P0 and on the unpaired panel
        own = both[3] - c * both[1]
        alone = lone[3] - c * lone[1]
        w_p, w_s, w_l = coe_weights(vc, k)
        den = (w_p + w_s) * s.n0 + w_l * lone[0]
        num = w_p * s.n0 * paired[k] + w_s * own + w_l * alone
        reports.append(_report(k, "coe", num / den, 1.0 / den, level, vc, ds, diagnostics))
    return tuple(reports)


def relative_efficiency(vc: VarianceComponents,
                        counts: tuple[int, int, int] = (1, 0, 0)):
    """Theoretical relative efficiencies for both experiments.

    ``counts`` is ``(n0, n1, n2)``; the default describes full pairing,
    where the ratios do not depend on ``n``.
    """
    t, s1, s2 = vc.as_tuple()
    if min(t, s1, s2) <= 0:
        raise ValueError("relative efficiency needs strictly positive components")
    n0, n1, n2 = counts
    if n0 <= 0:
        raise ValueError("relative efficiency needs paired units")
    out = []
    for k, nk in ((1, n1), (2, n2)):
        sk = _sigma2(vc, k)
        v_single = (t + sk) / (n0 + nk)
        v_paired = (s1 + s2) / n0
        w_p, w_s, w_l = coe_weights(vc, k)
        v_coe = 1.0 / ((w_p + w_s) * n0 + w_l * nk)
        out.append(EfficiencyReport(
            experiment=k,
            re_single_paired=v_paired / v_single,
            re_single_coe=v_coe / v_single,
            re_paired_coe=v_coe / v_paired,
        ))
    return tuple(out)


def confidence_interval(estimate: float, variance: float,
                        level: float = DEFAULT_LEVEL) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    half = float(stats.norm.ppf((1 + level) / 2)) * float(np.sqrt(variance))
    return estimate - half, estimate + half


def _report(k, method, est, var, level, vc, ds, diagnostics) -> EstimateReport:
    lo, hi = confidence_interval(est, var, level)
    return EstimateReport(
        experiment=k,
        method=method,
        estimate=float(est),
        variance=float(var),
        std_error=float(np.sqrt(var)),
        ci_lower=lo,
        ci_upper=hi,
        level=level,
        components=vc,
        counts=ds.counts,
        diagnostics=diagnostics,
    )


def analyze(ds: PairedDataset, method: str = "all", level: float = DEFAULT_LEVEL,
            components: Optional[VarianceComponents] = None) -> list[EstimateReport]:
    """Run the full procedure: variance components, then the requested estimators.

    Parameters
    ----------
    method : {"single", "paired", "coe", "gls", "all"}
    components : VarianceComponents, optional
        Known components; when omitted they are estimated by moments.

    Returns
    -------
    list of EstimateReport
        Ordered by method, then experiment.
    """
    if method == "all":
        methods = METHODS
    elif method in METHODS:
        methods = (method,)
    else:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS + ('all',)}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")

    vc = components if components is not None else estimate_components(ds)
    diag = balance_diagnostics(ds)
    reports: list[EstimateReport] = []
    for m in methods:
        if m == "single":
            for k in (1, 2):
                est, var = single_estimate(ds, k, vc)
                reports.append(_report(k, m, est, var, level, vc, ds, diag))
        elif m == "paired":
            b1, b2, var = paired_estimate(ds, vc)
            for k, est in ((1, b1), (2, b2)):
                reports.append(_report(k, m, est, var, level, vc, ds, diag))
        elif m == "coe":
            reports.extend(collaborative_estimate(ds, vc, level, diag))
        else:
            sol = gls_partial(ds, vc)
            for k in (1, 2):
                reports.append(_report(k, m, sol.beta[k - 1], sol.beta_variance[k - 1],
                                       level, vc, ds, diag))
    return reports
