"""Method-of-moments estimation of the variance components.

Under the additive user-effect model each outcome has variance
``tau2 + sigma_k^2`` within a design arm, while the within-unit difference
``z = y1 - y2`` cancels the user effect and has variance
``sigma1^2 + sigma2^2`` within a design cell. Pooling the eight cell
variances gives three moment equations, which are solved in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PairedDataset
from .errors import InsufficientCell

#: Lower bound applied to the noise variances so that GLS weights stay finite.
SIGMA_FLOOR = 1e-12

CELL_NAMES = ("1+", "1-", "2+", "2-", "++", "+-", "-+", "--")


@dataclass(frozen=True)
class GroupVariances:
    s1_plus: float
    s1_minus: float
    s2_plus: float
    s2_minus: float
    s_pp: float
    s_pm: float
    s_mp: float
    s_mm: float
    cell_counts: tuple[int, ...] = field(default=(2,) * 8)


@dataclass(frozen=True)
class VarianceComponents:
    """User-effect variance ``tau2`` and noise variances ``sigma1_2``, ``sigma2_2``.

    ``projected`` records, per component, whether the nonnegativity
    projection changed the raw moment solution; ``raw`` keeps that solution.
    """

    tau2: float
    sigma1_2: float
    sigma2_2: float
    projected: tuple[bool, bool, bool] = (False, False, False)
    raw: tuple[float, float, float] | None = None

    def __post_init__(self):
        if min(self.tau2, self.sigma1_2, self.sigma2_2) < 0:
            raise ValueError("variance components must be nonnegative")

    @classmethod
    def known(cls, tau2: float, sigma1_2: float, sigma2_2: float,
              floor: float = SIGMA_FLOOR) -> "VarianceComponents":
        """Wrap user-supplied values, flooring the noise variances."""
        tau2, sigma1_2, sigma2_2 = float(tau2), float(sigma1_2), float(sigma2_2)
        if min(tau2, sigma1_2, sigma2_2) < 0:
            raise ValueError("variance components must be nonnegative")
        return cls(
            tau2=tau2,
            sigma1_2=max(sigma1_2, floor),
            sigma2_2=max(sigma2_2, floor),
            projected=(False, sigma1_2 < floor, sigma2_2 < floor),
            raw=(tau2, sigma1_2, sigma2_2),
        )

    def as_tuple(self) -> tuple[float, float, float]:
        return self.tau2, self.sigma1_2, self.sigma2_2

    def to_dict(self) -> dict:
        return {
            "tau2": self.tau2,
            "sigma1_2": self.sigma1_2,
            "sigma2_2": self.sigma2_2,
            "projected": list(self.projected),
        }


def _cell_var(values: np.ndarray, name: str) -> tuple[float, int]:
    m = values.shape[0]
    if m < 2:
        raise InsufficientCell(name, m)
    return float(np.var(values, ddof=1)), m


def group_sample_variances(ds: PairedDataset) -> GroupVariances:
    """Unbiased sample variances of the eight design cells.

    Per-experiment arm cells use every available outcome of that
    experiment; the four difference cells use P0 only and are split by the
    sign pair ``(x1, x2)``.

    Raises
    ------
    InsufficientCell
        If any cell holds fewer than two observations.
    """
    out = []
    for k in (1, 2):
        y, x = ds.outcomes(k)
        out.append(_cell_var(y[x == 1], f"{k}+"))
        out.append(_cell_var(y[x == -1], f"{k}-"))
    p0 = ds.p0
    z = (ds.y1 - ds.y2)[p0]
    x1, x2 = ds.x1[p0], ds.x2[p0]
    for s1, s2, name in ((1, 1, "++"), (1, -1, "+-"), (-1, 1, "-+"), (-1, -1, "--")):
        out.append(_cell_var(z[(x1 == s1) & (x2 == s2)], name))
    values, counts = zip(*out)
    return GroupVariances(*values, cell_counts=tuple(counts))


def pooled_moments(gv: GroupVariances) -> tuple[float, float, float]:
    """Return ``(m1, m2, m3)``, the moment estimates of
    ``tau2 + sigma1^2``, ``tau2 + sigma2^2`` and ``sigma1^2 + sigma2^2``."""
    m1 = (gv.s1_plus + gv.s1_minus) / 2
    m2 = (gv.s2_plus + gv.s2_minus) / 2
    m3 = (gv.s_pp + gv.s_pm + gv.s_mp + gv.s_mm) / 4
    return m1, m2, m3


def solve_components(m1: float, m2: float, m3: float,
                     floor: float = SIGMA_FLOOR) -> VarianceComponents:
    """Invert the three moment equations and project onto the feasible set.

    ``tau2`` is clipped at 0 and each noise variance at ``floor``. A zero
    ``tau2`` makes the collaborative estimator collapse to the single one.
    """
    tau2 = 0.5 * (m1 + m2 - m3)
    s1 = 0.5 * (m1 - m2 + m3)
    s2 = 0.5 * (-m1 + m2 + m3)
    return VarianceComponents(
        tau2=max(tau2, 0.0),
        sigma1_2=max(s1, floor),
        sigma2_2=max(s2, floor),
        projected=(tau2 < 0.0, s1 < floor, s2 < floor),
        raw=(tau2, s1, s2),
    )


def estimate_components(ds: PairedDataset) -> VarianceComponents:
    """Cell variances, pooled moments and the closed-form solve in one call."""
    return solve_components(*pooled_moments(group_sample_variances(ds)))
