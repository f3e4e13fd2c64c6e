"""Exact weighted least squares under the additive user-effect model.

The stacked response ``(y1, y2)`` has a block covariance: paired units share
``tau2`` between their two outcomes, unpaired outcomes are independent. The
inverse therefore acts unit by unit, as a 2x2 block on P0 and as a scalar on
P1/P2, with the constants

    a = (sigma2^2 + tau2) / D      b = 1 / (sigma1^2 + tau2)
    c = (sigma1^2 + tau2) / D      d = 1 / (sigma2^2 + tau2)
    e = -tau2 / D                  D = tau2 (sigma1^2 + sigma2^2) + sigma1^2 sigma2^2

``gls_partial`` assembles the 4x4 normal equations from panel sums in O(n).
``brute_force_gls`` builds the dense matrices literally and is kept as an
independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import PairedDataset
from .errors import SingularNormalEquations, SizeGuardExceeded
from .varcomp import VarianceComponents

PARAMS = ("alpha1", "alpha2", "beta1", "beta2")

# Reciprocal condition number below which the normal equations count as singular.
_RCOND_MIN = 1e-12


@dataclass(frozen=True)
class GlsSolution:
    theta: np.ndarray
    covariance: np.ndarray
    constants: tuple[float, float, float, float, float]

    @property
    def beta(self) -> np.ndarray:
        return self.theta[2:]

    @property
    def beta_variance(self) -> np.ndarray:
        return np.diag(self.covariance)[2:]


def gls_constants(vc: VarianceComponents) -> tuple[float, float, float, float, float]:
    """The per-unit inverse-covariance constants ``(a, b, c, d, e)``."""
    t, s1, s2 = vc.as_tuple()
    if s1 <= 0 or s2 <= 0:
        raise ValueError("noise variances must be strictly positive")
    det = t * (s1 + s2) + s1 * s2
    return (s2 + t) / det, 1.0 / (s1 + t), (s1 + t) / det, 1.0 / (s2 + t), -t / det


def normal_equations(ds: PairedDataset, vc: VarianceComponents):
    """Return ``(X'V^-1 X, X'V^-1 y, constants)`` from panel sums."""
    a, b, c, d, e = consts = gls_constants(vc)
    s = ds.sums
    n0, n1, n2 = s.n0, s.n1, s.n2
    m00 = a * n0 + b * n1
    m11 = c * n0 + d * n2
    m = np.array(
        [
            [m00, e * n0, a * s.s_x1_p0 + b * s.s_x1_p1, e * s.s_x2_p0],
            [e * n0, m11, e * s.s_x1_p0, c * s.s_x2_p0 + d * s.s_x2_p2],
            [0.0, 0.0, m00, e * s.s_x1x2_p0],
            [0.0, 0.0, 0.0, m11],
        ]
    )
    m = np.triu(m) + np.triu(m, 1).T
    rhs = np.array(
        [
            a * s.s_y1_p0 + b * s.s_y1_p1 + e * s.s_y2_p0,
            e * s.s_y1_p0 + c * s.s_y2_p0 + d * s.s_y2_p2,
            a * s.s_x1y1_p0 + b * s.s_x1y1_p1 + e * s.s_x1y2_p0,
            e * s.s_x2y1_p0 + c * s.s_x2y2_p0 + d * s.s_x2y2_p2,
        ]
    )
    return m, rhs, consts


def _spd_solve(m: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Jacobi scaling first so the pivot check is scale free.
    diag = np.diag(m)
    if np.any(diag <= 0):
        raise SingularNormalEquations("normal equations have a zero diagonal")
    scale = 1.0 / np.sqrt(diag)
    ms = m * np.outer(scale, scale)
    try:
        factor = linalg.cho_factor(ms, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularNormalEquations("design is confounded") from exc
    piv = np.diag(factor[0]) ** 2
    if piv.min() < _RCOND_MIN * piv.max():
        raise SingularNormalEquations("design is confounded")
    theta = scale * linalg.cho_solve(factor, scale * rhs)
    cov = np.outer(scale, scale) * linalg.cho_solve(factor, np.eye(4))
    return theta, (cov + cov.T) / 2


def gls_partial(ds: PairedDataset, vc: VarianceComponents) -> GlsSolution:
    """Weighted least squares for partially paired data in O(n).

    Raises
    ------
    SingularNormalEquations
        If a design column is constant on its support (or the two
        experiments' columns are confounded).
    """
    m, rhs, consts = normal_equations(ds, vc)
    theta, cov = _spd_solve(m, rhs)
    return GlsSolution(theta=theta, covariance=cov, constants=consts)


def gls_asymptotic_variance(vc: VarianceComponents, r0: float, r1: float,
                            r2: float) -> tuple[float, float]:
    """Limits of ``n * Var(beta_k)`` when panel fractions converge to ``r0, r1, r2``."""
    if not (0 < r0 <= 1 and 0 <= r1 < 1 and 0 <= r2 < 1):
        raise ValueError("need r0 in (0, 1], r1 and r2 in [0, 1)")
    if r0 + r1 > 1 + 1e-12 or r0 + r2 > 1 + 1e-12:
        raise ValueError("panel fractions exceed 1")
    a, b, c, d, _ = gls_constants(vc)
    return 1.0 / (a * r0 + b * r1), 1.0 / (c * r0 + d * r2)


def brute_force_gls(ds: PairedDataset, vc: VarianceComponents,
                    max_outcomes: int = 5000) -> GlsSolution:
    """Dense reference solution ``(X'V^-1X)^-1 X'V^-1 y``.

    Builds the stacked response, the full design matrix and the dense
    covariance, then solves with generic linear algebra. Only meant for
    small datasets.
    """
    idx1 = np.flatnonzero(ds.obs1)
    idx2 = np.flatnonzero(ds.obs2)
    m1, m2 = idx1.size, idx2.size
    total = m1 + m2
    if total > max_outcomes:
        raise SizeGuardExceeded(f"{total} outcomes exceed the dense limit {max_outcomes}")
    t, s1, s2 = vc.as_tuple()

    y = np.concatenate([ds.y1[idx1], ds.y2[idx2]])
    X = np.zeros((total, 4))
    X[:m1, 0] = 1.0
    X[:m1, 2] = ds.x1[idx1]
    X[m1:, 1] = 1.0
    X[m1:, 3] = ds.x2[idx2]

    V = np.diag(np.concatenate([np.full(m1, s1 + t), np.full(m2, s2 + t)]))
    # cross-experiment covariance of a unit's two outcomes
    pos2 = {int(u): m1 + j for j, u in enumerate(idx2)}
    for i, u in enumerate(idx1):
        j = pos2.get(int(u))
        if j is not None:
            V[i, j] = V[j, i] = t

    Vinv_X = np.linalg.solve(V, X)
    Vinv_y = np.linalg.solve(V, y)
    xtx = X.T @ Vinv_X
    if np.linalg.matrix_rank(xtx) < 4:
        raise SingularNormalEquations("design is confounded")
    cov = np.linalg.inv(xtx)
    theta = np.linalg.solve(xtx, X.T @ Vinv_y)
    return GlsSolution(theta=theta, covariance=(cov + cov.T) / 2,
                       constants=gls_constants(vc))
