"""Data model for partially paired experiments.

Every unit carries two design levels (one per experiment) and up to two
outcomes. Units are partitioned by outcome availability into four panels:

=====  ========================
P0     both outcomes observed
P1     only experiment 1
P2     only experiment 2
P3     neither (kept, never used)
=====  ========================

:class:`PairedDataset` stores the data column-wise so that every estimator
in the package runs in a single vectorised pass over the units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DuplicateUnit, EmptyInput, InvalidDesign, InvalidOutcome

#: Normalised balance sums above this magnitude are flagged in reports.
BALANCE_THRESHOLD = 0.05


@dataclass(frozen=True)
class UnitRecord:
    """One experimental unit. ``None`` marks a missing outcome."""

    unit_id: str
    y1: Optional[float]
    x1: int
    y2: Optional[float]
    x2: int


class PanelSums(NamedTuple):
    """Sufficient statistics shared by every estimator.

    Names follow ``s_<design><outcome>_<panel>``; for instance ``s_x1y2_p0``
    is the sum of ``x1 * y2`` over P0.
    """

    n0: int
    n1: int
    n2: int
    s_x1_p0: float
    s_x2_p0: float
    s_x1x2_p0: float
    s_x1_p1: float
    s_x2_p2: float
    s_y1_p0: float
    s_y2_p0: float
    s_y1_p1: float
    s_y2_p2: float
    s_x1y1_p0: float
    s_x1y2_p0: float
    s_x2y1_p0: float
    s_x2y2_p0: float
    s_x1y1_p1: float
    s_x2y2_p2: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_design(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise InvalidDesign(f"{name} must be one-dimensional")
    if x.size and not np.all((x == 1) | (x == -1)):
        bad = x[(x != 1) & (x != -1)][0]
        raise InvalidDesign(f"{name} must be -1 or +1, got {bad!r}")
    return x.astype(np.int8)


@dataclass(frozen=True, eq=False)
class PairedDataset:
    """Validated, immutable column store of :class:`UnitRecord` values.

    Use :func:`validate_dataset` for record lists or
    :meth:`PairedDataset.from_arrays` for the vectorised path. Outcomes at
    unobserved positions are stored as 0.0 and are never read; the ``obs1``
    and ``obs2`` masks are the only source of truth for availability.
    """

    unit_ids: np.ndarray
    y1: np.ndarray
    x1: np.ndarray
    obs1: np.ndarray
    y2: np.ndarray
    x2: np.ndarray
    obs2: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        y1,
        x1,
        y2,
        x2,
        obs1=None,
        obs2=None,
        unit_ids: Optional[Sequence] = None,
    ) -> "PairedDataset":
        """Build a dataset from equal-length columns.

        ``obs1``/``obs2`` default to all-observed. When ``unit_ids`` is
        omitted, units are labelled by position.
        """
        y1 = np.asarray(y1, dtype=np.float64)
        y2 = np.asarray(y2, dtype=np.float64)
        n = y1.shape[0]
        if n == 0:
            raise EmptyInput("dataset has no records")
        x1 = _check_design(x1, "x1")
        x2 = _check_design(x2, "x2")
        obs1 = np.ones(n, bool) if obs1 is None else np.asarray(obs1, dtype=bool)
        obs2 = np.ones(n, bool) if obs2 is None else np.asarray(obs2, dtype=bool)
        if not all(a.shape == (n,) for a in (y2, x1, x2, obs1, obs2)):
            raise ValueError("all columns must share one length")
        for y, obs, name in ((y1, obs1, "y1"), (y2, obs2, "y2")):
            if not np.all(np.isfinite(y[obs])):
                raise InvalidOutcome(f"observed {name} values must be finite")
        if unit_ids is None:
            ids = np.arange(n).astype(str).astype(object)
        else:
            ids = np.asarray(unit_ids, dtype=object)
            if ids.shape != (n,):
                raise ValueError("unit_ids must match the column length")
            uniq, counts = np.unique(ids.astype(str), return_counts=True)
            if uniq.size != n:
                raise DuplicateUnit(uniq[counts > 1][0])
        return cls(
            unit_ids=_frozen(ids),
            y1=_frozen(np.where(obs1, y1, 0.0)),
            x1=_frozen(x1),
            obs1=_frozen(obs1.copy()),
            y2=_frozen(np.where(obs2, y2, 0.0)),
            x2=_frozen(x2),
            obs2=_frozen(obs2.copy()),
        )

    def __len__(self) -> int:
        return self.y1.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairedDataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("unit_ids", "y1", "x1", "obs1", "y2", "x2", "obs2")
        )

    __hash__ = None

    # ----------------------------------------------------------- panels

    @cached_property
    def p0(self) -> np.ndarray:
        return self.obs1 & self.obs2

    @cached_property
    def p1(self) -> np.ndarray:
        return self.obs1 & ~self.obs2

    @cached_property
    def p2(self) -> np.ndarray:
        return ~self.obs1 & self.obs2

    @cached_property
    def p3(self) -> np.ndarray:
        return ~self.obs1 & ~self.obs2

    @property
    def panel_index(self) -> dict[str, np.ndarray]:
        """Record indices of each panel, keyed ``"P0"`` to ``"P3"``."""
        return {
            "P0": np.flatnonzero(self.p0),
            "P1": np.flatnonzero(self.p1),
            "P2": np.flatnonzero(self.p2),
            "P3": np.flatnonzero(self.p3),
        }

    @property
    def counts(self) -> tuple[int, int, int]:
        """``(n0, n1, n2)``."""
        s = self.sums
        return s.n0, s.n1, s.n2

    @property
    def n_ignored(self) -> int:
        return int(self.p3.sum())

    @cached_property
    def sums(self) -> PanelSums:
        p0, p1, p2 = self.p0, self.p1, self.p2
        x1 = self.x1.astype(np.float64)
        x2 = self.x2.astype(np.float64)
        # y is zero wherever it is unobserved, so masking x is enough
        x1p0, x2p0 = x1 * p0, x2 * p0
        y1p0, y2p0 = self.y1 * p0, self.y2 * p0
        return PanelSums(
            n0=int(p0.sum()),
            n1=int(p1.sum()),
            n2=int(p2.sum()),
            s_x1_p0=float(x1p0.sum()),
            s_x2_p0=float(x2p0.sum()),
            s_x1x2_p0=float(x1p0 @ x2),
            s_x1_p1=float(x1 @ p1),
            s_x2_p2=float(x2 @ p2),
            s_y1_p0=float(y1p0.sum()),
            s_y2_p0=float(y2p0.sum()),
            s_y1_p1=float(self.y1 @ p1),
            s_y2_p2=float(self.y2 @ p2),
            s_x1y1_p0=float(x1p0 @ self.y1),
            s_x1y2_p0=float(x1p0 @ self.y2),
            s_x2y1_p0=float(x2p0 @ self.y1),
            s_x2y2_p0=float(x2p0 @ self.y2),
            s_x1y1_p1=float((x1 * p1) @ self.y1),
            s_x2y2_p2=float((x2 * p2) @ self.y2),
        )

    # ---------------------------------------------------------- records

    @property
    def records(self) -> list[UnitRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterable[UnitRecord]:
        for i in range(len(self)):
            yield UnitRecord(
                unit_id=str(self.unit_ids[i]),
                y1=float(self.y1[i]) if self.obs1[i] else None,
                x1=int(self.x1[i]),
                y2=float(self.y2[i]) if self.obs2[i] else None,
                x2=int(self.x2[i]),
            )

    def outcomes(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Observed ``(y, x)`` for experiment ``k`` (1 or 2)."""
        if k == 1:
            return self.y1[self.obs1], self.x1[self.obs1]
        if k == 2:
            return self.y2[self.obs2], self.x2[self.obs2]
        raise ValueError(f"experiment must be 1 or 2, got {k!r}")

    def with_missing(self, obs1, obs2) -> "PairedDataset":
        """Copy with availability masks intersected with ``obs1``/``obs2``."""
        o1 = self.obs1 & np.asarray(obs1, bool)
        o2 = self.obs2 & np.asarray(obs2, bool)
        return PairedDataset(
            unit_ids=self.unit_ids,
            y1=_frozen(np.where(o1, self.y1, 0.0)),
            x1=self.x1,
            obs1=_frozen(o1),
            y2=_frozen(np.where(o2, self.y2, 0.0)),
            x2=self.x2,
            obs2=_frozen(o2),
        )


def _design_value(v, unit_id, name) -> int:
    if isinstance(v, bool) or v not in (1, -1):
        raise InvalidDesign(f"unit {unit_id!r}: {name} must be -1 or +1, got {v!r}")
    return int(v)


def validate_dataset(raw) -> PairedDataset:
    """Validate unit records and partition them into panels.

    Parameters
    ----------
    raw : iterable of UnitRecord, or PairedDataset
        A dataset is returned unchanged, so validation is idempotent.

    Raises
    ------
    EmptyInput, DuplicateUnit, InvalidDesign, InvalidOutcome
    """
    if isinstance(raw, PairedDataset):
        return raw
    raw = list(raw)
    if not raw:
        raise EmptyInput("dataset has no records")
    n = len(raw)
    ids = np.empty(n, dtype=object)
    y1 = np.zeros(n)
    y2 = np.zeros(n)
    obs1 = np.zeros(n, bool)
    obs2 = np.zeros(n, bool)
    x1 = np.empty(n, np.int8)
    x2 = np.empty(n, np.int8)
    seen = set()
    for i, r in enumerate(raw):
        uid = str(r.unit_id)
        if uid in seen:
            raise DuplicateUnit(uid)
        seen.add(uid)
        ids[i] = uid
        x1[i] = _design_value(r.x1, uid, "x1")
        x2[i] = _design_value(r.x2, uid, "x2")
        for y, obs, val, name in ((y1, obs1, r.y1, "y1"), (y2, obs2, r.y2, "y2")):
            if val is None:
                continue
            val = float(val)
            if not math.isfinite(val):
                raise InvalidOutcome(f"unit {uid!r}: {name} must be finite or missing")
            y[i] = val
            obs[i] = True
    return PairedDataset.from_arrays(y1, x1, y2, x2, obs1, obs2, unit_ids=ids)


@dataclass(frozen=True)
class BalanceDiagnostics:
    """Design imbalance within panels, each sum divided by the total units.

    ``s1_p0`` and ``s2_p0`` are the design sums on P0, ``s1_p1`` and
    ``s2_p2`` the sums on the single-outcome panels and ``s12_p0`` the
    cross-product on P0. The collaborative weights and reported variances
    assume all five are small.
    """

    s1_p0: float
    s2_p0: float
    s1_p1: float
    s2_p2: float
    s12_p0: float
    threshold: float = BALANCE_THRESHOLD

    @property
    def values(self) -> dict[str, float]:
        return {
            "s1_p0": self.s1_p0,
            "s2_p0": self.s2_p0,
            "s1_p1": self.s1_p1,
            "s2_p2": self.s2_p2,
            "s12_p0": self.s12_p0,
        }

    @property
    def flagged(self) -> bool:
        return any(abs(v) > self.threshold for v in self.values.values())

    def to_dict(self) -> dict:
        return {**self.values, "threshold": self.threshold, "flagged": self.flagged}


def balance_diagnostics(
    ds: PairedDataset, threshold: float = BALANCE_THRESHOLD
) -> BalanceDiagnostics:
    s = ds.sums
    n = len(ds)
    return BalanceDiagnostics(
        s1_p0=s.s_x1_p0 / n,
        s2_p0=s.s_x2_p0 / n,
        s1_p1=s.s_x1_p1 / n,
        s2_p2=s.s_x2_p2 / n,
        s12_p0=s.s_x1x2_p0 / n,
        threshold=threshold,
    )
