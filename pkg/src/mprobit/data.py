"""Panel data container, CSV ingestion, and validation diagnostics.

The canonical input is a long-format CSV with one row per
(subject, time, response) cell. Panels must be fully balanced: every subject
is observed at every time for every response, with binary 0/1 outcomes.

Design matrices are built from named covariate columns with an all-ones
intercept column prepended, so the covariate lists in :class:`ModelSpec` name
only the non-intercept columns. Covariates are used exactly as given; no
centering or recoding is performed (a -1/+1 coding of binary covariates is
recommended for well-conditioned fits).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

__all__ = [
    "DataError",
    "UnbalancedPanelError",
    "InvalidResponseError",
    "SpecMismatchError",
    "ModelSpec",
    "PanelData",
    "ValidationReport",
    "ingest",
    "validate",
    "export_csv",
]

INTERCEPT_NAME = "const"


class DataError(ValueError):
    """Base class for panel construction failures."""


class UnbalancedPanelError(DataError):
    """Raised when some (subject, time, response) cell is missing or duplicated."""


class InvalidResponseError(DataError):
    """Raised when the response column contains values outside {0, 1}."""


class SpecMismatchError(DataError):
    """Raised when the model spec references columns the file does not have."""


@dataclass(frozen=True)
class ModelSpec:
    """Binding between a long-format CSV and the model's design matrices.

    ``baseline_covariates`` feed the t = 1 design, ``main_covariates`` the
    t >= 2 design, and ``transition_covariates`` the design multiplying the
    lagged response. All three get a leading intercept column automatically;
    empty lists give intercept-only designs.
    """

    subject_col: str = "subject"
    time_col: str = "time"
    response_col: str = "response"
    y_col: str = "y"
    baseline_covariates: tuple[str, ...] = ()
    main_covariates: tuple[str, ...] = ()
    transition_covariates: tuple[str, ...] = ()
    quad_order: int = 20

    def __post_init__(self):
        object.__setattr__(self, "baseline_covariates", tuple(self.baseline_covariates))
        object.__setattr__(self, "main_covariates", tuple(self.main_covariates))
        object.__setattr__(self, "transition_covariates", tuple(self.transition_covariates))
        if self.quad_order < 1 or self.quad_order > 100:
            raise SpecMismatchError("spec mismatch: quad_order outside [1, 100]")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        """All distinct covariate columns, in first-use order."""
        seen: dict[str, None] = {}
        for name in self.baseline_covariates + self.main_covariates + self.transition_covariates:
            seen.setdefault(name)
        return tuple(seen)

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {
            "subject_col",
            "time_col",
            "response_col",
            "y_col",
            "baseline_covariates",
            "main_covariates",
            "transition_covariates",
            "quad_order",
        }
        unknown = set(raw) - known
        if unknown:
            raise SpecMismatchError(f"spec mismatch: unknown spec keys {sorted(unknown)}")
        return cls(**raw)

    def to_json(self, path) -> None:
        payload = {
            "subject_col": self.subject_col,
            "time_col": self.time_col,
            "response_col": self.response_col,
            "y_col": self.y_col,
            "baseline_covariates": list(self.baseline_covariates),
            "main_covariates": list(self.main_covariates),
            "transition_covariates": list(self.transition_covariates),
            "quad_order": self.quad_order,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class PanelData:
    """Balanced multivariate longitudinal binary panel.

    Arrays are indexed (subject, time, response) with times renumbered to
    1..T; ``time_labels`` keeps the original time values and ``subject_ids``
    the original identifiers, both in sorted order. Instances are immutable
    after construction and safe for concurrent reads.
    """

    y: np.ndarray  # (N, T, k) int8 in {0, 1}
    covariates: dict  # name -> (N, T, k) float array
    subject_ids: np.ndarray  # (N,)
    time_labels: np.ndarray  # (T,) original time values
    spec: ModelSpec
    x_baseline: np.ndarray = field(init=False)  # (N, k, 1 + pb)
    x_main: np.ndarray = field(init=False)  # (N, T-1, k, 1 + pm)
    z_transition: np.ndarray = field(init=False)  # (N, T-1, k, 1 + pz)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 3:
            raise DataError("y must have shape (subjects, times, responses)")
        if not np.isin(y, (0, 1)).all():
            raise InvalidResponseError("invalid response: y values must be 0 or 1")
        if y.shape[1] < 2:
            raise DataError("panel needs at least two time points")
        y = y.astype(np.int8)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        covs = {}
        for name, arr in self.covariates.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != y.shape:
                raise DataError(f"covariate {name!r} has shape {arr.shape}, expected {y.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            covs[name] = arr
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "x_baseline", self._design(self.spec.baseline_covariates, baseline=True))
        object.__setattr__(self, "x_main", self._design(self.spec.main_covariates, baseline=False))
        object.__setattr__(self, "z_transition", self._design(self.spec.transition_covariates, baseline=False))

    def _design(self, names, baseline: bool) -> np.ndarray:
        for name in names:
            if name not in self.covariates:
                raise SpecMismatchError(f"spec mismatch: unknown covariate column {name!r}")
        if baseline:
            cols = [np.ones(self.y.shape[::2], dtype=float)]  # (N, k)
            cols += [self.covariates[name][:, 0, :] for name in names]
            out = np.stack(cols, axis=-1)
        else:
            shape = (self.n_subjects, self.n_times - 1, self.n_responses)
            cols = [np.ones(shape, dtype=float)]
            cols += [self.covariates[name][:, 1:, :] for name in names]
            out = np.stack(cols, axis=-1)
        out.setflags(write=False)
        return out

    @property
    def n_subjects(self) -> int:
        return self.y.shape[0]

    @property
    def n_times(self) -> int:
        return self.y.shape[1]

    @property
    def n_responses(self) -> int:
        return self.y.shape[2]

    @property
    def y_lag(self) -> np.ndarray:
        """Lagged responses aligned with t = 2..T; y_lag[:, t-2, :] = y[:, t-2, :]
        in array indexing, i.e. the stored response one period earlier."""
        return self.y[:, :-1, :]

    @property
    def baseline_design_names(self) -> tuple[str, ...]:
        return (INTERCEPT_NAME,) + self.spec.baseline_covariates

    @property
    def main_design_names(self) -> tuple[str, ...]:
        return (INTERCEPT_NAME,) + self.spec.main_covariates

    @property
    def transition_design_names(self) -> tuple[str, ...]:
        return (INTERCEPT_NAME,) + self.spec.transition_covariates

    def subset_times(self, n_times: int) -> "PanelData":
        """Panel truncated to the first ``n_times`` periods (n_times >= 2)."""
        if not 2 <= n_times <= self.n_times:
            raise DataError("subset_times: need 2 <= n_times <= T")
        covs = {name: arr[:, :n_times, :] for name, arr in self.covariates.items()}
        return PanelData(
            y=self.y[:, :n_times, :],
            covariates=covs,
            subject_ids=self.subject_ids,
            time_labels=self.time_labels[:n_times],
            spec=self.spec,
        )


def ingest(csv_source, spec: ModelSpec) -> PanelData:
    """Read a long-format CSV into a validated :class:`PanelData`.

    Raises :class:`SpecMismatchError` for unknown columns,
    :class:`InvalidResponseError` for non-binary outcomes, and
    :class:`UnbalancedPanelError` for missing or duplicated cells or
    non-consecutive times.
    """
    frame = pd.read_csv(csv_source)
    needed = [spec.subject_col, spec.time_col, spec.response_col, spec.y_col]
    needed += list(spec.covariate_names)
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise SpecMismatchError(f"spec mismatch: missing columns {missing}")

    y_vals = frame[spec.y_col].to_numpy()
    if not np.isin(y_vals, (0, 1)).all():
        bad = frame.loc[~np.isin(y_vals, (0, 1)), spec.y_col].iloc[0]
        raise InvalidResponseError(f"invalid response: y value {bad!r} not in {{0, 1}}")

    subjects = np.unique(frame[spec.subject_col].to_numpy())
    times = np.unique(frame[spec.time_col].to_numpy())
    responses = np.unique(frame[spec.response_col].to_numpy())
    n, t, k = len(subjects), len(times), len(responses)

    if t < 2:
        raise DataError("panel needs at least two time points")
    try:
        time_ints = times.astype(np.int64)
        exact = np.array_equal(time_ints.astype(times.dtype), times)
    except (ValueError, TypeError):
        exact = False
        time_ints = None
    if not exact or np.any(np.diff(time_ints) != 1):
        raise UnbalancedPanelError(
            f"unbalanced panel: times {times.tolist()} are not consecutive integers"
        )
    if not np.array_equal(responses, np.arange(1, k + 1)):
        raise SpecMismatchError(
            f"spec mismatch: response identifiers {responses.tolist()} must be 1..k"
        )
    if len(frame) != n * t * k:
        raise UnbalancedPanelError(
            f"unbalanced panel: {len(frame)} rows, expected {n}*{t}*{k} = {n * t * k}"
        )

    i_idx = np.searchsorted(subjects, frame[spec.subject_col].to_numpy())
    t_idx = np.searchsorted(times, frame[spec.time_col].to_numpy())
    j_idx = np.searchsorted(responses, frame[spec.response_col].to_numpy())
    flat = (i_idx * t + t_idx) * k + j_idx
    occupancy = np.bincount(flat, minlength=n * t * k)
    if (occupancy > 1).any():
        where = np.argmax(occupancy > 1)
        cell = (subjects[where // (t * k)], times[(where // k) % t], responses[where % k])
        raise UnbalancedPanelError(f"unbalanced panel: duplicate row for (subject, time, response) = {cell}")
    if (occupancy == 0).any():
        where = np.argmax(occupancy == 0)
        cell = (subjects[where // (t * k)], times[(where // k) % t], responses[where % k])
        raise UnbalancedPanelError(f"unbalanced panel: missing cell (subject, time, response) = {cell}")

    y = np.empty((n, t, k), dtype=np.int8)
    y[i_idx, t_idx, j_idx] = y_vals
    covariates = {}
    for name in spec.covariate_names:
        arr = np.empty((n, t, k), dtype=float)
        arr[i_idx, t_idx, j_idx] = frame[name].to_numpy(dtype=float)
        covariates[name] = arr

    return PanelData(y=y, covariates=covariates, subject_ids=subjects, time_labels=times, spec=spec)


def export_csv(data: PanelData, path) -> None:
    """Write the panel back to long-format CSV; inverse of :func:`ingest`."""
    n, t, k = data.y.shape
    i_idx, t_idx, j_idx = np.unravel_index(np.arange(n * t * k), (n, t, k))
    frame = pd.DataFrame(
        {
            data.spec.subject_col: data.subject_ids[i_idx],
            data.spec.time_col: data.time_labels[t_idx],
            data.spec.response_col: j_idx + 1,
            data.spec.y_col: data.y[i_idx, t_idx, j_idx],
        }
    )
    for name in data.spec.covariate_names:
        frame[name] = data.covariates[name][i_idx, t_idx, j_idx]
    frame.to_csv(path, index=False)


@dataclass(frozen=True)
class ValidationReport:
    """Pure diagnostics over a panel; computing it never mutates the data."""

    success_rates: np.ndarray  # (k, T) share of 1s per (response, time)
    degenerate_responses: tuple[int, ...]  # 1-based responses constant across the panel
    constant_columns: tuple[str, ...]  # covariates with zero variance
    stayers_zero: np.ndarray  # (k,) subjects constant at 0 for that response
    stayers_one: np.ndarray  # (k,) subjects constant at 1
    stayers_all_zero: int  # subjects at 0 for every response and time
    stayers_all_one: int
    flags: tuple[str, ...]

    def to_text(self) -> str:
        k, t = self.success_rates.shape
        lines = ["response success proportions by time"]
        header = "response " + " ".join(f"t={i + 1:<6d}" for i in range(t))
        lines.append(header)
        for j in range(k):
            rates = " ".join(f"{self.success_rates[j, i]:<8.3f}" for i in range(t))
            lines.append(f"{j + 1:<8d} {rates}")
        lines.append("")
        lines.append("stayers (constant subjects): per response "
                      + ", ".join(f"j={j + 1}: {z}/{o}" for j, (z, o) in
                                  enumerate(zip(self.stayers_zero, self.stayers_one)))
                      + f"; all responses: {self.stayers_all_zero}/{self.stayers_all_one} (0s/1s)")
        if self.flags:
            lines.append("flags:")
            lines.extend(f"  - {f}" for f in self.flags)
        else:
            lines.append("flags: none")
        return "\n".join(lines)


def validate(data: PanelData) -> ValidationReport:
    """Report per-(response, time) prevalences, degenerate columns, and stayers."""
    y = data.y
    rates = y.mean(axis=0).T  # (k, T)
    flags: list[str] = []

    degenerate = []
    for j in range(data.n_responses):
        col = y[:, :, j]
        if col.min() == col.max():
            degenerate.append(j + 1)
            flags.append(f"degenerate response {j + 1}: constant at {int(col.flat[0])}")

    constant_cols = []
    for name, arr in data.covariates.items():
        if np.ptp(arr) == 0.0:
            constant_cols.append(name)
            flags.append(f"constant covariate column {name!r}")

    const_zero = ((y == 0).all(axis=1)).sum(axis=0)  # (k,)
    const_one = ((y == 1).all(axis=1)).sum(axis=0)
    all_zero = int((y == 0).all(axis=(1, 2)).sum())
    all_one = int((y == 1).all(axis=(1, 2)).sum())

    return ValidationReport(
        success_rates=rates,
        degenerate_responses=tuple(degenerate),
        constant_columns=tuple(constant_cols),
        stayers_zero=const_zero,
        stayers_one=const_one,
        stayers_all_zero=all_zero,
        stayers_all_one=all_one,
        flags=tuple(flags),
    )
