"""Loading, splitting and standardization of multi-channel time series.

The benchmark CSV layout is one header row, a timestamp in the first column
(ignored) and one channel per remaining column.  Splits are taken over the
leading rows of the file: either explicit row counts (the electricity
transformer series ship with predefined splits) or the fractional 70/10/20
convention used by the long-horizon forecasting literature, where the train
and test lengths are floored and the validation split absorbs the remainder.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

__all__ = [
    "MultiChannelSeries",
    "SplitSpec",
    "Scaler",
    "DatasetPreset",
    "DATASET_PRESETS",
    "load_csv",
    "split",
    "fit_scaler",
    "apply_scaler",
    "subsample_train",
    "resolve_dataset_path",
]


@dataclass(frozen=True)
class MultiChannelSeries:
    """A length-T, C-channel real-valued series with uniform spacing.

    ``values`` is a read-only (T, C) float64 matrix; every channel shares the
    same length and contains only finite entries.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-dimensional (T, C), got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"series needs at least one row and one channel, got shape {values.shape}")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != values.shape[1]:
            raise ValueError(
                f"{len(names)} channel names for {values.shape[1]} channels"
            )
        if not np.isfinite(values).all():
            t, c = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(f"non-finite value at row {t}, channel {names[c]!r}")
        if values.flags.writeable:
            values = values.copy()
            values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", names)

    @property
    def t_len(self) -> int:
        return self.values.shape[0]

    @property
    def c_len(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "MultiChannelSeries":
        """Contiguous row slice [start, stop) as a new series."""
        return MultiChannelSeries(self.values[start:stop], self.channel_names)


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test split over the leading rows of a series.

    ``explicit`` carries fixed row counts; ``fractional`` computes
    ``train = floor(train_frac * T)``, ``test = floor(test_frac * T)`` and
    assigns the remaining rows to validation.
    """

    mode: str = "fractional"
    train_len: int | None = None
    val_len: int | None = None
    test_len: int | None = None
    train_frac: float = 0.7
    test_frac: float = 0.2

    def __post_init__(self):
        if self.mode not in ("explicit", "fractional"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "explicit":
            for name in ("train_len", "val_len", "test_len"):
                v = getattr(self, name)
                if not isinstance(v, int) or v < 0:
                    raise ValueError(f"explicit split needs nonnegative integer {name}, got {v!r}")
        else:
            if not (0.0 < self.train_frac < 1.0 and 0.0 < self.test_frac < 1.0
                    and self.train_frac + self.test_frac < 1.0):
                raise ValueError(
                    f"fractional split needs train_frac + test_frac < 1, got "
                    f"{self.train_frac}/{self.test_frac}"
                )

    @classmethod
    def explicit(cls, train_len: int, val_len: int, test_len: int) -> "SplitSpec":
        return cls(mode="explicit", train_len=train_len, val_len=val_len, test_len=test_len)

    @classmethod
    def fractional(cls, train_frac: float = 0.7, test_frac: float = 0.2) -> "SplitSpec":
        return cls(mode="fractional", train_frac=train_frac, test_frac=test_frac)

    def resolve(self, t_len: int) -> tuple[int, int, int]:
        """Row counts (train, val, test) for a series of length ``t_len``."""
        if self.mode == "explicit":
            counts = (self.train_len, self.val_len, self.test_len)
        else:
            train = int(t_len * self.train_frac)
            test = int(t_len * self.test_frac)
            counts = (train, t_len - train - test, test)
        if sum(counts) > t_len:
            raise ValueError(
                f"split {counts} needs {sum(counts)} rows but series has {t_len}"
            )
        return counts


@dataclass(frozen=True)
class Scaler:
    """Per-channel standardization by training-split statistics.

    ``std`` is the population standard deviation (divide by N) of each
    training channel; both transforms broadcast over any number of rows.
    """

    mean: np.ndarray
    std: np.ndarray

    def transform(self, series: MultiChannelSeries) -> MultiChannelSeries:
        return MultiChannelSeries((series.values - self.mean) / self.std, series.channel_names)

    def inverse_transform(self, series: MultiChannelSeries) -> MultiChannelSeries:
        return MultiChannelSeries(series.values * self.std + self.mean, series.channel_names)

    def transform_values(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse_transform_values(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def load_csv(path: str | os.PathLike, expected_channels: int | None = None) -> MultiChannelSeries:
    """Load a benchmark CSV file into a :class:`MultiChannelSeries`.

    The first column is treated as a timestamp and dropped; the header names
    the channels.  Every data cell must parse to a finite float.

    Parameters
    ----------
    path : path-like
        CSV file with one header row.
    expected_channels : int, optional
        If given, the number of channel columns must match exactly.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ValueError
        On a non-numeric or non-finite cell (reported with row and column),
        or on a channel-count mismatch.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    # round_trip: parsed floats reproduce the written decimal exactly
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.shape[1] < 2:
        raise ValueError(f"{path}: expected a timestamp column plus at least one channel")
    data = frame.iloc[:, 1:]
    if expected_channels is not None and data.shape[1] != expected_channels:
        raise ValueError(
            f"{path}: expected {expected_channels} channels, found {data.shape[1]} "
            f"({', '.join(map(str, data.columns[:8]))}{'...' if data.shape[1] > 8 else ''})"
        )
    if data.shape[0] < 1:
        raise ValueError(f"{path}: no data rows")
    for col in data.columns:
        numeric = pd.to_numeric(data[col], errors="coerce") if data[col].dtype == object else data[col]
        bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64, na_value=np.nan))
        if bad.any():
            row = int(np.argmax(bad))
            raise ValueError(
                f"{path}: non-numeric or non-finite value {data[col].iloc[row]!r} "
                f"in column {col!r} at data row {row + 1}"
            )
    values = data.to_numpy(dtype=np.float64)
    return MultiChannelSeries(values, tuple(str(c) for c in data.columns))


def split(series: MultiChannelSeries, spec: SplitSpec):
    """Cut the leading rows into contiguous (train, val, test) segments.

    The three segments are ordered, non-overlapping and cover exactly
    ``train + val + test`` leading rows; any remaining rows at the end are
    discarded.
    """
    n_train, n_val, n_test = spec.resolve(series.t_len)
    train = series.rows(0, n_train)
    val = series.rows(n_train, n_train + n_val)
    test = series.rows(n_train + n_val, n_train + n_val + n_test)
    return train, val, test


def fit_scaler(train: MultiChannelSeries) -> Scaler:
    """Fit per-channel mean/std on the training split.

    Raises ``ValueError`` if any channel has zero variance, since a constant
    channel cannot be standardized.
    """
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    if np.any(std == 0.0):
        bad = int(np.argmax(std == 0.0))
        raise ValueError(
            f"channel {train.channel_names[bad]!r} has zero variance over the training split"
        )
    return Scaler(mean=mean, std=std)


def apply_scaler(scaler: Scaler, series: MultiChannelSeries) -> MultiChannelSeries:
    """Standardize ``series`` with statistics held by ``scaler``."""
    return scaler.transform(series)


def subsample_train(train: MultiChannelSeries, fraction: float) -> MultiChannelSeries:
    """Keep only the trailing ``floor(fraction * T)`` rows of the training split.

    ``fraction`` must lie in (0, 1]; ``fraction=1`` returns the input
    unchanged.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return train
    keep = int(fraction * train.t_len)
    if keep < 1:
        raise ValueError(f"fraction {fraction} keeps no rows of a length-{train.t_len} split")
    return train.rows(train.t_len - keep, train.t_len)


@dataclass(frozen=True)
class DatasetPreset:
    """Built-in description of a standard benchmark dataset."""

    name: str
    channels: int
    split: SplitSpec
    horizons: tuple[int, ...]
    filename: str


_ETT_HOUR_SPLIT = SplitSpec.explicit(12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24)
_ETT_MIN_SPLIT = SplitSpec.explicit(12 * 30 * 24 * 4, 4 * 30 * 24 * 4, 4 * 30 * 24 * 4)
_LONG_HORIZONS = (96, 192, 336, 720)

DATASET_PRESETS: dict[str, DatasetPreset] = {
    "etth1": DatasetPreset("ETTh1", 7, _ETT_HOUR_SPLIT, _LONG_HORIZONS, "ETTh1.csv"),
    "etth2": DatasetPreset("ETTh2", 7, _ETT_HOUR_SPLIT, _LONG_HORIZONS, "ETTh2.csv"),
    "ettm1": DatasetPreset("ETTm1", 7, _ETT_MIN_SPLIT, _LONG_HORIZONS, "ETTm1.csv"),
    "ettm2": DatasetPreset("ETTm2", 7, _ETT_MIN_SPLIT, _LONG_HORIZONS, "ETTm2.csv"),
    "weather": DatasetPreset("Weather", 21, SplitSpec.fractional(), _LONG_HORIZONS, "weather.csv"),
    "electricity": DatasetPreset("Electricity", 321, SplitSpec.fractional(), _LONG_HORIZONS, "electricity.csv"),
    "traffic": DatasetPreset("Traffic", 862, SplitSpec.fractional(), _LONG_HORIZONS, "traffic.csv"),
    "ili": DatasetPreset("ILI", 7, SplitSpec.fractional(), (24, 36, 48, 60), "national_illness.csv"),
}


def resolve_dataset_path(preset: DatasetPreset, data_dir: str | os.PathLike | None = None) -> Path | None:
    """Locate a preset's CSV under ``data_dir``, ``$AUTOAR_DATA`` or ``./data``.

    Returns ``None`` when the file is absent so callers can skip or fail with
    their own message.
    """
    candidates = []
    if data_dir is not None:
        candidates.append(Path(data_dir))
    env = os.environ.get("AUTOAR_DATA")
    if env:
        candidates.append(Path(env))
    candidates.append(Path("data"))
    for root in candidates:
        path = root / preset.filename
        if path.is_file():
            return path
    return None
