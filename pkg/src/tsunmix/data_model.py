"""Core pixel-level data types: spectral series, ancillary variables,
abundance vectors, samples, datasets, and normalization.

Conventions used throughout the package:

* a spectral series is a T x B matrix (T monthly steps, B bands) with a
  0/1 observation mask and a per-band time-gap matrix (months since the
  band was last observed);
* abundances live on the simplex: nonnegative, summing to one;
* missing series entries are stored as 0.0 and are never read as data
  (the mask gates them everywhere downstream).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from .errors import (
    DataError,
    EmptyDataset,
    EmptyTrainingSet,
    NonFinite,
    ShapeMismatch,
    SimplexViolation,
)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

SIMPLEX_TOL = 1e-6
STD_FLOOR = 1e-8

ANCILLARY_FIELDS = (
    "lon",
    "lat",
    "altitude",
    "slope",
    "precip",
    "pet",
    "tmean",
    "tmax",
    "tmin",
)
N_ANCILLARY = len(ANCILLARY_FIELDS)
GEO_INDICES = (0, 1, 2, 3)
CLIM_INDICES = (4, 5, 6, 7, 8)

LEVEL1_CLASSES = (
    "Artificial",
    "Agricultural lands",
    "Terrestrial lands",
    "Wetlands",
)
LEVEL2_CLASSES = (
    "Artificial",
    "Annual croplands",
    "Greenhouses",
    "Woody croplands",
    "Combinations of croplands and vegetation",
    "Grasslands and grasslands with trees",
    "Shrublands and shrublands with trees",
    "Forests",
    "Barelands",
    "Wetlands",
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


def compute_deltas(mask: npt.ArrayLike, timestamps: npt.ArrayLike) -> FloatArray:
    """Months elapsed since each band was last observed.

    Row 0 is all zeros. For t >= 1, a band observed at t-1 resets its gap
    to the step length; otherwise the gap accumulates.
    """
    mask = np.asarray(mask, dtype=np.float64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if mask.ndim != 2:
        raise ShapeMismatch(f"mask must be T x B, got shape {mask.shape}")
    if timestamps.shape != (mask.shape[0],):
        raise ShapeMismatch(
            f"timestamps length {timestamps.shape} does not match T={mask.shape[0]}"
        )
    t_steps, n_bands = mask.shape
    deltas = np.zeros((t_steps, n_bands), dtype=np.float64)
    for t in range(1, t_steps):
        step = timestamps[t] - timestamps[t - 1]
        deltas[t] = np.where(mask[t - 1] == 1.0, step, deltas[t - 1] + step)
    return deltas


def compute_deltas_batch(mask: FloatArray, timestamps: FloatArray) -> FloatArray:
    """Vectorized compute_deltas over a leading sample axis.

    mask: (N, T, B); timestamps: (N, T). Returns (N, T, B).
    """
    n, t_steps, n_bands = mask.shape
    deltas = np.zeros((n, t_steps, n_bands), dtype=np.float64)
    for t in range(1, t_steps):
        step = (timestamps[:, t] - timestamps[:, t - 1])[:, None]
        deltas[:, t] = np.where(mask[:, t - 1] == 1.0, step, deltas[:, t - 1] + step)
    return deltas


@dataclass(frozen=True)
class SpectralSeries:
    """Per-pixel T x B reflectance matrix with mask and time gaps."""

    values: FloatArray
    mask: FloatArray
    deltas: FloatArray
    timestamps: IntArray

    def __post_init__(self):
        values = _freeze(np.asarray(self.values, dtype=np.float64))
        mask = _freeze(np.asarray(self.mask, dtype=np.float64))
        deltas = _freeze(np.asarray(self.deltas, dtype=np.float64))
        timestamps = _freeze(np.asarray(self.timestamps, dtype=np.int64))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "timestamps", timestamps)
        if values.ndim != 2:
            raise ShapeMismatch(f"values must be T x B, got shape {values.shape}")
        if mask.shape != values.shape or deltas.shape != values.shape:
            raise ShapeMismatch(
                f"values {values.shape}, mask {mask.shape}, deltas {deltas.shape} differ"
            )
        if timestamps.shape != (values.shape[0],):
            raise ShapeMismatch("timestamps length does not match T")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise DataError("mask entries must be 0 or 1")
        if not np.all(np.isfinite(values[mask == 1.0])):
            raise NonFinite("observed series values must be finite")
        if np.any(deltas < 0.0) or np.any(deltas[0] != 0.0):
            raise DataError("deltas must be nonnegative with a zero first row")

    @classmethod
    def build(cls, values, mask, timestamps) -> "SpectralSeries":
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        if np.any(np.diff(timestamps) <= 0):
            raise DataError("timestamps must be strictly increasing")
        deltas = compute_deltas(mask, timestamps)
        return cls(values=values, mask=mask, deltas=deltas, timestamps=timestamps)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AncillaryVector:
    """Nine geo-topographic and climatic scalars for one pixel.

    Field order: lon, lat, altitude, slope, precip, pet, tmean, tmax, tmin.
    """

    values: FloatArray

    def __post_init__(self):
        values = _freeze(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if values.shape != (N_ANCILLARY,):
            raise ShapeMismatch(
                f"ancillary vector must have {N_ANCILLARY} entries, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFinite("ancillary values must be finite")

    @classmethod
    def from_fields(cls, **fields: float) -> "AncillaryVector":
        unknown = set(fields) - set(ANCILLARY_FIELDS)
        if unknown:
            raise DataError(f"unknown ancillary fields: {sorted(unknown)}")
        return cls(np.array([fields[name] for name in ANCILLARY_FIELDS]))

    def __getattr__(self, name: str) -> float:
        if name in ANCILLARY_FIELDS:
            return float(self.values[ANCILLARY_FIELDS.index(name)])
        raise AttributeError(name)


@dataclass(frozen=True)
class AbundanceVector:
    """K class fractions on the simplex (sum 1 within 1e-6, all >= 0)."""

    values: FloatArray

    def __post_init__(self):
        values = _freeze(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.shape[0] < 2:
            raise ShapeMismatch("abundance vector must be 1-D with K >= 2 entries")
        if not np.all(np.isfinite(values)):
            raise NonFinite("abundances must be finite")
        if np.any(values < 0.0):
            raise SimplexViolation("abundances must be nonnegative")
        total = float(values.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise SimplexViolation(f"abundances sum to {total}, expected 1 +/- {SIMPLEX_TOL}")

    @property
    def n_classes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClassLegend:
    """Named class list for one of the two supported hierarchy levels."""

    level: int
    names: tuple[str, ...]

    def __post_init__(self):
        if self.level == 1 and self.names != LEVEL1_CLASSES:
            raise DataError("level-1 legend must list the four level-1 class names")
        if self.level == 2 and self.names != LEVEL2_CLASSES:
            raise DataError("level-2 legend must list the ten level-2 class names")
        if self.level not in (1, 2):
            raise DataError("legend level must be 1 or 2")

    @classmethod
    def level1(cls) -> "ClassLegend":
        return cls(1, LEVEL1_CLASSES)

    @classmethod
    def level2(cls) -> "ClassLegend":
        return cls(2, LEVEL2_CLASSES)


def generic_legend(n_classes: int) -> tuple[str, ...]:
    return tuple(f"class_{i + 1}" for i in range(n_classes))


@dataclass(frozen=True)
class Sample:
    """One pixel: identifier, grid position, series, ancillary, reference."""

    pixel_id: str
    grid_x: int
    grid_y: int
    series: SpectralSeries
    ancillary: AncillaryVector
    reference: AbundanceVector

    def __post_init__(self):
        if self.grid_x < 0 or self.grid_y < 0:
            raise DataError("grid coordinates must be nonnegative")


def make_sample(
    values,
    mask,
    timestamps,
    ancillary,
    reference,
    grid_pos: tuple[int, int],
    pixel_id: str | None = None,
) -> Sample:
    """Validate raw per-pixel inputs and assemble a Sample.

    Computes the time-gap matrix from mask and timestamps. Raises
    ShapeMismatch / NonFinite / SimplexViolation on bad input.
    """
    series = SpectralSeries.build(values, mask, timestamps)
    if not isinstance(ancillary, AncillaryVector):
        ancillary = AncillaryVector(np.asarray(ancillary, dtype=np.float64))
    if not isinstance(reference, AbundanceVector):
        reference = AbundanceVector(np.asarray(reference, dtype=np.float64))
    grid_x, grid_y = int(grid_pos[0]), int(grid_pos[1])
    if pixel_id is None:
        pixel_id = f"p{grid_x}_{grid_y}"
    return Sample(
        pixel_id=pixel_id,
        grid_x=grid_x,
        grid_y=grid_y,
        series=series,
        ancillary=ancillary,
        reference=reference,
    )


@dataclass(frozen=True)
class NormStats:
    """Per-band and per-ancillary-feature mean/std fitted on training pixels."""

    band_mean: FloatArray
    band_std: FloatArray
    anc_mean: FloatArray
    anc_std: FloatArray

    def __post_init__(self):
        for name in ("band_mean", "band_std", "anc_mean", "anc_std"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), np.float64)))
        if self.band_mean.shape != self.band_std.shape:
            raise ShapeMismatch("band mean/std shapes differ")
        if self.anc_mean.shape != (N_ANCILLARY,) or self.anc_std.shape != (N_ANCILLARY,):
            raise ShapeMismatch("ancillary stats must have 9 entries")
        if np.any(self.band_std <= 0.0) or np.any(self.anc_std <= 0.0):
            raise DataError("stds must be positive (floored, never zero)")


@dataclass(frozen=True)
class Dataset:
    """Immutable sample collection sharing T, B, K, plus optional norm stats."""

    samples: tuple[Sample, ...]
    legend: tuple[str, ...]
    norm_stats: NormStats | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "legend", tuple(self.legend))
        if not self.samples:
            raise EmptyDataset("dataset must contain at least one sample")
        first = self.samples[0]
        t, b = first.series.n_steps, first.series.n_bands
        k = first.reference.n_classes
        for sample in self.samples:
            if sample.series.n_steps != t or sample.series.n_bands != b:
                raise ShapeMismatch("all samples must share T and B")
            if sample.reference.n_classes != k:
                raise ShapeMismatch("all samples must share K")
        if len(self.legend) != k:
            raise ShapeMismatch(f"legend has {len(self.legend)} names for K={k} classes")
        ids = [s.pixel_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("pixel ids must be unique")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_steps(self) -> int:
        return self.samples[0].series.n_steps

    @property
    def n_bands(self) -> int:
        return self.samples[0].series.n_bands

    @property
    def n_classes(self) -> int:
        return self.samples[0].reference.n_classes

    @cached_property
    def pixel_ids(self) -> tuple[str, ...]:
        return tuple(s.pixel_id for s in self.samples)

    @cached_property
    def _id_index(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.pixel_ids)}

    def index_of(self, pixel_id: str) -> int:
        try:
            return self._id_index[pixel_id]
        except KeyError:
            raise DataError(f"unknown pixel id: {pixel_id}") from None

    @cached_property
    def values_array(self) -> FloatArray:
        return np.stack([s.series.values for s in self.samples])

    @cached_property
    def mask_array(self) -> FloatArray:
        return np.stack([s.series.mask for s in self.samples])

    @cached_property
    def deltas_array(self) -> FloatArray:
        return np.stack([s.series.deltas for s in self.samples])

    @cached_property
    def timestamps_array(self) -> FloatArray:
        return np.stack([s.series.timestamps for s in self.samples]).astype(np.float64)

    @cached_property
    def ancillary_array(self) -> FloatArray:
        return np.stack([s.ancillary.values for s in self.samples])

    @cached_property
    def reference_array(self) -> FloatArray:
        return np.stack([s.reference.values for s in self.samples])

    @cached_property
    def grid_array(self) -> IntArray:
        return np.array([(s.grid_x, s.grid_y) for s in self.samples], dtype=np.int64)


def fit_normalization(dataset: Dataset, train_ids: Iterable[str]) -> NormStats:
    """Per-band stats over observed training entries; per-feature ancillary stats.

    Uses training samples only, so the result is invariant to test-set
    contents. Stds are floored at ``STD_FLOOR``.
    """
    idx = [dataset.index_of(pid) for pid in train_ids]
    if not idx:
        raise EmptyTrainingSet("cannot fit normalization on an empty training set")
    values = dataset.values_array[idx]
    mask = dataset.mask_array[idx]
    n_bands = dataset.n_bands
    band_mean = np.zeros(n_bands)
    band_std = np.full(n_bands, STD_FLOOR)
    for b in range(n_bands):
        observed = values[:, :, b][mask[:, :, b] == 1.0]
        if observed.size:
            band_mean[b] = observed.mean()
            band_std[b] = max(float(observed.std()), STD_FLOOR)
    anc = dataset.ancillary_array[idx]
    anc_mean = anc.mean(axis=0)
    anc_std = np.maximum(anc.std(axis=0), STD_FLOOR)
    return NormStats(band_mean, band_std, anc_mean, anc_std)


def apply_normalization(dataset: Dataset, stats: NormStats) -> Dataset:
    """Z-score observed series entries and ancillary features.

    Missing series entries become 0.0 (the band mean) after normalization;
    the mask keeps the model from reading them as data.
    """
    if dataset.norm_stats is not None:
        raise DataError("dataset is already normalized")
    values = (dataset.values_array - stats.band_mean) / stats.band_std
    values = values * dataset.mask_array
    anc = (dataset.ancillary_array - stats.anc_mean) / stats.anc_std
    return _rebuild(dataset, values, anc, stats)


def invert_normalization(dataset: Dataset) -> Dataset:
    """Undo apply_normalization; observed values are recovered exactly
    up to floating-point rounding."""
    stats = dataset.norm_stats
    if stats is None:
        raise DataError("dataset is not normalized")
    values = dataset.values_array * stats.band_std + stats.band_mean
    values = values * dataset.mask_array
    anc = dataset.ancillary_array * stats.anc_std + stats.anc_mean
    return _rebuild(dataset, values, anc, None)


def _rebuild(dataset: Dataset, values: FloatArray, anc: FloatArray, stats) -> Dataset:
    samples = []
    for i, old in enumerate(dataset.samples):
        series = SpectralSeries(
            values=values[i],
            mask=old.series.mask,
            deltas=old.series.deltas,
            timestamps=old.series.timestamps,
        )
        samples.append(
            Sample(
                pixel_id=old.pixel_id,
                grid_x=old.grid_x,
                grid_y=old.grid_y,
                series=series,
                ancillary=AncillaryVector(anc[i]),
                reference=old.reference,
            )
        )
    return Dataset(samples=tuple(samples), legend=dataset.legend, norm_stats=stats)


# ---------------------------------------------------------------------------
# CSV interchange format
# ---------------------------------------------------------------------------

_FIXED_COLUMNS = ("pixel_id", "grid_x", "grid_y") + ANCILLARY_FIELDS


def _band_columns(n_bands: int, n_steps: int) -> list[str]:
    return [f"b{b + 1}_m{m + 1}" for b in range(n_bands) for m in range(n_steps)]


def _abund_columns(n_classes: int) -> list[str]:
    return [f"abund_{k + 1}" for k in range(n_classes)]


def dataset_to_csv(dataset: Dataset) -> str:
    """One row per pixel; empty band cells mark missing observations.

    Floats are written with repr so finite values round-trip bit-exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = (
        list(_FIXED_COLUMNS)
        + _band_columns(dataset.n_bands, dataset.n_steps)
        + _abund_columns(dataset.n_classes)
    )
    writer.writerow(header)
    for sample in dataset.samples:
        row: list[str] = [sample.pixel_id, str(sample.grid_x), str(sample.grid_y)]
        row.extend(repr(v) for v in sample.ancillary.values)
        values, mask = sample.series.values, sample.series.mask
        for b in range(dataset.n_bands):
            for m in range(dataset.n_steps):
                row.append(repr(values[m, b]) if mask[m, b] == 1.0 else "")
        row.extend(repr(v) for v in sample.reference.values)
        writer.writerow(row)
    return buf.getvalue()


def write_dataset_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    atomic_write_text(path, dataset_to_csv(dataset))


def dataset_from_csv(text: str, legend: Sequence[str] | None = None) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("dataset CSV is empty") from None
    if tuple(header[: len(_FIXED_COLUMNS)]) != _FIXED_COLUMNS:
        raise DataError("dataset CSV header does not start with the fixed columns")
    band_cols = [c for c in header if c.startswith("b") and "_m" in c]
    abund_cols = [c for c in header if c.startswith("abund_")]
    n_classes = len(abund_cols)
    bands = sorted({int(c[1:].split("_m")[0]) for c in band_cols})
    months = sorted({int(c.split("_m")[1]) for c in band_cols})
    n_bands, n_steps = len(bands), len(months)
    expected = (
        list(_FIXED_COLUMNS) + _band_columns(n_bands, n_steps) + _abund_columns(n_classes)
    )
    if header != expected:
        raise DataError("dataset CSV header is not in canonical column order")
    timestamps = np.arange(n_steps, dtype=np.int64)
    samples = []
    n_fixed = len(_FIXED_COLUMNS)
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"row for pixel {row[0]!r} has {len(row)} cells")
        pixel_id = row[0]
        grid_x, grid_y = int(row[1]), int(row[2])
        anc = np.array([float(v) for v in row[3:n_fixed]])
        values = np.zeros((n_steps, n_bands))
        mask = np.zeros((n_steps, n_bands))
        cursor = n_fixed
        for b in range(n_bands):
            for m in range(n_steps):
                cell = row[cursor]
                cursor += 1
                if cell != "":
                    values[m, b] = float(cell)
                    mask[m, b] = 1.0
        reference = np.array([float(v) for v in row[cursor : cursor + n_classes]])
        samples.append(
            make_sample(values, mask, timestamps, anc, reference, (grid_x, grid_y), pixel_id)
        )
    if not samples:
        raise EmptyDataset("dataset CSV has a header but no rows")
    if legend is None:
        legend = generic_legend(n_classes)
    return Dataset(samples=tuple(samples), legend=tuple(legend))


def read_dataset_csv(path: str | os.PathLike, legend: Sequence[str] | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return dataset_from_csv(fh.read(), legend)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write-temp-then-rename so interrupted runs never leave partial files."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
