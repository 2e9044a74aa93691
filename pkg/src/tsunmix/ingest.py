"""Label-raster annotation and monthly compositing.

Abundance labels come from a fine-grid categorical raster aggregated to
the coarse sensor grid (class counts over each factor x factor block).
Series come from two 8-day observation streams turned into monthly means
and merged.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .data_model import (
    Dataset,
    FloatArray,
    IntArray,
    atomic_write_text,
    generic_legend,
    make_sample,
)
from .errors import (
    AlignmentMismatch,
    AllNoData,
    DataError,
    EmptyDataset,
    NotDivisible,
    ShapeMismatch,
)

NO_DATA = -1

# fine-grid label cells are 10 m, the coarse sensor grid 460 m
DEFAULT_CELL_SIZE = 10.0
DEFAULT_FACTOR = 46


@dataclass(frozen=True)
class LabelRaster:
    """Fine-grid class-index raster; NO_DATA cells are -1."""

    labels: IntArray
    n_classes: int
    cell_size: float = DEFAULT_CELL_SIZE

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise ShapeMismatch("raster must be a nonempty 2-D grid")
        if self.n_classes < 1:
            raise DataError("raster needs at least one class")
        bad = (labels != NO_DATA) & ((labels < 0) | (labels >= self.n_classes))
        if np.any(bad):
            raise DataError("labels must lie in [0, K) or be NO_DATA")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class AbundanceGrid:
    """Coarse class fractions with the integer counts they derive from."""

    counts: IntArray          # (Hc, Wc, K) fine cells per class
    valid_counts: IntArray    # (Hc, Wc) non-NO_DATA fine cells
    abundances: FloatArray    # (Hc, Wc, K) counts / valid_counts
    excluded: np.ndarray      # (Hc, Wc) bool, True where every fine cell is NO_DATA
    factor: int

    @property
    def n_classes(self) -> int:
        return self.counts.shape[2]


def aggregate_abundances(raster: LabelRaster, factor: int) -> AbundanceGrid:
    """Degrade a fine label raster to coarse per-class fractions.

    Each coarse cell covers factor x factor fine cells; NO_DATA cells are
    dropped from the denominator. Whole-NO_DATA cells are flagged excluded.
    """
    if factor < 1:
        raise DataError("factor must be >= 1")
    h, w = raster.labels.shape
    if h % factor or w % factor:
        raise NotDivisible(
            f"raster {w}x{h} is not divisible by factor {factor}; crop before aggregating"
        )
    if np.all(raster.labels == NO_DATA):
        raise AllNoData("every raster cell is NO_DATA")
    hc, wc = h // factor, w // factor
    blocks = raster.labels.reshape(hc, factor, wc, factor)
    k = raster.n_classes
    counts = np.zeros((hc, wc, k), dtype=np.int64)
    for cls in range(k):
        counts[:, :, cls] = (blocks == cls).sum(axis=(1, 3))
    valid = counts.sum(axis=2)
    excluded = valid == 0
    denom = np.where(excluded, 1, valid)
    abundances = counts / denom[:, :, None]
    return AbundanceGrid(
        counts=counts,
        valid_counts=valid,
        abundances=abundances,
        excluded=excluded,
        factor=factor,
    )


class Observation(NamedTuple):
    day: int
    value: float
    qa_pass: bool


@dataclass(frozen=True)
class ObservationStream:
    """Per-band lists of (day, value, qa_pass) tuples at ~8-day cadence."""

    bands: tuple[tuple[Observation, ...], ...]

    def __post_init__(self):
        bands = tuple(tuple(Observation(*o) for o in band) for band in self.bands)
        object.__setattr__(self, "bands", bands)
        for band in bands:
            days = [o.day for o in band]
            if any(b <= a for a, b in zip(days, days[1:])):
                raise DataError("observation timestamps must be increasing per band")

    @property
    def n_bands(self) -> int:
        return len(self.bands)


def monthly_composite(
    stream: ObservationStream, months: Sequence[tuple[int, int]]
) -> tuple[FloatArray, FloatArray]:
    """Mean of qa-passing observations per (month, band); empty months get mask 0.

    ``months`` is a sequence of half-open day ranges [start, end).
    """
    if not months:
        raise DataError("month list must be nonempty")
    t, b = len(months), stream.n_bands
    values = np.zeros((t, b))
    mask = np.zeros((t, b))
    for j, band in enumerate(stream.bands):
        for i, (start, end) in enumerate(months):
            hits = [o.value for o in band if o.qa_pass and start <= o.day < end]
            if hits:
                values[i, j] = float(np.mean(hits))
                mask[i, j] = 1.0
    return values, mask


def merge_sensors(
    values_a: FloatArray,
    mask_a: FloatArray,
    values_b: FloatArray,
    mask_b: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    """Combine two monthly composites: mean where both observed, else passthrough."""
    values_a = np.asarray(values_a, dtype=np.float64)
    values_b = np.asarray(values_b, dtype=np.float64)
    mask_a = np.asarray(mask_a, dtype=np.float64)
    mask_b = np.asarray(mask_b, dtype=np.float64)
    if values_a.shape != values_b.shape or mask_a.shape != values_a.shape or mask_b.shape != values_a.shape:
        raise ShapeMismatch("sensor composites must share shape")
    both = (mask_a == 1.0) & (mask_b == 1.0)
    merged_mask = np.where((mask_a == 1.0) | (mask_b == 1.0), 1.0, 0.0)
    merged = values_a * mask_a + values_b * mask_b
    merged = np.where(both, merged / 2.0, merged)
    merged = merged * merged_mask
    return merged, merged_mask


def assemble_dataset(
    grid: AbundanceGrid,
    series_values: FloatArray,
    series_mask: FloatArray,
    ancillary: FloatArray,
    legend: Sequence[str] | None = None,
) -> Dataset:
    """One Sample per non-excluded coarse cell.

    series arrays: (Hc, Wc, T, B); ancillary: (Hc, Wc, 9). Coarse row/col
    indices become grid_y/grid_x.
    """
    hc, wc, k = grid.abundances.shape
    series_values = np.asarray(series_values, dtype=np.float64)
    series_mask = np.asarray(series_mask, dtype=np.float64)
    ancillary = np.asarray(ancillary, dtype=np.float64)
    if series_values.ndim != 4 or series_values.shape[:2] != (hc, wc):
        raise AlignmentMismatch("series grid does not align with the abundance grid")
    if series_mask.shape != series_values.shape:
        raise AlignmentMismatch("series mask does not align with series values")
    if ancillary.shape != (hc, wc, 9):
        raise AlignmentMismatch("ancillary grid does not align with the abundance grid")
    t = series_values.shape[2]
    timestamps = np.arange(t, dtype=np.int64)
    samples = []
    for row in range(hc):
        for col in range(wc):
            if grid.excluded[row, col]:
                continue
            samples.append(
                make_sample(
                    series_values[row, col],
                    series_mask[row, col],
                    timestamps,
                    ancillary[row, col],
                    grid.abundances[row, col],
                    (col, row),
                )
            )
    if not samples:
        raise EmptyDataset("every coarse cell is excluded")
    if legend is None:
        legend = generic_legend(k)
    return Dataset(samples=tuple(samples), legend=tuple(legend))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_label_raster(raster: LabelRaster, path: str | os.PathLike) -> None:
    lines = [f"{raster.width} {raster.height} {raster.cell_size!r} {raster.n_classes}"]
    for row in raster.labels:
        lines.append(" ".join(str(int(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_label_raster(path: str | os.PathLike) -> LabelRaster:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise DataError("raster header must be 'width height cell_size K'")
        width, height = int(header[0]), int(header[1])
        cell_size, k = float(header[2]), int(header[3])
        flat = fh.read().split()
    if len(flat) != width * height:
        raise DataError(
            f"raster body has {len(flat)} cells, expected {width * height}"
        )
    labels = np.array([int(v) for v in flat], dtype=np.int64).reshape(height, width)
    return LabelRaster(labels=labels, n_classes=k, cell_size=cell_size)


def abundance_grid_to_csv(grid: AbundanceGrid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    k = grid.n_classes
    writer.writerow(["grid_x", "grid_y"] + [f"abund_{i + 1}" for i in range(k)])
    hc, wc = grid.excluded.shape
    for row in range(hc):
        for col in range(wc):
            if grid.excluded[row, col]:
                continue
            writer.writerow(
                [col, row] + [repr(v) for v in grid.abundances[row, col]]
            )
    return buf.getvalue()
