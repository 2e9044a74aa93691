"""Block-based train/test splitting on the pixel grid.

Neighbouring pixels are strongly autocorrelated, so pixels are grouped
into rectangular blocks and whole blocks are assigned to train or test.
Defaults of 39 x 32 pixels give roughly 1250-pixel blocks at 460 m.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data_model import atomic_write_text
from .errors import DataError, TooFewBlocks

DEFAULT_BLOCK_W = 39
DEFAULT_BLOCK_H = 32
DEFAULT_TRAIN_RATIO = 0.8


def _grid_coords(samples: Iterable) -> list[tuple[int, int]]:
    coords = []
    for s in samples:
        if hasattr(s, "grid_x"):
            coords.append((int(s.grid_x), int(s.grid_y)))
        else:
            gx, gy = s
            coords.append((int(gx), int(gy)))
    return coords


def make_blocks(samples: Iterable, block_w: int, block_h: int) -> list[tuple[int, int]]:
    """Block id (grid_x // block_w, grid_y // block_h) per sample.

    ``samples`` may be Sample objects or bare (grid_x, grid_y) pairs.
    """
    if block_w < 1 or block_h < 1:
        raise DataError("block dimensions must be >= 1")
    return [(gx // block_w, gy // block_h) for gx, gy in _grid_coords(samples)]


@dataclass(frozen=True)
class BlockAssignment:
    """Per-sample block ids and the block-level train/test labels."""

    pixel_ids: tuple[str, ...]
    block_ids: tuple[str, ...]
    labels: tuple[str, ...]
    block_w: int | None = None
    block_h: int | None = None
    ratio: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if not (len(self.pixel_ids) == len(self.block_ids) == len(self.labels)):
            raise DataError("per-sample columns must have equal length")
        if any(label not in ("train", "test") for label in self.labels):
            raise DataError("split labels must be 'train' or 'test'")
        per_block: dict[str, str] = {}
        for block, label in zip(self.block_ids, self.labels):
            if per_block.setdefault(block, label) != label:
                raise DataError(f"block {block} carries both split labels")

    def train_ids(self) -> tuple[str, ...]:
        return tuple(p for p, l in zip(self.pixel_ids, self.labels) if l == "train")

    def test_ids(self) -> tuple[str, ...]:
        return tuple(p for p, l in zip(self.pixel_ids, self.labels) if l == "test")

    @property
    def n_blocks(self) -> int:
        return len(set(self.block_ids))

    @property
    def n_train_blocks(self) -> int:
        return len({b for b, l in zip(self.block_ids, self.labels) if l == "train"})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pixel_id", "block_id", "split"])
        for row in zip(self.pixel_ids, self.block_ids, self.labels):
            writer.writerow(row)
        return buf.getvalue()

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "BlockAssignment":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["pixel_id", "block_id", "split"]:
            raise DataError("split CSV header must be pixel_id,block_id,split")
        pids, blocks, labels = [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"malformed split row: {row!r}")
            pids.append(row[0])
            blocks.append(row[1])
            labels.append(row[2])
        return cls(tuple(pids), tuple(blocks), tuple(labels))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "BlockAssignment":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return cls.from_csv(fh.read())


def assign_split(
    pixel_ids: Sequence[str],
    block_ids: Sequence[tuple[int, int]],
    ratio: float,
    seed: int,
    block_w: int | None = None,
    block_h: int | None = None,
) -> BlockAssignment:
    """Shuffle distinct blocks with a seeded generator and label the first
    ceil(ratio * n_blocks) of them train, the rest test."""
    if not 0.0 < ratio < 1.0:
        raise DataError("ratio must lie strictly between 0 and 1")
    if len(pixel_ids) != len(block_ids):
        raise DataError("pixel_ids and block_ids must have equal length")
    unique_blocks = sorted(set(block_ids))
    if len(unique_blocks) < 2:
        raise TooFewBlocks(
            f"need at least 2 distinct blocks, got {len(unique_blocks)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    order = rng.permutation(len(unique_blocks))
    n_train = math.ceil(ratio * len(unique_blocks))
    train_blocks = {unique_blocks[i] for i in order[:n_train]}
    labels = tuple(
        "train" if block in train_blocks else "test" for block in block_ids
    )
    return BlockAssignment(
        pixel_ids=tuple(pixel_ids),
        block_ids=tuple(f"{bx}_{by}" for bx, by in block_ids),
        labels=labels,
        block_w=block_w,
        block_h=block_h,
        ratio=ratio,
        seed=seed,
    )


def split_dataset(
    dataset,
    block_w: int = DEFAULT_BLOCK_W,
    block_h: int = DEFAULT_BLOCK_H,
    ratio: float = DEFAULT_TRAIN_RATIO,
    seed: int = 0,
) -> BlockAssignment:
    """Convenience wrapper: block and split a Dataset's samples."""
    blocks = make_blocks(dataset.samples, block_w, block_h)
    return assign_split(dataset.pixel_ids, blocks, ratio, seed, block_w, block_h)
