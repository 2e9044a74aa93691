"""Bidirectional wrapper: independent forward and backward cells over the
same series, a consistency penalty between their per-step estimates of the
same original time step, and a concatenated feature vector for the head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import rits
from .data_model import FloatArray, SpectralSeries, compute_deltas_batch
from .rits import RitsParams


@dataclass
class BritsParams:
    """Independent weights for the two directions."""

    fwd: RitsParams
    bwd: RitsParams

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size

    @property
    def n_bands(self) -> int:
        return self.fwd.n_bands

    def named(self, prefix: str = "") -> Iterator[tuple[str, FloatArray]]:
        yield from self.fwd.named(prefix + "fwd.")
        yield from self.bwd.named(prefix + "bwd.")


@dataclass
class BritsOutput:
    """Fusion features plus the auxiliary losses of one sample (or batch).

    ``imputations_bwd`` is already re-aligned to forward time, so both
    imputation arrays index the same original time steps.
    """

    features: FloatArray
    L_imp_fwd: float | FloatArray
    L_imp_bwd: float | FloatArray
    L_cons: float | FloatArray
    imputations_fwd: FloatArray
    imputations_bwd: FloatArray

    @property
    def imputations(self) -> FloatArray:
        """Final combined imputation: mean of the two directions."""
        return 0.5 * (self.imputations_fwd + self.imputations_bwd)


def reverse_series(series: SpectralSeries) -> SpectralSeries:
    """Flip a series in time, recomputing gaps on the reversed timeline.

    Timestamps stay anchored at the original start so that reversing twice
    restores the series exactly, deltas included.
    """
    ts = series.timestamps
    new_ts = ts[0] + ts[-1] - ts[::-1]
    return SpectralSeries.build(series.values[::-1], series.mask[::-1], new_ts)


def reverse_arrays(
    values: FloatArray, mask: FloatArray, timestamps: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Batched reverse_series on (N,T,B) arrays; returns reversed values,
    mask, and freshly computed reversed-timeline deltas."""
    rev_values = values[:, ::-1]
    rev_mask = mask[:, ::-1]
    rev_ts = timestamps[:, :1] + timestamps[:, -1:] - timestamps[:, ::-1]
    rev_deltas = compute_deltas_batch(rev_mask, rev_ts)
    return rev_values, rev_mask, rev_deltas


def forward_batch(
    values: FloatArray,
    mask: FloatArray,
    deltas: FloatArray,
    rev_values: FloatArray,
    rev_mask: FloatArray,
    rev_deltas: FloatArray,
    params: BritsParams,
    keep_cache: bool = False,
) -> tuple[BritsOutput, dict | None]:
    """Both directional passes on prepared arrays; per-sample losses."""
    h_f, imps_f, loss_f, cache_f = rits.forward_batch(
        values, mask, deltas, params.fwd, keep_cache
    )
    h_b, imps_b_rev, loss_b, cache_b = rits.forward_batch(
        rev_values, rev_mask, rev_deltas, params.bwd, keep_cache
    )
    imps_b = imps_b_rev[:, ::-1]
    diff = imps_f - imps_b
    l_cons = np.abs(diff).mean(axis=(1, 2))
    out = BritsOutput(
        features=np.concatenate([h_f, h_b], axis=1),
        L_imp_fwd=loss_f,
        L_imp_bwd=loss_b,
        L_cons=l_cons,
        imputations_fwd=imps_f,
        imputations_bwd=imps_b,
    )
    cache = None
    if keep_cache:
        cache = {"fwd": cache_f, "bwd": cache_b, "diff_sign": np.sign(diff)}
    return out, cache


def backward_batch(
    params: BritsParams,
    cache: dict,
    d_features: FloatArray,
    d_imps_fwd: FloatArray | None,
    d_imps_bwd: FloatArray | None,
    d_loss_fwd: FloatArray | None,
    d_loss_bwd: FloatArray | None,
) -> dict[str, FloatArray]:
    """Backprop through both directions; bwd imputation grads arrive in
    forward-time order and are flipped onto the reversed pass here."""
    h = params.hidden_size
    grads_f = rits.backward_batch(
        params.fwd, cache["fwd"], d_features[:, :h], d_imps_fwd, d_loss_fwd
    )
    d_imps_bwd_rev = None if d_imps_bwd is None else d_imps_bwd[:, ::-1]
    grads_b = rits.backward_batch(
        params.bwd, cache["bwd"], d_features[:, h:], d_imps_bwd_rev, d_loss_bwd
    )
    out = {f"fwd.{k}": v for k, v in grads_f.items()}
    out.update({f"bwd.{k}": v for k, v in grads_b.items()})
    return out


def brits_forward(sample, params: BritsParams) -> BritsOutput:
    """Single-sample pass; accepts a Sample or a bare SpectralSeries."""
    series = sample.series if hasattr(sample, "series") else sample
    ts = series.timestamps.astype(np.float64)[None]
    rev_values, rev_mask, rev_deltas = reverse_arrays(
        series.values[None], series.mask[None], ts
    )
    out, _ = forward_batch(
        series.values[None],
        series.mask[None],
        series.deltas[None],
        rev_values,
        rev_mask,
        rev_deltas,
        params,
    )
    return BritsOutput(
        features=out.features[0],
        L_imp_fwd=float(out.L_imp_fwd[0]),
        L_imp_bwd=float(out.L_imp_bwd[0]),
        L_cons=float(out.L_cons[0]),
        imputations_fwd=out.imputations_fwd[0],
        imputations_bwd=out.imputations_bwd[0],
    )
