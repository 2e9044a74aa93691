"""Unidirectional recurrent imputation cell and sequence pass.

Each step estimates the current observation twice (from the hidden state
and from the other bands of the mask-completed observation), blends the
two with a decay/mask-conditioned gate, fills the gaps, and feeds the
completed vector plus mask into an LSTM update. Per-step losses penalize
all three estimates on observed entries only.

The backward pass is hand-derived and operates on batched (N, ...) arrays;
the public single-sample operations wrap batches of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data_model import FloatArray, SpectralSeries
from .errors import DataError, NonFinite, ShapeMismatch

# (field name, is_matrix) in canonical checkpoint order
_PARAM_FIELDS = (
    ("decay_W", True),
    ("decay_b", False),
    ("hdecay_W", True),
    ("hdecay_b", False),
    ("hist_W", True),
    ("hist_b", False),
    ("feat_W", True),
    ("feat_b", False),
    ("comb_W", True),
    ("comb_b", False),
    ("W_i", True),
    ("b_i", False),
    ("W_f", True),
    ("b_f", False),
    ("W_o", True),
    ("b_o", False),
    ("W_c", True),
    ("b_c", False),
)


@dataclass
class RitsParams:
    """All weights of one directional cell.

    Shapes for B bands and hidden size H: decay (B,B)+(B,), history
    regression (H,B)+(B,), feature regression (B,B)+(B,) with a zero
    diagonal, combining gate (2B,B)+(B,), four LSTM gates (2B+H,H)+(H,).
    ``hdecay_*`` maps gaps to a hidden-state decay and is None unless the
    hidden-decay variant is enabled.
    """

    decay_W: FloatArray
    decay_b: FloatArray
    hist_W: FloatArray
    hist_b: FloatArray
    feat_W: FloatArray
    feat_b: FloatArray
    comb_W: FloatArray
    comb_b: FloatArray
    W_i: FloatArray
    b_i: FloatArray
    W_f: FloatArray
    b_f: FloatArray
    W_o: FloatArray
    b_o: FloatArray
    W_c: FloatArray
    b_c: FloatArray
    hdecay_W: FloatArray | None = None
    hdecay_b: FloatArray | None = None

    def __post_init__(self):
        b = self.decay_W.shape[0]
        h = self.hist_W.shape[0]
        if self.decay_W.shape != (b, b) or self.feat_W.shape != (b, b):
            raise ShapeMismatch("decay and feature weights must be B x B")
        if self.comb_W.shape != (2 * b, b):
            raise ShapeMismatch("combining weights must be 2B x B")
        for gate in (self.W_i, self.W_f, self.W_o, self.W_c):
            if gate.shape != (2 * b + h, h):
                raise ShapeMismatch("LSTM gate weights must be (2B+H) x H")
        if (self.hdecay_W is None) != (self.hdecay_b is None):
            raise ShapeMismatch("hidden decay weights and biases must come together")
        if self.hdecay_W is not None and self.hdecay_W.shape != (b, h):
            raise ShapeMismatch("hidden decay weights must be B x H")
        if np.any(np.diag(self.feat_W) != 0.0):
            raise DataError("feature-regression diagonal must be exactly zero")

    @property
    def n_bands(self) -> int:
        return self.decay_W.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.hist_W.shape[0]

    @property
    def hidden_decay(self) -> bool:
        return self.hdecay_W is not None

    def named(self, prefix: str = "") -> Iterator[tuple[str, FloatArray]]:
        for name, _ in _PARAM_FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                yield prefix + name, arr


@dataclass
class RitsState:
    """Hidden and cell-memory vectors; zero at the start of a sequence."""

    h: FloatArray
    c: FloatArray

    @classmethod
    def zeros(cls, hidden_size: int, n: int | None = None) -> "RitsState":
        shape = (hidden_size,) if n is None else (n, hidden_size)
        return cls(h=np.zeros(shape), c=np.zeros(shape))


@dataclass
class RitsStepOutput:
    state: RitsState
    imputation: FloatArray
    step_loss: float | FloatArray


def _sigmoid(x: FloatArray) -> FloatArray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def temporal_decay(delta_t: FloatArray, params: RitsParams) -> FloatArray:
    """gamma = exp(-max(0, W delta + b)), componentwise in (0, 1]."""
    delta_t = np.asarray(delta_t, dtype=np.float64)
    pre = delta_t @ params.decay_W + params.decay_b
    return np.exp(-np.maximum(0.0, pre))


def _pack_gates(params: RitsParams) -> tuple[FloatArray, FloatArray]:
    w4 = np.concatenate([params.W_i, params.W_f, params.W_o, params.W_c], axis=1)
    b4 = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_c])
    return w4, b4


def _step(h_prev, c_prev, x, m, d, params, w4, b4, cache_steps):
    hidden = params.hidden_size
    pg = d @ params.decay_W + params.decay_b
    gamma = np.exp(-np.maximum(0.0, pg))
    if params.hidden_decay:
        pgh = d @ params.hdecay_W + params.hdecay_b
        gh = np.exp(-np.maximum(0.0, pgh))
        h_dec = gh * h_prev
    else:
        pgh = gh = None
        h_dec = h_prev
    xhat = h_dec @ params.hist_W + params.hist_b
    xc = m * x + (1.0 - m) * xhat
    zhat = xc @ params.feat_W + params.feat_b
    gm = np.concatenate([gamma, m], axis=1)
    beta = _sigmoid(gm @ params.comb_W + params.comb_b)
    chat = beta * zhat + (1.0 - beta) * xhat
    comp = m * x + (1.0 - m) * chat
    z_in = np.concatenate([comp, m, h_dec], axis=1)
    a4 = z_in @ w4 + b4
    gate_i = _sigmoid(a4[:, :hidden])
    gate_f = _sigmoid(a4[:, hidden : 2 * hidden])
    gate_o = _sigmoid(a4[:, 2 * hidden : 3 * hidden])
    cand = np.tanh(a4[:, 3 * hidden :])
    c_t = gate_f * c_prev + gate_i * cand
    tanh_c = np.tanh(c_t)
    h_t = gate_o * tanh_c
    denom = np.maximum(1.0, m.sum(axis=1))
    resid = m * (np.abs(x - xhat) + np.abs(x - zhat) + np.abs(x - chat))
    step_loss = resid.sum(axis=1) / denom
    if cache_steps is not None:
        cache_steps.append(
            dict(
                x=x, m=m, d=d, pg=pg, gamma=gamma, pgh=pgh, gh=gh,
                h_prev=h_prev, c_prev=c_prev, h_dec=h_dec, xhat=xhat, xc=xc,
                zhat=zhat, gm=gm, beta=beta, chat=chat, z_in=z_in,
                gate_i=gate_i, gate_f=gate_f, gate_o=gate_o, cand=cand,
                c_t=c_t, tanh_c=tanh_c, denom=denom,
            )
        )
    return h_t, c_t, chat, step_loss


def forward_batch(
    values: FloatArray,
    mask: FloatArray,
    deltas: FloatArray,
    params: RitsParams,
    keep_cache: bool = False,
):
    """Run the cell over (N, T, B) arrays threaded from zero state.

    Returns (h_T (N,H), imputations (N,T,B), per-sample loss (N,), cache).
    """
    n, t_steps, _ = values.shape
    h = np.zeros((n, params.hidden_size))
    c = np.zeros((n, params.hidden_size))
    w4, b4 = _pack_gates(params)
    cache_steps: list | None = [] if keep_cache else None
    imputations = np.empty_like(values)
    losses = np.zeros(n)
    for t in range(t_steps):
        h, c, chat, step_loss = _step(
            h, c, values[:, t], mask[:, t], deltas[:, t], params, w4, b4, cache_steps
        )
        imputations[:, t] = chat
        losses += step_loss
    losses /= t_steps
    cache = None
    if keep_cache:
        cache = {"steps": cache_steps, "t_steps": t_steps, "w4": w4}
    return h, imputations, losses, cache


def zero_grads(params: RitsParams) -> dict[str, FloatArray]:
    return {name: np.zeros_like(arr) for name, arr in params.named()}


def backward_batch(
    params: RitsParams,
    cache: dict,
    d_hT: FloatArray,
    d_imps: FloatArray | None,
    d_loss: FloatArray | None,
) -> dict[str, FloatArray]:
    """Backpropagate through forward_batch.

    d_hT: (N,H) gradient on the final hidden state; d_imps: (N,T,B)
    gradient on the imputations; d_loss: (N,) gradient on the per-sample
    imputation loss. Returns gradients keyed like ``params.named()``.
    """
    steps = cache["steps"]
    t_steps = cache["t_steps"]
    w4 = cache["w4"]
    hidden = params.hidden_size
    n_bands = params.n_bands
    grads = zero_grads(params)
    d_w4 = np.zeros_like(w4)
    d_b4 = np.zeros(4 * hidden)
    dh = np.asarray(d_hT, dtype=np.float64).copy()
    dc_carry = np.zeros_like(dh)
    for t in range(t_steps - 1, -1, -1):
        s = steps[t]
        x, m = s["x"], s["m"]
        if d_loss is not None:
            coef = (d_loss / t_steps / s["denom"])[:, None]
            cm = coef * m
            dxhat_l = -cm * np.sign(x - s["xhat"])
            dzhat_l = -cm * np.sign(x - s["zhat"])
            dchat_l = -cm * np.sign(x - s["chat"])
        else:
            dxhat_l = dzhat_l = dchat_l = 0.0
        # LSTM update
        d_o = dh * s["tanh_c"]
        dc = dc_carry + dh * s["gate_o"] * (1.0 - s["tanh_c"] ** 2)
        d_f = dc * s["c_prev"]
        d_i = dc * s["cand"]
        d_g = dc * s["gate_i"]
        dc_carry = dc * s["gate_f"]
        da4 = np.concatenate(
            [
                d_i * s["gate_i"] * (1.0 - s["gate_i"]),
                d_f * s["gate_f"] * (1.0 - s["gate_f"]),
                d_o * s["gate_o"] * (1.0 - s["gate_o"]),
                d_g * (1.0 - s["cand"] ** 2),
            ],
            axis=1,
        )
        d_w4 += s["z_in"].T @ da4
        d_b4 += da4.sum(axis=0)
        dz_in = da4 @ w4.T
        dcomp = dz_in[:, :n_bands]
        dh_dec = dz_in[:, 2 * n_bands :]
        # completed input and combined estimate
        dchat = dcomp * (1.0 - m) + dchat_l
        if d_imps is not None:
            dchat = dchat + d_imps[:, t]
        dbeta = dchat * (s["zhat"] - s["xhat"])
        dzhat = dchat * s["beta"] + dzhat_l
        dxhat = dchat * (1.0 - s["beta"]) + dxhat_l
        # combining gate
        dpb = dbeta * s["beta"] * (1.0 - s["beta"])
        grads["comb_W"] += s["gm"].T @ dpb
        grads["comb_b"] += dpb.sum(axis=0)
        dgamma = (dpb @ params.comb_W.T)[:, :n_bands]
        # feature regression
        grads["feat_W"] += s["xc"].T @ dzhat
        grads["feat_b"] += dzhat.sum(axis=0)
        dxhat = dxhat + (dzhat @ params.feat_W.T) * (1.0 - m)
        # history regression
        grads["hist_W"] += s["h_dec"].T @ dxhat
        grads["hist_b"] += dxhat.sum(axis=0)
        dh_dec = dh_dec + dxhat @ params.hist_W.T
        if params.hidden_decay:
            dgh = dh_dec * s["h_prev"]
            dh = dh_dec * s["gh"]
            dpgh = dgh * (-s["gh"]) * (s["pgh"] > 0.0)
            grads["hdecay_W"] += s["d"].T @ dpgh
            grads["hdecay_b"] += dpgh.sum(axis=0)
        else:
            dh = dh_dec
        # temporal decay
        dpg = dgamma * (-s["gamma"]) * (s["pg"] > 0.0)
        grads["decay_W"] += s["d"].T @ dpg
        grads["decay_b"] += dpg.sum(axis=0)
    grads["W_i"] += d_w4[:, :hidden]
    grads["W_f"] += d_w4[:, hidden : 2 * hidden]
    grads["W_o"] += d_w4[:, 2 * hidden : 3 * hidden]
    grads["W_c"] += d_w4[:, 3 * hidden :]
    grads["b_i"] += d_b4[:hidden]
    grads["b_f"] += d_b4[hidden : 2 * hidden]
    grads["b_o"] += d_b4[2 * hidden : 3 * hidden]
    grads["b_c"] += d_b4[3 * hidden :]
    return grads


# ---------------------------------------------------------------------------
# single-sample contract surface
# ---------------------------------------------------------------------------

def rits_step(
    state: RitsState,
    x_t: FloatArray,
    m_t: FloatArray,
    delta_t: FloatArray,
    params: RitsParams,
) -> RitsStepOutput:
    """One cell update for a single time step (1-D or batched 2-D inputs)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x = np.atleast_2d(x_t)
    m = np.atleast_2d(np.asarray(m_t, dtype=np.float64))
    d = np.atleast_2d(np.asarray(delta_t, dtype=np.float64))
    h = np.atleast_2d(state.h)
    c = np.atleast_2d(state.c)
    if x.shape != m.shape or x.shape != d.shape or x.shape[1] != params.n_bands:
        raise ShapeMismatch("step inputs must share shape (.., B)")
    w4, b4 = _pack_gates(params)
    h_t, c_t, chat, step_loss = _step(h, c, x, m, d, params, w4, b4, None)
    if not (np.all(np.isfinite(h_t)) and np.all(np.isfinite(chat))):
        raise NonFinite("non-finite value produced by the cell update")
    if single:
        return RitsStepOutput(
            state=RitsState(h=h_t[0], c=c_t[0]),
            imputation=chat[0],
            step_loss=float(step_loss[0]),
        )
    return RitsStepOutput(state=RitsState(h=h_t, c=c_t), imputation=chat, step_loss=step_loss)


def rits_forward(
    series: SpectralSeries, params: RitsParams
) -> tuple[FloatArray, FloatArray, float]:
    """Sequence pass from zero state: (h_T, imputations T x B, mean step loss)."""
    h, imps, losses, _ = forward_batch(
        series.values[None], series.mask[None], series.deltas[None], params
    )
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(imps))):
        raise NonFinite("non-finite value produced by the sequence pass")
    return h[0], imps[0], float(losses[0])
