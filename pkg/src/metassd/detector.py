"""Self-supervised windowed neural detector.

Window ``i`` (1-based) feeds ``y[i-L+1 .. i+L-1]`` to the MLP, whose ``L``
output blocks estimate ``x[i-L+1 .. i]`` (block ``l`` -> ``x[i-L+l]``).  Each
symbol is therefore predicted by ``L`` different windows; those predictions
are averaged with weights proportional to the estimated tap magnitudes.

Training combines cross-entropy on the pilot symbols with the squared error
between the observed outputs and the outputs re-synthesised from the soft
symbols through the estimated channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nn
from .channel import CONSTELLATION, Task, convolve_causal
from .nn import ModelParams

TAP_MAPS = ("reverse", "forward")

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.05
    tap_map: str = "reverse"
    learn_temps: bool = True
    score_pilots: bool = False

    def __post_init__(self):
        if self.tap_map not in TAP_MAPS:
            raise ValueError(f"tap_map must be one of {TAP_MAPS}, got {self.tap_map!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    l_x: float
    l_y: float
    alpha: float
    total: float


# -- windows -------------------------------------------------------------------

def extract_window(y: np.ndarray, i: int, L: int) -> np.ndarray:
    """Encoded window around 1-based index ``i``: ``[re, im, re, im, ...]``."""
    N = len(y)
    if not 1 <= i <= N:
        raise IndexError(f"window index {i} outside [1, {N}]")
    idx = np.arange(i - L + 1, i + L) - 1
    vals = np.where((idx >= 0) & (idx < N), y[np.clip(idx, 0, N - 1)], 0)
    return _encode(vals)


def window_matrix(y: np.ndarray, L: int) -> np.ndarray:
    """All N windows at once, shape ``(N, 2(2L-1))``."""
    padded = np.concatenate([np.zeros(L - 1, complex), np.asarray(y, complex),
                             np.zeros(L - 1, complex)])
    return _encode(sliding_window_view(padded, 2 * L - 1))


def _encode(z: np.ndarray) -> np.ndarray:
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


# -- tempered softmax -------------------------------------------------------------

def tempered_softmax(logits: np.ndarray, tau) -> np.ndarray:
    """Softmax of ``logits / tau`` over the last axis (``tau`` broadcasts)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=float) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _location_probs(params: ModelParams, logits: np.ndarray) -> np.ndarray:
    L = params.arch.L
    K = params.arch.constellation_size
    blocks = logits.reshape(logits.shape[:-1] + (L, K))
    return tempered_softmax(blocks, params.temps[:, None])


def window_predictions(params: ModelParams, y: np.ndarray, i: int) -> np.ndarray:
    """``(L, |X|)`` distributions; row ``l-1`` is for ``x[i-L+l]``."""
    logits = nn.forward(params, extract_window(y, i, params.arch.L))
    return _location_probs(params, logits)


# -- ensemble ------------------------------------------------------------------

def _tap_index(L: int, tap_map: str) -> np.ndarray:
    """Tap weighting each output location (0-based)."""
    loc = np.arange(L)
    return L - 1 - loc if tap_map == "reverse" else loc


def ensemble_weights(h_est: np.ndarray, N: int, tap_map: str = "reverse") -> np.ndarray:
    """``(N, L)`` convex weights; entry ``[j, l]`` multiplies location ``l`` of
    window ``j + L - 1 - l`` (0-based).  Windows outside the block get weight
    zero and the remaining weights are renormalised.
    """
    L = len(h_est)
    mag = np.abs(np.asarray(h_est))[_tap_index(L, tap_map)]
    if not np.any(mag > 0):
        mag = np.ones(L)
    win = np.arange(N)[:, None] + (L - 1 - np.arange(L))[None, :]
    valid = win < N  # win >= 0 always holds
    w = np.where(valid, mag[None, :], 0.0)
    total = w.sum(axis=1, keepdims=True)
    # a boundary symbol whose surviving taps all have zero magnitude
    dead = total[:, 0] == 0
    if np.any(dead):
        w[dead] = valid[dead].astype(float)
        total = w.sum(axis=1, keepdims=True)
    return w / total


def _gather_locations(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rearrange window outputs ``(N, L, K)`` to per-symbol ``(N, L, K)``."""
    N, L, _ = probs.shape
    win = np.arange(N)[:, None] + (L - 1 - np.arange(L))[None, :]
    valid = win < N
    gathered = probs[np.minimum(win, N - 1), np.arange(L)[None, :]]
    return np.where(valid[..., None], gathered, 0.0), valid


def combine(location_probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum over per-symbol location predictions ``(N, L, K)``."""
    return np.einsum("nl,nlk->nk", weights, location_probs)


def ensemble_posterior(params: ModelParams, y: np.ndarray, h_est: np.ndarray,
                       tap_map: str = "reverse") -> np.ndarray:
    logits = nn.forward(params, window_matrix(y, params.arch.L))
    per_symbol, _ = _gather_locations(_location_probs(params, logits))
    return combine(per_symbol, ensemble_weights(h_est, len(y), tap_map))


# -- losses --------------------------------------------------------------------

def soft_symbols(posterior: np.ndarray) -> np.ndarray:
    return posterior @ CONSTELLATION


def symbol_index(x: np.ndarray) -> np.ndarray:
    """Column of each symbol in a posterior matrix (``+1`` -> 0, ``-1`` -> 1)."""
    return (np.asarray(x) < 0).astype(int)


def supervised_loss(posterior: np.ndarray, x: np.ndarray, P: int) -> float:
    if P == 0:
        return 0.0
    p = posterior[np.arange(P), symbol_index(x[:P])]
    return float(-np.log(np.maximum(p, _TINY)).sum())


def reconstruct(soft: np.ndarray, h_est: np.ndarray) -> np.ndarray:
    return convolve_causal(np.asarray(soft, dtype=complex), np.asarray(h_est, dtype=complex))


def self_supervised_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    r = np.asarray(y) - np.asarray(y_hat)
    if r.shape != np.shape(y):
        raise ValueError("y and y_hat must have equal length")
    return float(np.sum(r.real ** 2 + r.imag ** 2))


def total_loss(params: ModelParams, task: Task, alpha: float,
               tap_map: str = "reverse") -> LossBreakdown:
    post = ensemble_posterior(params, task.y, task.h_est, tap_map)
    l_x = supervised_loss(post, task.x, task.P)
    l_y = self_supervised_loss(task.y, reconstruct(soft_symbols(post), task.h_est))
    return LossBreakdown(l_x, l_y, alpha, l_x + alpha * l_y)


def loss_and_grad(params: ModelParams, task: Task, alpha: float,
                  tap_map: str = "reverse", learn_temps: bool = True):
    """Total loss and its gradient with respect to every parameter.

    With ``learn_temps=False`` the log-temperature entries of the gradient are
    zeroed, which freezes the temperatures under any gradient step.
    """
    arch = params.arch
    L, K, N = arch.L, arch.constellation_size, task.N
    inputs = window_matrix(task.y, L)
    logits, acts = nn.forward_cached(params, inputs)
    inv_tau = np.exp(-params.log_temps)[:, None]
    scaled = logits.reshape(N, L, K) * inv_tau
    probs = tempered_softmax(scaled, 1.0)
    per_symbol, valid = _gather_locations(probs)
    weights = ensemble_weights(task.h_est, N, tap_map)
    post = combine(per_symbol, weights)

    # forward losses
    P = task.P
    rows = np.arange(P)
    cols = symbol_index(task.x[:P])
    p_true = np.maximum(post[rows, cols], _TINY)
    l_x = float(-np.log(p_true).sum())
    soft = soft_symbols(post)
    resid = task.y - reconstruct(soft, task.h_est)
    l_y = float(np.sum(resid.real ** 2 + resid.imag ** 2))
    breakdown = LossBreakdown(l_x, l_y, alpha, l_x + alpha * l_y)

    # d/d posterior
    d_post = np.zeros_like(post)
    d_post[rows, cols] = -1.0 / p_true
    if alpha != 0.0:
        # dL_y/dsoft_j = -2 Re sum_l conj(r_{j+l}) h_l
        corr = np.correlate(resid, np.asarray(task.h_est, dtype=complex), mode="full")
        # np.correlate(a, v)[k] = sum_n a[n+k-(len(v)-1)] conj(v[n]); we need conj of it
        d_soft = -2.0 * np.real(np.conj(corr[len(task.h_est) - 1: len(task.h_est) - 1 + N]))
        d_post += alpha * d_soft[:, None] * CONSTELLATION[None, :]

    # back through the ensemble: symbol j, location l <- window j+L-1-l
    d_per_symbol = weights[..., None] * d_post[:, None, :]
    d_probs = np.zeros_like(probs)
    j = np.arange(N)[:, None]
    win = j + (L - 1 - np.arange(L))[None, :]
    jj, ll = np.nonzero(valid)
    d_probs[win[jj, ll], ll] = d_per_symbol[jj, ll]

    # softmax and temperature
    d_scaled = probs * (d_probs - np.sum(probs * d_probs, axis=-1, keepdims=True))
    d_logits = (d_scaled * inv_tau).reshape(N, L * K)
    grad = nn.backward(params, acts, d_logits)
    if learn_temps:
        # scaled = logits * exp(-s)  =>  d scaled / d s = -scaled
        grad[nn.temp_slice(arch)] = -np.sum(d_scaled * scaled, axis=(0, 2))
    return breakdown, params.with_flat(grad)


def adapt(params: ModelParams, task: Task, lam: float, K: int, alpha: float,
          tap_map: str = "reverse", learn_temps: bool = True) -> ModelParams:
    """``K`` full-batch gradient steps of size ``lam`` on the task's loss."""
    if K < 0:
        raise ValueError("K must be non-negative")
    theta = params.flat
    for _ in range(K):
        _, g = loss_and_grad(params.with_flat(theta), task, alpha, tap_map, learn_temps)
        theta = theta - lam * g.flat
    return params.with_flat(theta)


def hard_decisions(posterior: np.ndarray) -> np.ndarray:
    return CONSTELLATION[np.argmax(posterior, axis=1)]


def symbol_error_rate(x_hat: np.ndarray, x: np.ndarray, P: int = 0) -> float:
    x_hat, x = np.asarray(x_hat)[P:], np.asarray(x)[P:]
    if len(x) == 0:
        return 0.0
    return float(np.mean(x_hat != x))


def detect(params: ModelParams, task: Task, tap_map: str = "reverse",
           score_pilots: bool = False):
    post = ensemble_posterior(params, task.y, task.h_est, tap_map)
    x_hat = hard_decisions(post)
    return x_hat, symbol_error_rate(x_hat, task.x, 0 if score_pilots else task.P)
