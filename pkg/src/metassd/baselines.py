"""Model-based reference detectors: BCJR, exhaustive MAP and per-tone MMSE."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .channel import CONSTELLATION
from .rng import RngStream

NOISE_VAR_FLOOR = 1e-12
MAX_EXHAUSTIVE_N = 16


@dataclass(frozen=True)
class Trellis:
    """States are the previous ``L-1`` symbols, most recent first, written in
    base ``|X|`` with the most recent symbol as the least significant digit.
    """

    L: int
    constellation: np.ndarray = CONSTELLATION

    @property
    def M(self) -> int:
        return len(self.constellation)

    @property
    def n_states(self) -> int:
        return self.M ** (self.L - 1)

    @property
    def states(self) -> np.ndarray:
        """``(n_states, L-1)`` symbol values; column ``l-1`` is ``x[i-l]``."""
        digits = np.array(list(itertools.product(range(self.M), repeat=self.L - 1)), dtype=int)
        digits = digits.reshape(self.n_states, self.L - 1)[:, ::-1]
        return self.constellation[digits]

    @property
    def next_state(self) -> np.ndarray:
        """``(n_states, M)``: successor of each state under each input."""
        s = np.arange(self.n_states)[:, None]
        k = np.arange(self.M)[None, :]
        if self.L == 1:
            return np.zeros((1, self.M), dtype=int)
        return k + self.M * (s % (self.M ** (self.L - 2)))


def bcjr_detect(y: np.ndarray, h_est: np.ndarray, noise_var: float):
    """Per-symbol MAP posteriors and decisions via log-domain forward-backward.

    The transmitter is assumed to start from silence (symbols before the block
    are zero); the final state is left free.
    """
    y = np.asarray(y, dtype=np.complex128)
    h = np.asarray(h_est, dtype=np.complex128)
    trellis = Trellis(len(h))
    nv = max(float(noise_var), NOISE_VAR_FLOOR)
    # isi[s, l-1] = h_l * x[i-l] for the symbols remembered in state s
    isi = trellis.states * h[1:][None, :] if len(h) > 1 else np.zeros((1, 0), complex)
    log_post = _forward_backward(y, h[0], isi, trellis.constellation.astype(np.complex128),
                                 trellis.next_state, nv)
    post = np.exp(log_post - log_post.max(axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    return post, trellis.constellation[np.argmax(post, axis=1)]


@numba.njit(cache=True)
def _logsumexp2(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@numba.njit(cache=True)
def _branch(y, h0, isi, const, i, nv):
    """``(S, M)`` log branch metrics at time ``i``; lags reaching before the
    block contribute nothing."""
    S, Lm1 = isi.shape
    M = const.shape[0]
    out = np.empty((S, M))
    for s in range(S):
        mem = 0j
        for l in range(min(Lm1, i)):
            mem += isi[s, l]
        for k in range(M):
            r = y[i] - h0 * const[k] - mem
            out[s, k] = -(r.real * r.real + r.imag * r.imag) / nv
    return out


@numba.njit(cache=True)
def _forward_backward(y, h0, isi, const, nxt, nv):
    N = y.shape[0]
    S = isi.shape[0]
    M = const.shape[0]
    alpha = np.empty((N + 1, S))
    alpha[0, :] = 0.0  # pre-block memory is all-zero for every state
    for i in range(N):
        g = _branch(y, h0, isi, const, i, nv)
        row = np.full(S, -np.inf)
        for s in range(S):
            for k in range(M):
                t = nxt[s, k]
                row[t] = _logsumexp2(row[t], alpha[i, s] + g[s, k])
        m = row.max()
        alpha[i + 1, :] = row - m
    beta = np.zeros(S)
    log_post = np.empty((N, M))
    for i in range(N - 1, -1, -1):
        g = _branch(y, h0, isi, const, i, nv)
        new_beta = np.full(S, -np.inf)
        acc = np.full(M, -np.inf)
        for s in range(S):
            for k in range(M):
                v = g[s, k] + beta[nxt[s, k]]
                new_beta[s] = _logsumexp2(new_beta[s], v)
                acc[k] = _logsumexp2(acc[k], alpha[i, s] + v)
        log_post[i, :] = acc
        m = new_beta.max()
        beta = new_beta - m
    return log_post


def exhaustive_map(y: np.ndarray, h_est: np.ndarray, noise_var: float) -> np.ndarray:
    """Brute-force per-symbol marginals over all ``|X|^N`` input sequences."""
    y = np.asarray(y, dtype=complex)
    N = len(y)
    if N > MAX_EXHAUSTIVE_N:
        raise ValueError(f"exhaustive MAP limited to N <= {MAX_EXHAUSTIVE_N}, got {N}")
    h = np.asarray(h_est, dtype=complex)
    nv = max(float(noise_var), NOISE_VAR_FLOOR)
    idx = np.array(list(itertools.product(range(len(CONSTELLATION)), repeat=N)))
    seqs = CONSTELLATION[idx]
    # Toeplitz convolution matrix: y_hat = T @ x
    T = np.zeros((N, N), dtype=complex)
    for l, hl in enumerate(h):
        T += hl * np.eye(N, k=-l)
    r = y[None, :] - seqs @ T.T
    loglik = -np.sum(np.abs(r) ** 2, axis=1) / nv
    w = np.exp(loglik - loglik.max())
    w /= w.sum()
    post = np.stack([(w[:, None] * (idx == k)).sum(axis=0) for k in range(len(CONSTELLATION))],
                    axis=1)
    return post / post.sum(axis=1, keepdims=True)


def mmse_ofdm_equalize(y: np.ndarray, h_est: np.ndarray, noise_var: float,
                       block_size: int = 64) -> np.ndarray:
    """Blockwise DFT-domain MMSE estimate of the transmitted symbols (complex).

    Each block is treated as if the channel acted circularly on it; the
    resulting mismatch with the true linear convolution is inherent to the
    baseline.  The last block is zero-padded.
    """
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h_est, dtype=complex)
    if block_size < len(h):
        raise ValueError(f"block_size {block_size} shorter than channel memory {len(h)}")
    N = len(y)
    n_blocks = -(-N // block_size)
    padded = np.zeros(n_blocks * block_size, dtype=complex)
    padded[:N] = y
    Y = np.fft.fft(padded.reshape(n_blocks, block_size), axis=1)
    H = np.fft.fft(h, block_size)
    X = np.conj(H) * Y / (np.abs(H) ** 2 + noise_var)
    return np.fft.ifft(X, axis=1).ravel()[:N]


def mmse_ofdm_detect(y: np.ndarray, h_est: np.ndarray, noise_var: float,
                     block_size: int = 64, rng: RngStream | None = None) -> np.ndarray:
    """Sign decisions on :func:`mmse_ofdm_equalize` (ties go to +1).

    An all-zero channel estimate carries no information: a warning is issued
    and the decisions are drawn at random from ``rng``.
    """
    if block_size < len(h_est):
        raise ValueError(f"block_size {block_size} shorter than channel memory {len(h_est)}")
    if not np.any(h_est):
        warnings.warn("all-zero channel estimate: MMSE decisions are random", RuntimeWarning)
        rng = rng or RngStream(0)
        return CONSTELLATION[rng.integers(0, 2, size=len(y))]
    x_hat = mmse_ofdm_equalize(y, h_est, noise_var, block_size)
    return np.where(x_hat.real >= 0, 1.0, -1.0)
