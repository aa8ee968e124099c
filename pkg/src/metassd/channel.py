"""Finite-memory ISI channel simulation and task generation.

Symbols are BPSK (``+1``/``-1``), taps are Rayleigh with an exponential power
delay profile, and receiver noise is circularly-symmetric complex Gaussian.
Complex values are plain ``complex128`` numpy arrays; a "ChannelTaps" object
is a length-L complex vector.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .rng import RngStream

CONSTELLATION = np.array([1.0, -1.0])

SNR_MIN_DB = 0
SNR_MAX_DB = 15


def noise_variance_from_snr(snr_db) -> float:
    return 10.0 ** (-float(snr_db) / 10.0)


@dataclass(frozen=True)
class ChannelProfile:
    L: int
    gamma: float
    sigma_sq: np.ndarray


def exp_pdp_profile(L: int, gamma: float) -> ChannelProfile:
    if L < 1:
        raise ValueError(f"memory length must be >= 1, got {L}")
    # weights are shifted so the largest exponent is 0; normalisation is unchanged
    e = -gamma * np.arange(L, dtype=float)
    w = np.exp(e - e.max())
    return ChannelProfile(L=L, gamma=float(gamma), sigma_sq=w / w.sum())


def sample_channel(profile: ChannelProfile, rng: RngStream) -> np.ndarray:
    return rng.complex_normal(profile.sigma_sq, size=profile.L)


def sample_symbols(N: int, rng: RngStream) -> np.ndarray:
    if N < 1:
        raise ValueError(f"need at least one symbol, got N={N}")
    return CONSTELLATION[rng.integers(0, 2, size=N)]


def convolve_causal(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``out[i] = sum_l h[l] * x[i - l]`` with ``x[<0] = 0``, truncated to len(x)."""
    return np.convolve(x, h)[: len(x)]


def transmit(x: np.ndarray, h: np.ndarray, noise_var: float, rng: RngStream) -> np.ndarray:
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    y = convolve_causal(np.asarray(x, dtype=complex), np.asarray(h, dtype=complex))
    if noise_var > 0:
        y = y + rng.complex_normal(noise_var, size=len(x))
    return y


def corrupt_csi(h: np.ndarray, sigma_n_sq: float, rng: RngStream) -> np.ndarray:
    if sigma_n_sq < 0:
        raise ValueError("CSI noise variance must be non-negative")
    h = np.asarray(h, dtype=complex)
    if sigma_n_sq == 0:
        return h.copy()
    return h + rng.complex_normal(sigma_n_sq, size=len(h))


@dataclass(frozen=True)
class TaskConfig:
    N: int = 10_000
    P: int = 100
    L: int = 4
    gamma: float = 2.0
    snr_db: int | None = None  # None: uniform over the integers snr_min..snr_max
    snr_min: int = SNR_MIN_DB
    snr_max: int = SNR_MAX_DB
    sigma_n_sq: float = 0.0

    def validate(self):
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not 0 <= self.P <= self.N:
            raise ValueError(f"need 0 <= P <= N, got P={self.P}, N={self.N}")
        if self.sigma_n_sq < 0:
            raise ValueError("sigma_n_sq must be non-negative")
        if self.snr_db is None and self.snr_min > self.snr_max:
            raise ValueError("empty SNR range")
        return self


@dataclass
class Task:
    x: np.ndarray
    y: np.ndarray
    P: int
    h_true: np.ndarray
    h_est: np.ndarray
    snr_db: int
    noise_var: float
    seed: int

    @property
    def N(self) -> int:
        return len(self.x)

    @property
    def L(self) -> int:
        return len(self.h_true)

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.P == other.P
            and self.snr_db == other.snr_db
            and self.noise_var == other.noise_var
            and self.seed == other.seed
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.h_true, other.h_true)
            and np.array_equal(self.h_est, other.h_est)
        )


# child indices of a task stream; fixed so that scenarios sharing a seed share
# channel, symbols and noise and differ only in the CSI draw
_SNR, _CHANNEL, _SYMBOLS, _NOISE, _CSI = range(5)


def make_task(cfg: TaskConfig, rng: RngStream) -> Task:
    cfg.validate()
    if cfg.snr_db is None:
        snr_db = int(rng.child(_SNR).integers(cfg.snr_min, cfg.snr_max + 1))
    else:
        snr_db = int(cfg.snr_db)
    noise_var = noise_variance_from_snr(snr_db)
    h = sample_channel(exp_pdp_profile(cfg.L, cfg.gamma), rng.child(_CHANNEL))
    x = sample_symbols(cfg.N, rng.child(_SYMBOLS))
    y = transmit(x, h, noise_var, rng.child(_NOISE))
    h_est = corrupt_csi(h, cfg.sigma_n_sq, rng.child(_CSI))
    return Task(x=x, y=y, P=cfg.P, h_true=h, h_est=h_est, snr_db=snr_db,
                noise_var=noise_var, seed=rng.seed)


def task_seed(root_seed: int, *path: int) -> int:
    return RngStream(root_seed, tuple(path)).derive_seed()


def make_task_set(cfg: TaskConfig, seed: int, count: int, *, group: int = 0) -> list[Task]:
    """``count`` tasks whose streams are ``(seed, group, index)``-derived."""
    return [make_task(cfg, RngStream(task_seed(seed, group, t))) for t in range(count)]


# -- task-set files -----------------------------------------------------------

MAGIC = b"MSSD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, N, P, L, count
_RECORD = struct.Struct("<iQd")  # snr_db, seed, noise_var


def save_task_set(tasks: list[Task], path, cfg: TaskConfig | None = None, seed: int | None = None):
    """Write tasks as a little-endian binary file plus a ``.toml`` manifest."""
    path = Path(path)
    if not tasks:
        raise ValueError("refusing to write an empty task set")
    N, P, L = tasks[0].N, tasks[0].P, tasks[0].L
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, N, P, L, len(tasks)))
        for t in tasks:
            if (t.N, t.P, t.L) != (N, P, L):
                raise ValueError("all tasks in a set must share N, P and L")
            f.write(_RECORD.pack(t.snr_db, t.seed, t.noise_var))
            f.write(t.x.astype("<f8").tobytes())
            f.write(_interleave(t.y).tobytes())
            f.write(_interleave(t.h_true).tobytes())
            f.write(_interleave(t.h_est).tobytes())
    manifest = {"format_version": FORMAT_VERSION, "count": len(tasks), "N": N, "P": P, "L": L,
                "seeds": [t.seed for t in tasks]}
    if cfg is not None:
        manifest["config"] = {k: v for k, v in asdict(cfg).items() if v is not None}
    if seed is not None:
        manifest["root_seed"] = seed
    with open(manifest_path(path), "wb") as f:
        tomli_w.dump(manifest, f)


def load_task_set(path) -> list[Task]:
    data = Path(path).read_bytes()
    magic, version, N, P, L, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a task-set file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = _HEADER.size
    tasks = []
    for _ in range(count):
        snr_db, seed, noise_var = _RECORD.unpack_from(data, off)
        off += _RECORD.size
        x, off = _read_f8(data, off, N)
        y, off = _read_f8(data, off, 2 * N)
        h, off = _read_f8(data, off, 2 * L)
        h_est, off = _read_f8(data, off, 2 * L)
        tasks.append(Task(x=x, y=_deinterleave(y), P=P, h_true=_deinterleave(h),
                          h_est=_deinterleave(h_est), snr_db=snr_db,
                          noise_var=noise_var, seed=seed))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return tasks


def load_manifest(path) -> dict:
    with open(manifest_path(path), "rb") as f:
        return tomli.load(f)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".toml")


def _interleave(z: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(z), dtype="<f8")
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def _deinterleave(a: np.ndarray) -> np.ndarray:
    return a[0::2] + 1j * a[1::2]


def _read_f8(data: bytes, off: int, n: int):
    arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(float)
    return arr, off + 8 * n


def with_scenario(cfg: TaskConfig, scenario: str, sigma_n_sq: float = 0.4) -> TaskConfig:
    if scenario == "perfect":
        return replace(cfg, sigma_n_sq=0.0)
    if scenario == "noisy":
        return replace(cfg, sigma_n_sq=sigma_n_sq)
    raise ValueError(f"unknown scenario {scenario!r}")
