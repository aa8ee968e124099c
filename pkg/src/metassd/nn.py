"""A fixed-architecture ReLU MLP over a flat float64 parameter vector.

Parameters are stored contiguously as ``[W1, b1, W2, b2, ..., WL, bL,
log_temps]`` with each ``W`` of shape ``(fan_in, fan_out)``.  Gradients use the
same layout, so optimisers are plain vector arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RngStream

FULL_HIDDEN = (100, 300, 300, 100, 50)


@dataclass(frozen=True)
class Architecture:
    L: int
    hidden_dims: tuple[int, ...] = FULL_HIDDEN
    constellation_size: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.L < 1:
            raise ValueError("L must be >= 1")

    @property
    def input_dim(self) -> int:
        # 2L-1 complex outputs, each split into (re, im)
        return 2 * (2 * self.L - 1)

    @property
    def output_dim(self) -> int:
        return self.constellation_size * self.L

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims) + self.L


@dataclass(frozen=True)
class ModelParams:
    """Immutable parameter snapshot; ``flat`` is never mutated in place."""

    arch: Architecture
    flat: np.ndarray
    _views: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=np.float64)
        if flat.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got {flat.shape}")
        flat = flat.copy()
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "_views", _split(self.arch, flat))

    @property
    def weights(self) -> list[np.ndarray]:
        return self._views[0]

    @property
    def biases(self) -> list[np.ndarray]:
        return self._views[1]

    @property
    def log_temps(self) -> np.ndarray:
        return self._views[2]

    @property
    def temps(self) -> np.ndarray:
        return np.exp(self.log_temps)

    def with_flat(self, flat: np.ndarray) -> ModelParams:
        return ModelParams(self.arch, flat)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)


def _split(arch: Architecture, flat: np.ndarray):
    weights, biases = [], []
    off = 0
    for fi, fo in arch.layer_dims:
        weights.append(flat[off: off + fi * fo].reshape(fi, fo))
        off += fi * fo
        biases.append(flat[off: off + fo])
        off += fo
    return weights, biases, flat[off: off + arch.L]


def temp_slice(arch: Architecture) -> slice:
    return slice(arch.n_params - arch.L, arch.n_params)


def flatten(weights, biases, log_temps) -> np.ndarray:
    parts = []
    for W, b in zip(weights, biases):
        parts += [np.ravel(W), np.ravel(b)]
    parts.append(np.ravel(log_temps))
    return np.concatenate(parts).astype(np.float64)


def init_params(arch: Architecture, rng: RngStream) -> ModelParams:
    """He-normal weights, zero biases, unit temperatures."""
    weights = [rng.normal(np.sqrt(2.0 / fi), size=(fi, fo)) for fi, fo in arch.layer_dims]
    biases = [np.zeros(fo) for _, fo in arch.layer_dims]
    return ModelParams(arch, flatten(weights, biases, np.zeros(arch.L)))


def zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(params.arch, np.zeros_like(params.flat))


def forward(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Raw logits for one input vector or a ``(batch, input_dim)`` matrix."""
    return forward_cached(params, inputs)[0]


def forward_cached(params: ModelParams, inputs: np.ndarray):
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[-1] != params.arch.input_dim:
        raise ValueError(f"input dimension {x.shape[-1]} != {params.arch.input_dim}")
    acts = [x]
    h = x
    n = len(params.weights)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if k < n - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def backward(params: ModelParams, acts, dlogits: np.ndarray) -> np.ndarray:
    """Gradient (flat, log-temp entries zero) given upstream ``dL/dlogits``.

    ``acts`` is the activation list from :func:`forward_cached`; inputs must be
    batched (2-D).
    """
    grads_w, grads_b = [], []
    delta = dlogits
    n = len(params.weights)
    for k in range(n - 1, -1, -1):
        a_in = acts[k]
        grads_w.append(a_in.T @ delta)
        grads_b.append(delta.sum(axis=0))
        if k > 0:
            delta = (delta @ params.weights[k].T) * (acts[k] > 0)
    grads_w.reverse()
    grads_b.reverse()
    return flatten(grads_w, grads_b, np.zeros(params.arch.L))


def grad_check(loss_fn, params: ModelParams, epsilon: float = 1e-5,
               n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (value, grad)`` where ``grad`` is a flat vector or a
    ``ModelParams``.  Checks ``n_coords`` random coordinates (all of them if the
    model is smaller) and always includes every log-temperature.
    """
    _, grad = loss_fn(params)
    grad = grad.flat if isinstance(grad, ModelParams) else np.asarray(grad)
    n = params.arch.n_params
    rng = np.random.default_rng(seed)
    if n <= n_coords:
        coords = np.arange(n)
    else:
        coords = np.union1d(rng.choice(n, size=n_coords, replace=False),
                            np.arange(n)[temp_slice(params.arch)])
    worst = 0.0
    base = params.flat
    for c in coords:
        plus = base.copy()
        plus[c] += epsilon
        minus = base.copy()
        minus[c] -= epsilon
        f_plus = _value(loss_fn(params.with_flat(plus)))
        f_minus = _value(loss_fn(params.with_flat(minus)))
        numeric = (f_plus - f_minus) / (2 * epsilon)
        analytic = grad[c]
        scale = max(abs(numeric), abs(analytic))
        if scale < 1e-10:
            continue  # both vanish (e.g. dead ReLU unit)
        worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def _value(out):
    return float(out[0] if isinstance(out, tuple) else out)


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = "MSSD-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    meta: dict[str, str] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint | ModelParams, path) -> None:
    if isinstance(ckpt, ModelParams):
        ckpt = Checkpoint(ckpt)
    arch = ckpt.params.arch
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"L {arch.L}",
        f"constellation_size {arch.constellation_size}",
        "hidden_dims " + " ".join(str(h) for h in arch.hidden_dims),
        f"input_dim {arch.input_dim}",
        f"output_dim {arch.output_dim}",
        f"n_params {arch.n_params}",
    ]
    for k in sorted(ckpt.meta):
        v = str(ckpt.meta[k])
        if "\n" in v or " " in k:
            raise ValueError(f"metadata entry {k!r} is not a single-line token")
        lines.append(f"meta.{k} {v}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("ascii")
    Path(path).write_bytes(header + ckpt.params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    end = data.find(b"\nEND\n")
    if end < 0:
        raise ValueError(f"{path}: missing checkpoint header terminator")
    lines = data[:end].decode("ascii").split("\n")
    magic, version = lines[0].split()
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    fields, meta = {}, {}
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            fields[key] = value
    hidden = tuple(int(h) for h in fields["hidden_dims"].split())
    arch = Architecture(L=int(fields["L"]), hidden_dims=hidden,
                        constellation_size=int(fields["constellation_size"]))
    if arch.n_params != int(fields["n_params"]):
        raise ValueError(f"{path}: header parameter count disagrees with architecture")
    body = data[end + len(b"\nEND\n"):]
    flat = np.frombuffer(body, dtype="<f8")
    if flat.size != arch.n_params:
        raise ValueError(f"{path}: expected {arch.n_params} parameters, found {flat.size}")
    return Checkpoint(ModelParams(arch, flat.astype(np.float64)), meta)
