"""Per-RB occupancy classifier.

A small convolutional network maps an energy grid to a per-RB occupancy
probability of the same shape (stride 1, zero same-padding throughout):
hidden conv+ReLU layers followed by a 1x1 sigmoid head. Forward and
backward passes are written out explicitly in numpy; training is plain
mini-batch SGD on per-RB binary cross-entropy.

Also hosts the classical energy-threshold detector and the model
snapshot wire format used to move parameters between nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    FormatError,
    InputError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .rng import Seed, child_rng
from .spectrum_env import Dataset, EnergyGrid

# Logits are clipped here before sigmoid / loss, which keeps probabilities
# strictly inside (0,1) and the loss finite.
LOGIT_CLAMP = 30.0
LOG_ENERGY_FLOOR = 1e-12
PROB_EPS = 1e-12

INIT_ZERO = "zero"
INIT_RANDOM = "random"

_MODEL_MAGIC = "fedspectrum-model v1"

# Grid of probabilities / binary decisions, shaped like the input grid.
ProbGrid = np.ndarray
DecisionGrid = np.ndarray


@dataclass(frozen=True)
class ModelArch:
    """Network shape: hidden conv layers plus the fixed 1x1 sigmoid head.

    log_input selects the input map: log10 energies standardized per grid
    (default) versus raw energies.
    """

    hidden_layers: int = 2
    channels: tuple[int, ...] = (4, 4)
    kernel: tuple[int, int] = (3, 3)
    log_input: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.hidden_layers < 1:
            raise ParameterError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if len(self.channels) != self.hidden_layers:
            raise ParameterError(
                f"channels {self.channels} must list one count per hidden layer"
            )
        if any(c < 1 for c in self.channels):
            raise ParameterError(f"channel counts must be >= 1, got {self.channels}")
        kh, kw = self.kernel
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ParameterError(
                f"kernel dims must be odd and >= 1 for same-padding, got {self.kernel}"
            )

    def layer_shapes(self) -> list[tuple[int, int, int, int]]:
        """(out_ch, in_ch, kh, kw) per layer, head included."""
        shapes = []
        in_ch = 1
        for out_ch in self.channels:
            shapes.append((out_ch, in_ch, *self.kernel))
            in_ch = out_ch
        shapes.append((1, in_ch, 1, 1))
        return shapes

    def param_count(self) -> int:
        return sum(o * c * kh * kw + o for (o, c, kh, kw) in self.layer_shapes())


@dataclass(frozen=True)
class ModelParams:
    """Ordered (weights, biases) pairs matching a ModelArch."""

    arch: ModelArch
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((w, b) for w, b in self.layers))
        expected = self.arch.layer_shapes()
        if len(self.layers) != len(expected):
            raise ShapeError(
                f"model has {len(self.layers)} layers, arch expects {len(expected)}"
            )
        for i, ((w, b), shape) in enumerate(zip(self.layers, expected)):
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not match arch {shape}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {i} contains non-finite parameters")

    def map(self, fn) -> "ModelParams":
        """New params with fn applied to every tensor."""
        return ModelParams(self.arch, tuple((fn(w), fn(b)) for w, b in self.layers))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    local_epochs: int = 2
    batch_size: int = 8
    decision_threshold: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.local_epochs < 1:
            raise ParameterError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ParameterError(
                f"decision_threshold must be in [0,1], got {self.decision_threshold}"
            )


def init_model(arch: ModelArch, mode: str = INIT_RANDOM, seed: Seed = 0) -> ModelParams:
    """Zero or fan-in-scaled uniform initialization.

    Random mode draws biases from the same interval as the weights;
    exactly-zero biases would park ReLU pre-activations of all-clamped
    padding windows precisely on the kink.
    """
    if mode not in (INIT_ZERO, INIT_RANDOM):
        raise ParameterError(f"unknown init mode {mode!r}")
    rng = child_rng(seed) if mode == INIT_RANDOM else None
    layers = []
    for (out_ch, in_ch, kh, kw) in arch.layer_shapes():
        if mode == INIT_ZERO:
            w = np.zeros((out_ch, in_ch, kh, kw))
            b = np.zeros(out_ch)
        else:
            bound = 1.0 / np.sqrt(in_ch * kh * kw)
            w = rng.uniform(-bound, bound, size=(out_ch, in_ch, kh, kw))
            b = rng.uniform(-bound, bound, size=out_ch)
        layers.append((w, b))
    return ModelParams(arch, tuple(layers))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B,C,F,T) -> (B, C*kh*kw, F*T) patch matrix under zero same-padding."""
    b, c, f, t = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,C,F,T,kh,kw)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, f * t)


def _conv_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray):
    """Same-padded conv; returns output and the patch matrix for backward."""
    b, _, f, t = x.shape
    out_ch, in_ch, kh, kw = w.shape
    cols = _im2col(x, kh, kw)
    out = (w.reshape(out_ch, in_ch * kh * kw) @ cols).reshape(b, out_ch, f, t)
    out += bias[None, :, None, None]
    return out, cols


def _conv_backward(cols: np.ndarray, w: np.ndarray, dz: np.ndarray, x_shape):
    """Gradients of a same-padded conv given the cached patch matrix."""
    b, _, f, t = x_shape
    out_ch, in_ch, kh, kw = w.shape
    dzf = dz.reshape(b, out_ch, f * t)
    dw = np.einsum("bon,bkn->ok", dzf, cols).reshape(w.shape)
    db = dzf.sum(axis=(0, 2))
    # Scatter the column gradient back onto the padded input.
    dcols = (w.reshape(out_ch, in_ch * kh * kw).T @ dzf).reshape(b, in_ch, kh, kw, f, t)
    dxp = np.zeros((b, in_ch, f + kh - 1, t + kw - 1))
    for dy in range(kh):
        for dx in range(kw):
            dxp[:, :, dy:dy + f, dx:dx + t] += dcols[:, :, dy, dx]
    ph, pw = kh // 2, kw // 2
    dx_ = dxp[:, :, ph:ph + f, pw:pw + t]
    return dw, db, dx_


def _preprocess(arch: ModelArch, energy: np.ndarray) -> np.ndarray:
    """(B,F,T) energies -> (B,1,F,T) network input."""
    x = np.asarray(energy, dtype=float)
    if not np.isfinite(x).all():
        raise InputError("input energies contain non-finite values")
    if arch.log_input:
        v = np.log10(np.maximum(x, LOG_ENERGY_FLOOR))
        mu = v.mean(axis=(1, 2), keepdims=True)
        sd = v.std(axis=(1, 2), keepdims=True)
        x = (v - mu) / (sd + 1e-6)
    return x[:, None, :, :]


def _forward_cached(model: ModelParams, x: np.ndarray):
    """Run all layers, keeping the activations needed for backprop."""
    caches = []
    h = x
    for w, bias in model.layers[:-1]:
        z, cols = _conv_forward(h, w, bias)
        caches.append((cols, h.shape, z))
        h = np.maximum(z, 0.0)
    w, bias = model.layers[-1]
    z, cols = _conv_forward(h, w, bias)
    caches.append((cols, h.shape, z))
    logits = np.clip(z[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)
    return logits, z[:, 0], caches


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    energies = np.stack([ex.input.energy for ex in batch])
    labels = np.stack([ex.label.mask for ex in batch]).astype(float)
    return energies, labels


def forward(model: ModelParams, grid: EnergyGrid) -> ProbGrid:
    """Per-RB occupancy probabilities, same shape as the input grid."""
    x = _preprocess(model.arch, grid.energy[None])
    logits, _, _ = _forward_cached(model, x)
    return _sigmoid(logits[0])


def bce_loss(probs: ProbGrid, label) -> float:
    """Mean per-RB binary cross-entropy."""
    y = np.asarray(getattr(label, "mask", label), dtype=float)
    p = np.asarray(probs, dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"probs shape {p.shape} != label shape {y.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def loss_and_grads(model: ModelParams, batch):
    """Mean batch loss and its exact gradient w.r.t. every parameter.

    The loss is computed from logits with log1p-exp, so it matches
    bce_loss(forward(...)) up to rounding while staying stable.
    """
    if not batch:
        raise ParameterError("batch must be nonempty")
    energies, labels = _batch_arrays(batch)
    x = _preprocess(model.arch, energies)
    logits, z_raw, caches = _forward_cached(model, x)

    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite training loss {loss!r} on a batch of {len(batch)} examples"
        )

    dz = (_sigmoid(logits) - labels) / logits.size
    dz[np.abs(z_raw) > LOGIT_CLAMP] = 0.0  # clipped logits are flat
    dz = dz[:, None, :, :]

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        w, _ = model.layers[i]
        cols, in_shape, z = caches[i]
        dw, db, dx_ = _conv_backward(cols, w, dz, in_shape)
        grads[i] = (dw, db)
        if i > 0:
            _, _, z_prev = caches[i - 1]
            dz = dx_ * (z_prev > 0)
    return loss, grads


def train_step(model: ModelParams, batch, lr: float) -> ModelParams:
    """One SGD step on the mean batch loss."""
    _, grads = loss_and_grads(model, batch)
    layers = tuple(
        (w - lr * dw, b - lr * db)
        for (w, b), (dw, db) in zip(model.layers, grads)
    )
    return ModelParams(model.arch, layers)


def train_local(model: ModelParams, dataset: Dataset, cfg: TrainConfig, seed: Seed) -> ModelParams:
    """Shuffled mini-batch SGD for cfg.local_epochs passes."""
    if len(dataset) == 0:
        raise ParameterError("cannot train on an empty dataset")
    rng = child_rng(seed)
    n = len(dataset)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = [dataset[int(i)] for i in order[start:start + cfg.batch_size]]
            model = train_step(model, batch, cfg.learning_rate)
    return model


def predict(model: ModelParams, grid: EnergyGrid, threshold: float) -> DecisionGrid:
    """Binary decisions; probability at the threshold decides occupied."""
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must be in [0,1], got {threshold}")
    return (forward(model, grid) >= threshold).astype(np.uint8)


def energy_detector(grid: EnergyGrid, lam: float) -> DecisionGrid:
    """Classical detector: occupied iff energy >= lambda."""
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    return (grid.energy >= lam).astype(np.uint8)


# ---------------------------------------------------------------------------
# Model snapshot format
# ---------------------------------------------------------------------------

def serialize_model(model: ModelParams) -> bytes:
    """Encode params: magic line, arch line, then per tensor a shape line
    followed by row-major float64 little-endian values."""
    arch = model.arch
    out = [f"{_MODEL_MAGIC}\n".encode("ascii")]
    out.append(
        (
            f"arch hidden={arch.hidden_layers}"
            f" channels={','.join(str(c) for c in arch.channels)}"
            f" kernel={arch.kernel[0]},{arch.kernel[1]}"
            f" log_input={int(arch.log_input)}\n"
        ).encode("ascii")
    )
    for w, b in model.layers:
        for tensor in (w, b):
            dims = " ".join(str(d) for d in tensor.shape)
            out.append(f"tensor {tensor.ndim} {dims}\n".encode("ascii"))
            out.append(tensor.astype("<f8").tobytes(order="C"))
    return b"".join(out)


def _read_line(data: bytes, pos: int, what: str) -> tuple[str, int]:
    nl = data.find(b"\n", pos)
    if nl < 0:
        raise FormatError(f"truncated payload while reading {what}")
    try:
        return data[pos:nl].decode("ascii"), nl + 1
    except UnicodeDecodeError as exc:
        raise FormatError(f"{what} line is not ASCII") from exc


def deserialize_model(data: bytes) -> ModelParams:
    if not data:
        raise FormatError("empty model payload")
    line, pos = _read_line(data, 0, "magic")
    if line != _MODEL_MAGIC:
        raise FormatError(f"bad magic {line!r}, expected {_MODEL_MAGIC!r}")

    line, pos = _read_line(data, pos, "arch")
    fields = dict(part.split("=", 1) for part in line.split()[1:] if "=" in part)
    try:
        arch = ModelArch(
            hidden_layers=int(fields["hidden"]),
            channels=tuple(int(c) for c in fields["channels"].split(",")),
            kernel=tuple(int(k) for k in fields["kernel"].split(",")),
            log_input=bool(int(fields["log_input"])),
        )
    except (KeyError, ValueError, ParameterError) as exc:
        raise FormatError(f"invalid arch line {line!r}: {exc}") from exc

    tensors = []
    for shape in arch.layer_shapes():
        for expected, what in ((shape, "weights"), ((shape[0],), "biases")):
            line, pos = _read_line(data, pos, "tensor")
            parts = line.split()
            if not parts or parts[0] != "tensor":
                raise FormatError(f"expected tensor line, got {line!r}")
            try:
                ndim = int(parts[1])
                dims = tuple(int(d) for d in parts[2:])
            except (IndexError, ValueError) as exc:
                raise FormatError(f"invalid tensor header {line!r}") from exc
            if len(dims) != ndim:
                raise FormatError(f"tensor header {line!r} lists {len(dims)} dims, declares {ndim}")
            if dims != expected:
                raise FormatError(
                    f"tensor dims {dims} do not match arch {what} shape {expected}"
                )
            count = int(np.prod(dims))
            end = pos + 8 * count
            if end > len(data):
                raise FormatError(f"truncated tensor payload, wanted {8 * count} bytes")
            tensors.append(np.frombuffer(data[pos:end], dtype="<f8").reshape(dims).copy())
            pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last tensor")

    layers = tuple((tensors[2 * i], tensors[2 * i + 1]) for i in range(len(tensors) // 2))
    return ModelParams(arch, layers)


def save_model(model: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
