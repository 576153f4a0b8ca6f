"""Resource-block spectrum environment.

Generates primary-user occupancy patterns over an n_freq x n_time grid of
resource blocks (RBs), correlated Rayleigh fading gains, and the per-RB
detected energy a sensing node observes. All generators are pure
functions of (params, seed); repeated calls are byte-identical.

Traffic model: frequency rows are partitioned into contiguous bands with
geometrically distributed heights; each band switches between free and
occupied as a two-state Markov chain whose stationary occupied
probability equals the requested duty cycle.

Channel model: a separable AR(1) complex-Gaussian gain field. The
frequency-axis coefficient comes from the profile's RMS delay spread
(coherence bandwidth 1 / (2*pi*sigma_tau)), the time-axis coefficient
from the zeroth-order Bessel autocorrelation at the Doppler frequency.
The per-RB power gain has unit mean by construction.

Energy model: each RB's energy is the mean of k squared-magnitude
complex samples of (signal * gain + noise). Noise power is fixed at 1;
the SNR sets the signal power only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0

from .errors import FormatError, InputError, ParameterError, ShapeError
from .rng import Seed, child_rng, subkey

# LTE-numerology resource block; only used to map Doppler / delay spread
# onto per-RB correlation coefficients.
RB_BANDWIDTH_HZ = 180e3
RB_DURATION_S = 1e-3

# Per-RB energy statistic: mean of this many complex samples.
DEFAULT_K_SAMPLES = 8

# 3GPP multipath profiles as (tap delay ns, tap power dB).
EPA_TAPS = (
    (0.0, 0.0), (30.0, -1.0), (70.0, -2.0), (90.0, -3.0),
    (110.0, -8.0), (190.0, -17.2), (410.0, -20.8),
)
EVA_TAPS = (
    (0.0, 0.0), (30.0, -1.5), (150.0, -1.4), (310.0, -3.6),
    (370.0, -0.6), (710.0, -9.1), (1090.0, -7.0),
    (1730.0, -12.0), (2510.0, -16.9),
)

CHANNEL_KINDS = ("flat", "epa", "eva")

_DATASET_MAGIC = "fedspectrum-dataset v1"


def rms_delay_spread_ns(taps) -> float:
    """RMS delay spread of a (delay ns, power dB) tap table."""
    delays = np.array([t[0] for t in taps], dtype=float)
    powers = 10.0 ** (np.array([t[1] for t in taps], dtype=float) / 10.0)
    mean = float(np.sum(powers * delays) / np.sum(powers))
    mean_sq = float(np.sum(powers * delays**2) / np.sum(powers))
    return float(np.sqrt(mean_sq - mean**2))


@dataclass(frozen=True)
class GridDims:
    """Shape of the sensing grid: frequency RBs x time RBs."""

    n_freq: int
    n_time: int

    def __post_init__(self):
        if self.n_freq < 1 or self.n_time < 1:
            raise ParameterError(
                f"grid dims must be at least 1x1, got {self.n_freq}x{self.n_time}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_freq, self.n_time)

    @property
    def n_rb(self) -> int:
        return self.n_freq * self.n_time


@dataclass(frozen=True)
class TrafficParams:
    """Primary-user traffic statistics.

    duty_target: long-run fraction of occupied RBs.
    persist_time: probability an active allocation persists into the
        next time RB.
    block_height_mean: mean contiguous frequency span of one allocation.
    """

    duty_target: float = 0.3
    persist_time: float = 0.9
    block_height_mean: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.duty_target <= 1.0:
            raise ParameterError(f"duty_target must be in [0,1], got {self.duty_target}")
        if not 0.0 <= self.persist_time <= 1.0:
            raise ParameterError(f"persist_time must be in [0,1], got {self.persist_time}")
        if self.block_height_mean < 1.0:
            raise ParameterError(
                f"block_height_mean must be >= 1, got {self.block_height_mean}"
            )


@dataclass(frozen=True)
class ChannelProfile:
    """Fading profile of one node's radio channel."""

    kind: str = "eva"
    doppler_hz: float = 30.0
    rb_bandwidth_hz: float = RB_BANDWIDTH_HZ
    rb_duration_s: float = RB_DURATION_S

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ParameterError(f"unknown channel kind {self.kind!r}, expected one of {CHANNEL_KINDS}")
        if self.doppler_hz < 0:
            raise ParameterError(f"doppler_hz must be >= 0, got {self.doppler_hz}")
        if self.rb_bandwidth_hz <= 0 or self.rb_duration_s <= 0:
            raise ParameterError("rb_bandwidth_hz and rb_duration_s must be positive")

    @property
    def delay_spread_ns(self) -> float:
        if self.kind == "flat":
            return 0.0
        return rms_delay_spread_ns(EPA_TAPS if self.kind == "epa" else EVA_TAPS)

    @property
    def freq_corr(self) -> float:
        """Adjacent-RB gain correlation along frequency, exp(-df/Bc)."""
        return float(np.exp(-2.0 * np.pi * self.delay_spread_ns * 1e-9 * self.rb_bandwidth_hz))

    @property
    def time_corr(self) -> float:
        """Adjacent-RB gain correlation along time, J0(2 pi fd dt)."""
        rho = float(j0(2.0 * np.pi * self.doppler_hz * self.rb_duration_s))
        return min(1.0, max(0.0, rho))


@dataclass(frozen=True)
class OccupancyPattern:
    """Ground-truth PU activity mask; 1 = occupied, 0 = free."""

    dims: GridDims
    mask: np.ndarray

    def __post_init__(self):
        if self.mask.shape != self.dims.shape:
            raise ShapeError(f"mask shape {self.mask.shape} != dims {self.dims.shape}")
        if self.mask.dtype != np.uint8:
            object.__setattr__(self, "mask", self.mask.astype(np.uint8))
        if not np.isin(self.mask, (0, 1)).all():
            raise InputError("occupancy mask entries must be 0 or 1")


@dataclass(frozen=True)
class ChannelGains:
    """Per-RB channel power gains |h|^2."""

    dims: GridDims
    power_gain: np.ndarray

    def __post_init__(self):
        if self.power_gain.shape != self.dims.shape:
            raise ShapeError(
                f"gain shape {self.power_gain.shape} != dims {self.dims.shape}"
            )
        if np.any(self.power_gain < 0):
            raise InputError("power gains must be non-negative")


@dataclass(frozen=True)
class EnergyGrid:
    """Per-RB detected energy observed by one node."""

    dims: GridDims
    energy: np.ndarray
    snr_db: float = float("nan")

    def __post_init__(self):
        if self.energy.shape != self.dims.shape:
            raise ShapeError(f"energy shape {self.energy.shape} != dims {self.dims.shape}")
        if np.any(self.energy < 0):
            raise InputError("energies must be non-negative")


@dataclass(frozen=True)
class LabeledExample:
    """One training example: an energy grid and its occupancy label."""

    input: EnergyGrid
    label: OccupancyPattern

    def __post_init__(self):
        if self.input.dims != self.label.dims:
            raise ShapeError(
                f"input dims {self.input.dims.shape} != label dims {self.label.dims.shape}"
            )


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of labeled examples with common dims."""

    examples: tuple[LabeledExample, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        dims = {ex.input.dims for ex in self.examples}
        if len(dims) > 1:
            raise ShapeError(f"dataset mixes grid dims: {sorted(d.shape for d in dims)}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i: int) -> LabeledExample:
        return self.examples[i]

    @property
    def dims(self) -> GridDims:
        if not self.examples:
            raise ParameterError("empty dataset has no dims")
        return self.examples[0].input.dims


def gen_occupancy(traffic: TrafficParams, dims: GridDims, seed: Seed) -> OccupancyPattern:
    """Generate a PU occupancy mask.

    The stationary per-RB occupied probability equals duty_target exactly;
    when the requested duty cannot be reached at the given persistence the
    persistence is raised to the smallest feasible value.
    """
    duty = traffic.duty_target
    if duty == 0.0:
        return OccupancyPattern(dims, np.zeros(dims.shape, dtype=np.uint8))
    if duty == 1.0:
        return OccupancyPattern(dims, np.ones(dims.shape, dtype=np.uint8))

    rng = child_rng(seed)

    # Partition frequency rows into bands with geometric heights.
    heights = []
    row = 0
    p_geo = 1.0 / traffic.block_height_mean
    while row < dims.n_freq:
        h = int(rng.geometric(p_geo))
        h = min(h, dims.n_freq - row)
        heights.append(h)
        row += h
    n_bands = len(heights)

    # Two-state chain: P(occupied -> occupied) = a, P(free -> occupied) = b,
    # stationary occupancy b / (b + 1 - a) = duty.
    a = traffic.persist_time
    b = duty * (1.0 - a) / (1.0 - duty)
    if b > 1.0:
        b = 1.0
        a = (2.0 * duty - 1.0) / duty

    states = rng.random(n_bands) < duty  # stationary start
    band_mask = np.empty((n_bands, dims.n_time), dtype=np.uint8)
    band_mask[:, 0] = states
    for t in range(1, dims.n_time):
        u = rng.random(n_bands)
        states = np.where(states, u < a, u < b)
        band_mask[:, t] = states

    mask = np.repeat(band_mask, heights, axis=0)
    return OccupancyPattern(dims, mask)


def gen_channel(profile: ChannelProfile, dims: GridDims, seed: Seed) -> ChannelGains:
    """Generate a correlated Rayleigh power-gain field with unit mean.

    White CN(0,1) innovations are AR(1)-filtered along time and then
    frequency, which keeps every marginal CN(0,1) and yields separable
    correlation rho_f^|df| * rho_t^|dt|.
    """
    rng = child_rng(seed)
    n_f, n_t = dims.shape
    rho_t = profile.time_corr
    rho_f = profile.freq_corr

    w = (rng.standard_normal((n_f, n_t)) + 1j * rng.standard_normal((n_f, n_t)))
    w *= np.sqrt(0.5)

    h = np.empty_like(w)
    h[:, 0] = w[:, 0]
    c_t = np.sqrt(1.0 - rho_t**2)
    for t in range(1, n_t):
        h[:, t] = rho_t * h[:, t - 1] + c_t * w[:, t]

    g = np.empty_like(h)
    g[0] = h[0]
    c_f = np.sqrt(1.0 - rho_f**2)
    for f in range(1, n_f):
        g[f] = rho_f * g[f - 1] + c_f * h[f]

    return ChannelGains(dims, np.abs(g) ** 2)


def sense_energy(
    pattern: OccupancyPattern,
    gains: ChannelGains,
    snr_db: float,
    k_samples: int = DEFAULT_K_SAMPLES,
    seed: Seed = 0,
    noise_power: float = 1.0,
) -> EnergyGrid:
    """Detected energy per RB: mean of k squared complex samples.

    Occupied RBs receive a constant-envelope signal of power
    10^(snr_db/10) through the RB's fading gain plus noise; free RBs see
    noise alone. noise_power is a test hook (0 disables noise); the
    production noise power is 1.
    """
    if pattern.dims != gains.dims:
        raise ShapeError(
            f"pattern dims {pattern.dims.shape} != gain dims {gains.dims.shape}"
        )
    if k_samples < 1:
        raise ParameterError(f"k_samples must be >= 1, got {k_samples}")
    if noise_power < 0:
        raise ParameterError(f"noise_power must be >= 0, got {noise_power}")

    sig_power = 10.0 ** (snr_db / 10.0)
    amp = np.sqrt(sig_power * gains.power_gain) * pattern.mask

    if noise_power == 0.0:
        energy = amp**2
    else:
        rng = child_rng(seed)
        shape = (*pattern.dims.shape, k_samples)
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        noise *= np.sqrt(noise_power / 2.0)
        energy = np.mean(np.abs(amp[..., None] + noise) ** 2, axis=2)

    return EnergyGrid(pattern.dims, energy, snr_db=float(snr_db))


def make_dataset(
    n_patterns: int,
    traffic: TrafficParams,
    profile: ChannelProfile,
    snr_db: float,
    dims: GridDims,
    seed: Seed,
    k_samples: int = DEFAULT_K_SAMPLES,
) -> Dataset:
    """Batch gen_occupancy -> gen_channel -> sense_energy.

    Each example gets a fresh pattern and channel realization on its own
    child stream, so the result is independent of generation order.
    """
    if n_patterns < 1:
        raise ParameterError(f"n_patterns must be >= 1, got {n_patterns}")
    examples = []
    for i in range(n_patterns):
        pattern = gen_occupancy(traffic, dims, subkey(seed, 1, i))
        gains = gen_channel(profile, dims, subkey(seed, 2, i))
        grid = sense_energy(pattern, gains, snr_db, k_samples, subkey(seed, 3, i))
        examples.append(LabeledExample(grid, pattern))
    return Dataset(tuple(examples))


# ---------------------------------------------------------------------------
# Dataset snapshot format
# ---------------------------------------------------------------------------

def serialize_dataset(dataset: Dataset) -> bytes:
    """Encode a dataset: text header, then per example the energy matrix
    (float64 little-endian) and the mask matrix (one byte per entry),
    both row-major."""
    if len(dataset) == 0:
        raise ParameterError("cannot serialize an empty dataset")
    dims = dataset.dims
    out = [f"{_DATASET_MAGIC} {dims.n_freq} {dims.n_time} {len(dataset)}\n".encode("ascii")]
    for ex in dataset:
        out.append(ex.input.energy.astype("<f8").tobytes(order="C"))
        out.append(ex.label.mask.astype(np.uint8).tobytes(order="C"))
    return b"".join(out)


def deserialize_dataset(data: bytes) -> Dataset:
    """Decode a dataset snapshot; raises FormatError on any corruption.

    The wire format does not carry SNR metadata, so loaded grids report
    snr_db = nan.
    """
    if not data:
        raise FormatError("empty dataset payload")
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line")
    try:
        header = data[:nl].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("header is not ASCII") from exc
    parts = header.split()
    if len(parts) != 5 or " ".join(parts[:2]) != _DATASET_MAGIC:
        raise FormatError(f"bad magic, expected {_DATASET_MAGIC!r}")
    try:
        n_freq, n_time, n_examples = (int(p) for p in parts[2:])
    except ValueError as exc:
        raise FormatError(f"non-integer dims in header: {header!r}") from exc
    if n_freq < 1 or n_time < 1 or n_examples < 1:
        raise FormatError(f"non-positive dims in header: {header!r}")

    dims = GridDims(n_freq, n_time)
    n_rb = dims.n_rb
    stride = 8 * n_rb + n_rb
    body = data[nl + 1:]
    if len(body) != stride * n_examples:
        raise FormatError(
            f"payload length {len(body)} != expected {stride * n_examples} "
            f"for {n_examples} examples"
        )
    examples = []
    for i in range(n_examples):
        chunk = body[i * stride:(i + 1) * stride]
        energy = np.frombuffer(chunk[: 8 * n_rb], dtype="<f8").reshape(dims.shape).copy()
        mask = np.frombuffer(chunk[8 * n_rb:], dtype=np.uint8).reshape(dims.shape).copy()
        if np.any(energy < 0) or not np.isfinite(energy).all():
            raise FormatError(f"example {i} carries invalid energies")
        if not np.isin(mask, (0, 1)).all():
            raise FormatError(f"example {i} carries non-binary mask bytes")
        examples.append(LabeledExample(EnergyGrid(dims, energy), OccupancyPattern(dims, mask)))
    return Dataset(tuple(examples))


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_dataset(dataset))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return deserialize_dataset(fh.read())
