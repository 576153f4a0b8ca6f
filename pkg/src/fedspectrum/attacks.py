"""Adversarial node behaviors.

Four declarative attack kinds, attachable to a federation node:
label falsification on the local dataset (ssdf), transformation of the
submitted model update (model_poison), fabricated updates without any
training (free_ride), and fake primary-user energy injected into other
nodes' observations (pue). All transforms are pure and deterministic
given their seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .learner import ModelParams
from .rng import Seed, child_rng
from .spectrum_env import Dataset, EnergyGrid, LabeledExample, OccupancyPattern

ATTACK_KINDS = ("ssdf", "model_poison", "free_ride", "pue")
SSDF_MODES = ("selfish", "interference", "confusing")
POISON_STRATEGIES = ("sign_flip", "scale", "random")


@dataclass(frozen=True, eq=False)
class AttackSpec:
    """One node's adversarial behavior: a kind plus its parameters."""

    kind: str
    mode: str = "selfish"            # ssdf
    fraction: float = 0.5            # ssdf
    strategy: str = "sign_flip"      # model_poison
    factor: float = 1.0              # model_poison scale
    sigma: float = 0.0               # model_poison random / free_ride
    region: np.ndarray | None = None  # pue, boolean RB mask
    power: float = 0.0               # pue

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        if self.mode not in SSDF_MODES:
            raise ParameterError(f"unknown ssdf mode {self.mode!r}")
        if self.strategy not in POISON_STRATEGIES:
            raise ParameterError(f"unknown poison strategy {self.strategy!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ParameterError(f"fraction must be in [0,1], got {self.fraction}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.power < 0:
            raise ParameterError(f"power must be >= 0, got {self.power}")

    @classmethod
    def ssdf(cls, mode: str, fraction: float) -> "AttackSpec":
        return cls(kind="ssdf", mode=mode, fraction=fraction)

    @classmethod
    def model_poison(cls, strategy: str, factor: float = 1.0, sigma: float = 1.0) -> "AttackSpec":
        return cls(kind="model_poison", strategy=strategy, factor=factor, sigma=sigma)

    @classmethod
    def free_ride(cls, sigma: float) -> "AttackSpec":
        return cls(kind="free_ride", sigma=sigma)

    @classmethod
    def pue(cls, region: np.ndarray, power: float) -> "AttackSpec":
        return cls(kind="pue", region=np.asarray(region, dtype=bool), power=power)


def ssdf_poison(dataset: Dataset, mode: str, fraction: float, seed: Seed) -> Dataset:
    """Falsify a seeded-random subset of floor(fraction * N_RB) label
    entries per example; energies are untouched.

    selfish forces the selected labels occupied, interference forces them
    free, confusing rewrites them with independent fair coins.
    """
    if mode not in SSDF_MODES:
        raise ParameterError(f"unknown ssdf mode {mode!r}")
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must be in [0,1], got {fraction}")
    if fraction == 0.0 or len(dataset) == 0:
        return dataset

    poisoned = []
    for i, ex in enumerate(dataset):
        dims = ex.label.dims
        n_rewrite = int(fraction * dims.n_rb)
        rng = child_rng(seed, i)
        idx = rng.choice(dims.n_rb, size=n_rewrite, replace=False)
        flat = ex.label.mask.copy().reshape(-1)
        if mode == "selfish":
            flat[idx] = 1
        elif mode == "interference":
            flat[idx] = 0
        else:
            flat[idx] = rng.integers(0, 2, size=n_rewrite, dtype=np.uint8)
        label = OccupancyPattern(dims, flat.reshape(dims.shape))
        poisoned.append(LabeledExample(ex.input, label))
    return Dataset(tuple(poisoned))


def model_poison(
    update: ModelParams,
    strategy: str,
    seed: Seed = 0,
    factor: float = 1.0,
    sigma: float = 1.0,
) -> ModelParams:
    """Byzantine update transforms: negate, rescale, or replace with noise."""
    if strategy not in POISON_STRATEGIES:
        raise ParameterError(f"unknown poison strategy {strategy!r}")
    for w, b in update.layers:
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NumericError("cannot poison a non-finite update")
    if strategy == "sign_flip":
        return update.map(lambda t: -t)
    if strategy == "scale":
        return update.map(lambda t: factor * t)
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    rng = child_rng(seed)
    return update.map(lambda t: rng.normal(0.0, sigma, size=t.shape))


def free_ride(global_model: ModelParams, sigma: float, seed: Seed = 0) -> ModelParams:
    """Fabricated update: the received global model plus optional jitter.

    sigma = 0 echoes the global model bit-for-bit; no training happens.
    """
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return global_model
    rng = child_rng(seed)
    return global_model.map(lambda t: t + rng.normal(0.0, sigma, size=t.shape))


def pue_inject(grid: EnergyGrid, region: np.ndarray, power: float) -> EnergyGrid:
    """Add an emulated-PU energy contribution of mean `power` inside the
    masked RBs; everything else is untouched."""
    region = np.asarray(region)
    if region.shape != grid.dims.shape:
        raise ShapeError(f"region shape {region.shape} != grid dims {grid.dims.shape}")
    if power < 0:
        raise ParameterError(f"power must be >= 0, got {power}")
    if power == 0.0 or not region.any():
        return grid
    energy = grid.energy + power * region.astype(float)
    return EnergyGrid(grid.dims, energy, snr_db=grid.snr_db)
