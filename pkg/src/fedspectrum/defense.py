"""Countermeasures against poisoned data and poisoned model updates.

Server side: decision-accordance filtering (reject any submitted model
whose spectrum decisions agree too little with the other submissions on
the server's own energy-sensing dataset) and robust aggregation
(coordinate-wise median / trimmed mean). Node side: micro-model
majority-vote data cleaning and differential-privacy noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AggregationError, ConfigError, ParameterError, ShapeError
from .learner import (
    INIT_RANDOM,
    ModelArch,
    ModelParams,
    TrainConfig,
    forward,
    init_model,
    train_local,
)
from .rng import Seed, child_rng, subkey
from .spectrum_env import Dataset, EnergyGrid

AGGREGATION_METHODS = ("mean", "median", "trimmed_mean")
PEER_REDUCERS = ("mean", "min")


@dataclass(frozen=True)
class DefenseConfig:
    """Server-side defense knobs. dp_sigma = 0 disables DP noise.

    filter_decision_threshold is the probability cut the server applies
    when turning the submitted models into spectrum decisions for the
    accordance comparison; None reuses the nodes' decision threshold.
    Setting it slightly below 0.5 makes occupancy-inflating updates
    (whose probabilities pile up at one half) stand out as all-occupied
    deciders instead of coin flippers.
    """

    accordance_threshold_pct: float = 65.0
    validation_patterns: int = 50
    aggregation: str = "mean"
    trim_fraction: float = 0.1
    dp_sigma: float = 0.0
    peer_reduce: str = "mean"
    include_global_reference: bool = False
    filter_decision_threshold: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.accordance_threshold_pct <= 100.0:
            raise ParameterError(
                f"accordance_threshold_pct must be in [0,100], got {self.accordance_threshold_pct}"
            )
        if self.validation_patterns < 1:
            raise ParameterError(
                f"validation_patterns must be >= 1, got {self.validation_patterns}"
            )
        if self.aggregation not in AGGREGATION_METHODS:
            raise ParameterError(f"unknown aggregation {self.aggregation!r}")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ParameterError(f"trim_fraction must be in [0,0.5), got {self.trim_fraction}")
        if self.dp_sigma < 0:
            raise ParameterError(f"dp_sigma must be >= 0, got {self.dp_sigma}")
        if self.peer_reduce not in PEER_REDUCERS:
            raise ParameterError(f"unknown peer_reduce {self.peer_reduce!r}")
        if self.filter_decision_threshold is not None and not (
            0.0 <= self.filter_decision_threshold <= 1.0
        ):
            raise ParameterError(
                f"filter_decision_threshold must be in [0,1], got {self.filter_decision_threshold}"
            )


@dataclass(frozen=True)
class FilterReport:
    """Outcome of one accordance-filter pass."""

    node_ids: tuple[int, ...]
    accordance: np.ndarray          # symmetric, unit diagonal, in [0,1]
    mean_accordance: dict[int, float]
    accepted: tuple[int, ...]
    rejected: tuple[int, ...]


def decision_accordance(a, b) -> float:
    """Fraction of RB positions, pooled over examples, where two decision
    sequences agree."""
    a_arr = np.asarray(a, dtype=np.uint8)
    b_arr = np.asarray(b, dtype=np.uint8)
    if a_arr.shape != b_arr.shape:
        raise ShapeError(f"decision shapes differ: {a_arr.shape} vs {b_arr.shape}")
    return float(np.mean(a_arr == b_arr))


def _model_decisions(model: ModelParams, validation: Dataset, threshold: float) -> np.ndarray:
    grids = [forward(model, ex.input) for ex in validation]
    return (np.stack(grids) >= threshold).astype(np.uint8)


def accordance_filter(
    updates: Sequence[tuple[int, ModelParams]],
    validation: Dataset,
    threshold_pct: float,
    decision_threshold: float = 0.5,
    peer_reduce: str = "mean",
    reference: Optional[ModelParams] = None,
) -> tuple[list[tuple[int, ModelParams]], FilterReport]:
    """Accept each update whose accordance with its peers reaches the
    threshold.

    Every submitted model decides the occupancy of the server's
    validation energies; model i survives iff the peer_reduce (mean by
    default) of its pairwise accordance with the other submissions is at
    least threshold_pct / 100. An optional reference model joins the
    comparison pool without being a candidate itself. A single update is
    accepted trivially with a degenerate report.
    """
    if len(validation) == 0:
        raise ConfigError("accordance filter requires a nonempty validation dataset")
    if not 0.0 <= threshold_pct <= 100.0:
        raise ParameterError(f"threshold_pct must be in [0,100], got {threshold_pct}")
    if not updates:
        raise ParameterError("no updates to filter")
    if peer_reduce not in PEER_REDUCERS:
        raise ParameterError(f"unknown peer_reduce {peer_reduce!r}")

    ordered = sorted(updates, key=lambda pair: pair[0])
    node_ids = tuple(node_id for node_id, _ in ordered)
    if len(set(node_ids)) != len(node_ids):
        raise ParameterError(f"duplicate node ids in updates: {node_ids}")

    n = len(ordered)
    if n == 1:
        report = FilterReport(
            node_ids=node_ids,
            accordance=np.ones((1, 1)),
            mean_accordance={node_ids[0]: 1.0},
            accepted=node_ids,
            rejected=(),
        )
        return list(ordered), report

    decisions = [_model_decisions(m, validation, decision_threshold) for _, m in ordered]
    pool = decisions + ([_model_decisions(reference, validation, decision_threshold)]
                        if reference is not None else [])
    n_pool = len(pool)

    acc = np.ones((n_pool, n_pool))
    for i in range(n_pool):
        for j in range(i + 1, n_pool):
            acc[i, j] = acc[j, i] = decision_accordance(pool[i], pool[j])

    reduce_fn = np.mean if peer_reduce == "mean" else np.min
    mean_acc: dict[int, float] = {}
    accepted, rejected = [], []
    for i, (node_id, _) in enumerate(ordered):
        others = np.concatenate([acc[i, :i], acc[i, i + 1:]])
        score = float(reduce_fn(others))
        mean_acc[node_id] = score
        (accepted if score >= threshold_pct / 100.0 else rejected).append(node_id)

    report = FilterReport(
        node_ids=node_ids,
        accordance=acc[:n, :n],
        mean_accordance=mean_acc,
        accepted=tuple(accepted),
        rejected=tuple(rejected),
    )
    kept = [pair for pair in ordered if pair[0] in report.accepted]
    return kept, report


def micro_model_clean(
    dataset: Dataset,
    k_folds: int,
    arch: ModelArch,
    train_cfg: TrainConfig,
    seed: Seed,
    disagreement_fraction: float = 0.3,
) -> tuple[Dataset, list[int]]:
    """Majority-vote data cleaning with per-fold micro-models.

    The dataset is split into k contiguous folds and one micro-model is
    trained per fold. Each example's label grid is compared against the
    majority vote of the k-1 micro-models not trained on its fold; an
    example is dropped when the disagreement exceeds
    disagreement_fraction of its RBs. k_folds = 1 is a no-op.
    """
    if k_folds < 1:
        raise ParameterError(f"k_folds must be >= 1, got {k_folds}")
    if k_folds > len(dataset):
        raise ParameterError(
            f"k_folds={k_folds} exceeds dataset size {len(dataset)}"
        )
    if not 0.0 <= disagreement_fraction <= 1.0:
        raise ParameterError(
            f"disagreement_fraction must be in [0,1], got {disagreement_fraction}"
        )
    if k_folds == 1:
        return dataset, []

    fold_slices = np.array_split(np.arange(len(dataset)), k_folds)
    models = []
    for f, idx in enumerate(fold_slices):
        fold = Dataset(tuple(dataset[int(i)] for i in idx))
        model = init_model(arch, INIT_RANDOM, subkey(seed, 1, f))
        models.append(train_local(model, fold, train_cfg, subkey(seed, 2, f)))

    removed = []
    kept = []
    for f, idx in enumerate(fold_slices):
        voters = [m for g, m in enumerate(models) if g != f]
        for i in idx:
            ex = dataset[int(i)]
            votes = sum(
                (forward(m, ex.input) >= train_cfg.decision_threshold).astype(int)
                for m in voters
            )
            # Strict majority: a lone occupancy-inflating micro-model
            # cannot hijack the vote on an even panel.
            majority = (2 * votes > len(voters)).astype(np.uint8)
            disagreement = float(np.mean(majority != ex.label.mask))
            if disagreement > disagreement_fraction:
                removed.append(int(i))
            else:
                kept.append((int(i), ex))
    kept.sort(key=lambda pair: pair[0])
    return Dataset(tuple(ex for _, ex in kept)), sorted(removed)


def robust_aggregate(
    updates: Sequence[ModelParams],
    method: str,
    trim_fraction: float = 0.1,
) -> ModelParams:
    """Coordinate-wise median, or mean after trimming the ceil(f*n)
    largest and smallest values per coordinate."""
    if not updates:
        raise ParameterError("no updates to aggregate")
    if method not in ("median", "trimmed_mean"):
        raise ParameterError(f"unknown robust aggregation {method!r}")
    ref = updates[0]
    for u in updates[1:]:
        if u.arch != ref.arch:
            raise AggregationError(f"arch mismatch: {u.arch} vs {ref.arch}")

    n = len(updates)
    layers = []
    for li in range(len(ref.layers)):
        stacked_w = np.stack([u.layers[li][0] for u in updates])
        stacked_b = np.stack([u.layers[li][1] for u in updates])
        if method == "median":
            layers.append((np.median(stacked_w, axis=0), np.median(stacked_b, axis=0)))
        else:
            k = int(np.ceil(trim_fraction * n))
            if 2 * k >= n:
                raise AggregationError(
                    f"trim_fraction={trim_fraction} discards all {n} updates"
                )
            if k == 0:
                layers.append((stacked_w.mean(axis=0), stacked_b.mean(axis=0)))
            else:
                sw = np.sort(stacked_w, axis=0)[k:n - k]
                sb = np.sort(stacked_b, axis=0)[k:n - k]
                layers.append((sw.mean(axis=0), sb.mean(axis=0)))
    return ModelParams(ref.arch, tuple(layers))


def dp_noise(target, sigma: float, seed: Seed = 0):
    """Add zero-mean Gaussian noise of scale sigma elementwise.

    Model targets get unclamped noise; energy targets are clamped at 0
    afterwards. sigma = 0 returns the target unchanged.
    """
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return target
    rng = child_rng(seed)
    if isinstance(target, ModelParams):
        return target.map(lambda t: t + rng.normal(0.0, sigma, size=t.shape))
    if isinstance(target, EnergyGrid):
        noisy = np.maximum(target.energy + rng.normal(0.0, sigma, size=target.energy.shape), 0.0)
        return EnergyGrid(target.dims, noisy, snr_db=target.snr_db)
    raise ParameterError(f"dp_noise supports ModelParams or EnergyGrid, got {type(target)!r}")
