"""Federated-learning orchestration.

One round: every non-tester node receives the global model, produces an
update (honest local training or its configured attack behavior), the
server optionally filters updates through the decision-accordance
defense, aggregates the survivors, and evaluates the new global model on
tester nodes. Nodes draw all randomness from child streams keyed by
(master seed, purpose, round, node id), so results are bit-identical
whether node updates are computed serially or concurrently.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .attacks import AttackSpec, free_ride, model_poison, pue_inject, ssdf_poison
from .defense import DefenseConfig, FilterReport, accordance_filter, dp_noise, robust_aggregate
from .errors import AggregationError, ConfigError, ParameterError
from .learner import (
    INIT_RANDOM,
    ModelArch,
    ModelParams,
    TrainConfig,
    init_model,
    predict,
    train_local,
)
from .metrics import Metrics, MetricsRow, MetricsSeries, pooled_pd_pfa
from .rng import (
    STREAM_ATTACK,
    STREAM_DATA,
    STREAM_DP,
    STREAM_INIT,
    STREAM_TESTER,
    STREAM_TRAIN,
    STREAM_VALIDATION,
    Seed,
    subkey,
)
from .spectrum_env import (
    ChannelProfile,
    Dataset,
    GridDims,
    LabeledExample,
    TrafficParams,
    make_dataset,
)

ROLE_HONEST = "honest"
ROLE_ATTACKER = "attacker"
ROLE_TESTER = "tester"
ROLES = (ROLE_HONEST, ROLE_ATTACKER, ROLE_TESTER)


@dataclass(frozen=True)
class DatasetSpec:
    """Local data generation parameters of one node."""

    n_patterns: int
    traffic: TrafficParams
    dims: GridDims
    k_samples: int = 8

    def __post_init__(self):
        if self.n_patterns < 1:
            raise ParameterError(f"n_patterns must be >= 1, got {self.n_patterns}")
        if self.k_samples < 1:
            raise ParameterError(f"k_samples must be >= 1, got {self.k_samples}")


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    channel: ChannelProfile
    mean_snr_db: float
    data: DatasetSpec
    role: str = ROLE_HONEST
    attack: Optional[AttackSpec] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ParameterError(f"unknown role {self.role!r}")
        if self.role == ROLE_ATTACKER and self.attack is None:
            raise ParameterError(f"attacker node {self.node_id} needs an attack spec")
        if self.role != ROLE_ATTACKER and self.attack is not None:
            raise ParameterError(f"{self.role} node {self.node_id} cannot carry an attack")


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    submitted: tuple[int, ...]
    accepted: tuple[int, ...]
    filter_report: Optional[FilterReport]
    tester_metrics: dict[int, Metrics]

    @property
    def accordance(self) -> Optional[np.ndarray]:
        return None if self.filter_report is None else self.filter_report.accordance


@dataclass(frozen=True)
class ServerState:
    global_model: ModelParams
    round_index: int = 0
    validation: Optional[Dataset] = None
    history: tuple[RoundReport, ...] = ()


def fedavg(
    updates: Sequence[ModelParams],
    weights: Optional[Sequence[float]] = None,
) -> ModelParams:
    """Elementwise weighted mean of model updates.

    Computed as base + sum(w_i * (u_i - base)), which makes the identity
    cases (replicated input, mirrored pair, simple weighted scalars)
    exact in floating point.
    """
    if not updates:
        raise ParameterError("fedavg needs at least one update")
    ref = updates[0]
    for u in updates[1:]:
        if u.arch != ref.arch:
            raise AggregationError(f"arch mismatch: {u.arch} vs {ref.arch}")
    if weights is None:
        w = np.full(len(updates), 1.0 / len(updates))
    else:
        if len(weights) != len(updates):
            raise ParameterError(
                f"{len(weights)} weights for {len(updates)} updates"
            )
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ParameterError("weights must be positive")
        w = w / w.sum()

    layers = []
    for li in range(len(ref.layers)):
        base_w, base_b = ref.layers[li]
        acc_w = np.zeros_like(base_w)
        acc_b = np.zeros_like(base_b)
        for wi, u in zip(w, updates):
            acc_w += wi * (u.layers[li][0] - base_w)
            acc_b += wi * (u.layers[li][1] - base_b)
        layers.append((base_w + acc_w, base_b + acc_b))
    return ModelParams(ref.arch, tuple(layers))


def _generate_node_dataset(node: NodeConfig, seed: Seed, round_index: int, refresh: bool) -> Dataset:
    key = subkey(seed, STREAM_DATA, round_index if refresh else 0, node.node_id)
    return make_dataset(
        node.data.n_patterns,
        node.data.traffic,
        node.channel,
        node.mean_snr_db,
        node.data.dims,
        key,
        k_samples=node.data.k_samples,
    )


def _apply_environment(
    dataset: Dataset,
    node: NodeConfig,
    emitters: Sequence[tuple[np.ndarray, float]],
    dp_sigma: float,
    seed: Seed,
    round_index: int,
) -> Dataset:
    """Post-channel effects on sensed energies: PUE emissions from other
    nodes, then the node's own DP noise."""
    if not emitters and dp_sigma == 0.0:
        return dataset
    examples = []
    for i, ex in enumerate(dataset):
        grid = ex.input
        for region, power in emitters:
            grid = pue_inject(grid, region, power)
        if dp_sigma > 0.0:
            grid = dp_noise(grid, dp_sigma, subkey(seed, STREAM_DP, round_index, node.node_id, i))
        examples.append(LabeledExample(grid, ex.label))
    return Dataset(tuple(examples))


def _node_update(
    node: NodeConfig,
    global_model: ModelParams,
    train_cfg: TrainConfig,
    seed: Seed,
    round_index: int,
    refresh: bool,
    emitters: Sequence[tuple[np.ndarray, float]],
    dp_sigma: float,
    dataset: Optional[Dataset] = None,
) -> tuple[ModelParams, int]:
    """One node's submitted update and its local dataset size."""
    attack = node.attack
    if attack is not None and attack.kind == "free_ride":
        return free_ride(global_model, attack.sigma, subkey(seed, STREAM_ATTACK, round_index, node.node_id)), 0

    if dataset is None:
        dataset = _generate_node_dataset(node, seed, round_index, refresh)
    dataset = _apply_environment(dataset, node, emitters, dp_sigma, seed, round_index)

    if attack is not None and attack.kind == "ssdf":
        dataset = ssdf_poison(
            dataset, attack.mode, attack.fraction, subkey(seed, STREAM_ATTACK, round_index, node.node_id)
        )

    update = train_local(
        global_model, dataset, train_cfg, subkey(seed, STREAM_TRAIN, round_index, node.node_id)
    )
    if attack is not None and attack.kind == "model_poison":
        update = model_poison(
            update,
            attack.strategy,
            subkey(seed, STREAM_ATTACK, round_index, node.node_id),
            factor=attack.factor,
            sigma=attack.sigma,
        )
    return update, len(dataset)


def import_model_eval(
    model: ModelParams,
    tester: NodeConfig,
    seed: Seed,
    threshold: float = 0.5,
    decide: Optional[Callable[[LabeledExample], np.ndarray]] = None,
) -> Metrics:
    """Evaluate a model on a tester node's freshly generated local data.

    Returns pooled detection metrics. `decide` is a test hook replacing
    the model's decision rule (e.g. a truth oracle).
    """
    if tester.role != ROLE_TESTER:
        raise ParameterError(f"node {tester.node_id} has role {tester.role!r}, not tester")
    dataset = make_dataset(
        tester.data.n_patterns,
        tester.data.traffic,
        tester.channel,
        tester.mean_snr_db,
        tester.data.dims,
        seed,
        k_samples=tester.data.k_samples,
    )
    if decide is None:
        pairs = [(predict(model, ex.input, threshold), ex.label) for ex in dataset]
    else:
        pairs = [(decide(ex), ex.label) for ex in dataset]
    return pooled_pd_pfa(pairs)


def run_round(
    server: ServerState,
    nodes: Sequence[NodeConfig],
    train_cfg: TrainConfig,
    defense: Optional[DefenseConfig] = None,
    seed: Seed = 0,
    refresh_data: bool = True,
    weight_by_size: bool = False,
    threads: int = 1,
    eval_testers: bool = True,
    round_data: Optional[dict[int, Dataset]] = None,
) -> tuple[ServerState, RoundReport]:
    """Execute one federation round and append its report."""
    workers = sorted(
        (n for n in nodes if n.role != ROLE_TESTER), key=lambda n: n.node_id
    )
    testers = sorted(
        (n for n in nodes if n.role == ROLE_TESTER), key=lambda n: n.node_id
    )
    if not workers:
        raise ConfigError("a round needs at least one non-tester node")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate node ids: {sorted(ids)}")

    r = server.round_index
    dp_sigma = defense.dp_sigma if defense is not None else 0.0

    def emitters_for(node: NodeConfig):
        return [
            (other.attack.region, other.attack.power)
            for other in workers
            if other.node_id != node.node_id
            and other.attack is not None
            and other.attack.kind == "pue"
            and other.attack.region is not None
        ]

    def compute(node: NodeConfig):
        preset = None if round_data is None else round_data.get(node.node_id)
        return _node_update(
            node, server.global_model, train_cfg, seed, r,
            refresh_data, emitters_for(node), dp_sigma, dataset=preset,
        )

    if threads > 1 and len(workers) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(zip(
                (n.node_id for n in workers), pool.map(compute, workers)
            ))
    else:
        results = {n.node_id: compute(n) for n in workers}

    submitted = [(n.node_id, results[n.node_id][0]) for n in workers]
    sizes = {n.node_id: results[n.node_id][1] for n in workers}

    filter_report: Optional[FilterReport] = None
    if defense is not None:
        if server.validation is None:
            raise ConfigError("defense is enabled but the server has no validation dataset")
        filter_tau = (
            defense.filter_decision_threshold
            if defense.filter_decision_threshold is not None
            else train_cfg.decision_threshold
        )
        accepted_pairs, filter_report = accordance_filter(
            submitted,
            server.validation,
            defense.accordance_threshold_pct,
            decision_threshold=filter_tau,
            peer_reduce=defense.peer_reduce,
            reference=server.global_model if defense.include_global_reference else None,
        )
    else:
        accepted_pairs = list(submitted)

    if accepted_pairs:
        models = [m for _, m in accepted_pairs]
        if defense is not None and defense.aggregation in ("median", "trimmed_mean"):
            new_global = robust_aggregate(models, defense.aggregation, defense.trim_fraction)
        else:
            weights = (
                [float(max(sizes[i], 1)) for i, _ in accepted_pairs]
                if weight_by_size else None
            )
            new_global = fedavg(models, weights)
    else:
        new_global = server.global_model  # all rejected: keep the previous model

    tester_metrics: dict[int, Metrics] = {}
    if eval_testers:
        for tester in testers:
            key = subkey(seed, STREAM_TESTER, r if refresh_data else 0, tester.node_id)
            tester_metrics[tester.node_id] = import_model_eval(
                new_global, tester, key, threshold=train_cfg.decision_threshold
            )

    report = RoundReport(
        round_index=r,
        submitted=tuple(i for i, _ in submitted),
        accepted=tuple(i for i, _ in accepted_pairs),
        filter_report=filter_report,
        tester_metrics=tester_metrics,
    )
    new_server = ServerState(
        global_model=new_global,
        round_index=r + 1,
        validation=server.validation,
        history=server.history + (report,),
    )
    return new_server, report


@dataclass(frozen=True)
class ExperimentPlan:
    """Fully resolved inputs of one federation run."""

    nodes: tuple[NodeConfig, ...]
    rounds: int
    train_cfg: TrainConfig
    master_seed: int
    arch: ModelArch
    defense: Optional[DefenseConfig] = None
    server_channel: Optional[ChannelProfile] = None
    server_traffic: Optional[TrafficParams] = None
    server_snr_db: float = 10.0
    dims: GridDims = field(default_factory=lambda: GridDims(50, 100))
    k_samples: int = 8
    refresh_data: bool = True
    weight_by_size: bool = False
    eval_every_round: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if not any(n.role != ROLE_TESTER for n in self.nodes):
            raise ConfigError("experiment needs at least one non-tester node")


@dataclass
class ExperimentOutcome:
    series: MetricsSeries
    reports: list[RoundReport]
    server: ServerState


def init_server(plan: ExperimentPlan) -> ServerState:
    """Fresh global model plus, when the defense is on, the server's own
    energy-sensing validation dataset."""
    model = init_model(plan.arch, INIT_RANDOM, subkey(plan.master_seed, STREAM_INIT))
    validation = None
    if plan.defense is not None:
        channel = plan.server_channel or ChannelProfile()
        traffic = plan.server_traffic or TrafficParams()
        validation = make_dataset(
            plan.defense.validation_patterns,
            traffic,
            channel,
            plan.server_snr_db,
            plan.dims,
            subkey(plan.master_seed, STREAM_VALIDATION),
            k_samples=plan.k_samples,
        )
    return ServerState(global_model=model, validation=validation)


def run_experiment(plan: ExperimentPlan) -> ExperimentOutcome:
    """Run plan.rounds federation rounds from a fresh initialization."""
    server = init_server(plan)
    series = MetricsSeries(rows=[])
    reports: list[RoundReport] = []

    for r in range(plan.rounds):
        eval_now = plan.eval_every_round or r == plan.rounds - 1
        server, report = run_round(
            server,
            plan.nodes,
            plan.train_cfg,
            defense=plan.defense,
            seed=plan.master_seed,
            refresh_data=plan.refresh_data,
            weight_by_size=plan.weight_by_size,
            threads=plan.threads,
            eval_testers=eval_now,
        )
        reports.append(report)
        for tester_id, m in sorted(report.tester_metrics.items()):
            series.rows.append(
                MetricsRow(
                    round_index=r,
                    node=f"GLOBAL:t{tester_id}",
                    p_d=m.p_d,
                    p_fa=m.p_fa,
                    accepted_count=len(report.accepted),
                )
            )
    return ExperimentOutcome(series=series, reports=reports, server=server)


def train_isolated(plan: ExperimentPlan) -> dict[int, ModelParams]:
    """No-federation baseline: every non-tester node trains through the
    same rounds on the same data streams, but keeps its own model chain
    instead of receiving the aggregate."""
    workers = [n for n in plan.nodes if n.role != ROLE_TESTER]
    if not workers:
        raise ConfigError("baseline needs at least one non-tester node")
    init = init_model(plan.arch, INIT_RANDOM, subkey(plan.master_seed, STREAM_INIT))
    models = {n.node_id: init for n in workers}
    for r in range(plan.rounds):
        for node in workers:
            dataset = _generate_node_dataset(node, plan.master_seed, r, plan.refresh_data)
            if node.attack is not None and node.attack.kind == "ssdf":
                dataset = ssdf_poison(
                    dataset, node.attack.mode, node.attack.fraction,
                    subkey(plan.master_seed, STREAM_ATTACK, r, node.node_id),
                )
            models[node.node_id] = train_local(
                models[node.node_id], dataset, plan.train_cfg,
                subkey(plan.master_seed, STREAM_TRAIN, r, node.node_id),
            )
    return models
