"""Experiment configuration, scenario runners, and result emission.

Config files are flat `key = value` text with [node.N] sections plus
optional [train], [defense], and [server] sections. Parsing is strict:
unknown keys or sections are errors, every violated constraint names its
key and line, and the fully resolved configuration is echoed next to the
outputs for provenance.

Key reference (defaults in parentheses):

  global   master_seed*, rounds*, n_freq (50), n_time (100),
           k_samples (8), snr_grid (10), duty_target (0.3),
           persist_time (0.9), block_height_mean (4.0),
           refresh_data (true), weight_by_size (false),
           eval_every_round (true), imports_per_tester (3),
           pattern_scale (1.0), out_dir (out)
  [train]  learning_rate (0.05), local_epochs (2), batch_size (8),
           decision_threshold (0.5)
  [defense] enabled (false), accordance_threshold_pct (65),
           relaxed_threshold_pct (55), validation_patterns (50),
           aggregation (mean), trim_fraction (0.1), dp_sigma (0),
           peer_reduce (mean), include_global_reference (false),
           filter_decision_threshold (node decision threshold)
  [server] channel (eva), doppler_hz (30-55), snr_db (10), plus the
           traffic keys, all feeding the defense validation dataset
  [node.N] role (honest), channel (eva), doppler_hz (30-55),
           snr_db (unset: first snr_grid entry), n_patterns (25),
           traffic keys, and for attackers: attack, attack_mode
           (selfish), attack_fraction (0.5), attack_strategy
           (sign_flip), attack_factor (1.0), attack_sigma (0.0),
           attack_power (0.0), attack_region (full)

  (* = required)

Doppler values accept a number, a range `lo-hi`, or a union of ranges
`a-b,c-d`; ranged values are drawn once per node at experiment start
from a seeded stream.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .attacks import AttackSpec
from .defense import DefenseConfig
from .errors import ConfigError, ParameterError
from .federation import (
    DatasetSpec,
    ExperimentOutcome,
    ExperimentPlan,
    NodeConfig,
    ROLE_ATTACKER,
    ROLE_TESTER,
    run_experiment,
    train_isolated,
)
from .learner import ModelArch, ModelParams, TrainConfig, predict
from .metrics import (
    averaged_pd_pfa,
    emit_csv,
    emit_filter_csv,
    pooled_pd_pfa,
    render_csv,
)
from .rng import STREAM_DOPPLER, STREAM_EVAL, STREAM_IMPORT, child_rng, subkey
from .spectrum_env import ChannelProfile, GridDims, TrafficParams, make_dataset

# compute_pd_pfa is part of this module's public surface; it lives in
# metrics.py so federation can use it without a circular import.
from .metrics import compute_pd_pfa  # noqa: F401  (re-export)

DopplerSpec = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class NodeSpec:
    """A node as written in the config file (Doppler not yet drawn)."""

    node_id: int
    role: str = "honest"
    channel_kind: str = "eva"
    doppler: DopplerSpec = ((30.0, 55.0),)
    snr_db: Optional[float] = None
    n_patterns: int = 25
    traffic: TrafficParams = field(default_factory=TrafficParams)
    attack_kind: Optional[str] = None
    attack_mode: str = "selfish"
    attack_fraction: float = 0.5
    attack_strategy: str = "sign_flip"
    attack_factor: float = 1.0
    attack_sigma: float = 0.0
    attack_power: float = 0.0
    attack_region: str = "full"


@dataclass(frozen=True)
class ServerEnv:
    """Environment generating the server's validation dataset."""

    channel_kind: str = "eva"
    doppler: DopplerSpec = ((30.0, 55.0),)
    snr_db: float = 10.0
    traffic: TrafficParams = field(default_factory=TrafficParams)


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    rounds: int
    dims: GridDims = field(default_factory=lambda: GridDims(50, 100))
    k_samples: int = 8
    snr_grid: tuple[float, ...] = (10.0,)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    refresh_data: bool = True
    weight_by_size: bool = False
    eval_every_round: bool = True
    imports_per_tester: int = 3
    pattern_scale: float = 1.0
    out_dir: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)
    defense_enabled: bool = False
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    relaxed_threshold_pct: float = 55.0
    server: ServerEnv = field(default_factory=ServerEnv)
    nodes: tuple[NodeSpec, ...] = ()

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError(f"constraint violated for 'rounds': must be >= 0, got {self.rounds}")
        if self.master_seed < 0:
            raise ConfigError(
                f"constraint violated for 'master_seed': must be >= 0, got {self.master_seed}"
            )
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate node ids: {sorted(ids)}")
        if self.nodes and not any(n.role != ROLE_TESTER for n in self.nodes):
            raise ConfigError("at least one non-tester node is required")


# ---------------------------------------------------------------------------
# Config text parsing
# ---------------------------------------------------------------------------

def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_doppler(value: str) -> DopplerSpec:
    segments = []
    for part in value.split(","):
        part = part.strip()
        if "-" in part[1:]:  # allow leading minus to fail range checks later
            lo_s, hi_s = part.split("-", 1)
            lo, hi = float(lo_s), float(hi_s)
        else:
            lo = hi = float(part)
        if lo < 0 or hi < lo:
            raise ValueError(f"bad doppler segment {part!r}")
        segments.append((lo, hi))
    if not segments:
        raise ValueError("empty doppler spec")
    return tuple(segments)


def _fmt_doppler(spec: DopplerSpec) -> str:
    parts = []
    for lo, hi in spec:
        parts.append(f"{lo:g}" if lo == hi else f"{lo:g}-{hi:g}")
    return ",".join(parts)


_GLOBAL_KEYS = {
    "master_seed": int,
    "rounds": int,
    "n_freq": int,
    "n_time": int,
    "k_samples": int,
    "snr_grid": lambda v: tuple(float(x) for x in v.split(",")),
    "duty_target": float,
    "persist_time": float,
    "block_height_mean": float,
    "refresh_data": _parse_bool,
    "weight_by_size": _parse_bool,
    "eval_every_round": _parse_bool,
    "imports_per_tester": int,
    "pattern_scale": float,
    "out_dir": str,
}

_TRAIN_KEYS = {
    "learning_rate": float,
    "local_epochs": int,
    "batch_size": int,
    "decision_threshold": float,
}

_DEFENSE_KEYS = {
    "enabled": _parse_bool,
    "accordance_threshold_pct": float,
    "relaxed_threshold_pct": float,
    "validation_patterns": int,
    "aggregation": str,
    "trim_fraction": float,
    "dp_sigma": float,
    "peer_reduce": str,
    "include_global_reference": _parse_bool,
    "filter_decision_threshold": float,
}

_SERVER_KEYS = {
    "channel": str,
    "doppler_hz": _parse_doppler,
    "snr_db": float,
    "duty_target": float,
    "persist_time": float,
    "block_height_mean": float,
}

_NODE_KEYS = {
    "role": str,
    "channel": str,
    "doppler_hz": _parse_doppler,
    "snr_db": float,
    "n_patterns": int,
    "duty_target": float,
    "persist_time": float,
    "block_height_mean": float,
    "attack": str,
    "attack_mode": str,
    "attack_fraction": float,
    "attack_strategy": str,
    "attack_factor": float,
    "attack_sigma": float,
    "attack_power": float,
    "attack_region": str,
}


def _collect_sections(text: str):
    """Split config text into {section: {key: (value, line)}} strictly."""
    sections: dict[str, dict[str, tuple[str, int]]] = {"": {}}
    current = ""
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r} (line {ln})")
            name = line[1:-1].strip()
            if name in ("train", "defense", "server") or name.startswith("node."):
                if name.startswith("node."):
                    suffix = name[5:]
                    if not suffix.isdigit():
                        raise ConfigError(
                            f"node section needs an integer id, got [{name}] (line {ln})"
                        )
                current = name
                sections.setdefault(current, {})
            else:
                raise ConfigError(f"unknown section [{name}] (line {ln})")
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r} (line {ln})")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"empty key or value (line {ln})")
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in section [{current}] (line {ln})")
        sections[current][key] = (value, ln)
    return sections


def _typed(section: dict[str, tuple[str, int]], schema: dict, where: str) -> dict:
    out = {}
    for key, (value, ln) in section.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in {where} (line {ln})")
        try:
            out[key] = schema[key](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"invalid value for {key!r} in {where} (line {ln}): {exc}"
            ) from exc
    return out


def _traffic_from(keys: dict, base: TrafficParams) -> TrafficParams:
    try:
        return TrafficParams(
            duty_target=keys.get("duty_target", base.duty_target),
            persist_time=keys.get("persist_time", base.persist_time),
            block_height_mean=keys.get("block_height_mean", base.block_height_mean),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate config text; see the module docstring for keys."""
    sections = _collect_sections(text)

    top = _typed(sections.get("", {}), _GLOBAL_KEYS, "the global section")
    missing = [k for k in ("master_seed", "rounds") if k not in top]
    node_names = sorted(name for name in sections if name.startswith("node."))
    if not node_names:
        missing.append("at least one [node.N] section")
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))

    traffic = _traffic_from(top, TrafficParams())

    train_keys = _typed(sections.get("train", {}), _TRAIN_KEYS, "[train]")
    try:
        train = TrainConfig(**train_keys)
    except ParameterError as exc:
        raise ConfigError(f"[train]: {exc}") from exc

    defense_keys = _typed(sections.get("defense", {}), _DEFENSE_KEYS, "[defense]")
    defense_enabled = defense_keys.pop("enabled", False)
    relaxed = defense_keys.pop("relaxed_threshold_pct", 55.0)
    try:
        defense = DefenseConfig(**defense_keys)
    except ParameterError as exc:
        raise ConfigError(f"[defense]: {exc}") from exc
    if not 0.0 <= relaxed <= 100.0:
        raise ConfigError(
            f"constraint violated for 'relaxed_threshold_pct': must be in [0,100], got {relaxed}"
        )

    server_keys = _typed(sections.get("server", {}), _SERVER_KEYS, "[server]")
    server = ServerEnv(
        channel_kind=server_keys.get("channel", "eva"),
        doppler=server_keys.get("doppler_hz", ((30.0, 55.0),)),
        snr_db=server_keys.get("snr_db", 10.0),
        traffic=_traffic_from(server_keys, traffic),
    )
    if server.channel_kind not in ("flat", "epa", "eva"):
        raise ConfigError(f"unknown server channel {server.channel_kind!r}")

    nodes = []
    for name in node_names:
        node_id = int(name[5:])
        keys = _typed(sections[name], _NODE_KEYS, f"[{name}]")
        role = keys.get("role", "honest")
        if role not in ("honest", "attacker", "tester"):
            raise ConfigError(f"unknown role {role!r} in [{name}]")
        attack_kind = keys.get("attack")
        if role == "attacker" and attack_kind is None:
            raise ConfigError(f"[{name}] is an attacker but sets no 'attack' key")
        if role != "attacker" and attack_kind is not None:
            raise ConfigError(f"[{name}] sets 'attack' but role is {role!r}")
        if attack_kind is not None and attack_kind not in ("ssdf", "model_poison", "free_ride", "pue"):
            raise ConfigError(f"unknown attack {attack_kind!r} in [{name}]")
        n_patterns = keys.get("n_patterns", 25)
        if n_patterns < 1:
            raise ConfigError(
                f"constraint violated for 'n_patterns' in [{name}]: must be >= 1, got {n_patterns}"
            )
        nodes.append(NodeSpec(
            node_id=node_id,
            role=role,
            channel_kind=keys.get("channel", "eva"),
            doppler=keys.get("doppler_hz", ((30.0, 55.0),)),
            snr_db=keys.get("snr_db"),
            n_patterns=n_patterns,
            traffic=_traffic_from(keys, traffic),
            attack_kind=attack_kind,
            attack_mode=keys.get("attack_mode", "selfish"),
            attack_fraction=keys.get("attack_fraction", 0.5),
            attack_strategy=keys.get("attack_strategy", "sign_flip"),
            attack_factor=keys.get("attack_factor", 1.0),
            attack_sigma=keys.get("attack_sigma", 0.0),
            attack_power=keys.get("attack_power", 0.0),
            attack_region=keys.get("attack_region", "full"),
        ))
        if nodes[-1].channel_kind not in ("flat", "epa", "eva"):
            raise ConfigError(f"unknown channel {nodes[-1].channel_kind!r} in [{name}]")

    rounds = top["rounds"]
    if rounds < 0:
        raise ConfigError(f"constraint violated for 'rounds': must be >= 0, got {rounds}")
    try:
        dims = GridDims(top.get("n_freq", 50), top.get("n_time", 100))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        master_seed=top["master_seed"],
        rounds=rounds,
        dims=dims,
        k_samples=top.get("k_samples", 8),
        snr_grid=top.get("snr_grid", (10.0,)),
        traffic=traffic,
        refresh_data=top.get("refresh_data", True),
        weight_by_size=top.get("weight_by_size", False),
        eval_every_round=top.get("eval_every_round", True),
        imports_per_tester=top.get("imports_per_tester", 3),
        pattern_scale=top.get("pattern_scale", 1.0),
        out_dir=top.get("out_dir", "out"),
        train=train,
        defense_enabled=defense_enabled,
        defense=defense,
        relaxed_threshold_pct=relaxed,
        server=server,
        nodes=tuple(nodes),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def render_resolved(cfg: ExperimentConfig) -> str:
    """Canonical echo of a fully resolved configuration."""
    lines = [
        "# resolved fedspectrum configuration",
        f"master_seed = {cfg.master_seed}",
        f"rounds = {cfg.rounds}",
        f"n_freq = {cfg.dims.n_freq}",
        f"n_time = {cfg.dims.n_time}",
        f"k_samples = {cfg.k_samples}",
        "snr_grid = " + ",".join(f"{s:g}" for s in cfg.snr_grid),
        f"duty_target = {cfg.traffic.duty_target:g}",
        f"persist_time = {cfg.traffic.persist_time:g}",
        f"block_height_mean = {cfg.traffic.block_height_mean:g}",
        f"refresh_data = {str(cfg.refresh_data).lower()}",
        f"weight_by_size = {str(cfg.weight_by_size).lower()}",
        f"eval_every_round = {str(cfg.eval_every_round).lower()}",
        f"imports_per_tester = {cfg.imports_per_tester}",
        f"pattern_scale = {cfg.pattern_scale:g}",
        f"out_dir = {cfg.out_dir}",
        "",
        "[train]",
        f"learning_rate = {cfg.train.learning_rate:g}",
        f"local_epochs = {cfg.train.local_epochs}",
        f"batch_size = {cfg.train.batch_size}",
        f"decision_threshold = {cfg.train.decision_threshold:g}",
        "",
        "[defense]",
        f"enabled = {str(cfg.defense_enabled).lower()}",
        f"accordance_threshold_pct = {cfg.defense.accordance_threshold_pct:g}",
        f"relaxed_threshold_pct = {cfg.relaxed_threshold_pct:g}",
        f"validation_patterns = {cfg.defense.validation_patterns}",
        f"aggregation = {cfg.defense.aggregation}",
        f"trim_fraction = {cfg.defense.trim_fraction:g}",
        f"dp_sigma = {cfg.defense.dp_sigma:g}",
        f"peer_reduce = {cfg.defense.peer_reduce}",
        f"include_global_reference = {str(cfg.defense.include_global_reference).lower()}",
        *(
            [f"filter_decision_threshold = {cfg.defense.filter_decision_threshold:g}"]
            if cfg.defense.filter_decision_threshold is not None
            else []
        ),
        "",
        "[server]",
        f"channel = {cfg.server.channel_kind}",
        f"doppler_hz = {_fmt_doppler(cfg.server.doppler)}",
        f"snr_db = {cfg.server.snr_db:g}",
        f"duty_target = {cfg.server.traffic.duty_target:g}",
        f"persist_time = {cfg.server.traffic.persist_time:g}",
        f"block_height_mean = {cfg.server.traffic.block_height_mean:g}",
    ]
    for node in sorted(cfg.nodes, key=lambda n: n.node_id):
        lines += [
            "",
            f"[node.{node.node_id}]",
            f"role = {node.role}",
            f"channel = {node.channel_kind}",
            f"doppler_hz = {_fmt_doppler(node.doppler)}",
        ]
        if node.snr_db is not None:
            lines.append(f"snr_db = {node.snr_db:g}")
        lines += [
            f"n_patterns = {node.n_patterns}",
            f"duty_target = {node.traffic.duty_target:g}",
            f"persist_time = {node.traffic.persist_time:g}",
            f"block_height_mean = {node.traffic.block_height_mean:g}",
        ]
        if node.attack_kind is not None:
            lines.append(f"attack = {node.attack_kind}")
            if node.attack_kind == "ssdf":
                lines.append(f"attack_mode = {node.attack_mode}")
                lines.append(f"attack_fraction = {node.attack_fraction:g}")
            elif node.attack_kind == "model_poison":
                lines.append(f"attack_strategy = {node.attack_strategy}")
                lines.append(f"attack_factor = {node.attack_factor:g}")
                lines.append(f"attack_sigma = {node.attack_sigma:g}")
            elif node.attack_kind == "free_ride":
                lines.append(f"attack_sigma = {node.attack_sigma:g}")
            else:
                lines.append(f"attack_power = {node.attack_power:g}")
                lines.append(f"attack_region = {node.attack_region}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Resolution: config -> federation plan
# ---------------------------------------------------------------------------

def _draw_doppler(spec: DopplerSpec, seed, *tags) -> float:
    """Draw once from a union of ranges, weighted by segment length."""
    lows = np.array([s[0] for s in spec])
    highs = np.array([s[1] for s in spec])
    if len(spec) == 1 and lows[0] == highs[0]:
        return float(lows[0])
    rng = child_rng(seed, STREAM_DOPPLER, *tags)
    lengths = highs - lows
    if lengths.sum() == 0:
        idx = int(rng.integers(0, len(spec)))
        return float(lows[idx])
    probs = lengths / lengths.sum()
    idx = int(rng.choice(len(spec), p=probs))
    return float(rng.uniform(lows[idx], highs[idx]))


def _attack_region(kind: str, dims: GridDims) -> np.ndarray:
    if kind == "full":
        return np.ones(dims.shape, dtype=bool)
    if kind == "none":
        return np.zeros(dims.shape, dtype=bool)
    if kind.startswith("freq:"):
        try:
            lo_s, hi_s = kind[5:].split("-", 1)
            lo, hi = int(lo_s), int(hi_s)
        except ValueError as exc:
            raise ConfigError(f"bad attack_region {kind!r}") from exc
        if not 0 <= lo <= hi < dims.n_freq:
            raise ConfigError(f"attack_region rows {kind!r} outside the grid")
        region = np.zeros(dims.shape, dtype=bool)
        region[lo:hi + 1] = True
        return region
    raise ConfigError(f"unknown attack_region {kind!r}")


def _attack_from_spec(node: NodeSpec, dims: GridDims) -> Optional[AttackSpec]:
    if node.attack_kind is None:
        return None
    if node.attack_kind == "ssdf":
        return AttackSpec.ssdf(node.attack_mode, node.attack_fraction)
    if node.attack_kind == "model_poison":
        return AttackSpec.model_poison(
            node.attack_strategy, factor=node.attack_factor, sigma=node.attack_sigma
        )
    if node.attack_kind == "free_ride":
        return AttackSpec.free_ride(node.attack_sigma)
    return AttackSpec.pue(_attack_region(node.attack_region, dims), node.attack_power)


def resolve_plan(
    cfg: ExperimentConfig,
    snr_override: Optional[float] = None,
    threshold_override: Optional[float] = None,
    threads: int = 1,
    arch: Optional[ModelArch] = None,
    eval_every_round: Optional[bool] = None,
) -> ExperimentPlan:
    """Draw per-node Doppler values and lower the config to a run plan."""
    scale = cfg.pattern_scale
    nodes = []
    for spec in sorted(cfg.nodes, key=lambda n: n.node_id):
        doppler = _draw_doppler(spec.doppler, cfg.master_seed, 0, spec.node_id)
        snr = spec.snr_db
        if snr is None:
            snr = snr_override if snr_override is not None else cfg.snr_grid[0]
        n_patterns = max(1, int(round(spec.n_patterns * scale)))
        nodes.append(NodeConfig(
            node_id=spec.node_id,
            channel=ChannelProfile(kind=spec.channel_kind, doppler_hz=doppler),
            mean_snr_db=float(snr),
            data=DatasetSpec(n_patterns, spec.traffic, cfg.dims, cfg.k_samples),
            role=spec.role,
            attack=_attack_from_spec(spec, cfg.dims),
        ))

    defense = None
    if cfg.defense_enabled:
        defense = cfg.defense
        if threshold_override is not None:
            defense = replace(defense, accordance_threshold_pct=threshold_override)

    server_doppler = _draw_doppler(cfg.server.doppler, cfg.master_seed, 1)
    return ExperimentPlan(
        nodes=tuple(nodes),
        rounds=cfg.rounds,
        train_cfg=cfg.train,
        master_seed=cfg.master_seed,
        arch=arch or ModelArch(),
        defense=defense,
        server_channel=ChannelProfile(kind=cfg.server.channel_kind, doppler_hz=server_doppler),
        server_traffic=cfg.server.traffic,
        server_snr_db=cfg.server.snr_db,
        dims=cfg.dims,
        k_samples=cfg.k_samples,
        refresh_data=cfg.refresh_data,
        weight_by_size=cfg.weight_by_size,
        eval_every_round=cfg.eval_every_round if eval_every_round is None else eval_every_round,
        threads=threads,
    )


def run_configured_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentOutcome:
    """The generic runner behind the `run` CLI subcommand."""
    return run_experiment(resolve_plan(cfg, threads=threads))


# ---------------------------------------------------------------------------
# Scenario: federated vs locally trained sensing across SNR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    snr_db: float
    tester_id: int
    arm: str                      # "fl" or "imported"
    p_d: Optional[float]          # pooled counts
    p_fa: Optional[float]
    p_d_avg: Optional[float]      # per-pattern averaged variant
    p_fa_avg: Optional[float]


@dataclass
class Fig3Result:
    rows: list[ComparisonRow]

    def tester_mean(self, arm: str, snr_db: float) -> tuple[float, float]:
        rows = [r for r in self.rows if r.arm == arm and r.snr_db == snr_db]
        if not rows:
            raise ParameterError(f"no rows for arm={arm!r} snr={snr_db}")
        return (
            float(np.mean([r.p_d for r in rows if r.p_d is not None])),
            float(np.mean([r.p_fa for r in rows if r.p_fa is not None])),
        )


def _eval_on_tester(models: dict[str, ModelParams], tester: NodeConfig, seed, threshold: float):
    """Evaluate several models on one freshly drawn tester dataset."""
    dataset = make_dataset(
        tester.data.n_patterns, tester.data.traffic, tester.channel,
        tester.mean_snr_db, tester.data.dims, seed, k_samples=tester.data.k_samples,
    )
    out = {}
    for name, model in models.items():
        pairs = [(predict(model, ex.input, threshold), ex.label) for ex in dataset]
        out[name] = (pooled_pd_pfa(pairs), averaged_pd_pfa(pairs))
    return out


def run_fig3_scenario(cfg: ExperimentConfig, threads: int = 1) -> Fig3Result:
    """Train the federation once per SNR point and compare the corporate
    model against randomly imported single-node models on the testers."""
    testers = [n for n in cfg.nodes if n.role == ROLE_TESTER]
    crs = [n for n in cfg.nodes if n.role != ROLE_TESTER]
    if not testers:
        raise ConfigError("scenario requires at least one tester node")
    if not crs:
        raise ConfigError("scenario requires at least one sensing node")

    rows: list[ComparisonRow] = []
    for snr_idx, snr in enumerate(cfg.snr_grid):
        plan = resolve_plan(cfg, snr_override=snr, threads=threads)
        outcome = run_experiment(plan)
        local_models = train_isolated(plan)

        cr_ids = sorted(local_models)
        plan_testers = [n for n in plan.nodes if n.role == ROLE_TESTER]
        for tester in plan_testers:
            eval_key = subkey(cfg.master_seed, STREAM_EVAL, snr_idx, tester.node_id)
            rng = child_rng(cfg.master_seed, STREAM_IMPORT, snr_idx, tester.node_id)
            n_imports = min(cfg.imports_per_tester, len(cr_ids))
            chosen = sorted(rng.choice(cr_ids, size=n_imports, replace=False).tolist())

            models = {"fl": outcome.server.global_model}
            models.update({f"cr{c}": local_models[c] for c in chosen})
            evals = _eval_on_tester(models, tester, eval_key, cfg.train.decision_threshold)

            fl_pooled, fl_avg = evals["fl"]
            rows.append(ComparisonRow(
                snr_db=snr, tester_id=tester.node_id, arm="fl",
                p_d=fl_pooled.p_d, p_fa=fl_pooled.p_fa,
                p_d_avg=fl_avg[0], p_fa_avg=fl_avg[1],
            ))
            imp = [evals[f"cr{c}"] for c in chosen]
            rows.append(ComparisonRow(
                snr_db=snr, tester_id=tester.node_id, arm="imported",
                p_d=_mean_or_none([m.p_d for m, _ in imp]),
                p_fa=_mean_or_none([m.p_fa for m, _ in imp]),
                p_d_avg=_mean_or_none([a[0] for _, a in imp]),
                p_fa_avg=_mean_or_none([a[1] for _, a in imp]),
            ))
    return Fig3Result(rows=rows)


def _mean_or_none(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------------------
# Scenario: poisoned federation under two accordance thresholds
# ---------------------------------------------------------------------------

@dataclass
class Fig6Result:
    strict_pct: float
    relaxed_pct: float
    strict: ExperimentOutcome
    relaxed: ExperimentOutcome
    attacker_ids: tuple[int, ...]

    def accepted_rounds(self, outcome: ExperimentOutcome, node_id: int) -> list[int]:
        return [r.round_index for r in outcome.reports if node_id in r.accepted]


def run_fig6_scenario(cfg: ExperimentConfig, threads: int = 1) -> Fig6Result:
    """Run the poisoned-federation scenario twice, at the strict and the
    relaxed accordance thresholds, sharing every data stream."""
    attacker_ids = tuple(sorted(n.node_id for n in cfg.nodes if n.role == ROLE_ATTACKER))
    if not attacker_ids:
        raise ConfigError("scenario requires an attacker node")
    if not cfg.defense_enabled:
        raise ConfigError("scenario requires the defense to be enabled")
    if not any(n.role == ROLE_TESTER for n in cfg.nodes):
        raise ConfigError("scenario requires a tester node")

    strict_pct = cfg.defense.accordance_threshold_pct
    relaxed_pct = cfg.relaxed_threshold_pct
    strict = run_experiment(resolve_plan(cfg, threads=threads))
    relaxed = run_experiment(resolve_plan(cfg, threshold_override=relaxed_pct, threads=threads))
    return Fig6Result(
        strict_pct=strict_pct,
        relaxed_pct=relaxed_pct,
        strict=strict,
        relaxed=relaxed,
        attacker_ids=attacker_ids,
    )


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_experiment_outputs(out_dir, cfg: ExperimentConfig, outcome: ExperimentOutcome,
                             name: str = "metrics") -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "resolved.cfg"), render_resolved(cfg))
    emit_csv(outcome.series, os.path.join(out_dir, f"{name}.csv"))
    if any(r.filter_report is not None for r in outcome.reports):
        emit_filter_csv(outcome.reports, os.path.join(out_dir, f"{name}_filter.csv"))


def render_curve(points: Sequence[tuple[float, Optional[float]]]) -> str:
    """Two-column plot data; undefined points are skipped."""
    lines = [f"{x:g} {y:.6f}" for x, y in points if y is not None]
    return "\n".join(lines) + "\n" if lines else "\n"


def write_fig3_outputs(out_dir, cfg: ExperimentConfig, result: Fig3Result) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "resolved.cfg"), render_resolved(cfg))
    lines = ["snr_db,tester,arm,p_d,p_fa,p_d_avg,p_fa_avg"]
    for r in sorted(result.rows, key=lambda r: (r.snr_db, r.tester_id, r.arm)):
        def f(v):
            return "" if v is None else f"{v:.6f}"
        lines.append(
            f"{r.snr_db:g},{r.tester_id},{r.arm},{f(r.p_d)},{f(r.p_fa)},{f(r.p_d_avg)},{f(r.p_fa_avg)}"
        )
    _write_text(os.path.join(out_dir, "fig3.csv"), "\n".join(lines) + "\n")
    for arm in ("fl", "imported"):
        pd_curve, pfa_curve = [], []
        for snr in cfg.snr_grid:
            p_d, p_fa = result.tester_mean(arm, snr)
            pd_curve.append((snr, p_d))
            pfa_curve.append((snr, p_fa))
        _write_text(os.path.join(out_dir, f"fig3_pd_{arm}.dat"), render_curve(pd_curve))
        _write_text(os.path.join(out_dir, f"fig3_pfa_{arm}.dat"), render_curve(pfa_curve))


def write_fig6_outputs(out_dir, cfg: ExperimentConfig, result: Fig6Result) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "resolved.cfg"), render_resolved(cfg))
    for tag, outcome in (("strict", result.strict), ("relaxed", result.relaxed)):
        pct = result.strict_pct if tag == "strict" else result.relaxed_pct
        suffix = f"t{pct:g}"
        emit_csv(outcome.series, os.path.join(out_dir, f"metrics_{suffix}.csv"))
        emit_filter_csv(outcome.reports, os.path.join(out_dir, f"filter_{suffix}.csv"))
        for metric in ("p_d", "p_fa"):
            by_round: dict[int, list[float]] = {}
            for row in outcome.series.rows:
                val = getattr(row, metric)
                if val is not None:
                    by_round.setdefault(row.round_index, []).append(val)
            curve = [(float(r), float(np.mean(vs))) for r, vs in sorted(by_round.items())]
            _write_text(
                os.path.join(out_dir, f"fig6_{metric}_{suffix}.dat"), render_curve(curve)
            )
    log_lines = []
    for tag, outcome in (("strict", result.strict), ("relaxed", result.relaxed)):
        pct = result.strict_pct if tag == "strict" else result.relaxed_pct
        for report in outcome.reports:
            accepted = ",".join(str(i) for i in report.accepted) or "-"
            attacker_in = any(a in report.accepted for a in result.attacker_ids)
            log_lines.append(
                f"threshold={pct:g} round={report.round_index} accepted={accepted} "
                f"attacker_accepted={int(attacker_in)}"
            )
    _write_text(os.path.join(out_dir, "acceptance.log"), "\n".join(log_lines) + "\n")


def series_csv_bytes(outcome: ExperimentOutcome) -> bytes:
    """Metrics CSV as bytes, for determinism comparisons."""
    return render_csv(outcome.series).encode("ascii")
