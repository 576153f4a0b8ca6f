"""Command-line interface.

Subcommands:
  gen       generate per-node dataset snapshots from a config
  run       run a generic configured experiment
  fig3      federated vs locally-trained sensing across SNR (preset)
  fig6      poisoned federation under two accordance thresholds (preset)
  selftest  quick internal property checks

Presets load the packaged fig3.cfg / fig6.cfg; --config overrides them.
--paper-scale restores the published data volume (25x the desk-scale
pattern counts).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from importlib import resources

from .errors import FedSpectrumError
from .harness import (
    ExperimentConfig,
    load_config,
    parse_config,
    render_resolved,
    resolve_plan,
    run_configured_experiment,
    run_fig3_scenario,
    run_fig6_scenario,
    write_experiment_outputs,
    write_fig3_outputs,
    write_fig6_outputs,
)
from .spectrum_env import make_dataset, save_dataset

PAPER_SCALE = 25.0  # desk-scale 200 patterns/SNR -> published 5000


def _preset_text(name: str) -> str:
    return resources.files("fedspectrum.configs").joinpath(name).read_text()


def load_preset(name: str) -> ExperimentConfig:
    """Parse one of the packaged scenario configs (fig3.cfg / fig6.cfg)."""
    return parse_config(_preset_text(name))


def _load(args, preset: str | None) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif preset:
        cfg = load_preset(preset)
    else:
        raise FedSpectrumError("--config is required for this subcommand")
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "paper_scale", False):
        cfg = replace(cfg, pattern_scale=PAPER_SCALE)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _cmd_gen(args) -> int:
    cfg = _load(args, None)
    plan = resolve_plan(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "resolved.cfg"), "w", newline="") as fh:
        fh.write(render_resolved(cfg))
    for node in plan.nodes:
        dataset = make_dataset(
            node.data.n_patterns, node.data.traffic, node.channel,
            node.mean_snr_db, node.data.dims, (cfg.master_seed, 2, 0, node.node_id),
            k_samples=node.data.k_samples,
        )
        path = os.path.join(cfg.out_dir, f"node{node.node_id}.ds")
        save_dataset(dataset, path)
        print(f"wrote {path} ({len(dataset)} examples)")
    return 0


def _cmd_run(args) -> int:
    cfg = _load(args, None)
    outcome = run_configured_experiment(cfg, threads=args.threads)
    write_experiment_outputs(cfg.out_dir, cfg, outcome)
    print(f"wrote {cfg.out_dir}/metrics.csv ({len(outcome.series.rows)} rows)")
    return 0


def _cmd_fig3(args) -> int:
    cfg = _load(args, "fig3.cfg")
    result = run_fig3_scenario(cfg, threads=args.threads)
    write_fig3_outputs(cfg.out_dir, cfg, result)
    for snr in cfg.snr_grid:
        fl_pd, fl_pfa = result.tester_mean("fl", snr)
        im_pd, im_pfa = result.tester_mean("imported", snr)
        print(
            f"snr={snr:g} dB  fl: P_d={fl_pd:.3f} P_fa={fl_pfa:.3f} | "
            f"imported: P_d={im_pd:.3f} P_fa={im_pfa:.3f}"
        )
    print(f"wrote {cfg.out_dir}/fig3.csv")
    return 0


def _cmd_fig6(args) -> int:
    cfg = _load(args, "fig6.cfg")
    result = run_fig6_scenario(cfg, threads=args.threads)
    write_fig6_outputs(cfg.out_dir, cfg, result)
    for tag, outcome, pct in (
        ("strict", result.strict, result.strict_pct),
        ("relaxed", result.relaxed, result.relaxed_pct),
    ):
        accepted = sum(
            1 for r in outcome.reports
            if any(a in r.accepted for a in result.attacker_ids)
        )
        print(f"{tag} ({pct:g}%): attacker accepted in {accepted}/{len(outcome.reports)} rounds")
    print(f"wrote {cfg.out_dir}/metrics_t{result.strict_pct:g}.csv and _t{result.relaxed_pct:g}.csv")
    return 0


def _cmd_selftest(args) -> int:
    from . import selftest

    return selftest.run(fast=args.fast)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedspectrum",
        description="Federated-learning spectrum sensing simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config: bool):
        p.add_argument("--config", help="experiment config file", default=None)
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="node-update worker threads")
        p.add_argument("--paper-scale", action="store_true",
                       help="restore the published data volume")

    common(sub.add_parser("gen", help="generate dataset snapshots"), True)
    common(sub.add_parser("run", help="run a configured experiment"), True)
    common(sub.add_parser("fig3", help="federated vs local sensing comparison"), False)
    common(sub.add_parser("fig6", help="poisoned federation defense scenario"), False)
    st = sub.add_parser("selftest", help="quick internal property checks")
    st.add_argument("--fast", action="store_true", help="skip the slower checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "run": _cmd_run,
        "fig3": _cmd_fig3,
        "fig6": _cmd_fig6,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except FedSpectrumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
