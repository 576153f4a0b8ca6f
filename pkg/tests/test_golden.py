"""Byte-exact regression against shipped golden CSVs.

The pinned mini-scale scenario runs exercise every numeric stage
(generators, training, aggregation, accordance filtering, CSV
formatting); any silent drift changes the bytes. Values are desk-mini
texture, not performance claims.
"""
import os

from golden_configs import GOLDEN_FIG3_CFG, GOLDEN_FIG6_CFG

from fedspectrum.harness import parse_config, run_fig3_scenario, run_fig6_scenario
from fedspectrum.metrics import render_csv, render_filter_csv

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def _golden(name: str) -> str:
    with open(os.path.join(GOLDEN_DIR, name), "r", newline="") as fh:
        return fh.read()


def test_fig6_golden_metrics_bit_exact():
    result = run_fig6_scenario(parse_config(GOLDEN_FIG6_CFG))
    assert render_csv(result.strict.series) == _golden("fig6_metrics_t65.csv")
    assert render_csv(result.relaxed.series) == _golden("fig6_metrics_t55.csv")
    assert render_filter_csv(result.strict.reports) == _golden("fig6_filter_t65.csv")


def test_fig3_golden_comparison_bit_exact():
    result = run_fig3_scenario(parse_config(GOLDEN_FIG3_CFG))
    lines = ["snr_db,tester,arm,p_d,p_fa,p_d_avg,p_fa_avg"]
    for r in sorted(result.rows, key=lambda r: (r.snr_db, r.tester_id, r.arm)):
        def f(v):
            return "" if v is None else f"{v:.6f}"
        lines.append(
            f"{r.snr_db:g},{r.tester_id},{r.arm},{f(r.p_d)},{f(r.p_fa)},{f(r.p_d_avg)},{f(r.p_fa_avg)}"
        )
    assert "\n".join(lines) + "\n" == _golden("fig3_comparison.csv")
