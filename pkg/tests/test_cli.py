import os

import numpy as np
import pytest

from fedspectrum.cli import main
from fedspectrum.spectrum_env import load_dataset

MINI_CFG = """
master_seed = 4
rounds = 2
n_freq = 8
n_time = 10
snr_grid = 10

[train]
learning_rate = 0.1
local_epochs = 1
batch_size = 4

[node.1]
role = honest
channel = eva
doppler_hz = 30-55
n_patterns = 3

[node.2]
role = tester
channel = flat
doppler_hz = 1
n_patterns = 2
"""


@pytest.fixture()
def mini_cfg_path(tmp_path):
    path = tmp_path / "mini.cfg"
    path.write_text(MINI_CFG)
    return str(path)


def test_cli_run_writes_outputs(mini_cfg_path, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["run", "--config", mini_cfg_path, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "metrics.csv"))
    assert os.path.exists(os.path.join(out, "resolved.cfg"))
    with open(os.path.join(out, "metrics.csv")) as fh:
        header = fh.readline().strip()
    assert header == "round,node,p_d,p_fa,accepted_count"


def test_cli_run_deterministic_bytes(mini_cfg_path, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    main(["run", "--config", mini_cfg_path, "--out", out_a])
    main(["run", "--config", mini_cfg_path, "--out", out_b])
    with open(os.path.join(out_a, "metrics.csv"), "rb") as fh:
        bytes_a = fh.read()
    with open(os.path.join(out_b, "metrics.csv"), "rb") as fh:
        bytes_b = fh.read()
    assert bytes_a == bytes_b


def test_cli_seed_override_changes_results(mini_cfg_path, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    main(["run", "--config", mini_cfg_path, "--out", out_a])
    main(["run", "--config", mini_cfg_path, "--out", out_b, "--seed", "99"])
    with open(os.path.join(out_a, "metrics.csv"), "rb") as fh:
        bytes_a = fh.read()
    with open(os.path.join(out_b, "metrics.csv"), "rb") as fh:
        bytes_b = fh.read()
    assert bytes_a != bytes_b


def test_cli_gen_writes_loadable_snapshots(mini_cfg_path, tmp_path, capsys):
    out = str(tmp_path / "data")
    assert main(["gen", "--config", mini_cfg_path, "--out", out]) == 0
    ds = load_dataset(os.path.join(out, "node1.ds"))
    assert len(ds) == 3
    assert ds.dims.shape == (8, 10)
    assert np.isnan(ds[0].input.snr_db)  # format carries no SNR metadata


def test_cli_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("rounds = -1\n")
    assert main(["run", "--config", str(bad)]) == 2


def test_cli_selftest_fast():
    assert main(["selftest", "--fast"]) == 0


MINI_FIG6_CFG = """
master_seed = 6
rounds = 2
n_freq = 8
n_time = 10
snr_grid = 10

[train]
learning_rate = 0.2
local_epochs = 2
batch_size = 4

[defense]
enabled = true
accordance_threshold_pct = 65
relaxed_threshold_pct = 55
validation_patterns = 3

[node.1]
role = honest
channel = eva
doppler_hz = 30-55
n_patterns = 3

[node.2]
role = honest
channel = eva
doppler_hz = 30-55
n_patterns = 3

[node.3]
role = attacker
attack = ssdf
attack_mode = selfish
attack_fraction = 0.5
channel = eva
doppler_hz = 30-55
n_patterns = 3

[node.4]
role = tester
channel = eva
doppler_hz = 30-55
n_patterns = 2
"""


def test_cli_fig6_with_mini_config(tmp_path):
    cfg = tmp_path / "mini6.cfg"
    cfg.write_text(MINI_FIG6_CFG)
    out = str(tmp_path / "out6")
    assert main(["fig6", "--config", str(cfg), "--out", out]) == 0
    for name in ("metrics_t65.csv", "metrics_t55.csv", "filter_t65.csv",
                 "filter_t55.csv", "acceptance.log", "resolved.cfg",
                 "fig6_p_fa_t65.dat", "fig6_p_d_t55.dat"):
        assert os.path.exists(os.path.join(out, name)), name


def test_cli_fig3_with_mini_config(tmp_path):
    text = MINI_CFG.replace("snr_grid = 10", "snr_grid = 5,15")
    cfg = tmp_path / "mini3.cfg"
    cfg.write_text(text)
    out = str(tmp_path / "out3")
    assert main(["fig3", "--config", str(cfg), "--out", out]) == 0
    for name in ("fig3.csv", "fig3_pd_fl.dat", "fig3_pd_imported.dat",
                 "fig3_pfa_fl.dat", "fig3_pfa_imported.dat", "resolved.cfg"):
        assert os.path.exists(os.path.join(out, name)), name
