import glob
import os

import numpy as np
import pytest

from causalpinn import cli
from causalpinn import reference as rf
from causalpinn.config import ConfigError, load_config, parse_config_text
from causalpinn.network import load_checkpoint

PRESET_DIR = os.path.join(os.path.dirname(cli.__file__), "presets")
PRESETS = sorted(glob.glob(os.path.join(PRESET_DIR, "*.cfg")))

TINY_CFG = """
[problem]
kind = allen_cahn
n_t = 8
n_x = 16

[network]
hidden_layers = 2
width = 10
embedding_m = 3
embedding_period = 2.0
seed = 7

[loss]
mode = reformulated
log_transform = true

[weights]
scheme = dirac_gauss
eps_init = 1e-3

[training]
algorithm = 1
epochs = 40
scheduler = constant
eta_start = 2e-3

[output]
log_every = 5
reference = none
"""


def test_presets_exist():
    assert len(PRESETS) >= 10
    names = {os.path.basename(p) for p in PRESETS}
    assert "allen_cahn_dirac_desk.cfg" in names
    assert any(n.endswith("_desk.cfg") for n in names)


@pytest.mark.parametrize("preset", PRESETS, ids=[os.path.basename(p) for p in PRESETS])
def test_preset_parses_roundtrips_and_dry_runs(preset, tmp_path):
    cfg = load_config(preset)
    assert parse_config_text(cfg.to_text()) == cfg
    rc = cli.main(["--out-dir", str(tmp_path), "train", preset, "--dry-run"])
    assert rc == 0
    assert (tmp_path / "checkpoint.txt").exists()


def test_kdv_vanilla_preset_carries_published_multipliers():
    cfg = load_config(os.path.join(PRESET_DIR, "kdv_vanilla_causal.cfg"))
    assert cfg.loss.mode == "vanilla"
    assert cfg.loss.lambda_ic == 200.0
    assert cfg.loss.lambda_r == 5.0


def test_unknown_key_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(TINY_CFG.replace("[weights]", "[weights]\nfoo = 1"))
    rc = cli.main(["--out-dir", str(tmp_path), "train", str(bad)])
    assert rc == 2


def test_bad_threads_exits_2(tmp_path):
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY_CFG)
    assert cli.main(["--threads", "0", "--out-dir", str(tmp_path), "train",
                     str(cfgp)]) == 2


def test_train_deterministic_across_thread_settings(tmp_path):
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY_CFG)
    outs = []
    for threads, sub in (("1", "a"), ("4", "b")):
        out = tmp_path / sub
        rc = cli.main(["--threads", threads, "--out-dir", str(out), "train",
                       str(cfgp)])
        assert rc == 0
        outs.append(out)
    h1 = (outs[0] / "loss_history.csv").read_bytes()
    h2 = (outs[1] / "loss_history.csv").read_bytes()
    assert h1 == h2
    c1 = (outs[0] / "checkpoint.txt").read_bytes()
    c2 = (outs[1] / "checkpoint.txt").read_bytes()
    assert c1 == c2


def test_reference_generation_and_reimport_bitexact(tmp_path):
    out = tmp_path / "pk.grid"
    rc = cli.main(["--out-dir", str(tmp_path), "reference", "petrov-kudrin",
                   "--nt-out", "6", "--nx-out", "8", "--out", str(out)])
    assert rc == 0
    reemit = tmp_path / "pk2.grid"
    rc = cli.main(["--out-dir", str(tmp_path), "reference", "petrov-kudrin",
                   "--import", str(out), "--out", str(reemit)])
    assert rc == 0
    assert out.read_bytes() == reemit.read_bytes()


def test_reference_kdv_smoke(tmp_path):
    out = tmp_path / "kdv.grid"
    rc = cli.main(["--out-dir", str(tmp_path), "reference", "kdv",
                   "--modes", "256", "--dt", "1e-4", "--t-final", "0.05",
                   "--nt-out", "5", "--nx-out", "32", "--out", str(out)])
    assert rc == 0
    grid = rf.load_grid(out)
    assert grid.values.shape == (1, 6, 33)
    assert np.max(np.abs(grid.values[0, 0] - np.cos(np.pi * grid.xs))) < 1e-12


def test_evaluate_self_prediction_is_zero(tmp_path):
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY_CFG)
    out = tmp_path / "run"
    assert cli.main(["--out-dir", str(out), "train", str(cfgp)]) == 0
    net, _ = load_checkpoint(out / "checkpoint.txt")
    # grid built from the network's own predictions
    times = np.linspace(0, 1, 7)
    xs = np.linspace(-1, 1, 9)
    tt, xx = np.meshgrid(times, xs, indexing="ij")
    vals = net.forward(tt.ravel(), xx.ravel()).T.reshape(1, 7, 9)
    self_grid = tmp_path / "self.grid"
    rf.save_grid(rf.ReferenceGrid(times, xs, vals), self_grid)
    ev = tmp_path / "ev"
    rc = cli.main(["--out-dir", str(ev), "evaluate",
                   "--checkpoint", str(out / "checkpoint.txt"),
                   "--reference", str(self_grid)])
    assert rc == 0
    summary = (ev / "eval_summary.csv").read_text().splitlines()
    rel = float(dict(line.split(",") for line in summary[1:])["rel_l2"])
    assert rel == 0.0
    assert (ev / "eval_solution.png").exists()
    assert (ev / "eval_snapshots.png").exists()


def test_evaluate_untrained_network_is_order_one(tmp_path):
    # a random network scores rel error of order one against the reference
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY_CFG.replace("epochs = 40", "epochs = 0"))
    out = tmp_path / "run"
    assert cli.main(["--out-dir", str(out), "train", str(cfgp)]) == 0
    ref = tmp_path / "ac.grid"
    grid = __import__("causalpinn.reference", fromlist=["x"]) \
        .solve_allen_cahn_spectral(n_modes=512, dt=1e-3, n_t_out=10, n_x_out=16)
    rf.save_grid(grid, ref)
    ev = tmp_path / "ev"
    rc = cli.main(["--out-dir", str(ev), "evaluate",
                   "--checkpoint", str(out / "checkpoint.txt"),
                   "--reference", str(ref)])
    assert rc == 0
    summary = (ev / "eval_summary.csv").read_text().splitlines()
    rel = float(dict(line.split(",") for line in summary[1:])["rel_l2"])
    assert 0.2 < rel < 5.0


def test_evaluate_channel_mismatch_exits_2(tmp_path):
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY_CFG)
    out = tmp_path / "run"
    assert cli.main(["--out-dir", str(out), "train", str(cfgp)]) == 0
    pk = tmp_path / "pk.grid"
    assert cli.main(["--out-dir", str(tmp_path), "reference", "petrov-kudrin",
                     "--nt-out", "4", "--nx-out", "6", "--out", str(pk)]) == 0
    rc = cli.main(["--out-dir", str(tmp_path / "ev"), "evaluate",
                   "--checkpoint", str(out / "checkpoint.txt"),
                   "--reference", str(pk)])
    assert rc == 2


def test_train_emits_self_describing_ledger(tmp_path):
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY_CFG.replace("reference = none", "reference = auto"))
    out = tmp_path / "run"
    assert cli.main(["--out-dir", str(out), "train", str(cfgp)]) == 0
    lines = (out / "results_ledger.txt").read_text().splitlines()
    assert len(lines) == 1
    fields = dict(tok.split("=", 1) for tok in lines[0].split())
    assert fields["problem"] == "allen_cahn"
    assert fields["scheme"] == "dirac_gauss"
    assert fields["epochs"] == "40"
    assert "rel_l2" in fields and "elapsed_s" in fields


def test_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/path.cfg")
