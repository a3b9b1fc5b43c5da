import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalpinn import metrics as mt
from causalpinn import network as nw
from causalpinn.reference import ReferenceGrid


def _grid(nt=5, nx=7, channels=1, seed=0):
    rng = np.random.default_rng(seed)
    return ReferenceGrid(np.linspace(0, 1, nt), np.linspace(-1, 1, nx),
                         rng.normal(size=(channels, nt, nx)))


def test_relative_l2_identities():
    ref = np.random.default_rng(1).normal(size=(4, 9))
    assert mt.relative_l2(ref, ref) == 0.0
    assert mt.relative_l2(2 * ref, ref) == pytest.approx(1.0)


def test_relative_l2_constant_offset_closed_form():
    ref = np.random.default_rng(2).normal(size=(6, 11))
    c = 0.37
    expected = c * math.sqrt(ref.size) / math.sqrt(np.sum(ref * ref))
    assert mt.relative_l2(ref + c, ref) == pytest.approx(expected, rel=1e-12)


def test_relative_l2_permutation_and_sign_invariance():
    rng = np.random.default_rng(3)
    ref = rng.normal(size=40)
    pred = rng.normal(size=40)
    base = mt.relative_l2(pred, ref)
    perm = rng.permutation(40)
    assert mt.relative_l2(pred[perm], ref[perm]) == pytest.approx(base, rel=1e-12)
    assert mt.relative_l2(-pred, -ref) == pytest.approx(base, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_relative_l2_triangle_sanity(seed):
    rng = np.random.default_rng(seed)
    a, b, ref = rng.normal(size=(3, 25))
    if np.allclose(ref, 0) or np.allclose(b, 0):
        return
    lhs = mt.relative_l2(a, ref)
    rhs = mt.relative_l2(a, b) * np.linalg.norm(b) / np.linalg.norm(ref) \
        + mt.relative_l2(b, ref)
    assert lhs <= rhs + 1e-12


def test_relative_l2_zero_reference_undefined(caplog):
    with caplog.at_level(logging.WARNING):
        v = mt.relative_l2(np.ones(5), np.zeros(5))
    assert math.isnan(v)


def test_relative_l2_shape_mismatch():
    with pytest.raises(ValueError):
        mt.relative_l2(np.ones(4), np.ones(5))


def test_snapshot_slice_index_arithmetic():
    grid = ReferenceGrid(np.linspace(0, 1, 101), np.linspace(-1, 1, 9),
                         np.zeros((1, 101, 9)))
    pred = np.zeros((1, 101, 9))
    snaps = mt.snapshot_compare(pred, grid, [0.0, 0.5, 1.0])
    assert [s.slice_index for s in snaps] == [0, 50, 100]


def test_snapshot_nearest_slice_warning(caplog):
    grid = ReferenceGrid(np.linspace(0, 1, 101), np.linspace(-1, 1, 9),
                         np.zeros((1, 101, 9)))
    with caplog.at_level(logging.WARNING):
        snaps = mt.snapshot_compare(np.zeros((1, 101, 9)), grid, [0.503])
    assert snaps[0].slice_index == 50
    assert any("nearest" in r.message for r in caplog.records)


def test_snapshot_outside_domain_rejected():
    grid = _grid()
    with pytest.raises(ValueError):
        mt.snapshot_compare(grid.values.copy(), grid, [2.0])


def test_evaluate_prediction_pools_channels():
    grid = _grid(channels=2, seed=5)
    pred = grid.values + 0.1
    rep = mt.evaluate_prediction(pred, grid, snapshot_times=(0.0, 1.0))
    assert len(rep.rel_l2_per_channel) == 2
    pooled = mt.relative_l2(pred, grid.values)
    assert rep.rel_l2 == pytest.approx(pooled)
    assert rep.max_abs_diff == pytest.approx(0.1)
    assert len(rep.snapshots) == 2


def test_predict_on_grid_shape_guard():
    net = nw.init_xavier(nw.mlp_spec(1, 4, output_dim=1, seed=0))
    grid = _grid(channels=2)
    with pytest.raises(ValueError):
        mt.predict_on_grid(net, grid)


def test_report_files_and_ledger(tmp_path):
    grid = _grid(seed=7)
    rep = mt.evaluate_prediction(grid.values * 1.5, grid, snapshot_times=(0.0,))
    paths = mt.write_report(rep, tmp_path)
    assert all((tmp_path / p.split("/")[-1]).exists() for p in paths)
    summary = (tmp_path / "eval_summary.csv").read_text()
    assert "rel_l2" in summary
    line = mt.append_ledger(tmp_path / "ledger.txt", problem="kdv",
                            scheme="dirac_gauss", epochs=10, rel_l2=0.5,
                            elapsed_s="1.0")
    line2 = mt.append_ledger(tmp_path / "ledger.txt", problem="kdv",
                             scheme="dirac_gauss", epochs=10, rel_l2=0.5,
                             elapsed_s="2.0")
    text = (tmp_path / "ledger.txt").read_text().splitlines()
    assert len(text) == 2 and text[0] == line and text[1] == line2
    # self-describing and append-only: identical apart from the wall-clock field
    strip = lambda ln: [f for f in ln.split() if not f.startswith("elapsed_s=")]
    assert strip(text[0]) == strip(text[1])
    assert line.startswith("problem=kdv scheme=dirac_gauss")


def test_two_channel_figures_render(tmp_path):
    from causalpinn import figures

    grid = _grid(nt=6, nx=8, channels=2, seed=9)
    pred = grid.values + 0.05
    rep = mt.evaluate_prediction(pred, grid, snapshot_times=(0.0, 0.5, 1.0))
    paths = figures.render_evaluation(pred, grid, rep, tmp_path)
    assert len(paths) == 2
    for p in paths:
        assert (tmp_path / p.split("/")[-1]).stat().st_size > 1000
