import math

import numpy as np
import pytest

from causalpinn import reference as rf


@pytest.fixture(scope="module")
def kdv_grid():
    return rf.solve_kdv_pseudospectral(n_modes=512, dt=1e-4, t_final=1.0,
                                       n_t_out=50)


def test_kdv_initial_slice(kdv_grid):
    assert np.max(np.abs(kdv_grid.values[0, 0] - np.cos(np.pi * kdv_grid.xs))) == 0.0


def test_kdv_conservation(kdv_grid):
    mass = rf.grid_mass(kdv_grid)
    momentum = rf.grid_momentum(kdv_grid)
    assert np.max(np.abs(mass - mass[0])) < 1e-8
    assert np.max(np.abs(momentum - momentum[0])) < 1e-6


def test_kdv_blowup_detection():
    with pytest.raises(FloatingPointError):
        # grossly unstable step size for the nonlinear term
        rf.solve_kdv_pseudospectral(n_modes=256, dt=5e-2, t_final=1.0, n_t_out=10)


def test_kdv_rejects_bad_mode_count():
    with pytest.raises(ValueError):
        rf.solve_kdv_pseudospectral(n_modes=100)


def test_kdv_resampled_onto_training_mesh():
    g = rf.solve_kdv_pseudospectral(n_modes=512, dt=2e-4, t_final=0.1,
                                    n_t_out=10, n_x_out=128)
    assert g.xs[0] == -1.0 and g.xs[-1] == 1.0 and g.xs.size == 129
    # periodic: both endpoints carry the same value
    assert np.array_equal(g.values[0, :, 0], g.values[0, :, -1])


def test_trig_interpolation_matches_nested_nodes():
    g = rf.solve_kdv_pseudospectral(n_modes=512, dt=2e-4, t_final=0.05, n_t_out=5)
    nested = rf._resample_periodic(g.times, g.xs, g.values[0], 128, {}, -1.0, 1.0)
    interp = rf._resample_periodic(g.times, g.xs, g.values[0], 127, {}, -1.0, 1.0)
    # x = -1 is a node of both meshes
    assert interp.values[0, :, 0] == pytest.approx(nested.values[0, :, 0], abs=1e-12)


@pytest.fixture(scope="module")
def ac_grid():
    return rf.solve_allen_cahn_spectral(n_modes=512, dt=5e-4, t_final=1.0,
                                        n_t_out=20)


def test_allen_cahn_initial_slice(ac_grid):
    xs = ac_grid.xs
    assert np.max(np.abs(ac_grid.values[0, 0] - xs * xs * np.cos(np.pi * xs))) == 0.0
    # the boundary image value: x = -1 maps to (+1)^2 cos(pi) = -1
    assert ac_grid.values[0, 0, 0] == pytest.approx(-1.0)


def test_allen_cahn_stays_in_invariant_band(ac_grid):
    assert ac_grid.values.min() >= -1.0 - 1e-3
    assert ac_grid.values.max() <= 1.0 + 1e-3


def test_allen_cahn_self_convergence_modes():
    a = rf.solve_allen_cahn_spectral(n_modes=1024, dt=5e-4, t_final=0.5, n_t_out=5)
    b = rf.solve_allen_cahn_spectral(n_modes=2048, dt=5e-4, t_final=0.5, n_t_out=5)
    assert np.max(np.abs(b.values[0, -1, ::2] - a.values[0, -1, :])) < 1e-6


def test_petrov_kudrin_origin_and_initial_rest():
    e, h = rf.eval_petrov_kudrin_exact(0.0, 0.0)
    assert float(e) == pytest.approx(1.0, abs=1e-12)
    assert float(h) == 0.0
    rho = np.linspace(0.0, 5.0, 17)
    e0, h0 = rf.eval_petrov_kudrin_exact(0.0, rho)
    assert np.max(np.abs(h0)) == 0.0


def test_petrov_kudrin_grid_shape():
    g = rf.petrov_kudrin_grid(np.linspace(0, 4.75, 6), np.linspace(0, 5, 9))
    assert g.channels == 2 and g.values.shape == (2, 6, 9)
    assert np.all(np.isfinite(g.values))


def test_delta_relaxation_values():
    d = rf.delta_relaxation_petrov(1.0)
    expected = math.acos(math.exp(-0.5)) / math.sqrt(6.0)
    assert d.tau_half == pytest.approx(expected, abs=1e-15)
    assert d.delta == pytest.approx(1.0 / (2.0 * expected), abs=1e-12)
    with pytest.raises(ValueError):
        rf.delta_relaxation_petrov(0.0)


def test_on_axis_decay_profile():
    for alpha in (0.5, 1.0, 2.0):
        assert float(rf.on_axis_field_decay(0.0, alpha)) == pytest.approx(1.0)
        # at the halving time, exp(alpha * E~) has dropped by exp(-alpha/2)
        th = rf.delta_relaxation_petrov(alpha).tau_half
        lhs = math.exp(alpha * float(rf.on_axis_field_decay(th, alpha)))
        assert lhs == pytest.approx(math.exp(alpha) * math.exp(-alpha / 2.0), rel=1e-12)


def test_grid_file_roundtrip_bitexact(tmp_path):
    g = rf.petrov_kudrin_grid(np.linspace(0, 4.75, 4), np.linspace(0, 5, 5))
    p1 = tmp_path / "a.grid"
    rf.save_grid(g, p1)
    g2 = rf.load_grid(p1)
    assert np.array_equal(g2.values, g.values)
    assert np.array_equal(g2.times, g.times)
    assert np.array_equal(g2.xs, g.xs)
    p2 = tmp_path / "b.grid"
    rf.save_grid(g2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_grid_file_rejects_garbage(tmp_path):
    p = tmp_path / "x.grid"
    p.write_text("#grid channels=1 nt=2 nx=2 t0=0 T=1 x1=0 x2=1\n0 0 1\n")
    with pytest.raises(ValueError):
        rf.load_grid(p)


def test_reference_grid_validates_shapes():
    with pytest.raises(ValueError):
        rf.ReferenceGrid(np.arange(3.0), np.arange(4.0), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        rf.ReferenceGrid(np.arange(2.0), np.arange(2.0),
                         np.array([[1.0, np.nan], [0.0, 0.0]]))
