import os
import subprocess
import sys

import numpy as np
import pytest

from wavedn import kernels
from wavedn._accel import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("lower,src", [(True, False), (False, False), (True, True)])
def test_leapfrog_numba_matches_numpy(lower, src):
    rng = np.random.default_rng(0)
    K, n = 3, 21
    up, uc = (rng.standard_normal((K, n, n)) + 1j * rng.standard_normal((K, n, n)) for _ in range(2))
    B0, B1, C = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(3))
    F = rng.standard_normal((K, n, n)) + 0j if src else np.zeros((1, 1, 1), complex)
    args = (B0, B1, C, F, 1e-4, 400.0, 10.0, lower, src)
    a = np.zeros_like(uc)
    b = np.zeros_like(uc)
    kernels._leapfrog_nb(up, uc, a, *args)
    kernels._leapfrog_np(up, uc, b, *args)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    assert np.all(a[:, 0, :] == 0) and np.all(a[:, :, -1] == 0)


def _line_setup(P=200, seed=1):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((17, 19, 23)) + 1j * rng.standard_normal((17, 19, 23))
    lo = np.array([-1.0, -1.2, 0.0])
    d = np.array([0.125, 0.13, 0.1])
    z = rng.uniform(-1.5, 1.5, (P, 2))
    om = rng.standard_normal((P, 2))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    sa = rng.uniform(-0.5, 1.0, P)
    sb = sa + rng.uniform(-0.2, 2.0, P)
    return vals, lo, d, np.ascontiguousarray(z), np.ascontiguousarray(om), sa, sb


@needs_numba
def test_line_numba_matches_numpy():
    vals, lo, d, z, om, sa, sb = _line_setup()
    a = np.zeros(len(z), complex)
    b = np.zeros(len(z), complex)
    kernels._line_nb(vals, lo, d, z, om, sa, sb, 0.05, a)
    kernels._line_np(vals, lo, d, z, om, sa, sb, 0.05, b)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert np.all(a[sb <= sa] == 0)


@needs_numba
def test_cumline_numba_matches_numpy():
    vals, lo, d, z, om, _, _ = _line_setup(P=50)
    s = np.linspace(0.0, 2.0, 31)
    a = np.zeros((len(z), s.size), complex)
    b = np.zeros((len(z), s.size), complex)
    kernels._cumline_nb(vals, lo, d, z, om, s, 4, a)
    kernels._cumline_np(vals, lo, d, z, om, s, 4, b)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_interp_exact_on_trilinear():
    # trilinear interpolation reproduces trilinear functions
    lo, d = np.array([0.0, 0.0, 0.0]), np.array([0.1, 0.2, 0.25])
    x0, x1, t = np.meshgrid(np.arange(11) * 0.1, np.arange(6) * 0.2, np.arange(5) * 0.25, indexing="ij")
    f = lambda a, b, c: 1 + 2 * a - b + 3 * c + a * b * c
    vals = f(x0, x1, t) + 0j
    rng = np.random.default_rng(3)
    p = rng.uniform([0, 0, 0], [1, 1, 1], (100, 3))
    got = kernels.interp3_np(vals, p[:, 0], p[:, 1], p[:, 2], lo, d)
    assert np.allclose(got, f(p[:, 0], p[:, 1], p[:, 2]), atol=1e-12)
    # zero outside the grid
    assert kernels.interp3_np(vals, np.array([1.5]), np.array([0.5]), np.array([0.5]), lo, d)[0] == 0


def test_line_integral_of_affine_field():
    # g(x, t) = 1 + x0 + 2 t sampled on a grid: Simpson + trilinear is exact
    ax = np.linspace(-2, 2, 41)
    ts = np.linspace(0, 3, 31)
    X0, X1, T = np.meshgrid(ax, ax, ts, indexing="ij")
    vals = 1 + X0 + 2 * T
    z = np.array([[0.3, -0.2], [0.0, 0.5]])
    om = np.array([0.6, 0.8])
    got = kernels.line_integrals(vals, (-2, -2, 0), (0.1, 0.1, 0.1), z, om, 0.0, 1.5, 0.05)
    s = 1.5
    exact = s + z[:, 0] * s - om[0] * s ** 2 / 2 + s ** 2
    assert np.allclose(got, exact, atol=1e-12)


def test_cumulative_matches_line():
    vals, lo, d, z, om, _, _ = _line_setup(P=10, seed=4)
    s = np.linspace(0.0, 1.6, 17)
    J = kernels.cumulative_line_integrals(vals, lo, d, z, om, s, nsub=2)
    assert np.all(J[:, 0] == 0)
    I = kernels.line_integrals(vals, lo, d, z, om, 0.0, 1.6, 0.05)
    # both are Simpson rules of the same piecewise-trilinear integrand
    assert np.allclose(J[:, -1], I, rtol=1e-2, atol=1e-2)
    with pytest.raises(ValueError):
        kernels.cumulative_line_integrals(vals, lo, d, z, om, s, nsub=3)


def test_env_switch_selects_numpy():
    code = "import wavedn, wavedn.kernels as k; print(wavedn.backend(), k.USE_NUMBA)"
    env = dict(os.environ, WAVEDN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["numpy", "False"]


@needs_numba
def test_solver_same_under_both_backends(tmp_path):
    code = (
        "import numpy as np\n"
        "from wavedn.geometry import default_config\n"
        "from wavedn.wave_solver import WaveProblem, march\n"
        "cfg = default_config(24)\n"
        "X, Y = cfg.mesh()\n"
        "u0 = np.exp(-40 * (X ** 2 + Y ** 2))\n"
        "s = march(WaveProblem(cfg, initial=(u0, 0 * u0)))\n"
        f"np.save(r'{tmp_path}/' + __import__('wavedn').backend() + '.npy', s.u_T)\n"
    )
    for flag in ("0", "1"):
        subprocess.run([sys.executable, "-c", code], check=True,
                       env=dict(os.environ, WAVEDN_DISABLE_NUMBA=flag))
    a = np.load(tmp_path / "numba.npy")
    b = np.load(tmp_path / "numpy.npy")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)
