import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedn.fields import Grid, ScalarField
from wavedn.ray_transform import (AnalyticField, ray_transform, fourier_slice, slice_direction,
                                  beta_hat, beta_hat_general, in_E, zeta, gaussian_packets,
                                  direct_dft, CurlSpectrum)


def gauss_field(om0=(0.6, 0.8)):
    om0 = np.asarray(om0)
    return AnalyticField(lambda x, t: np.exp(-np.sum((x + t[:, None] * om0) ** 2, -1)),
                         (-3.0, -3.0), (3.0, 3.0), 0.0, 1.0, ds=1e-2)


def test_zero_field():
    f = AnalyticField(lambda x, t: np.zeros(len(t)), (-1, -1), (1, 1), 0.0, 1.0)
    assert ray_transform(f, (0.2, 0.1), (1.0, 0.0)) == 0
    g = Grid((-1, -1), (1, 1), (9, 9), 0.0, 1.0, 4)
    assert ray_transform(ScalarField.zeros(g), (0.0, 0.0), (0.6, 0.8)) == 0


def test_bump_frame_example():
    # integrand is constant in the bump frame, so R f(y, omega0) = g(y)
    f = gauss_field()
    assert ray_transform(f, (1.0, 0.0), (0.6, 0.8)) == pytest.approx(np.exp(-1), rel=1e-12)


def test_grid_field_matches_analytic():
    f = gauss_field((1.0, 0.0))
    g = Grid((-3, -3), (3, 3), (241, 241), 0.0, 1.0, 40)
    X, Y = g.mesh()
    T = g.times()
    v = np.exp(-((X[..., None] + T) ** 2 + Y[..., None] ** 2))
    got = ray_transform(ScalarField(g, v), np.array([[1.0, 0.0], [0.3, -0.4]]), (1.0, 0.0))
    ref = ray_transform(f, np.array([[1.0, 0.0], [0.3, -0.4]]), (1.0, 0.0))
    assert np.allclose(got, ref, rtol=1e-3)


def test_gaussian_slice_closed_form():
    f = AnalyticField(lambda x, t: np.exp(-np.sum(x * x, -1) - t * t), (-6.0, -6.0), (6.0, 6.0),
                      -6.0, 6.0, ds=0.05)
    ax = np.linspace(-12, 12, 241)
    v = fourier_slice(f, (2.0, 0.0), 2.0, (1.0, 0.0), y_axes=(ax, ax))
    assert v == pytest.approx(np.pi ** 1.5 * np.exp(-2), rel=1e-6)
    assert abs(v - 0.753591) < 1e-6


def test_slice_matches_closed_form_packets():
    f, ft = gaussian_packets(seed=3)
    for xi, tau in (((3.0, -1.0), 0.8), ((0.0, 5.0), -2.0)):
        om = slice_direction(xi, tau)
        v = fourier_slice(f, xi, tau, om)
        assert abs(v - ft(xi, tau)) <= 1e-6 * abs(ft(xi, tau))


def test_slice_direction_mismatch():
    f, _ = gaussian_packets()
    with pytest.raises(ValueError):
        fourier_slice(f, (1.0, 0.0), 0.3, (0.0, 1.0))


def test_direct_dft_matches_closed_form():
    f, ft = gaussian_packets(seed=1)
    ax = np.linspace(-1, 1, 81)
    ts = np.linspace(0, 3, 121)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    P = np.stack([X, Y], -1).reshape(-1, 2)
    vals = np.stack([f(P, np.full(len(P), t)).reshape(X.shape) for t in ts], -1)
    xi, tau = np.array([2.0, 1.0]), 0.7
    assert abs(direct_dft(vals, (ax, ax), ts, xi, tau) - ft(xi, tau)) <= 1e-8 * abs(ft(xi, tau))


# --- directions --------------------------------------------------------------------------

def test_slice_direction_examples():
    assert np.allclose(slice_direction((1.0, 0.0), 0.0), (0.0, 1.0))
    assert np.allclose(slice_direction((1.0, 0.0), 0.5), (0.5, np.sqrt(0.75)))
    om = slice_direction((1.0, 2.0), 0.0)
    assert np.allclose(om, (-0.89443, 0.44721), atol=1e-5)
    assert abs(om @ np.array([1.0, 2.0])) < 1e-15
    assert np.allclose(zeta((1.0, 2.0), 1, 0), (-2 / np.sqrt(5), 1 / np.sqrt(5)))


def test_slice_direction_refusals():
    with pytest.raises(ValueError):
        slice_direction((0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        slice_direction((1.0, 0.0), 0.6)
    with pytest.raises(ValueError):
        zeta((0.0, 0.0), 0, 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-1, 1), st.booleans())
def test_E_geometry(x0, x1, s, swap):
    xi = np.array([x0, x1])
    nx = np.linalg.norm(xi)
    if nx < 1e-3:
        return
    tau = 0.5 * s * nx
    assert in_E(xi, tau)
    j, k = (1, 0) if swap else (0, 1)
    om = slice_direction(xi, tau, j, k)
    assert abs(np.linalg.norm(om) - 1) <= 1e-12
    assert abs(om @ xi - tau) <= 1e-12 * max(1.0, nx)


def test_beta_hat_example():
    xi = np.array([1.0, 2.0])
    Ahat = np.array([-xi[1], xi[0]])
    for tau in (0.0, 0.5, -1.0):
        om = slice_direction(xi, tau)
        assert beta_hat(om @ Ahat, xi, tau) == pytest.approx(5.0, rel=1e-12)
        # antisymmetry: the (1,0) direction flips zeta and the sign of beta
        om2 = slice_direction(xi, tau, 1, 0)
        assert beta_hat(om2 @ Ahat, xi, tau, 1, 0) == pytest.approx(-5.0, rel=1e-12)
        assert beta_hat_general(om @ Ahat, xi, om) == pytest.approx(5.0, rel=1e-12)
    assert beta_hat(0.0, xi, 0.3) == 0


def test_curl_spectrum_components():
    cs = CurlSpectrum(np.zeros((2, 2)), np.zeros(2), np.array([1 + 1j, 2.0]), 8.0)
    assert np.array_equal(cs.component(1, 0), -cs.component(0, 1))
    assert np.all(cs.component(1, 1) == 0)


def test_beta_from_slices_of_rotated_gradient():
    # A = rot grad G, G Gaussian in (x, t): beta_01 = xi_0 a_1 - xi_1 a_0 = i |xi|^2 G^
    s, st_ = 0.15, 0.3
    Gft = lambda xi, tau: (2 * np.pi) ** 1.5 * s * s * st_ * np.exp(
        -0.5 * s * s * (xi @ xi) - 0.5 * st_ * st_ * tau * tau - 1j * tau * 1.5)

    def comp(j):
        def f(x, t):
            G = np.exp(-np.sum(x * x, -1) / (2 * s * s) - (t - 1.5) ** 2 / (2 * st_ ** 2))
            # rot grad G = (-d_1 G, d_0 G)
            return (x[:, 1] if j == 0 else -x[:, 0]) / (s * s) * G
        return f

    rng = np.random.default_rng(0)
    errs, refs = [], []
    for _ in range(4):
        xi = rng.uniform(-6, 6, 2)
        tau = 0.5 * np.linalg.norm(xi) * rng.uniform(-1, 1)
        om = slice_direction(xi, tau)
        F = AnalyticField(lambda x, t: om[0] * comp(0)(x, t) + om[1] * comp(1)(x, t),
                          (-1.2, -1.2), (1.2, 1.2), 0.0, 3.0, ds=1e-2)
        b = beta_hat(fourier_slice(F, xi, tau, om), xi, tau)
        ref = 1j * (xi @ xi) * Gft(xi, tau)
        errs.append(abs(b - ref))
        refs.append(abs(ref))
    assert np.linalg.norm(errs) <= 1e-5 * np.linalg.norm(refs)


# --- support and covariance ------------------------------------------------------------------

def _chi(s):
    out = np.zeros_like(s)
    m = s > 0
    out[m] = np.exp(-1 / s[m])
    return out


def istar_field(r=1.0, T=3.0):
    def f(x, t):
        ax = np.linalg.norm(x, axis=-1)
        return _chi(t - ax - r / 2) * _chi(T - t - ax - r / 2) * _chi(r / 2 - ax) * np.cos(3 * x[:, 0])
    return AnalyticField(f, (-0.5, -0.5), (0.5, 0.5), 0.0, T, ds=1e-2)


def test_support_vanishing():
    f = istar_field()
    rng = np.random.default_rng(5)
    ang = rng.uniform(0, 2 * np.pi, 60)
    rad = np.concatenate([rng.uniform(0, 0.5, 30), rng.uniform(2.5, 4.0, 30)])
    y = np.stack([rad * np.cos(ang), rad * np.sin(ang)], -1)
    for k in range(len(y)):
        th = rng.uniform(0, 2 * np.pi)
        assert abs(ray_transform(f, y[k], (np.cos(th), np.sin(th)))) <= 1e-10
    # rays through the shell do see the field
    assert abs(ray_transform(f, (1.3, 0.0), (1.0, 0.0))) > 1e-6


def test_translation_covariance_and_linearity():
    z = np.array([0.25, -0.1])
    bump = lambda x, t: np.exp(-np.sum((x - 0.1) ** 2, -1) / 0.05) * np.sin(t) ** 2
    f = AnalyticField(bump, (-2, -2), (2, 2), 0.0, 2.0, ds=1e-2)
    fz = AnalyticField(lambda x, t: bump(x - z, t), (-2, -2), (2, 2), 0.0, 2.0, ds=1e-2)
    ys = np.array([[0.5, 0.3], [0.0, -0.2], [1.0, 1.0]])
    om = (0.6, -0.8)
    assert np.allclose(ray_transform(fz, ys, om), ray_transform(f, ys - z, om), atol=1e-14)
    f2 = AnalyticField(lambda x, t: 2.0 * bump(x, t) - 3.0 * bump(x - z, t), (-2, -2), (2, 2),
                       0.0, 2.0, ds=1e-2)
    lin = 2.0 * ray_transform(f, ys, om) - 3.0 * ray_transform(fz, ys, om)
    assert np.allclose(ray_transform(f2, ys, om), lin, atol=1e-13)
