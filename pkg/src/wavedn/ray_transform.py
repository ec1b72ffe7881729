"""Light-ray transform, Fourier slices, the visible set E and curl spectra."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .fields import ScalarField, VectorField


@dataclass
class AnalyticField:
    """Vectorised callable f(x (P,2), t (P,)) with its space-time bounding box."""
    func: Callable
    lo: tuple
    hi: tuple
    t0: float
    t1: float
    ds: float = 1e-3

    def __call__(self, x, t):
        return self.func(x, t)


@dataclass
class RayDatum:
    y: tuple
    omega: tuple
    value: complex
    valid: bool = True
    error_tag: dict = field(default_factory=dict)


def _simpson_callable(f: AnalyticField, y, omega, ta, tb):
    y = np.atleast_2d(np.asarray(y, float))
    om = np.asarray(omega, float)
    L = tb - ta
    n = max(2, int(np.ceil(L / f.ds)))
    n += n % 2
    s = np.linspace(ta, tb, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    w *= (L / n) / 3
    out = np.zeros(y.shape[0], dtype=complex)
    for k in range(n + 1):
        x = y - s[k] * om[None, :]
        out += w[k] * f(x, np.full(y.shape[0], s[k]))
    return out


def ray_transform(f, y, omega, ds=None):
    """R(f)(y, omega) = int f(y - t omega, t) dt for one or many points y.

    f is a ScalarField (zero outside its grid) or an AnalyticField. Simpson
    with step <= dt/2 of the field grid (or f.ds for callables).
    """
    y = np.asarray(y, float)
    single = y.ndim == 1
    yy = np.atleast_2d(y)
    if isinstance(f, AnalyticField):
        val = _simpson_callable(f, yy, omega, f.t0, f.t1)
    else:
        g = f.grid
        lo = (g.lo[0], g.lo[1], g.t0)
        d = (g.spacing[0], g.spacing[1], g.dt if g.nt > 0 else 1.0)
        step = ds if ds is not None else 0.5 * min(g.dt, *g.spacing)
        val = kernels.line_integrals(f.values, lo, d, yy, omega, g.t0, g.t1, step)
    return val[0] if single else val


def ray_transform_dir(F: VectorField, y, omega, ds=None):
    """Ray transform of omega.F."""
    g = F.grid
    s = ScalarField(g, sum(w * c.values for w, c in zip(omega, F)))
    return ray_transform(s, y, omega, ds)


# --- frequency geometry ----------------------------------------------------------

def in_E(xi, tau, tol=1e-12):
    xi = np.asarray(xi, float)
    return np.abs(tau) <= 0.5 * np.linalg.norm(xi, axis=-1) + tol


def zeta(xi, j, k):
    """(xi_k e_j - xi_j e_k)/|.|."""
    xi = np.asarray(xi, float)
    v = np.zeros_like(xi)
    v[j] = xi[k]
    v[k] = -xi[j]
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError(f"degenerate index pair ({j},{k}) for xi={xi}")
    return v / nv


def slice_direction(xi, tau, j=0, k=1, require_E=True):
    """omega = (tau/|xi|^2) xi + sqrt(1 - tau^2/|xi|^2) zeta_{k,j} (0-based j,k).

    omega.xi = tau and |omega| = 1; zeta_{k,j} = -zeta_{j,k} is orthogonal to xi.
    """
    xi = np.asarray(xi, float)
    n2 = float(xi @ xi)
    if n2 == 0:
        raise ValueError("xi = 0 has no slice direction")
    if require_E and not in_E(xi, tau):
        raise ValueError(f"(xi, tau) = ({xi}, {tau}) is outside E")
    if tau * tau > n2:
        raise ValueError("|tau| > |xi|")
    z = zeta(xi, k, j)
    return (tau / n2) * xi + np.sqrt(1.0 - tau * tau / n2) * z


def beta_hat(slice_value, xi, tau, j=0, k=1):
    """beta^_{j,k}(xi,tau) from omega.A^(xi,tau) with omega = slice_direction(xi,tau,j,k)."""
    xi = np.asarray(xi, float)
    n2 = float(xi @ xi)
    v = np.zeros_like(xi)
    v[j] = xi[k]
    v[k] = -xi[j]
    return slice_value * np.linalg.norm(v) / np.sqrt(1.0 - tau * tau / n2)


def beta_hat_general(slice_value, xi, omega):
    """2-D: beta^_{0,1} from omega.A^ for any omega with omega.xi_perp != 0,
    where xi_perp = (-xi_1, xi_0) (uses xi.A^ = 0)."""
    xi = np.asarray(xi, float)
    om = np.asarray(omega, float)
    xp = np.array([-xi[1], xi[0]])
    return slice_value * (xi @ xi) / (om @ xp)


def fourier_slice(f, xi, tau, omega, y_axes=None, tol=1e-10):
    """Spatial Fourier transform of y -> R(f)(y, omega) at xi; equals f^(xi, tau)
    when omega.xi = tau.

    y_axes: pair of 1-D uniform axes for the y sampling box (default: the
    field box dilated along omega over its time support).
    """
    xi = np.asarray(xi, float)
    om = np.asarray(omega, float)
    if abs(om @ xi - tau) > tol:
        raise ValueError(f"direction mismatch: omega.xi - tau = {om @ xi - tau:.3e}")
    if y_axes is None:
        y_axes = default_y_axes(f, om)
    Y = np.stack(np.meshgrid(*y_axes, indexing="ij"), -1).reshape(-1, 2)
    P = ray_transform(f, Y, om)
    dA = (y_axes[0][1] - y_axes[0][0]) * (y_axes[1][1] - y_axes[1][0])
    w = np.outer(_trap(len(y_axes[0])), _trap(len(y_axes[1]))).reshape(-1)
    return np.sum(w * P * np.exp(-1j * (Y @ xi))) * dA


def _trap(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def _bounds(f):
    if isinstance(f, AnalyticField):
        return np.asarray(f.lo), np.asarray(f.hi), f.t0, f.t1, f.ds * 3
    g = f.grid
    return np.asarray(g.lo), np.asarray(g.hi), g.t0, g.t1, min(g.spacing)


def default_y_axes(f, omega, spacing=None):
    lo, hi, t0, t1, dx = _bounds(f)
    om = np.asarray(omega, float)
    shifts = np.array([t0 * om, t1 * om])
    ylo = lo + shifts.min(axis=0)
    yhi = hi + shifts.max(axis=0)
    h = spacing if spacing is not None else dx
    axes = []
    for a, b in zip(ylo, yhi):
        n = int(np.ceil((b - a) / h)) + 1
        axes.append(np.linspace(a, a + (n - 1) * h, n))
    return axes


def direct_dft(values, axes, times, xi, tau):
    """Slow space-time DFT approximation of f^(xi, tau) by the trapezoid rule."""
    X = np.meshgrid(*axes, indexing="ij")
    ph = np.exp(-1j * (X[0] * xi[0] + X[1] * xi[1]))
    w = np.multiply.outer(np.outer(_trap(len(axes[0])), _trap(len(axes[1]))), _trap(len(times)))
    dV = (axes[0][1] - axes[0][0]) * (axes[1][1] - axes[1][0]) * (times[1] - times[0])
    pt = np.exp(-1j * tau * times)
    return np.sum(values * w * ph[..., None] * pt[None, None, :]) * dV


@dataclass
class CurlSpectrum:
    """beta^_{0,1} on a set of (xi, tau) targets inside E and B(0, alpha)."""
    xi: np.ndarray          # (M, 2)
    tau: np.ndarray         # (M,)
    beta: np.ndarray        # (M,) values of beta^_{0,1}
    alpha: float

    def component(self, j, k):
        if (j, k) == (0, 1):
            return self.beta
        if (j, k) == (1, 0):
            return -self.beta
        if j == k:
            return np.zeros_like(self.beta)
        raise IndexError((j, k))


def gaussian_packets(seed=0, n=3, lo=(-1.0, -1.0), hi=(1.0, 1.0), t0=0.0, t1=3.0, ds=1e-2):
    """Sum of n seeded Gaussians in (x, t), effectively band-limited.

    Widths keep the packets inside the box to double precision; returns
    (AnalyticField, ft) with ft(xi, tau) the closed-form space-time transform.
    """
    rng = np.random.default_rng(seed)
    lo_, hi_ = np.asarray(lo, float), np.asarray(hi, float)
    s = rng.uniform(0.06, 0.1, n)
    st = rng.uniform(0.15, 0.25, n)
    c = lo_ + (hi_ - lo_) * rng.uniform(0.35, 0.65, (n, 2))
    tc = t0 + (t1 - t0) * rng.uniform(0.35, 0.65, n)
    amp = rng.uniform(0.5, 1.5, n)

    def func(x, t):
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0])
        for k in range(n):
            r2 = np.sum((x - c[k]) ** 2, axis=-1)
            out += amp[k] * np.exp(-r2 / (2 * s[k] ** 2) - (t - tc[k]) ** 2 / (2 * st[k] ** 2))
        return out

    def ft(xi, tau):
        xi = np.asarray(xi, float)
        v = 0j
        for k in range(n):
            v += (amp[k] * (2 * np.pi) ** 1.5 * s[k] ** 2 * st[k]
                  * np.exp(-0.5 * s[k] ** 2 * (xi @ xi) - 0.5 * st[k] ** 2 * tau ** 2)
                  * np.exp(-1j * (xi @ c[k] + tau * tc[k])))
        return v

    return AnalyticField(func, tuple(lo_), tuple(hi_), float(t0), float(t1), ds), ft
