"""Geometric optics probes phi(x+t omega) b(x,t) exp(i sigma (x.omega + t))."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from . import kernels
from .fields import VectorField, MagneticPair, Grid, ScalarField, trapezoid_weights
from .geometry import GeometryConfig, Violation, ValidationReport, normalize_regime
from .wave_solver import (WaveProblem, march, boundary_points, omega_inner)


class ResolutionError(ValueError):
    def __init__(self, msg, max_sigma=None, min_h=None):
        self.max_sigma = max_sigma
        self.min_h = min_h
        super().__init__(msg)


# --- the bump -------------------------------------------------------------------

def _raw_psi(rho2):
    out = np.zeros_like(rho2, dtype=float)
    m = rho2 < 1
    out[m] = np.exp(-1.0 / (1.0 - rho2[m]))
    return out


@lru_cache(maxsize=None)
def psi_constant(n=2):
    """c with ||c exp(-1/(1-|z|^2))||_{L2(R^n)} = 1."""
    area = 2 * np.pi ** (n / 2) / special.gamma(n / 2)
    val, _ = integrate.quad(lambda r: np.exp(-2.0 / (1.0 - r * r)) * r ** (n - 1), 0, 1,
                            epsabs=1e-15, epsrel=1e-13, limit=200)
    return 1.0 / np.sqrt(area * val)


def psi(z):
    z = np.asarray(z, float)
    return psi_constant(z.shape[-1]) * _raw_psi(np.sum(z * z, axis=-1))


def grad_psi(z):
    z = np.asarray(z, float)
    r2 = np.sum(z * z, axis=-1)
    p = psi(z)
    fac = np.zeros_like(r2)
    m = r2 < 1
    fac[m] = -2.0 / (1.0 - r2[m]) ** 2
    return (p * fac)[..., None] * z


def psi_max(n=2):
    return psi_constant(n) * np.exp(-1.0)


@dataclass(frozen=True)
class Bump:
    """phi_h(x) = h^{-n/2} psi((x-y)/h)."""
    y: tuple
    h: float

    def __call__(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        return self.h ** (-n / 2) * psi((x - np.asarray(self.y)) / self.h)

    def grad(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        return self.h ** (-n / 2 - 1) * grad_psi((x - np.asarray(self.y)) / self.h)


def build_bump(y, h, cfg: GeometryConfig | None = None, grid: Grid | None = None):
    """Mollifier bump; with a grid, also return its samples on that grid.

    Refuses widths spanning fewer than 8 cells of the grid.
    """
    if h <= 0:
        raise ValueError("bump width must be positive")
    b = Bump(tuple(float(v) for v in y), float(h))
    dx = cfg.dx if cfg is not None else (min(grid.spacing) if grid is not None else None)
    if dx is not None and 2 * h < 8 * dx * (1 - 1e-12):
        raise ResolutionError(f"bump width {h} spans fewer than 8 cells (dx={dx:.4g})",
                              min_h=4 * dx)
    if grid is None and cfg is None:
        return b
    axes = grid.axes() if grid is not None else cfg.axes()
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return b, b(X)


# --- probe spec ---------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSpec:
    omega: tuple
    sigma: float
    y: tuple
    h: float
    side: str = "forward"

    def __post_init__(self):
        om = np.asarray(self.omega, float)
        if abs(np.linalg.norm(om) - 1) > 1e-12:
            raise ValueError("omega must be a unit vector")
        if self.sigma <= 0 or self.h <= 0:
            raise ValueError("sigma and h must be positive")
        if self.side not in ("forward", "adjoint"):
            raise ValueError(self.side)
        object.__setattr__(self, "omega", tuple(float(v) for v in om))
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))

    def to_json(self):
        return json.dumps({"omega": list(self.omega), "sigma": self.sigma, "y": list(self.y),
                           "h": self.h, "side": self.side})

    @classmethod
    def from_json(cls, s):
        d = json.loads(s) if isinstance(s, str) else s
        return cls(tuple(d["omega"]), d["sigma"], tuple(d["y"]), d["h"], d.get("side", "forward"))


def check_resolution(cfg: GeometryConfig, sigma, h):
    dx = cfg.dx
    smax = 2 * np.pi / (10 * dx)
    if sigma > smax * (1 + 1e-12):
        raise ResolutionError(f"sigma={sigma} under-resolved; max admissible sigma is {smax:.3f}",
                              max_sigma=smax)
    if 2 * h < 8 * dx * (1 - 1e-12):
        raise ResolutionError(f"bump width {h} spans fewer than 8 cells", min_h=4 * dx)


def _dist_to_box(p, lo, hi):
    d = np.maximum(np.maximum(np.asarray(lo) - p, p - np.asarray(hi)), 0.0)
    return float(np.linalg.norm(d))


def check_probe_support(cfg: GeometryConfig, probe: ProbeSpec, regime: str) -> ValidationReport:
    reg = normalize_regime(regime)
    rep = ValidationReport()
    if reg == "gamma":
        return rep
    y = np.asarray(probe.y)
    h = probe.h
    lo, hi = cfg.omega_min, cfg.omega_max
    d0 = _dist_to_box(y, lo, hi)
    if d0 < h:
        rep.violations.append(Violation("supp phi cap Omega = empty", d0, h,
                                        "supp phi ∩ Omega ≠ ∅"))
    if reg == "lambda":
        ny = float(np.linalg.norm(y))
        if ny - h < cfg.r / 2:
            rep.violations.append(Violation("supp phi in C_r (inner)", ny - h, cfg.r / 2,
                                            "bump reaches inside |x| <= r/2"))
        if ny + h > cfg.T - cfg.r / 2:
            rep.violations.append(Violation("supp phi in C_r (outer)", ny + h, cfg.T - cfg.r / 2,
                                            "bump reaches |x| >= T - r/2"))
        om = np.asarray(probe.omega)
        for sgn, name in ((1, "+"), (-1, "-")):
            d = _dist_to_box(y + sgn * cfg.T * om, lo, hi)
            if d < h:
                rep.violations.append(Violation(f"(supp phi {name} T omega) cap Omega = empty", d, h,
                                                f"shifted support {name}T omega meets Omega"))
    return rep


# --- amplitudes ------------------------------------------------------------------------

def _field_arrays(F):
    g = F.grid
    lo = (g.lo[0], g.lo[1], g.t0)
    d = (g.spacing[0], g.spacing[1], g.dt if g.nt > 0 else 1.0)
    return lo, d


def directional(A: VectorField, omega, conj=False):
    vals = sum(w * c.values for w, c in zip(omega, A))
    return np.conj(vals) if conj else vals


def ray_integral_A(A: VectorField, omega, x, t, conj=False, ds_max=None):
    """int_0^t omega.A(x + (t-s) omega, s) ds for points x (P,2), times t (P,)."""
    x = np.atleast_2d(np.asarray(x, float))
    t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
    om = np.asarray(omega, float)
    lo, d = _field_arrays(A)
    if ds_max is None:
        ds_max = 0.5 * min(A.grid.spacing)
    z = x + t[:, None] * om[None, :]
    g = directional(A, om, conj)
    return kernels.line_integrals(g, lo, d, z, om, 0.0, t, ds_max)


def amplitude(A: VectorField | None, omega, variant, x, t, frame="x"):
    """Amplitude b at points (x, t).

    b2: exp(i int omega.A), b1: exp(i int omega.conj(A)), bA: exp(-i int omega.A)
    (A the difference field), integrated along s -> x + (t-s) omega. With
    frame='z' the points are given as z = x + t omega.
    """
    x = np.atleast_2d(np.asarray(x, float))
    t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
    if frame == "z":
        x = x - t[:, None] * np.asarray(omega, float)[None, :]
    if A is None:
        return np.ones(x.shape[0], dtype=complex)
    if variant == "b2":
        return np.exp(1j * ray_integral_A(A, omega, x, t))
    if variant == "b1":
        return np.exp(1j * ray_integral_A(A, omega, x, t, conj=True))
    if variant == "bA":
        return np.exp(-1j * ray_integral_A(A, omega, x, t))
    raise ValueError(f"unknown amplitude variant {variant!r}")


# --- transported GO waves ---------------------------------------------------------------

class GOWave:
    """Sum over disjoint bumps of phi_k(x+t omega) b(x,t) e^{i sigma (x.omega+t)}.

    The amplitude phase J(z,t) = int_0^t omega.A(z - s omega, s) ds is
    tabulated on a small z-grid per bump at the solver time levels and
    interpolated bilinearly in z. `conj_A` selects the adjoint amplitude
    (Abar), `sign` = -1 gives exp(-i ...) (the b_A convention).
    """

    def __init__(self, cfg: GeometryConfig, omega, sigma, h, centers, A: VectorField | None = None,
                 conj_A=False, weights=None, dz=None, check=True):
        self.cfg = cfg
        self.omega = np.asarray(omega, float)
        if abs(np.linalg.norm(self.omega) - 1) > 1e-12:
            raise ValueError("omega must be a unit vector")
        self.sigma = float(sigma)
        self.h = float(h)
        self.centers = np.atleast_2d(np.asarray(centers, float))
        if check:
            check_resolution(cfg, sigma, h)
        c = self.centers
        if len(c) > 1:
            dd = np.linalg.norm(c[:, None] - c[None], axis=-1) + np.eye(len(c)) * 1e9
            if dd.min() < 2 * h - 1e-12:
                raise ValueError("comb bumps overlap")
        self.weights = np.ones(len(c)) if weights is None else np.asarray(weights, float)
        self.times = cfg.times()
        self.dz = dz if dz is not None else max(0.5 * cfg.dx, self.h / 12)
        self.m = int(np.ceil(self.h / self.dz)) + 1
        # J is tabulated on every `stride`-th solver level and interpolated in t
        self.stride = max(1, int(round(0.05 / cfg.dt)))
        lv = np.arange(0, cfg.nt + 1, self.stride)
        if lv[-1] != cfg.nt:
            lv = np.append(lv, cfg.nt)
        self.table_levels = lv
        self.J = None
        self.gradJ = None
        self.A = None
        if A is not None and A.max_abs() > 0:
            self.A = A
            self._tabulate(A, conj_A)
        self.conj_A = conj_A
        self._tree = None
        self._sig = None
        self.scale = self.h ** (-self.centers.shape[1] / 2)

    def _tabulate(self, A, conj_A):
        m, dz = self.m, self.dz
        off = dz * np.arange(-m, m + 1)
        self.J = []
        lo, d = _field_arrays(A)
        g = directional(A, self.omega, conj_A)
        ts = self.times[self.table_levels]
        nsub = 2 * max(1, int(np.ceil(np.max(np.diff(ts)) / self.cfg.dx)))
        for y in self.centers:
            Z = np.stack(np.meshgrid(y[0] + off, y[1] + off, indexing="ij"), -1).reshape(-1, 2)
            J = kernels.cumulative_line_integrals(g, lo, d, Z, self.omega, ts, nsub=nsub)
            J = J.reshape(2 * m + 1, 2 * m + 1, -1)
            self.J.append(J)

    def _gradJ(self, k):
        # spatial gradient of the phase table, built on first use
        if self.gradJ is None:
            self.gradJ = [None] * len(self.J)
        if self.gradJ[k] is None:
            self.gradJ[k] = np.gradient(self.J[k], self.dz, axis=(0, 1), edge_order=2)
        return self.gradJ[k]

    def _interp_J(self, k, z, n, arr=None):
        arr = self.J[k] if arr is None else arr
        f = (z - self.centers[k][None, :]) / self.dz + self.m
        f = np.clip(f, 0, 2 * self.m - 1e-9)
        i = f[:, 0].astype(int)
        j = f[:, 1].astype(int)
        a = f[:, 0] - i
        b = f[:, 1] - j
        # time: table slot and weight
        q = np.minimum(n // self.stride, len(self.table_levels) - 2)
        l0 = self.table_levels[q]
        l1 = self.table_levels[q + 1]
        wt = (n - l0) / (l1 - l0)

        def plane(m):
            return ((1 - a) * (1 - b) * arr[i, j, m] + a * (1 - b) * arr[i + 1, j, m]
                    + (1 - a) * b * arr[i, j + 1, m] + a * b * arr[i + 1, j + 1, m])
        return (1 - wt) * plane(q) + wt * plane(q + 1)

    def _assign(self, z):
        """Index of the bump whose support contains z, -1 where none does."""
        if self._tree is None:
            self._tree = cKDTree(self.centers)
        d, k = self._tree.query(z, distance_upper_bound=self.h)
        k = np.where(d < self.h, k, -1)
        return k

    def _pieces(self, x, n, lab=None):
        """Per-bump (index, point indices, z, phi, bump, levels) at points x, levels n."""
        t = self.times[n]
        z = x + t[:, None] * self.omega[None, :]
        if lab is None:
            lab = self._assign(z)
        out = []
        order = np.argsort(lab, kind="stable")
        bounds = np.searchsorted(lab[order], np.arange(-1, len(self.centers) + 1))
        for k, y in enumerate(self.centers):
            idx = order[bounds[k + 1]:bounds[k + 2]]
            if len(idx) == 0:
                continue
            zz = z[idx]
            bump = Bump(tuple(y), self.h)
            ph = self.weights[k] * bump(zz)
            out.append((k, idx, zz, ph, bump, n[idx]))
        return out

    def values(self, x, n, lab=None):
        """Ansatz at points x (P,2), level indices n (P,); `lab` may pass known bump labels."""
        x = np.atleast_2d(np.asarray(x, float))
        n = np.broadcast_to(np.asarray(n, int), (x.shape[0],))
        out = np.zeros(x.shape[0], dtype=complex)
        for k, idx, zz, ph, bump, nk in self._pieces(x, n, lab):
            val = ph.astype(complex)
            if self.J is not None:
                val = val * np.exp(1j * self._interp_J(k, zz, nk))
            out[idx] = val
        phase = np.exp(1j * self.sigma * (x @ self.omega + self.times[n]))
        return out * phase

    def amplitude_at(self, x, n):
        """b at (x, t_n) (1 where no bump)."""
        x = np.atleast_2d(np.asarray(x, float))
        n = np.broadcast_to(np.asarray(n, int), (x.shape[0],))
        out = np.ones(x.shape[0], dtype=complex)
        if self.J is None:
            return out
        for k, idx, zz, ph, bump, nk in self._pieces(x, n):
            out[idx] = np.exp(1j * self._interp_J(k, zz, nk))
        return out

    def _A_at(self, x, t):
        if self.A is None:
            return np.zeros(x.shape[0], dtype=complex)
        lo, d = _field_arrays(self.A)
        g = directional(self.A, self.omega, self.conj_A)
        return kernels.interp3_np(g, x[:, 0], x[:, 1], t, lo, d)

    def dt_values(self, x, n):
        """Time derivative of the ansatz at (x, t_n)."""
        x = np.atleast_2d(np.asarray(x, float))
        n = np.broadcast_to(np.asarray(n, int), (x.shape[0],))
        out = np.zeros(x.shape[0], dtype=complex)
        for k, idx, zz, ph, bump, nk in self._pieces(x, n):
            dphi = self.weights[k] * bump.grad(zz) @ self.omega
            b = np.ones(len(idx), dtype=complex)
            db = np.zeros(len(idx), dtype=complex)
            if self.J is not None:
                b = np.exp(1j * self._interp_J(k, zz, nk))
                gJ = [self._interp_J(k, zz, nk, arr=self._gradJ(k)[a]) for a in range(2)]
                wgJ = self.omega[0] * gJ[0] + self.omega[1] * gJ[1]
                db = 1j * (wgJ + self._A_at(x[idx], self.times[nk])) * b
            out[idx] = dphi * b + ph * db + 1j * self.sigma * ph * b
        phase = np.exp(1j * self.sigma * (x @ self.omega + self.times[n]))
        return out * phase

    def grad_values(self, x, n):
        """Spatial gradient of the ansatz, shape (P, 2)."""
        x = np.atleast_2d(np.asarray(x, float))
        n = np.broadcast_to(np.asarray(n, int), (x.shape[0],))
        out = np.zeros(x.shape, dtype=complex)
        for k, idx, zz, ph, bump, nk in self._pieces(x, n):
            gphi = self.weights[k] * bump.grad(zz)
            b = np.ones(len(idx), dtype=complex)
            gb = np.zeros((len(idx), 2), dtype=complex)
            if self.J is not None:
                b = np.exp(1j * self._interp_J(k, zz, nk))
                gJ = np.stack([self._interp_J(k, zz, nk, arr=self._gradJ(k)[a]) for a in range(2)], -1)
                gb = 1j * gJ * b[:, None]
            out[idx] = gphi * b[:, None] + ph[:, None] * gb + 1j * self.sigma * (ph * b)[:, None] * self.omega
        phase = np.exp(1j * self.sigma * (x @ self.omega + self.times[n]))
        return out * phase[:, None]

    def labels(self, x, n):
        """Index of the bump covering (x, t_n), -1 where none does."""
        x = np.atleast_2d(np.asarray(x, float))
        n = np.broadcast_to(np.asarray(n, int), (x.shape[0],))
        z = x + self.times[n][:, None] * self.omega[None, :]
        return self._assign(z)

    # samples on solver-grid objects
    def _sigma_points(self):
        cfg = self.cfg
        bp = boundary_points(cfg)                              # (4, nx, 2)
        L = cfg.nt + 1
        x = np.broadcast_to(bp[:, :, None, :], (4, cfg.nx, L, 2)).reshape(-1, 2)
        n = np.broadcast_to(np.arange(L)[None, None, :], (4, cfg.nx, L)).reshape(-1)
        return x, n

    def _sigma_support(self):
        """Flat indices into (4, nx, nt+1) of the Sigma samples any bump can reach."""
        cfg = self.cfg
        lo, hi = cfg.omega_min, cfg.omega_max
        faces = ((0, lo[0], 1), (0, hi[0], 1), (1, lo[1], 0), (1, hi[1], 0))
        h, om, L = self.h, self.omega, cfg.nt + 1
        bp = boundary_points(cfg).reshape(-1, 2)
        out = []
        for k, c in enumerate(self.centers):
            for f, (a, xv, b) in enumerate(faces):
                if abs(om[a]) < 1e-14:
                    if abs(c[a] - xv) >= h:
                        continue
                    n0, n1 = 0, cfg.nt
                else:
                    ta, tb = sorted(((c[a] - xv - h) / om[a], (c[a] - xv + h) / om[a]))
                    n0 = max(0, int(np.floor(ta / cfg.dt)))
                    n1 = min(cfg.nt, int(np.ceil(tb / cfg.dt)))
                    if n0 > n1:
                        continue
                sc = c[b] - self.times[n0:n1 + 1] * om[b]
                j0 = max(0, int(np.floor((sc.min() - h - lo[b]) / cfg.dx)))
                j1 = min(cfg.nx - 1, int(np.ceil((sc.max() + h - lo[b]) / cfg.dx)))
                if j0 > j1:
                    continue
                J, N = np.meshgrid(np.arange(j0, j1 + 1), np.arange(n0, n1 + 1), indexing="ij")
                flat = ((f * cfg.nx + J) * L + N).ravel()
                x = bp[flat // L]
                z = x + self.times[flat % L][:, None] * om[None, :] - c[None, :]
                inside = np.sum(z * z, axis=1) < h * h
                out.append((flat[inside], np.full(int(inside.sum()), k)))
        if not out:
            return np.zeros(0, int), np.zeros(0, int)
        idx = np.concatenate([o[0] for o in out])
        lab = np.concatenate([o[1] for o in out])
        order = np.argsort(idx, kind="stable")
        return idx[order], lab[order]

    def sigma_samples(self):
        """(flat indices, values, labels) of the nonzero Sigma samples, cached."""
        if self._sig is None:
            idx, lab = self._sigma_support()
            L = self.cfg.nt + 1
            x = boundary_points(self.cfg).reshape(-1, 2)[idx // L]
            self._sig = (idx, self.values(x, idx % L, lab=lab), lab)
        return self._sig

    def boundary_labels(self):
        idx, _, lab = self.sigma_samples()
        out = np.full(4 * self.cfg.nx * (self.cfg.nt + 1), -1, dtype=int)
        out[idx] = lab
        return out.reshape(4, self.cfg.nx, self.cfg.nt + 1)

    def level_labels(self, n):
        X = np.stack(self.cfg.mesh(), -1).reshape(-1, 2)
        return self.labels(X, n).reshape(self.cfg.nx, self.cfg.nx)

    def boundary_data(self):
        """Dirichlet data on Sigma, shape (4, nx, nt+1)."""
        idx, vals, _ = self.sigma_samples()
        out = np.zeros(4 * self.cfg.nx * (self.cfg.nt + 1), dtype=complex)
        out[idx] = vals
        return out.reshape(4, self.cfg.nx, self.cfg.nt + 1)

    def level(self, n):
        X = np.stack(self.cfg.mesh(), -1).reshape(-1, 2)
        return self.values(X, n).reshape(self.cfg.nx, self.cfg.nx)

    def dt_level(self, n):
        X = np.stack(self.cfg.mesh(), -1).reshape(-1, 2)
        return self.dt_values(X, n).reshape(self.cfg.nx, self.cfg.nx)


def go_ansatz(cfg: GeometryConfig, probe: ProbeSpec, A: VectorField | None = None, levels=None):
    """Ansatz on the solver grid, shape (nx, nx, len(levels)) (all levels by default)."""
    w = GOWave(cfg, probe.omega, probe.sigma, probe.h, [probe.y], A,
               conj_A=(probe.side == "adjoint"))
    levels = range(cfg.nt + 1) if levels is None else levels
    return np.stack([w.level(n) for n in levels], axis=-1)


@dataclass
class RemainderReport:
    r_l2: float
    grad_r_l2: float
    sigma_r_l2: float
    u_l2: float

    def as_tuple(self):
        return self.r_l2, self.grad_r_l2, self.sigma_r_l2


def remainder_report(cfg: GeometryConfig, coeffs: MagneticPair | None, probe: ProbeSpec,
                     check_support=True) -> RemainderReport:
    """Solve with Dirichlet data equal to the ansatz on Sigma and zero Cauchy
    data, and measure r = u - ansatz in L2(Q) (value and space-time gradient)."""
    if check_support:
        rep = check_probe_support(cfg, probe, "lambda")
        if not rep.ok:
            raise ValueError("probe not admissible: " + "; ".join(rep.names()))
    adj = probe.side == "adjoint"
    A = coeffs.A if coeffs is not None else None
    w = GOWave(cfg, probe.omega, probe.sigma, probe.h, [probe.y], A, conj_A=adj)
    f = w.boundary_data()
    zero = np.zeros((cfg.nx, cfg.nx))
    prob = WaveProblem(cfg, coeffs, "magnetic" if coeffs is not None else "convection",
                       probe.side, dirichlet=f,
                       **({"final": (zero, zero)} if adj else {"initial": (zero, zero)}))
    wt = trapezoid_weights((cfg.nt + 1,), (cfg.dt,))
    acc = {"r": 0.0, "g": 0.0, "u": 0.0}
    hist = {}

    def hook(n, t, u):
        r = u[0] - w.level(n)
        acc["r"] += wt[n] * float(np.real(omega_inner(r, r, cfg)))
        acc["u"] += wt[n] * float(np.real(omega_inner(u[0], u[0], cfg)))
        gx = np.gradient(r, cfg.dx, axis=0, edge_order=2)
        gy = np.gradient(r, cfg.dx, axis=1, edge_order=2)
        acc["g"] += wt[n] * float(np.real(omega_inner(gx, gx, cfg) + omega_inner(gy, gy, cfg)))
        hist[n] = r
        # time derivative by centred differences, one-sided at the ends
        prev = n + 1 if adj else n - 1
        prev2 = n + 2 if adj else n - 2
        if prev in hist and prev2 in hist:
            rt = (r - hist[prev2]) / (2 * cfg.dt)
            acc["g"] += wt[prev] * float(np.real(omega_inner(rt, rt, cfg)))
            del hist[prev2]

    march(prob, hook=hook)
    r2 = np.sqrt(acc["r"])
    return RemainderReport(r2, float(np.sqrt(acc["g"])), probe.sigma * r2, float(np.sqrt(acc["u"])))
