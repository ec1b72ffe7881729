"""Space-time fields, gauge reduction and finite-difference operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid: `shape` nodes per spatial axis on [lo, hi],
    nt+1 time levels on [t0, t1]."""
    lo: tuple
    hi: tuple
    shape: tuple
    t0: float
    t1: float
    nt: int

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple((h - l) / (n - 1) for l, h, n in zip(self.lo, self.hi, self.shape))

    @property
    def dt(self):
        return (self.t1 - self.t0) / self.nt if self.nt > 0 else 0.0

    def axes(self):
        return [np.linspace(l, h, n) for l, h, n in zip(self.lo, self.hi, self.shape)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def times(self):
        return np.linspace(self.t0, self.t1, self.nt + 1)

    @property
    def full_shape(self):
        return self.shape + (self.nt + 1,)

    def same_space(self, other: "Grid") -> bool:
        return (self.shape == other.shape and np.allclose(self.lo, other.lo)
                and np.allclose(self.hi, other.hi))

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "shape": list(self.shape),
                "t0": self.t0, "t1": self.t1, "nt": self.nt}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"], d["shape"], d["t0"], d["t1"], d["nt"])

    @classmethod
    def from_config(cls, cfg, nt=None):
        """Solver grid of a GeometryConfig, optionally with a coarser time axis."""
        return cls(cfg.omega_min, cfg.omega_max, (cfg.nx,) * cfg.dim, 0.0, cfg.T,
                   cfg.nt if nt is None else nt)


class ScalarField:
    """Samples of a complex (or real) function on a Grid, zero outside it."""

    def __init__(self, grid: Grid, values, support=None):
        values = np.asarray(values)
        if values.shape != grid.full_shape:
            raise ValueError(f"values shape {values.shape} != grid {grid.full_shape}")
        self.grid = grid
        self.values = values
        self.support = support
        self._tmax_nz = None

    @classmethod
    def zeros(cls, grid, dtype=float):
        return cls(grid, np.zeros(grid.full_shape, dtype=dtype))

    @classmethod
    def from_function(cls, grid, func, dtype=None):
        """func(X1, ..., Xn, t) evaluated level by level."""
        X = grid.mesh()
        levels = [np.asarray(func(*X, t)) * np.ones(grid.shape) for t in grid.times()]
        v = np.stack(levels, axis=-1)
        if dtype is not None:
            v = v.astype(dtype)
        return cls(grid, v)

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)

    def at(self, t):
        """Spatial slice at time t (linear interpolation between levels, zero
        outside [t0, t1])."""
        g = self.grid
        if g.nt == 0:
            return self.values[..., 0]
        s = (t - g.t0) / g.dt
        if s < -1e-9 or s > g.nt + 1e-9:
            return np.zeros(g.shape, dtype=self.values.dtype)
        s = min(max(s, 0.0), float(g.nt))
        k = min(int(np.floor(s)), g.nt - 1)
        w = s - k
        if w < 1e-12:
            return self.values[..., k]
        if w > 1 - 1e-12:
            return self.values[..., k + 1]
        return (1 - w) * self.values[..., k] + w * self.values[..., k + 1]

    def active_levels(self):
        """(first, last) time level indices with nonzero samples, or None."""
        if self._tmax_nz is None:
            nz = np.flatnonzero(np.any(self.values != 0, axis=tuple(range(self.grid.dim))))
            self._tmax_nz = (int(nz[0]), int(nz[-1])) if nz.size else ()
        return self._tmax_nz or None

    def active_window(self):
        lv = self.active_levels()
        if lv is None:
            return None
        g = self.grid
        return (g.t0 + (lv[0] - 1) * g.dt, g.t0 + (lv[1] + 1) * g.dt)

    def __add__(self, o):
        return ScalarField(self.grid, self.values + _vals(o))

    def __sub__(self, o):
        return ScalarField(self.grid, self.values - _vals(o))

    def __mul__(self, o):
        return ScalarField(self.grid, self.values * _vals(o))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def conj(self):
        return ScalarField(self.grid, np.conj(self.values))

    def real(self):
        return ScalarField(self.grid, self.values.real.copy())

    def imag(self):
        return ScalarField(self.grid, self.values.imag.copy())

    def max_abs(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _vals(o):
    return o.values if isinstance(o, ScalarField) else o


class VectorField:
    def __init__(self, components):
        comps = list(components)
        g = comps[0].grid
        for c in comps[1:]:
            if c.grid != g:
                raise ValueError("component grids differ")
        self.components = comps
        self.grid = g

    @classmethod
    def zeros(cls, grid, dtype=float):
        return cls([ScalarField.zeros(grid, dtype) for _ in range(grid.dim)])

    @classmethod
    def from_arrays(cls, grid, arrays):
        return cls([ScalarField(grid, a) for a in arrays])

    @property
    def dim(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def at(self, t):
        return [c.at(t) for c in self.components]

    def dot(self, other) -> ScalarField:
        """Bilinear (not Hermitian) pointwise product sum_j a_j b_j."""
        v = sum(a.values * b.values for a, b in zip(self, other))
        return ScalarField(self.grid, v)

    def dot_dir(self, omega) -> ScalarField:
        return ScalarField(self.grid, sum(w * c.values for w, c in zip(omega, self)))

    def scale(self, s):
        return VectorField([s * c for c in self])

    def __add__(self, o):
        return VectorField([a + b for a, b in zip(self, o)])

    def __sub__(self, o):
        return VectorField([a - b for a, b in zip(self, o)])

    def conj(self):
        return VectorField([c.conj() for c in self])

    def max_abs(self):
        return max(c.max_abs() for c in self)

    def active_levels(self):
        lv = [c.active_levels() for c in self]
        lv = [x for x in lv if x is not None]
        if not lv:
            return None
        return (min(a for a, _ in lv), max(b for _, b in lv))


@dataclass
class CoefficientPair:
    """(V, p) of u_tt - Lap u + V.grad u + p u."""
    V: VectorField
    p: ScalarField

    def __post_init__(self):
        if self.V.grid != self.p.grid:
            raise ValueError("V and p live on different grids")

    @property
    def grid(self):
        return self.p.grid

    def scaled(self, s):
        return CoefficientPair(self.V.scale(s), s * self.p)


@dataclass
class MagneticPair:
    """(A, q) of u_tt - Lap_A u + q u with Lap_A = Lap + 2iA.grad + i div A - A.A."""
    A: VectorField
    q: ScalarField
    div_A: ScalarField | None = None

    def __post_init__(self):
        if self.A.grid != self.q.grid:
            raise ValueError("A and q live on different grids")

    @property
    def grid(self):
        return self.q.grid


# --- finite differences -----------------------------------------------------

def grad_axis(values, axis, h):
    """Centred second order inside, one-sided second order on the faces."""
    if values.shape[axis] < 3:
        raise ValueError("need at least 3 nodes per axis")
    return np.gradient(values, h, axis=axis, edge_order=2)


def divergence(F: VectorField) -> ScalarField:
    g = F.grid
    out = sum(grad_axis(c.values, j, g.spacing[j]) for j, c in enumerate(F))
    return ScalarField(g, out)


def curl(F: VectorField) -> dict:
    """{(j, k): d_j F_k - d_k F_j} for j < k (0-based)."""
    g = F.grid
    out = {}
    for j in range(F.dim):
        for k in range(j + 1, F.dim):
            v = grad_axis(F[k].values, j, g.spacing[j]) - grad_axis(F[j].values, k, g.spacing[k])
            out[(j, k)] = ScalarField(g, v)
    return out


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField([ScalarField(g, grad_axis(f.values, j, g.spacing[j])) for j in range(g.dim)])


def rotated_gradient(psi: ScalarField) -> VectorField:
    """(-d_2 psi, d_1 psi); discretely divergence free because the two
    one-dimensional stencils commute."""
    if psi.grid.dim != 2:
        raise ValueError("rotated gradient is 2-D only")
    d = gradient(psi)
    return VectorField([-d[1], d[0]])


def differential_ops(f: VectorField, which: str):
    if which == "div":
        return divergence(f)
    if which == "curl":
        return curl(f)
    raise ValueError(which)


# --- gauge ------------------------------------------------------------------

def gauge_reduce(cp: CoefficientPair, div_v: ScalarField | None | str = "fd") -> MagneticPair:
    """A = (i/2) V, q = p + V.V/4 - div V/2.

    div_v="fd" uses the centred stencil; an explicit ScalarField (e.g. an
    analytic divergence) may be supplied instead.
    """
    V, p = cp.V, cp.p
    if V.grid != p.grid:
        raise ValueError("grid mismatch between V and p")
    if isinstance(div_v, str):
        div_v = divergence(V)
    Vr = [np.real(c.values) for c in V]
    A = VectorField([ScalarField(V.grid, 1j * (0.5 * v)) for v in Vr])
    q = np.real(p.values) + 0.25 * sum(v * v for v in Vr) - 0.5 * np.real(div_v.values)
    divA = ScalarField(V.grid, 1j * (0.5 * np.real(div_v.values)))
    return MagneticPair(A, ScalarField(p.grid, q.astype(float)), divA)


def gauge_lift(mp: MagneticPair, tol=1e-12) -> CoefficientPair:
    """Inverse substitution V = -2iA, p = q - V.V/4 + div V/2."""
    scale = max(1.0, mp.A.max_abs())
    for c in mp.A:
        re = np.max(np.abs(np.real(c.values))) if c.values.size else 0.0
        if re > tol * scale:
            raise ValueError(f"A is not purely imaginary (max |Re A| = {re:.3e})")
    g = mp.A.grid
    V = VectorField([ScalarField(g, np.real(-2j * c.values)) for c in mp.A])
    if mp.div_A is not None:
        divV = np.real(-2j * mp.div_A.values)
    else:
        divV = divergence(V).values
    p = np.real(mp.q.values) - 0.25 * sum(c.values ** 2 for c in V) + 0.5 * divV
    return CoefficientPair(V, ScalarField(g, p))


def magnetic_div(mp: MagneticPair) -> ScalarField:
    return mp.div_A if mp.div_A is not None else divergence(mp.A)


# --- discrete operators applied to arbitrary fields -------------------------

def laplacian2(u, h):
    """5-point Laplacian on interior nodes of a 2-D array (boundary rows 0)."""
    out = np.zeros_like(u)
    out[1:-1, 1:-1] = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
                       - 4 * u[1:-1, 1:-1]) / (h * h)
    return out


def centred_grad2(u, h):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[1:-1, 1:-1] = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * h)
    gy[1:-1, 1:-1] = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * h)
    return gx, gy


def apply_spatial_operator(B, C, u, h):
    """-Lap u + B.grad u + C u on interior nodes of a 2-D slice."""
    gx, gy = centred_grad2(u, h)
    out = -laplacian2(u, h) + B[0] * gx + B[1] * gy + C * u
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = 0
    return out


def convection_BC(cp: CoefficientPair, t):
    return cp.V.at(t), cp.p.at(t)


def magnetic_BC(mp: MagneticPair, t):
    """Lower order coefficients of -Lap_A + q written as B.grad + C."""
    A = mp.A.at(t)
    divA = magnetic_div(mp).at(t)
    B = [-2j * a for a in A]
    C = -1j * divA + sum(a * a for a in A) + mp.q.at(t)
    return B, C


# --- norms --------------------------------------------------------------------

def trapezoid_weights(shape, spacing):
    w = np.ones(shape)
    for ax, (n, h) in enumerate(zip(shape, spacing)):
        wa = np.full(n, h)
        wa[0] = wa[-1] = h / 2
        sh = [1] * len(shape)
        sh[ax] = n
        w = w * wa.reshape(sh)
    return w


def l2_norm(values, spacing):
    return float(np.sqrt(np.sum(trapezoid_weights(values.shape, spacing) * np.abs(values) ** 2)))


def _space_time_spacing(f: ScalarField):
    g = f.grid
    return tuple(g.spacing) + ((g.dt if g.nt > 0 else 1.0),)


def hminus1_norm(values, spacing):
    """(2pi)^-(d) int (1+|zeta|^2)^-1 |f^|^2, with f^ from a periodic FFT."""
    N = values.size
    dV = float(np.prod(spacing))
    F = np.fft.fftn(values)
    w = np.zeros(values.shape)
    for ax, (n, h) in enumerate(zip(values.shape, spacing)):
        k = 2 * np.pi * np.fft.fftfreq(n, h)
        sh = [1] * values.ndim
        sh[ax] = n
        w = w + (k ** 2).reshape(sh)
    s = np.sum(np.abs(F) ** 2 / (1.0 + w))
    return float(np.sqrt(s * dV / N))


def wkinf_norm(values, spacing, k):
    if k > 3 or k < 0:
        raise ValueError("W^{k,inf} surrogate supports k <= 3")
    best = float(np.max(np.abs(values)))
    level = [values]
    for _ in range(k):
        nxt = []
        for v in level:
            for ax, h in enumerate(spacing):
                if v.shape[ax] >= 3:
                    nxt.append(np.gradient(v, h, axis=ax, edge_order=2))
        level = nxt
        if level:
            best = max(best, max(float(np.max(np.abs(v))) for v in level))
    return best


def norm_surrogate(f, kind="L2", k=None):
    if isinstance(f, VectorField):
        vals = [norm_surrogate(c, kind, k) for c in f]
        if kind in ("Linf",) or kind.startswith("W"):
            return max(vals)
        return float(np.sqrt(sum(v * v for v in vals)))
    sp = _space_time_spacing(f)
    v = f.values
    if kind == "Linf":
        return float(np.max(np.abs(v))) if v.size else 0.0
    if kind == "L2":
        return l2_norm(v, sp)
    if kind == "Hminus1":
        return hminus1_norm(v, sp)
    if kind.startswith("W"):
        if k is None:
            k = int(kind[1:].split("inf")[0] or 1) if kind[1:2].isdigit() else 1
        return wkinf_norm(v, sp, k)
    raise ValueError(f"unknown norm kind {kind!r}")
