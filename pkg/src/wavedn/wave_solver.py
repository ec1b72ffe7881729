"""Leapfrog solvers for the convection and magnetic wave operators, boundary
traces, response operators and dictionary estimates of operator distances.

Both forms are written as u_tt - Lap u + B.grad u + C u = F with
  convection: B = V,          C = p
  magnetic:   B = -2iA,       C = -i div A + A.A + q
and the formal adjoint B* = -conj(B), C* = conj(C) - div conj(B).
Batches of K problems sharing coefficients are marched together.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .fields import (CoefficientPair, MagneticPair, ScalarField, Grid, magnetic_div,
                     trapezoid_weights, grad_axis)
from .geometry import GeometryConfig, normalize_regime

FACE_NORMALS = ((0, -1), (0, 1), (1, -1), (1, 1))   # (axis, sign) of outward normal


class CFLViolation(ValueError):
    def __init__(self, dt, limit, required_nt):
        self.required_nt = required_nt
        super().__init__(f"CFL violated: dt={dt:.4e} > {limit:.4e}; use nt >= {required_nt}")


class NumericalFailure(RuntimeError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite values at step {step}")


# --- boundary helpers -------------------------------------------------------

def boundary_points(cfg: GeometryConfig):
    """Coordinates of face nodes, shape (4, nx, 2), ordered as FACE_NORMALS."""
    ax = cfg.axes()
    lo, hi = cfg.omega_min, cfg.omega_max
    pts = np.zeros((4, cfg.nx, 2))
    pts[0, :, 0], pts[0, :, 1] = lo[0], ax[1]
    pts[1, :, 0], pts[1, :, 1] = hi[0], ax[1]
    pts[2, :, 0], pts[2, :, 1] = ax[0], lo[1]
    pts[3, :, 0], pts[3, :, 1] = ax[0], hi[1]
    return pts


def boundary_values(u):
    """Face samples of a (..., nx, ny) array -> (..., 4, n)."""
    return np.stack([u[..., 0, :], u[..., -1, :], u[..., :, 0], u[..., :, -1]], axis=-2)


def set_boundary(u, g):
    """Impose face values g (..., 4, n) on u (..., nx, ny)."""
    u[..., 0, :] = g[..., 0, :]
    u[..., -1, :] = g[..., 1, :]
    u[..., :, 0] = g[..., 2, :]
    u[..., :, -1] = g[..., 3, :]


def normal_derivative(u, dx):
    """One-sided second order outward normal derivative, (..., 4, n)."""
    return np.stack([
        (3 * u[..., 0, :] - 4 * u[..., 1, :] + u[..., 2, :]),
        (3 * u[..., -1, :] - 4 * u[..., -2, :] + u[..., -3, :]),
        (3 * u[..., :, 0] - 4 * u[..., :, 1] + u[..., :, 2]),
        (3 * u[..., :, -1] - 4 * u[..., :, -2] + u[..., :, -3]),
    ], axis=-2) / (2 * dx)


def normal_component(Acomps):
    """A.nu on the faces for spatial component arrays A = [A0, A1]."""
    b0 = boundary_values(Acomps[0])
    b1 = boundary_values(Acomps[1])
    return np.stack([-b0[0], b0[1], -b1[2], b1[3]])


# --- problem ----------------------------------------------------------------

@dataclass
class WaveProblem:
    cfg: GeometryConfig
    coeffs: CoefficientPair | MagneticPair | None = None
    form: str = "convection"
    direction: str = "forward"
    dirichlet: np.ndarray | None = None      # (4, nx, nt+1) or (K, 4, nx, nt+1)
    initial: tuple | None = None             # (u0, u1), forward
    final: tuple | None = None               # (u2, u3), adjoint
    source: Callable | ScalarField | None = None

    def __post_init__(self):
        if self.form not in ("convection", "magnetic"):
            raise ValueError(f"unknown form {self.form!r}")
        if self.direction not in ("forward", "adjoint"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.direction == "adjoint" and self.initial is not None:
            raise ValueError("adjoint problems carry final data, not initial data")
        if self.direction == "forward" and self.final is not None:
            raise ValueError("forward problems carry initial data, not final data")
        if self.coeffs is not None:
            want = CoefficientPair if self.form == "convection" else MagneticPair
            if not isinstance(self.coeffs, want):
                raise TypeError(f"{self.form} form needs a {want.__name__}")


@dataclass
class WaveSolution:
    u: np.ndarray | None          # (K, nx, ny, nt+1) if kept
    dnu: np.ndarray               # (K, 4, nx, nt+1) outward normal derivative
    u_end: np.ndarray             # (K, nx, ny) at the last marched time (T fwd, 0 adj)
    ut_end: np.ndarray
    u_T: np.ndarray
    ut_T: np.ndarray
    batched: bool
    times: np.ndarray
    extra: dict = field(default_factory=dict)


class _Lower:
    """Lower order coefficients B, C on the solver grid as functions of t."""

    def __init__(self, problem: WaveProblem):
        cfg = problem.cfg
        self.zero = problem.coeffs is None
        if self.zero:
            return
        c = problem.coeffs
        grid = c.grid
        if grid.shape != (cfg.nx,) * cfg.dim or not np.allclose(grid.lo, cfg.omega_min) \
                or not np.allclose(grid.hi, cfg.omega_max):
            raise ValueError("coefficient grid must share the solver's spatial nodes")
        if problem.form == "convection":
            B = [v.values for v in c.V]
            C = c.p.values
        else:
            A = [a.values for a in c.A]
            B = [-2j * a for a in A]
            C = -1j * magnetic_div(c).values + sum(a * a for a in A) + c.q.values
        if problem.direction == "adjoint":
            h = grid.spacing
            Bc = [np.conj(b) for b in B]
            divBc = sum(grad_axis(b, j, h[j]) for j, b in enumerate(Bc))
            C = np.conj(C) - divBc
            B = [-b for b in Bc]
        self.B = B
        self.C = np.asarray(C)
        self.grid = grid
        nz = np.flatnonzero(np.any(
            (np.abs(self.C) + sum(np.abs(b) for b in B)) != 0, axis=(0, 1)))
        self.window = None if nz.size == 0 else (int(nz[0]), int(nz[-1]))
        self.dtype = np.result_type(self.C, *B)

    def at(self, t):
        if self.zero or self.window is None:
            return None
        g = self.grid
        s = (t - g.t0) / g.dt if g.nt > 0 else 0.0
        if s <= self.window[0] - 1 or s >= self.window[1] + 1:
            return None
        s = min(max(s, 0.0), float(g.nt))
        k = min(int(np.floor(s)), max(g.nt - 1, 0))
        w = s - k
        if g.nt == 0:
            return self.B[0][..., 0], self.B[1][..., 0], self.C[..., 0]
        def lerp(a):
            return a[..., k] if w == 0 else (1 - w) * a[..., k] + w * a[..., k + 1]
        return lerp(self.B[0]), lerp(self.B[1]), lerp(self.C)


def _as_batch(a, shape):
    if a is None:
        return None
    a = np.asarray(a)
    if a.shape == shape:
        return a[None], False
    if a.shape[1:] == shape:
        return a, True
    raise ValueError(f"array of shape {a.shape} does not match {shape}")


def _source_at(src, t, K, shape):
    if src is None:
        return None
    v = src.at(t) if isinstance(src, ScalarField) else src(t)
    v = np.asarray(v)
    return np.broadcast_to(v, (K,) + shape) if v.ndim == 2 else v


def check_cfl(cfg: GeometryConfig, safety=0.9):
    lim = safety * cfg.dx / np.sqrt(cfg.dim)
    if cfg.dt > lim * (1 + 1e-12):
        raise CFLViolation(cfg.dt, lim, cfg.cfl_nt(safety))


def march(problem: WaveProblem, keep_full=False, hook=None, nan_every=64) -> WaveSolution:
    """Run the leapfrog scheme; returns traces and end states for a batch.

    hook(n, t_n, u_level) is called for every level in physical time order
    for forward problems and reversed order for adjoint problems.
    """
    cfg = problem.cfg
    if cfg.dim != 2:
        raise NotImplementedError("the solver is two-dimensional")
    check_cfl(cfg)
    nx, nt, dt, dx = cfg.nx, cfg.nt, cfg.dt, cfg.dx
    shape = (nx, nx)
    times = cfg.times()
    adj = problem.direction == "adjoint"
    low = _Lower(problem)

    cauchy = problem.final if adj else problem.initial
    f, fb = _as_batch(problem.dirichlet, (4, nx, nt + 1)) or (None, False)
    u0 = u1 = None
    batched = fb
    if cauchy is not None:
        u0, b0 = _as_batch(cauchy[0], shape)
        u1, b1 = _as_batch(cauchy[1], shape)
        batched = batched or b0 or b1
    K = max(a.shape[0] for a in (f, u0, u1) if a is not None) if any(
        a is not None for a in (f, u0, u1)) else 1

    cands = [np.zeros(1)] + [a for a in (f, u0, u1) if a is not None]
    if not low.zero:
        cands.append(np.zeros(1, dtype=low.dtype))
    if problem.source is not None:
        cands.append(np.zeros(1, dtype=complex))
    dtype = np.result_type(*cands)
    if dtype.kind not in "fc":
        dtype = np.float64

    def bdry(n):
        # Dirichlet data at physical level index n
        return None if f is None else f[..., n]

    if adj:
        order = np.arange(nt, -1, -1)
        sgn = -1.0
    else:
        order = np.arange(nt + 1)
        sgn = 1.0

    uc = np.zeros((K,) + shape, dtype=dtype)
    if u0 is not None:
        uc[:] = u0
    g0 = bdry(order[0])
    if g0 is not None:
        scale = max(1.0, float(np.max(np.abs(g0))))
        if u0 is not None and np.max(np.abs(boundary_values(uc) - g0)) > 1e-8 * scale:
            raise ValueError("incompatible data: Dirichlet trace at the start "
                             "does not match the Cauchy data on the boundary")
        set_boundary(uc, np.broadcast_to(g0, (K, 4, nx)))
    vel = np.zeros_like(uc)
    if u1 is not None:
        vel[:] = sgn * u1

    zero2 = np.zeros(shape, dtype=dtype)
    dummyF = np.zeros((1, 1, 1), dtype=dtype)

    def step(up, uc, un, t):
        lc = low.at(t)
        F = _source_at(problem.source, t, K, shape)
        if lc is None:
            kernels.leapfrog(up, uc, un, zero2, zero2, zero2,
                             dummyF if F is None else np.ascontiguousarray(F, dtype=dtype),
                             dt, dx, lower=False, has_src=F is not None)
        else:
            B0, B1, C = (np.ascontiguousarray(a, dtype=dtype) for a in lc)
            kernels.leapfrog(up, uc, un, B0, B1, C,
                             dummyF if F is None else np.ascontiguousarray(F, dtype=dtype),
                             dt, dx, lower=True, has_src=F is not None)

    full = np.zeros((K,) + shape + (nt + 1,), dtype=dtype) if keep_full else None
    dnu = np.zeros((K, 4, nx, nt + 1), dtype=dtype)

    def record(m, u):
        n = order[m]
        dnu[..., n] = normal_derivative(u, dx)
        if full is not None:
            full[..., n] = u
        if hook is not None:
            hook(n, times[n], u)

    record(0, uc)
    # Taylor start: u^1 = u^0 + dt v + dt^2/2 rhs(u^0)
    un = np.empty_like(uc)
    un[:] = uc
    step(uc, uc, un, times[order[0]])
    un = 0.5 * (uc + un) + dt * vel
    g = bdry(order[1])
    if g is not None:
        set_boundary(un, g)
    else:
        set_boundary(un, np.zeros((K, 4, nx)))
    up, uc = uc, un
    record(1, uc)
    un = np.empty_like(uc)
    for m in range(1, nt):
        step(up, uc, un, times[order[m]])
        g = bdry(order[m + 1])
        if g is not None:
            set_boundary(un, g)
        else:
            un[:, 0, :] = un[:, -1, :] = un[:, :, 0] = un[:, :, -1] = 0
        if (m % nan_every == 0 or m == nt - 1) and not np.all(np.isfinite(un)):
            raise NumericalFailure(m + 1)
        up, uc, un = uc, un, up
        record(m + 1, uc)

    # one-sided second order time derivative at the end level
    # after the last rotation `un` holds level nt-2
    if nt >= 2:
        ut = sgn * (3 * uc - 4 * up + un) / (2 * dt)
    else:
        ut = sgn * (uc - up) / dt
    if not np.all(np.isfinite(uc)):
        raise NumericalFailure(nt)
    sol = WaveSolution(u=full, dnu=dnu, u_end=uc, ut_end=ut,
                       u_T=(None if adj else uc), ut_T=(None if adj else ut),
                       batched=batched, times=times)
    return sol


def solve_wave(problem: WaveProblem) -> ScalarField:
    """Space-time solution of a single (unbatched) problem on the solver grid."""
    sol = march(problem, keep_full=True)
    if sol.batched:
        raise ValueError("solve_wave expects a single problem; use march for batches")
    return ScalarField(Grid.from_config(problem.cfg), sol.u[0])


# --- responses --------------------------------------------------------------

@dataclass
class BoundaryTrace:
    samples: np.ndarray      # (..., 4, nx, nt+1)
    kind: str


@dataclass
class ResponseRecord:
    trace: BoundaryTrace
    final_u: np.ndarray | None
    final_ut: np.ndarray | None
    regime: str

    def __sub__(self, other):
        fu = None if self.final_u is None else self.final_u - other.final_u
        fut = None if self.final_ut is None else self.final_ut - other.final_ut
        return ResponseRecord(BoundaryTrace(self.trace.samples - other.trace.samples,
                                            self.trace.kind), fu, fut, self.regime)


def _form_of(coeffs):
    return "magnetic" if isinstance(coeffs, MagneticPair) else "convection"


def magnetic_trace_correction(cfg, mp: MagneticPair, u_faces):
    """i (A.nu) u on the faces for all time levels; u_faces (..., 4, nx, nt+1)."""
    A = mp.A
    times = cfg.times()
    out = np.zeros(u_faces.shape, dtype=complex)
    for n, t in enumerate(times):
        An = normal_component(A.at(t))
        out[..., n] = 1j * An * u_faces[..., n]
    return out


def response(cfg: GeometryConfig, regime: str, coeffs, f, u0=None, u1=None) -> ResponseRecord:
    """Lambda: Neumann trace; R and Gamma: trace plus final Cauchy data.

    For a MagneticPair the trace is (d_nu + i A.nu) u.
    """
    reg = normalize_regime(regime)
    if reg in ("lambda", "R"):
        for a in (u0, u1):
            if a is not None and np.any(np.asarray(a) != 0):
                raise ValueError(f"regime {reg} fixes zero initial data")
        init = None
    else:
        init = None if (u0 is None and u1 is None) else (
            np.zeros((cfg.nx,) * 2) if u0 is None else u0,
            np.zeros((cfg.nx,) * 2) if u1 is None else u1)
    form = _form_of(coeffs) if coeffs is not None else "convection"
    prob = WaveProblem(cfg, coeffs, form, "forward", dirichlet=f, initial=init)
    sol = march(prob)
    tr = sol.dnu
    kind = "neumann"
    if form == "magnetic":
        uf = _dirichlet_faces(cfg, f, sol)
        tr = tr + magnetic_trace_correction(cfg, coeffs, uf)
        kind = "magnetic_neumann"
    if not sol.batched:
        tr = tr[0]
        uT, utT = sol.u_T[0], sol.ut_T[0]
    else:
        uT, utT = sol.u_T, sol.ut_T
    keep = reg in ("R", "gamma")
    return ResponseRecord(BoundaryTrace(tr, kind), uT if keep else None,
                          utT if keep else None, reg)


def _dirichlet_faces(cfg, f, sol):
    K = sol.dnu.shape[0]
    if f is None:
        return np.zeros((K, 4, cfg.nx, cfg.nt + 1))
    f = np.asarray(f)
    return f[None] if f.ndim == 3 else f


# --- norms on Sigma and Omega ---------------------------------------------------

def _sigma_weights(cfg):
    return trapezoid_weights((cfg.nx, cfg.nt + 1), (cfg.dx, cfg.dt))


def sigma_inner(a, b, cfg):
    """Weighted sum over faces/time of a * conj(b); leading axes broadcast."""
    w = _sigma_weights(cfg)
    return np.sum(a * np.conj(b) * w, axis=(-3, -2, -1))


def sigma_l2(a, cfg):
    return np.sqrt(np.real(sigma_inner(a, a, cfg)))


def omega_inner(a, b, cfg):
    w = trapezoid_weights((cfg.nx, cfg.nx), (cfg.dx, cfg.dx))
    return np.sum(a * np.conj(b) * w, axis=(-2, -1))


def _grad2(u, h):
    return [np.gradient(u, h, axis=-2, edge_order=2), np.gradient(u, h, axis=-1, edge_order=2)]


def h1_inner_omega(a, b, cfg):
    ga, gb = _grad2(a, cfg.dx), _grad2(b, cfg.dx)
    return omega_inner(a, b, cfg) + sum(omega_inner(x, y, cfg) for x, y in zip(ga, gb))


def h1_inner_sigma(a, b, cfg):
    """Surrogate H^1(Sigma): values plus tangential and time differences."""
    da_s = np.gradient(a, cfg.dx, axis=-2, edge_order=2)
    db_s = np.gradient(b, cfg.dx, axis=-2, edge_order=2)
    da_t = np.gradient(a, cfg.dt, axis=-1, edge_order=2)
    db_t = np.gradient(b, cfg.dt, axis=-1, edge_order=2)
    return sigma_inner(a, b, cfg) + sigma_inner(da_s, db_s, cfg) + sigma_inner(da_t, db_t, cfg)


@dataclass
class Input:
    """One dictionary element (f, u0, u1)."""
    f: np.ndarray
    u0: np.ndarray | None = None
    u1: np.ndarray | None = None
    label: str = ""


def input_inner(x: Input, y: Input, cfg, regime):
    s = h1_inner_sigma(x.f, y.f, cfg)
    if normalize_regime(regime) == "gamma":
        z = np.zeros((cfg.nx, cfg.nx))
        s = s + h1_inner_omega(z if x.u0 is None else x.u0, z if y.u0 is None else y.u0, cfg)
        s = s + omega_inner(z if x.u1 is None else x.u1, z if y.u1 is None else y.u1, cfg)
    return s


def output_inner(a: ResponseRecord, b: ResponseRecord, cfg):
    """K-norm pairing: L2(Sigma) trace + H1(Omega) u(T) + L2(Omega) u_t(T)."""
    s = sigma_inner(a.trace.samples, b.trace.samples, cfg)
    if a.final_u is not None:
        s = s + h1_inner_omega(a.final_u, b.final_u, cfg) + omega_inner(a.final_ut, b.final_ut, cfg)
    return s


# --- dictionary ----------------------------------------------------------------

def _face_bump(s, c, w):
    z = (s - c) / w
    out = np.zeros_like(s)
    m = np.abs(z) < 1
    out[m] = np.cos(0.5 * np.pi * z[m]) ** 2
    return out


def default_dictionary(cfg: GeometryConfig, regime: str, size=32):
    """Boundary bumps x temporal sines; in regime Gamma 24 of those plus 8
    initial-data modes. Deterministic order."""
    reg = normalize_regime(regime)
    s = np.linspace(0, 1, cfg.nx)
    t = cfg.times()
    nb = size if reg != "gamma" else size - 8
    entries = []
    centres = (0.3, 0.7)
    nmodes = max(1, nb // 8)
    for k in range(1, nmodes + 1):
        tm = np.sin(k * np.pi * t / cfg.T)
        for face in range(4):
            for c in centres:
                f = np.zeros((4, cfg.nx, cfg.nt + 1))
                f[face] = _face_bump(s, c, 0.3)[:, None] * tm[None, :]
                entries.append(Input(f, label=f"face{face}-c{c}-k{k}"))
                if len(entries) == nb:
                    break
            if len(entries) == nb:
                break
        if len(entries) == nb:
            break
    if reg == "gamma":
        X = np.linspace(0, 1, cfg.nx)
        xx, yy = np.meshgrid(X, X, indexing="ij")
        zero_f = np.zeros((4, cfg.nx, cfg.nt + 1))
        for (m, n) in ((1, 1), (1, 2), (2, 1), (2, 2)):
            mode = np.sin(m * np.pi * xx) * np.sin(n * np.pi * yy)
            mode[0, :] = mode[-1, :] = mode[:, 0] = mode[:, -1] = 0
            entries.append(Input(zero_f, u0=mode, label=f"u0-{m}{n}"))
            entries.append(Input(zero_f, u1=mode, label=f"u1-{m}{n}"))
    return entries[:size]


def dictionary_id(cfg, regime, size):
    return f"bumpsine-{normalize_regime(regime)}-{size}-nx{cfg.nx}-nt{cfg.nt}"


def _stack_inputs(entries, cfg):
    K = len(entries)
    f = np.stack([e.f for e in entries])
    z = np.zeros((cfg.nx, cfg.nx))
    u0 = np.stack([z if e.u0 is None else e.u0 for e in entries])
    u1 = np.stack([z if e.u1 is None else e.u1 for e in entries])
    has_init = any(e.u0 is not None or e.u1 is not None for e in entries)
    return f, (u0 if has_init else None), (u1 if has_init else None), K


def response_differences(cfg, regime, coeffs1, coeffs2, entries, chunk=16):
    """List of per-entry ResponseRecord differences (op1 - op2)(input)."""
    out = []
    for a in range(0, len(entries), chunk):
        part = entries[a:a + chunk]
        f, u0, u1, K = _stack_inputs(part, cfg)
        r1 = response(cfg, regime, coeffs1, f, u0, u1)
        r2 = response(cfg, regime, coeffs2, f, u0, u1)
        d = r1 - r2
        for k in range(K):
            out.append(ResponseRecord(
                BoundaryTrace(d.trace.samples[k], d.trace.kind),
                None if d.final_u is None else d.final_u[k],
                None if d.final_ut is None else d.final_ut[k], d.regime))
    return out


def power_iteration(Gout, Gin, iters=50, tol=1e-10, seed=0):
    """Largest lambda of Gout c = lambda Gin c (Gin Hermitian positive definite)."""
    L = np.linalg.cholesky(Gin)
    Li = np.linalg.inv(L)
    M = Li @ Gout @ Li.conj().T
    M = 0.5 * (M + M.conj().T)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(M.shape[0]) + 0j
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(iters):
        y = M @ x
        lam_new = float(np.real(np.vdot(x, y)))
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0, it + 1
        x = y / ny
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            return lam, it + 1
        lam = lam_new
    return lam, iters


@dataclass
class DistanceReport:
    epsilon: float
    per_entry: np.ndarray
    refined: float | None
    dictionary_id: str
    lower_bound: bool = True

    def __float__(self):
        return float(self.epsilon)


def operator_distance(cfg, regime, coeffs1, coeffs2, dictionary=None, refine=False,
                      report=False, size=32, chunk=16):
    """Lower-bound estimate of ||op1 - op2|| over a finite dictionary.

    Without refinement: max over entries of ||(op1-op2) e||_K / ||e||. With
    refinement the Rayleigh quotient is maximised over the dictionary span.
    """
    if dictionary is None:
        dictionary = default_dictionary(cfg, regime, size)
    if len(dictionary) == 0:
        raise ValueError("empty dictionary")
    nin = np.array([np.sqrt(max(np.real(input_inner(e, e, cfg, regime)), 0.0)) for e in dictionary])
    if np.any(nin <= 0):
        raise ValueError("dictionary contains a zero-norm input")
    diffs = response_differences(cfg, regime, coeffs1, coeffs2, dictionary, chunk)
    nout = np.array([np.sqrt(max(np.real(output_inner(d, d, cfg)), 0.0)) for d in diffs])
    ratios = nout / nin
    eps = float(np.max(ratios))
    ref = None
    if refine:
        K = len(dictionary)
        Gin = np.zeros((K, K), dtype=complex)
        Gout = np.zeros((K, K), dtype=complex)
        for i in range(K):
            for j in range(i, K):
                Gin[i, j] = input_inner(dictionary[i], dictionary[j], cfg, regime)
                Gout[i, j] = output_inner(diffs[i], diffs[j], cfg)
                Gin[j, i] = np.conj(Gin[i, j])
                Gout[j, i] = np.conj(Gout[i, j])
        lam, _ = power_iteration(Gout, Gin)
        ref = float(np.sqrt(max(lam, 0.0)))
        eps = max(eps, ref)
    if report:
        return DistanceReport(eps, ratios, ref, dictionary_id(cfg, regime, len(dictionary)))
    return eps


# --- energy ----------------------------------------------------------------------

def discrete_energy(u_prev, u_next, u_mid, cfg):
    """||u_t||^2 + ||grad u||^2 with centred differences at the middle level."""
    ut = (u_next - u_prev) / (2 * cfg.dt)
    g = _grad2(u_mid, cfg.dx)
    return float(np.real(omega_inner(ut, ut, cfg) + sum(omega_inner(x, x, cfg) for x in g)))
