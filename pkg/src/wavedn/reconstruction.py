"""Inverse pipeline: ray data (quadrature or GO probes), Fourier inversion of
the divergence-free potential, then the scalar potential, then (V, p)."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import special
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .fields import (Grid, ScalarField, VectorField, MagneticPair, CoefficientPair,
                     divergence, trapezoid_weights)
from .geometry import GeometryConfig, normalize_regime, regime_region, region_masks
from .go_probe import GOWave, ProbeSpec, check_probe_support, psi
from .ray_transform import (RayDatum, ray_transform, slice_direction, beta_hat, in_E,
                            CurlSpectrum)
from .wave_solver import response, _sigma_weights


class CoverageError(ValueError):
    def __init__(self, missing):
        self.missing = missing
        super().__init__(f"{len(missing)} slice directions have no ray data")


# --- parameters and schedules ------------------------------------------------

@dataclass
class ReconstructionParams:
    alpha: float = 8.0
    sigma: float = 40.0
    h: float = 0.4
    omega_grid: list | None = None
    mode: str = "direct"
    regime: str = "lambda"
    delta: float = 3.0
    beta: float = 1.0
    gamma_ac: float = 0.5
    mu_ac: float = 0.5
    N_ac: float = 1.0
    schedule: bool = False
    dy: float = 0.2          # probe lattice spacing
    lam: float = 0.05        # Tikhonov weight of the mollifier deconvolution
    chunk: int = 16          # combs per batched solve

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.omega_grid is not None and len(self.omega_grid) == 0:
            raise ValueError("omega_grid must be nonempty")
        if self.mode not in ("direct", "probe"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.regime = normalize_regime(self.regime)
        for k in ("delta", "beta", "gamma_ac", "mu_ac", "N_ac"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")

    def to_dict(self):
        return asdict(self)


def sigma_schedule(alpha, n=2, gamma_ac=0.5, mu_ac=0.5):
    """sigma(alpha) = alpha^{(n+3)/(2 mu gamma)} exp(alpha (1-mu)/(mu gamma))."""
    mg = mu_ac * gamma_ac
    return alpha ** ((n + 3) / (2 * mg)) * np.exp(alpha * (1 - mu_ac) / mg)


def alpha_rule(eps, N=1.0, mu2=1.0):
    """alpha = (1/N) log(|log eps|^mu2)."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return np.log(abs(np.log(eps)) ** mu2) / N


def apply_schedule(params: ReconstructionParams, eps, n=2):
    """Copy of params with alpha from the measured eps and sigma = sigma(alpha)."""
    if not params.schedule:
        return params
    a = alpha_rule(eps, params.N_ac, params.mu_ac)
    d = params.to_dict()
    d.update(alpha=a, sigma=float(sigma_schedule(a, n, params.gamma_ac, params.mu_ac)))
    return ReconstructionParams(**d)


# --- context -----------------------------------------------------------------

def _dot(A: VectorField, B: VectorField):
    return sum(a.values * b.values for a, b in zip(A, B))


@dataclass
class ReconstructionContext:
    coeffs1: MagneticPair
    coeffs2: MagneticPair
    A_diff: VectorField
    q_diff: ScalarField
    V_A: ScalarField
    div_max: float

    @classmethod
    def build(cls, mp1: MagneticPair, mp2: MagneticPair, div_tol=1e-8):
        A = mp1.A - mp2.A
        q = ScalarField(mp1.q.grid, mp1.q.values - mp2.q.values)
        VA = ScalarField(mp1.A.grid, _dot(mp2.A, mp2.A) - _dot(mp1.A, mp1.A))
        dm = float(np.max(np.abs(divergence(A).values)))
        if dm > div_tol * max(1.0, A.max_abs()):
            warnings.warn(f"div of the potential difference is {dm:.2e} (hypothesis expects 0)")
        return cls(mp1, mp2, A, q, VA, dm)

    @property
    def grid(self):
        return self.A_diff.grid


def region_time_range(cfg: GeometryConfig, regime):
    reg = normalize_regime(regime)
    if reg == "lambda":
        return cfg.r / 2, cfg.T - cfg.r / 2
    if reg == "R":
        return cfg.r / 2, cfg.T
    return 0.0, cfg.T


# --- mollifier ---------------------------------------------------------------

_GL = np.polynomial.legendre.leggauss(200)


def mollifier_ft(k, h, n=2):
    """Fourier transform of phi_h^2 (radial, unit mass at k=0) at |k|."""
    if n != 2:
        raise NotImplementedError("planar mollifier only")
    k = np.asarray(k, float)
    u = 0.5 * (_GL[0] + 1)
    w = 0.5 * _GL[1]
    p2 = psi(np.stack([u, np.zeros_like(u)], -1)) ** 2
    kk = np.abs(k).reshape(-1, 1)
    out = 2 * np.pi * np.sum(w * u * p2 * special.j0(kk * h * u), axis=1)
    return out.reshape(k.shape)


def _tikhonov(F, K, lam):
    return F * K / (K * K + lam * lam)


def deconvolve_line(values, spacing, h, lam=0.05, pad=4):
    """Undo mollification along a uniform line of samples (marginal kernel)."""
    v = np.asarray(values)
    N = pad * len(v)
    k = 2 * np.pi * np.fft.fftfreq(N, spacing)
    F = np.fft.fft(v, N)
    return np.fft.ifft(_tikhonov(F, mollifier_ft(k, h), lam))[:len(v)]


def deconvolve_plane(values, spacing, h, lam=0.05, pad=2):
    v = np.asarray(values)
    n0, n1 = v.shape
    N0, N1 = pad * n0, pad * n1
    k0 = 2 * np.pi * np.fft.fftfreq(N0, spacing[0])
    k1 = 2 * np.pi * np.fft.fftfreq(N1, spacing[1])
    K = mollifier_ft(np.hypot(k0[:, None], k1[None, :]), h)
    F = np.fft.fft2(v, (N0, N1))
    return np.fft.ifft2(_tikhonov(F, K, lam))[:n0, :n1]


# --- ray-data lattices -------------------------------------------------------

@dataclass
class RayLattice:
    """Ray data for one direction on y = origin + a*da*e_par + b*db*e_perp."""
    omega: np.ndarray
    origin: np.ndarray
    da: float
    db: float
    na: int
    nb: int
    values: np.ndarray | None = None        # (na, nb) complex ray data
    valid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def e_par(self):
        return np.asarray(self.omega, float)

    @property
    def e_perp(self):
        o = self.e_par
        return np.array([-o[1], o[0]])

    def points(self):
        a = np.arange(self.na) * self.da
        b = np.arange(self.nb) * self.db
        A, B = np.meshgrid(a, b, indexing="ij")
        return (self.origin[None, None, :] + A[..., None] * self.e_par
                + B[..., None] * self.e_perp).reshape(-1, 2)

    def spatial_ft(self, xi):
        """int P(y) exp(-i y.xi) dy by the lattice Riemann sum."""
        if self.values is None:
            raise ValueError("lattice has no values")
        Y = self.points()
        v = self.values.reshape(-1)
        if self.valid is not None:
            v = np.where(self.valid.reshape(-1), v, 0)
        xi = np.atleast_2d(xi)
        return (np.exp(-1j * (xi @ Y.T)) @ v) * self.da * self.db


def make_lattice(omega, lo, hi, t_range, dy, pad=0.0):
    """Lattice covering all rays through the space box [lo, hi] x t_range."""
    om = np.asarray(omega, float)
    op = np.array([-om[1], om[0]])
    corners = np.array([[x, y] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])])
    pa = corners @ om
    pb = corners @ op
    a0 = pa.min() + t_range[0] - pad
    a1 = pa.max() + t_range[1] + pad
    b0 = pb.min() - pad
    b1 = pb.max() + pad
    na = int(np.ceil((a1 - a0) / dy)) + 1
    nb = int(np.ceil((b1 - b0) / dy)) + 1
    return RayLattice(om, a0 * om + b0 * op, dy, dy, na, nb)


def line_points(center, omega, n, spacing):
    """n points across omega, centred at `center`."""
    om = np.asarray(omega, float)
    op = np.array([-om[1], om[0]])
    u = (np.arange(n) - (n - 1) / 2) * spacing
    return np.asarray(center, float)[None, :] + u[:, None] * op[None, :]


# --- direct mode ---------------------------------------------------------------

def _dir_field(A: VectorField, omega):
    return ScalarField(A.grid, sum(w * c.values for w, c in zip(omega, A)))


def direct_ray_A(ctx: ReconstructionContext, ys, omega):
    return ray_transform(_dir_field(ctx.A_diff, omega), np.atleast_2d(ys), omega)


def direct_ray_q(ctx: ReconstructionContext, ys, omega):
    return ray_transform(ctx.q_diff, np.atleast_2d(ys), omega)


# --- probe mode ----------------------------------------------------------------

def make_combs(ys, h, valid=None):
    """First-fit grouping of points into combs of disjoint bumps (spacing >= 2h)."""
    ys = np.atleast_2d(ys)
    idx = np.arange(len(ys)) if valid is None else np.flatnonzero(valid)
    combs: list[list[int]] = []
    for i in idx:
        for c in combs:
            d = np.linalg.norm(ys[c] - ys[i], axis=1)
            if d.min() >= 2 * h - 1e-12:
                c.append(i)
                break
        else:
            combs.append([i])
    return combs


@dataclass
class ProbePairings:
    ys: np.ndarray
    S: np.ndarray               # boundary (+ final data) pairings
    admissible: np.ndarray
    sigma: float
    h: float
    omega: np.ndarray
    n_solves: int = 0

    def b_minus_1(self):
        """Leading-order estimate of int phi^2 (b_A(.,T) - 1)."""
        return np.where(self.admissible, (self.S / (-2j * self.sigma)).real, 0.0)


def admissible_points(cfg, ys, omega, sigma, h, regime):
    ok = np.zeros(len(ys), bool)
    for i, y in enumerate(ys):
        ok[i] = check_probe_support(cfg, ProbeSpec(tuple(omega), sigma, tuple(y), h), regime).ok
    return ok


def probe_pairings(ctx: ReconstructionContext, cfg: GeometryConfig, omega, ys, sigma, h,
                   regime, chunk=16, dz=None, media=None, cache=None) -> ProbePairings:
    """S(y) = -<(op1 - op2) f_y, v_y>_Sigma + final-data terms, for every admissible y.

    f_y is the trace of the forward GO probe in medium 2, v_y the adjoint GO
    probe in medium 1. Disjoint bumps share one solve (a comb) and are
    separated afterwards by their support labels. `media` replaces the pair
    (medium 1, medium 2) whose responses are differenced. `cache` (a dict)
    stores the first medium's responses restricted to the probe supports; a
    filled cache is reused so only the second medium is solved.
    """
    reg = normalize_regime(regime)
    om = np.asarray(omega, float)
    ys = np.atleast_2d(np.asarray(ys, float))
    ok = admissible_points(cfg, ys, om, sigma, h, reg)
    S = np.zeros(len(ys), complex)
    combs = make_combs(ys, h, ok)
    mp1, mp2 = ctx.coeffs1, ctx.coeffs2
    ma, mb = media if media is not None else (mp1, mp2)
    reuse = cache is not None and len(cache) > 0
    wS = np.broadcast_to(_sigma_weights(cfg)[None], (4, cfg.nx, cfg.nt + 1)).reshape(-1)
    wO = trapezoid_weights((cfg.nx, cfg.nx), (cfg.dx, cfg.dx)).reshape(-1)
    n = cfg.nt
    nsolve = 0
    for a in range(0, len(combs), chunk):
        part = combs[a:a + chunk]
        us = [GOWave(cfg, om, sigma, h, ys[c], mp2.A, dz=dz) for c in part]
        f = np.stack([u.boundary_data() for u in us])
        u0 = u1 = None
        if reg == "gamma":
            u0 = np.stack([u.level(0) for u in us])
            u1 = np.stack([u.dt_level(0) for u in us])
        rb = response(cfg, reg, mb, f, u0, u1)
        ra = None if reuse else response(cfg, reg, ma, f, u0, u1)
        nsolve += len(part) * (1 if reuse else 2)
        for kk, c in enumerate(part):
            key = a + kk
            if reuse:
                e = cache[key]
            else:
                v = GOWave(cfg, om, sigma, h, ys[c], mp1.A, conj_A=True, dz=dz)
                idx, vals, lab = v.sigma_samples()
                e = {"idx": idx, "w": -np.conj(vals) * wS[idx], "lab": lab,
                     "a": ra.trace.samples[kk].reshape(-1)[idx]}
                if ra.final_u is not None:
                    labT = v.level_labels(n).reshape(-1)
                    jT = np.flatnonzero(labT >= 0)
                    e.update(jT=jT, labT=labT[jT],
                             vT=np.conj(v.level(n)).reshape(-1)[jT] * wO[jT],
                             vtT=np.conj(v.dt_level(n)).reshape(-1)[jT] * wO[jT],
                             aT=ra.final_u[kk].reshape(-1)[jT],
                             atT=ra.final_ut[kk].reshape(-1)[jT])
                if cache is not None:
                    cache[key] = e
            db = e["a"] - rb.trace.samples[kk].reshape(-1)[e["idx"]]
            S[c] += _label_sum(e["lab"], db * e["w"], len(c))
            if "jT" in e:
                jT = e["jT"]
                du = e["aT"] - rb.final_u[kk].reshape(-1)[jT]
                dut = e["atT"] - rb.final_ut[kk].reshape(-1)[jT]
                S[c] += _label_sum(e["labT"], dut * e["vT"] - du * e["vtT"], len(c))
    return ProbePairings(ys, S, ok, float(sigma), float(h), om, nsolve)


def _label_sum(lab, vals, n):
    lab = lab.reshape(-1) + 1
    v = vals.reshape(-1)
    re = np.bincount(lab, v.real, minlength=n + 1)
    im = np.bincount(lab, v.imag, minlength=n + 1)
    return (re + 1j * im)[1:n + 1]


def log_branch(bm1):
    """value = i log(1 + bm1) on the real-positive branch; invalid where 1 + bm1 <= 0."""
    b = 1.0 + np.asarray(bm1, float)
    ok = b > 0
    val = np.where(ok, 1j * np.log(np.where(ok, b, 1.0)), 0.0)
    return val, ok


def _error_tag(sigma, h, eps=None):
    tag = {"sigma": float(sigma), "h": float(h), "go_bound": 1.0 / sigma}
    if eps is not None:
        tag["bound"] = float(sigma ** 2 * eps + 1.0 / sigma)
    return tag


def estimate_ray_A(ctx: ReconstructionContext, params: ReconstructionParams, y, omega,
                   cfg: GeometryConfig | None = None, eps=None) -> RayDatum:
    """Ray datum of omega.A_diff at y (probe mode: mollified leading-order estimate)."""
    y = np.asarray(y, float)
    om = np.asarray(omega, float)
    if params.mode == "direct":
        return RayDatum(tuple(y), tuple(om), complex(direct_ray_A(ctx, y, om)[0]),
                        True, {"mode": "direct"})
    if cfg is None:
        raise ValueError("probe mode needs the geometry")
    rep = check_probe_support(cfg, ProbeSpec(tuple(om), params.sigma, tuple(y), params.h),
                              params.regime)
    if not rep.ok:
        raise ValueError("probe inadmissible: " + "; ".join(rep.names()))
    pp = probe_pairings(ctx, cfg, om, y[None], params.sigma, params.h, params.regime)
    val, ok = log_branch(pp.b_minus_1())
    tag = _error_tag(params.sigma, params.h, eps)
    tag.update(mode="probe", b_estimate=float(1 + pp.b_minus_1()[0]))
    return RayDatum(tuple(y), tuple(om), complex(val[0]), bool(ok[0]), tag)


def probe_line_A(ctx, cfg, params: ReconstructionParams, omega, center, n=16, spacing=0.1,
                 deconvolve=True, margin=None):
    """Probe ray data of omega.A_diff on n points across omega.

    The line is extended by `margin` on both sides (default h + 0.2) with
    auxiliary probes so the mollifier can be undone near the ends. Returns
    (ys, raw values, deconvolved values, pairings) on the n requested points;
    raw values are the mollified estimates.
    """
    margin = params.h + 0.2 if margin is None else margin
    ext = int(np.ceil(margin / spacing))
    ys_all = line_points(center, omega, n + 2 * ext, spacing)
    pp = probe_pairings(ctx, cfg, omega, ys_all, params.sigma, params.h, params.regime,
                        chunk=params.chunk)
    bm1 = pp.b_minus_1()
    sl = slice(ext, ext + n)
    raw, _ = log_branch(bm1[sl])
    dec = None
    if deconvolve:
        dec, _ = log_branch(deconvolve_line(bm1, spacing, params.h, params.lam).real[sl])
    return ys_all[sl], raw, dec, pp


def resample(f: ScalarField, g: Grid) -> ScalarField:
    """Trilinear resampling of a space-time field onto grid g (zero outside)."""
    fg = f.grid
    if fg == g:
        return f
    axes = tuple(fg.axes()) + (fg.times(),)
    ip = RegularGridInterpolator(axes, f.values, bounds_error=False, fill_value=0.0)
    X0, X1 = g.mesh()
    T = g.times()
    P = np.stack(np.broadcast_arrays(X0[..., None], X1[..., None], T[None, None, :]), -1)
    return ScalarField(g, ip(P.reshape(-1, 3)).reshape(P.shape[:-1]))


def model_medium(ctx: ReconstructionContext, A_rec: VectorField, cfg: GeometryConfig,
                 regime=None) -> MagneticPair:
    """Medium 2 with the recovered potential difference added (q of medium 2).

    With regime given, A_rec is cut to the regime's region where the
    difference lives by hypothesis.
    """
    g = ctx.grid
    comps = [resample(c, g).values for c in A_rec]
    if regime is not None:
        X0, X1 = g.mesh()
        T = g.times()
        P = np.stack(np.broadcast_arrays(X0[..., None], X1[..., None], T[None, None, :]), -1)
        m = region_masks(cfg, P[..., :2], P[..., 2])[_region_key(regime)]
        comps = [np.where(m, c, 0) for c in comps]
    A2 = ctx.coeffs2.A
    A = VectorField([ScalarField(g, a.values + c) for a, c in zip(A2, comps)])
    return MagneticPair(A, ctx.coeffs2.q)


def q_estimate(S):
    """Mollified ray datum of q_diff from the model-referenced pairing.

    With the model medium carrying A_rec, the pairing is -int phi^2 q up to
    terms in A_diff - A_rec. For a purely imaginary potential difference the
    sigma-weighted one among these is imaginary, so the real part keeps q
    without the sigma-amplified residual.
    """
    return np.real(-np.asarray(S))


def estimate_ray_q(ctx: ReconstructionContext, params: ReconstructionParams, A_rec, y, omega,
                   cfg: GeometryConfig | None = None, eps=None) -> RayDatum:
    """Ray datum of q_diff at y. Probe mode: pairing of medium 1 against the
    model medium (medium 2 plus A_rec)."""
    y = np.asarray(y, float)
    om = np.asarray(omega, float)
    if params.mode == "direct":
        return RayDatum(tuple(y), tuple(om), complex(direct_ray_q(ctx, y, om)[0]),
                        True, {"mode": "direct"})
    if cfg is None:
        raise ValueError("probe mode needs the geometry")
    rep = check_probe_support(cfg, ProbeSpec(tuple(om), params.sigma, tuple(y), params.h),
                              params.regime)
    if not rep.ok:
        raise ValueError("probe inadmissible: " + "; ".join(rep.names()))
    model = model_medium(ctx, A_rec, cfg) if A_rec is not None else ctx.coeffs2
    pp = probe_pairings(ctx, cfg, om, y[None], params.sigma, params.h, params.regime,
                        media=(ctx.coeffs1, model))
    tag = _error_tag(params.sigma, params.h, eps)
    tag.update(mode="probe")
    return RayDatum(tuple(y), tuple(om), complex(q_estimate(pp.S)[0]), True, tag)


# --- Fourier box ----------------------------------------------------------------

@dataclass(frozen=True)
class ReconBox:
    """Periodic space-time sampling box for the Fourier inversion."""
    lo: tuple
    L: float
    N: int
    t0: float
    Lt: float
    Nt: int

    @classmethod
    def for_config(cls, cfg: GeometryConfig, N=32, Nt=64, pad=2.0):
        c = 0.5 * (np.asarray(cfg.omega_min) + np.asarray(cfg.omega_max))
        side = pad * float(np.max(np.asarray(cfg.omega_max) - np.asarray(cfg.omega_min)))
        Lt = pad * cfg.T
        return cls(tuple(c - side / 2), side, N, 0.5 * cfg.T - Lt / 2, Lt, Nt)

    @property
    def dx(self):
        return self.L / self.N

    @property
    def dt(self):
        return self.Lt / self.Nt

    def axes(self):
        return [self.lo[i] + self.dx * np.arange(self.N) for i in range(2)]

    def times(self):
        return self.t0 + self.dt * np.arange(self.Nt)

    def grid(self):
        return Grid(self.lo, tuple(l + (self.N - 1) * self.dx for l in self.lo), (self.N, self.N),
                    self.t0, self.t0 + (self.Nt - 1) * self.dt, self.Nt - 1)

    def points(self):
        X = np.meshgrid(*self.axes(), self.times(), indexing="ij")
        return X[0], X[1], X[2]

    def freqs(self):
        k = 2 * np.pi * np.fft.fftfreq(self.N, self.dx)
        w = 2 * np.pi * np.fft.fftfreq(self.Nt, self.dt)
        return k, k, w

    def fft(self, vals):
        k0, k1, w = self.freqs()
        ph = np.exp(-1j * (self.lo[0] * k0[:, None, None] + self.lo[1] * k1[None, :, None]
                           + self.t0 * w[None, None, :]))
        return np.fft.fftn(vals) * ph * self.dx ** 2 * self.dt

    def ifft(self, fhat):
        k0, k1, w = self.freqs()
        ph = np.exp(1j * (self.lo[0] * k0[:, None, None] + self.lo[1] * k1[None, :, None]
                          + self.t0 * w[None, None, :]))
        return np.fft.ifftn(fhat * ph) / (self.dx ** 2 * self.dt)

    def sample(self, f: ScalarField):
        X0, X1, Tt = self.points()
        g = f.grid
        lo = (g.lo[0], g.lo[1], g.t0)
        d = (g.spacing[0], g.spacing[1], g.dt if g.nt > 0 else 1.0)
        return kernels.interp3_np(f.values, X0, X1, Tt, lo, d)

    def to_dict(self):
        return {"lo": list(self.lo), "L": self.L, "N": self.N, "t0": self.t0, "Lt": self.Lt,
                "Nt": self.Nt}


def visible_mask(box: ReconBox, alpha, include_zero=False):
    k0, k1, w = box.freqs()
    K0, K1, W = np.meshgrid(k0, k1, w, indexing="ij")
    nx = np.hypot(K0, K1)
    m = (np.abs(W) <= 0.5 * nx + 1e-12) & (nx ** 2 + W ** 2 <= alpha ** 2)
    if not include_zero:
        m &= nx > 0
    # drop Nyquist planes, which have no conjugate partner
    for ax, n in ((0, box.N), (1, box.N), (2, box.Nt)):
        if n % 2 == 0:
            sl = [slice(None)] * 3
            sl[ax] = n // 2
            m[tuple(sl)] = False
    return m


def e_filter(box: ReconBox, vals, alpha, include_zero=False):
    """Projection of box samples onto the frequencies in E within B(0, alpha)."""
    return box.ifft(box.fft(vals) * visible_mask(box, alpha, include_zero))


def _half(idx, shape):
    """Canonical representative of a frequency index and its mirror."""
    mir = tuple((-i) % n for i, n in zip(idx, shape))
    return idx <= mir, mir


def slice_targets(box: ReconBox, alpha, parity=None, include_zero=False):
    """(index, mirror index, xi, tau, omega) for every visible target; with a
    parity only one of each conjugate pair is kept."""
    m = visible_mask(box, alpha, include_zero)
    k0, k1, w = box.freqs()
    shape = m.shape
    out = []
    for idx in zip(*np.nonzero(m)):
        idx = tuple(int(i) for i in idx)
        first, mir = _half(idx, shape)
        if parity is not None and not first:
            continue
        xi = np.array([k0[idx[0]], k1[idx[1]]])
        tau = float(w[idx[2]])
        om = slice_direction(xi, tau, 0, 1) if np.any(xi) else np.array([1.0, 0.0])
        out.append((idx, mir, xi, tau, om))
    return out


def required_directions(box: ReconBox, alpha, parity=None, decimals=9):
    """Distinct unit vectors needed by the targets, rounded for lookup."""
    dirs = {}
    for _, _, _, _, om in slice_targets(box, alpha, parity, include_zero=True):
        dirs.setdefault(_key(om, decimals), om)
    return list(dirs.values())


def _key(om, decimals=9):
    return tuple(np.round(np.asarray(om, float), decimals) + 0.0)


def _lookup(lattices, decimals=9):
    return {_key(L.omega, decimals): L for L in lattices}


def _parity_fill(hat, idx, mir, val, parity):
    hat[idx] = val
    if parity == "real":
        hat[mir] = np.conj(val)
    elif parity == "imag":
        hat[mir] = -np.conj(val)


def div_free_from_beta(xi, b):
    """a^_k = sum_j xi_j beta^_{j,k} / |xi|^2 in 2-D (exact when xi.a^ = 0)."""
    xi = np.asarray(xi, float)
    n2 = np.sum(xi * xi, axis=-1)
    return -xi[..., 1] * b / n2, xi[..., 0] * b / n2


def invert_A(lattices, params: ReconstructionParams, box: ReconBox, parity="imag"):
    """Divergence-free potential from ray data of omega.A on the needed directions.

    Returns (A_rec VectorField on the box grid, CurlSpectrum).
    """
    table = _lookup(lattices)
    targets = slice_targets(box, params.alpha, parity)
    missing = [om for (_, _, _, _, om) in targets if _key(om) not in table]
    if missing:
        raise CoverageError(missing)
    shape = (box.N, box.N, box.Nt)
    a0 = np.zeros(shape, complex)
    a1 = np.zeros(shape, complex)
    xs, ts, bs = [], [], []
    for idx, mir, xi, tau, om in targets:
        lat = table[_key(om)]
        s = lat.spatial_ft(xi)[0]
        b = beta_hat(s, xi, tau, 0, 1)
        h0, h1 = div_free_from_beta(xi, b)
        _parity_fill(a0, idx, mir, h0, parity)
        _parity_fill(a1, idx, mir, h1, parity)
        xs.append(xi)
        ts.append(tau)
        bs.append(b)
    g = box.grid()
    A = VectorField([ScalarField(g, box.ifft(a0)), ScalarField(g, box.ifft(a1))])
    spec = CurlSpectrum(np.array(xs).reshape(-1, 2), np.array(ts), np.array(bs), params.alpha)
    return A, spec


def invert_q(lattices, params: ReconstructionParams, box: ReconBox, parity="real"):
    """Scalar potential from its ray data (scalar slice theorem)."""
    table = _lookup(lattices)
    targets = slice_targets(box, params.alpha, parity, include_zero=True)
    missing = [om for (_, _, _, _, om) in targets if _key(om) not in table]
    if missing:
        raise CoverageError(missing)
    qh = np.zeros((box.N, box.N, box.Nt), complex)
    for idx, mir, xi, tau, om in targets:
        _parity_fill(qh, idx, mir, table[_key(om)].spatial_ft(xi)[0], parity)
    return ScalarField(box.grid(), box.ifft(qh))


# --- lift ----------------------------------------------------------------------

def recover_Vp(A_rec: VectorField, q_rec: ScalarField, V_background: VectorField | None = None,
               tol=1e-6) -> CoefficientPair:
    """V = -2i A, p = q - ((V2+V)^2 - V2^2)/4 + div V / 2 (V2 = 0 by default)."""
    scale = max(A_rec.max_abs(), 1e-300)
    re = max(float(np.max(np.abs(c.values.real))) for c in A_rec)
    if re > tol * max(scale, 1.0):
        warnings.warn(f"A_rec has a real part of size {re:.2e}; discarded in the lift")
    g = A_rec.grid
    V = VectorField([ScalarField(g, (-2j * c.values).real) for c in A_rec])
    VV = sum(c.values * c.values for c in V)
    if V_background is not None:
        VV = VV + 2 * sum(a.values * b.values for a, b in zip(V_background, V))
    p = np.real(q_rec.values) - VV / 4 + divergence(V).values.real / 2
    return CoefficientPair(V, ScalarField(g, p))


def region_mask_box(cfg: GeometryConfig, box: ReconBox, regime):
    X0, X1, Tt = box.points()
    key = "in_" + regime_region(normalize_regime(regime) if regime != "R" else "r")
    return region_masks(cfg, np.stack([X0, X1], -1), Tt)[key]


def _region_key(regime):
    reg = normalize_regime(regime)
    return {"lambda": "in_I_star", "R": "in_I_sharp", "gamma": "in_Q"}[reg]


def region_linf(cfg, box, regime, a, b):
    X0, X1, Tt = box.points()
    m = region_masks(cfg, np.stack([X0, X1], -1), Tt)[_region_key(regime)]
    if not np.any(m):
        return 0.0
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))[m]))


def region_l2_rel(cfg, box, regime, a, b):
    X0, X1, Tt = box.points()
    m = region_masks(cfg, np.stack([X0, X1], -1), Tt)[_region_key(regime)]
    den = np.linalg.norm(np.asarray(b)[m])
    return float(np.linalg.norm((np.asarray(a) - np.asarray(b))[m]) / max(den, 1e-300))


# --- full pipeline ---------------------------------------------------------------

@dataclass
class ReconstructionResult:
    A_rec: VectorField
    q_rec: ScalarField
    V_rec: VectorField
    p_rec: ScalarField
    errors: dict
    counts: dict
    params: dict
    timings: dict
    spectrum: CurlSpectrum | None = None
    lattices: list | None = None


def acquire_direct(ctx, cfg, params, box, dirs, which="A"):
    """Quadrature ray data on lattices covering the data support."""
    g = ctx.grid
    lats = []
    for om in dirs:
        lat = make_lattice(om, g.lo, g.hi, (g.t0, g.t1), params.dy)
        Y = lat.points()
        vals = direct_ray_A(ctx, Y, om) if which == "A" else direct_ray_q(ctx, Y, om)
        lat.values = vals.reshape(lat.na, lat.nb)
        lat.valid = np.ones_like(lat.values, bool)
        lats.append(lat)
    return lats


def _a_values(lat, pp, params):
    bm1 = deconvolve_plane(pp.b_minus_1().reshape(lat.na, lat.nb), (lat.da, lat.db),
                           params.h, params.lam).real
    return log_branch(bm1)


def acquire_probe(ctx, cfg, params, dirs):
    """Probe pairings on lattices through Omega x (regime time range)."""
    lats = []
    tr = region_time_range(cfg, params.regime)
    for om in dirs:
        lat = make_lattice(om, cfg.omega_min, cfg.omega_max, tr, params.dy, pad=params.h)
        cache = {}
        pp = probe_pairings(ctx, cfg, om, lat.points(), params.sigma, params.h, params.regime,
                            chunk=params.chunk, cache=cache)
        lat.meta["pairings"] = pp
        lat.meta["cache"] = cache
        lat.meta["solves"] = pp.n_solves
        lat.valid = pp.admissible.reshape(lat.na, lat.nb)
        lat.values, ok = _a_values(lat, pp, params)
        lat.meta["branch_fail"] = int(np.sum(~ok))
        lats.append(lat)
    return lats


def model_pass(lats, A_rec, ctx, cfg, params):
    """Pair medium 1 against the model medium on the A-stage lattices.

    Returns (residual lattices for A_diff - A_rec, q lattices). The cached
    medium-1 traces make this one solve per comb.
    """
    model = model_medium(ctx, A_rec, cfg, params.regime)
    res, qs = [], []
    for lat in lats:
        pp = lat.meta["pairings"]
        pq = probe_pairings(ctx, cfg, lat.omega, pp.ys, params.sigma, params.h, params.regime,
                            chunk=params.chunk, media=(ctx.coeffs1, model),
                            cache=lat.meta.get("cache"))
        lat.meta["solves"] += pq.n_solves
        vals, ok = _a_values(lat, pq, params)
        lat.meta["branch_fail"] += int(np.sum(~ok))
        res.append(RayLattice(lat.omega, lat.origin, lat.da, lat.db, lat.na, lat.nb,
                              vals, lat.valid, {}))
        raw = np.where(pp.admissible, q_estimate(pq.S), 0.0)
        qv = deconvolve_plane(raw.reshape(lat.na, lat.nb), (lat.da, lat.db), params.h,
                              params.lam).real
        qs.append(RayLattice(lat.omega, lat.origin, lat.da, lat.db, lat.na, lat.nb,
                             qv, lat.valid, {}))
    return res, qs


def _imag_part(A: VectorField):
    return VectorField([ScalarField(c.grid, 1j * c.values.imag) for c in A])


def truth_on_box(ctx: ReconstructionContext, box: ReconBox, alpha):
    A = [box.sample(c) for c in ctx.A_diff]
    q = box.sample(ctx.q_diff)
    Af = [e_filter(box, a, alpha) for a in A]
    qf = e_filter(box, q, alpha, include_zero=True)
    return A, q, Af, qf


def reconstruct(ctx: ReconstructionContext, cfg: GeometryConfig, params: ReconstructionParams,
                box: ReconBox | None = None, eps=None, V_background=None) -> ReconstructionResult:
    """A stage, q stage and lift; errors against the E-filtered truth on the
    regime's region."""
    params = apply_schedule(params, eps) if (params.schedule and eps) else params
    box = box or ReconBox.for_config(cfg)
    t0 = time.perf_counter()
    dirs = required_directions(box, params.alpha, "imag")
    if params.mode == "direct":
        latA = acquire_direct(ctx, cfg, params, box, dirs, "A")
    else:
        latA = acquire_probe(ctx, cfg, params, dirs)
    t1 = time.perf_counter()
    A_rec, spec = invert_A(latA, params, box, "imag")
    A_rec = _imag_part(A_rec)
    if params.mode == "direct":
        latQ = acquire_direct(ctx, cfg, params, box, dirs, "q")
    else:
        _, latQ = model_pass(latA, A_rec, ctx, cfg, params)
    q_rec = invert_q(latQ, params, box, "real")
    q_rec = ScalarField(q_rec.grid, q_rec.values.real)
    t2 = time.perf_counter()
    if V_background is not None:
        V_background = VectorField([resample(c, box.grid()) for c in V_background])
    lift = recover_Vp(A_rec, q_rec, V_background)
    # truth
    A, q, Af, qf = truth_on_box(ctx, box, params.alpha)
    g = box.grid()
    truth_lift = recover_Vp(VectorField([ScalarField(g, 1j * a.imag) for a in Af]),
                            ScalarField(g, qf.real), V_background)
    reg = params.regime
    errA = max(region_linf(cfg, box, reg, a.values, b) for a, b in zip(A_rec, Af))
    errQ = region_linf(cfg, box, reg, q_rec.values, qf.real)
    errV = max(region_linf(cfg, box, reg, a.values, b.values)
               for a, b in zip(lift.V, truth_lift.V))
    errP = region_linf(cfg, box, reg, lift.p.values, truth_lift.p.values)
    relA = float(np.sqrt(sum(region_l2_rel(cfg, box, reg, a.values, b) ** 2
                             for a, b in zip(A_rec, Af)) / 2))
    relQ = region_l2_rel(cfg, box, reg, q_rec.values, qf.real)
    normV = max(region_linf(cfg, box, reg, b.values, 0) for b in truth_lift.V)
    normP = region_linf(cfg, box, reg, truth_lift.p.values, 0)
    counts = {"directions": len(dirs), "targets": len(spec.tau)}
    if params.mode == "probe":
        counts["inadmissible"] = int(sum(np.sum(~L.valid) for L in latA))
        counts["branch_fail"] = int(sum(L.meta.get("branch_fail", 0) for L in latA))
        counts["solves"] = int(sum(L.meta["solves"] for L in latA))
        counts["points"] = int(sum(L.valid.size for L in latA))
    return ReconstructionResult(
        A_rec, q_rec, lift.V, lift.p,
        {"errA": errA, "errQ": errQ, "errV": errV, "errP": errP, "relA": relA, "relQ": relQ,
         "normV": normV, "normP": normP},
        counts, params.to_dict(),
        {"acquire": t1 - t0, "invert": t2 - t1, "total": time.perf_counter() - t0},
        spec, latA)
