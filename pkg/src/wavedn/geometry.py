"""Space-time domain, light cones and recovery regions.

Conventions: Q = Omega x (0,T), Q_r = B(0,r/2) x (0,T), Omega an axis-aligned box.
All region tests use strict inequalities, so grid points lying exactly on a
boundary are classified outside.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryConfig:
    r: float = 1.0
    T: float = 3.0
    dim: int = 2
    omega_min: tuple = (-0.3, -0.3)
    omega_max: tuple = (0.3, 0.3)
    nx: int = 64
    nt: int = 512

    def __post_init__(self):
        object.__setattr__(self, "omega_min", tuple(float(v) for v in self.omega_min))
        object.__setattr__(self, "omega_max", tuple(float(v) for v in self.omega_max))
        if len(self.omega_min) != self.dim or len(self.omega_max) != self.dim:
            raise GeometryError("omega box does not match dim")

    # grid helpers
    @property
    def dx(self) -> float:
        # uniform spacing; the box is assumed square-celled
        return (self.omega_max[0] - self.omega_min[0]) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    def axes(self):
        return [np.linspace(lo, hi, self.nx) for lo, hi in zip(self.omega_min, self.omega_max)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def times(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(np.subtract(self.omega_max, self.omega_min)))

    def corner_norm(self) -> float:
        m = np.maximum(np.abs(self.omega_min), np.abs(self.omega_max))
        return float(np.linalg.norm(m))

    def cfl_nt(self, safety=0.9) -> int:
        """Smallest nt with dt <= safety*dx/sqrt(dim)."""
        dt_max = safety * self.dx / np.sqrt(self.dim)
        return int(np.ceil(self.T / dt_max - 1e-12))

    def with_(self, **kw) -> "GeometryConfig":
        d = asdict(self)
        d.update(kw)
        return GeometryConfig(**d)

    def refined(self, nx, nt=None) -> "GeometryConfig":
        c = self.with_(nx=nx, nt=1)
        return c.with_(nt=nt if nt is not None else c.cfl_nt())

    # JSON
    def to_dict(self):
        d = asdict(self)
        d["omega_min"] = list(self.omega_min)
        d["omega_max"] = list(self.omega_max)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        keys = ("r", "T", "dim", "omega_min", "omega_max", "nx", "nt")
        return cls(**{k: d[k] for k in keys if k in d})

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def default_config(nx=64, nt=None) -> GeometryConfig:
    return GeometryConfig().refined(nx, nt)


@dataclass
class Violation:
    name: str
    lhs: float
    rhs: float
    message: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def names(self):
        return [v.name for v in self.violations]

    def to_dict(self):
        return {"ok": self.ok, "violations": [asdict(v) for v in self.violations]}


def validate_geometry(cfg: GeometryConfig) -> ValidationReport:
    rep = ValidationReport()
    cn = cfg.corner_norm()
    if not cn < cfg.r / 2:
        rep.violations.append(Violation("Omega in B(0,r/2)", cn, cfg.r / 2,
                                        f"corner norm {cn:.4f} >= r/2 = {cfg.r / 2:.4f}"))
    if not cfg.T > 2 * cfg.diam:
        rep.violations.append(Violation("T > 2*Diam(Omega)", cfg.T, 2 * cfg.diam,
                                        f"T = {cfg.T:.4f} <= 2*Diam = {2 * cfg.diam:.4f}"))
    if not cfg.T > 2 * cfg.r:
        rep.violations.append(Violation("T > 2r", cfg.T, 2 * cfg.r,
                                        f"T = {cfg.T:.4f} <= 2r = {2 * cfg.r:.4f}"))
    if not cfg.dim >= 2:
        rep.violations.append(Violation("dim >= 2", cfg.dim, 2, f"dim = {cfg.dim} < 2"))
    if not cfg.nx >= 16:
        rep.violations.append(Violation("nx >= 16", cfg.nx, 16, f"nx = {cfg.nx} < 16"))
    if cfg.nx >= 2 and cfg.nt >= 1:
        lim = 0.9 * cfg.dx / np.sqrt(cfg.dim)
        if cfg.dt > lim * (1 + 1e-12):
            rep.violations.append(Violation("CFL dt <= 0.9*dx/sqrt(n)", cfg.dt, lim,
                                            f"dt = {cfg.dt:.3e} > {lim:.3e}; need nt >= {cfg.cfl_nt()}"))
    return rep


@dataclass(frozen=True)
class RegionFlags:
    in_shell: bool
    in_fwd: bool
    in_bwd: bool
    in_I_star: bool
    in_I_sharp: bool
    in_Q: bool


# alias: the shell is also written A_r in one place of the source analysis
SHELL_ALIASES = ("C_r", "A_r")


def region_masks(cfg: GeometryConfig, x, t, in_omega=None):
    """Vectorised region flags.

    x has shape (..., dim), t broadcasts against x[..., 0]. `in_omega` may
    replace the box membership test (e.g. a ball for classify-only checks).
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r, T = cfg.r, cfg.T
    nrm = np.linalg.norm(x, axis=-1)
    if in_omega is None:
        lo = np.asarray(cfg.omega_min)
        hi = np.asarray(cfg.omega_max)
        om = np.all((x > lo) & (x < hi), axis=-1)
    else:
        om = np.asarray(in_omega(x), dtype=bool)
    in_time = (t > 0) & (t < T)
    shell = (nrm > r / 2) & (nrm < T - r / 2)
    fwd = (nrm < t - r / 2) & (t > r / 2)
    bwd = (nrm < T - r / 2 - t) & (t < T - r / 2)
    inQ = om & in_time
    shell = np.broadcast_to(shell, np.broadcast(nrm, t).shape)
    return {
        "in_shell": shell,
        "in_fwd": fwd,
        "in_bwd": bwd,
        "in_I_star": inQ & fwd & bwd,
        "in_I_sharp": inQ & fwd,
        "in_Q": np.broadcast_to(inQ, fwd.shape),
    }


def classify_point(cfg: GeometryConfig, x, t, in_omega=None) -> RegionFlags:
    m = region_masks(cfg, np.asarray(x, dtype=float), float(t), in_omega)
    return RegionFlags(**{k: bool(v) for k, v in m.items()})


def region_mask_grid(cfg: GeometryConfig, region: str, times=None):
    """Boolean mask of shape (nx, nx, nt+1) on the solver grid.

    region is one of 'I_star', 'I_sharp', 'Q' (aliases lambda, r, gamma).
    """
    key = regime_region(region)
    X = np.stack(cfg.mesh(), axis=-1)
    ts = cfg.times() if times is None else np.asarray(times)
    return region_masks(cfg, X[..., None, :], ts[None, None, :])["in_" + key]


_REGIME_REGION = {"lambda": "I_star", "r": "I_sharp", "gamma": "Q",
                  "i_star": "I_star", "i_sharp": "I_sharp", "q": "Q"}


def regime_region(name: str) -> str:
    try:
        return _REGIME_REGION[name.lower()]
    except KeyError:
        raise ValueError(f"unknown regime/region {name!r}") from None


def normalize_regime(name: str) -> str:
    n = name.lower()
    if n in ("lambda", "l"):
        return "lambda"
    if n == "r":
        return "R"
    if n in ("gamma", "g"):
        return "gamma"
    raise ValueError(f"unknown regime {name!r}")
