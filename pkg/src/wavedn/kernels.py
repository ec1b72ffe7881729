"""Hot loops: leapfrog update and line integrals through a space-time grid.

Each kernel has a numba version and a numpy version with identical
semantics. `leapfrog`, `line_integrals` and `cumulative_line_integrals`
dispatch on WAVEDN_DISABLE_NUMBA (see _accel).
"""
import numpy as np

from ._accel import njit, USE_NUMBA


# --- leapfrog -----------------------------------------------------------------

@njit
def _leapfrog_nb(up, uc, un, B0, B1, C, F, dt2, idx2, i2dx, lower, has_src):
    K, nx, ny = uc.shape
    for k in range(K):
        for i in range(1, nx - 1):
            for j in range(1, ny - 1):
                u = uc[k, i, j]
                r = (uc[k, i + 1, j] + uc[k, i - 1, j] + uc[k, i, j + 1]
                     + uc[k, i, j - 1] - 4.0 * u) * idx2
                if lower:
                    gx = (uc[k, i + 1, j] - uc[k, i - 1, j]) * i2dx
                    gy = (uc[k, i, j + 1] - uc[k, i, j - 1]) * i2dx
                    r = r - (B0[i, j] * gx + B1[i, j] * gy + C[i, j] * u)
                if has_src:
                    r = r + F[k, i, j]
                un[k, i, j] = 2.0 * u - up[k, i, j] + dt2 * r


def _leapfrog_np(up, uc, un, B0, B1, C, F, dt2, idx2, i2dx, lower, has_src):
    c = uc[:, 1:-1, 1:-1]
    r = (uc[:, 2:, 1:-1] + uc[:, :-2, 1:-1] + uc[:, 1:-1, 2:] + uc[:, 1:-1, :-2] - 4.0 * c) * idx2
    if lower:
        gx = (uc[:, 2:, 1:-1] - uc[:, :-2, 1:-1]) * i2dx
        gy = (uc[:, 1:-1, 2:] - uc[:, 1:-1, :-2]) * i2dx
        r = r - (B0[None, 1:-1, 1:-1] * gx + B1[None, 1:-1, 1:-1] * gy + C[None, 1:-1, 1:-1] * c)
    if has_src:
        r = r + F[:, 1:-1, 1:-1]
    un[:, 1:-1, 1:-1] = 2.0 * c - up[:, 1:-1, 1:-1] + dt2 * r


def leapfrog(up, uc, un, B0, B1, C, F, dt, dx, lower=True, has_src=False):
    """Interior update un = 2uc - up + dt^2 (Lap uc - B.grad uc - C uc + F).

    Arrays are (K, nx, ny) batches; B0, B1, C are (nx, ny). Boundary rows of
    `un` are left untouched.
    """
    f = _leapfrog_nb if USE_NUMBA else _leapfrog_np
    f(up, uc, un, B0, B1, C, F, dt * dt, 1.0 / (dx * dx), 0.5 / dx, lower, has_src)


# --- interpolation ------------------------------------------------------------

@njit
def _interp3(vals, x0, x1, t, lo0, lo1, lot, d0, d1, dtv):
    n0, n1, nt = vals.shape
    f0 = (x0 - lo0) / d0
    f1 = (x1 - lo1) / d1
    ft = (t - lot) / dtv if nt > 1 else 0.0
    tol = 1e-9
    if f0 < -tol or f0 > n0 - 1 + tol or f1 < -tol or f1 > n1 - 1 + tol:
        return 0.0j
    if ft < -tol or ft > nt - 1 + tol:
        return 0.0j
    f0 = min(max(f0, 0.0), n0 - 1.0)
    f1 = min(max(f1, 0.0), n1 - 1.0)
    ft = min(max(ft, 0.0), nt - 1.0)
    i = min(int(f0), n0 - 2)
    j = min(int(f1), n1 - 2)
    w0 = f0 - i
    w1 = f1 - j
    if nt == 1:
        k = 0
        wt = 0.0
        k1 = 0
    else:
        k = min(int(ft), nt - 2)
        wt = ft - k
        k1 = k + 1
    a = ((1 - w0) * (1 - w1) * vals[i, j, k] + w0 * (1 - w1) * vals[i + 1, j, k]
         + (1 - w0) * w1 * vals[i, j + 1, k] + w0 * w1 * vals[i + 1, j + 1, k])
    if wt == 0.0:
        return a
    b = ((1 - w0) * (1 - w1) * vals[i, j, k1] + w0 * (1 - w1) * vals[i + 1, j, k1]
         + (1 - w0) * w1 * vals[i, j + 1, k1] + w0 * w1 * vals[i + 1, j + 1, k1])
    return (1 - wt) * a + wt * b


def interp3_np(vals, x0, x1, t, lo, d):
    """Vectorised trilinear interpolation with zero extension (numpy)."""
    n0, n1, nt = vals.shape
    x0, x1, t = np.broadcast_arrays(np.asarray(x0, float), np.asarray(x1, float), np.asarray(t, float))
    f0 = (x0 - lo[0]) / d[0]
    f1 = (x1 - lo[1]) / d[1]
    ft = (t - lo[2]) / d[2] if nt > 1 else np.zeros_like(t)
    tol = 1e-9
    inside = ((f0 >= -tol) & (f0 <= n0 - 1 + tol) & (f1 >= -tol) & (f1 <= n1 - 1 + tol)
              & (ft >= -tol) & (ft <= nt - 1 + tol))
    f0 = np.clip(f0, 0, n0 - 1)
    f1 = np.clip(f1, 0, n1 - 1)
    ft = np.clip(ft, 0, max(nt - 1, 0))
    i = np.minimum(f0.astype(int), n0 - 2)
    j = np.minimum(f1.astype(int), n1 - 2)
    w0 = f0 - i
    w1 = f1 - j
    if nt == 1:
        k = np.zeros_like(i)
        wt = np.zeros_like(w0)
        k1 = k
    else:
        k = np.minimum(ft.astype(int), nt - 2)
        wt = ft - k
        k1 = k + 1

    def plane(kk):
        return ((1 - w0) * (1 - w1) * vals[i, j, kk] + w0 * (1 - w1) * vals[i + 1, j, kk]
                + (1 - w0) * w1 * vals[i, j + 1, kk] + w0 * w1 * vals[i + 1, j + 1, kk])

    out = (1 - wt) * plane(k) + wt * plane(k1)
    return np.where(inside, out, 0.0)


# --- line integrals -------------------------------------------------------------
# I(p) = int_{sa_p}^{sb_p} g(z_p - s*omega, s) ds   (composite Simpson)

@njit
def _line_nb(vals, lo, d, z, om, sa, sb, ds_max, out):
    P = z.shape[0]
    for p in range(P):
        L = sb[p] - sa[p]
        if L <= 0.0:
            out[p] = 0.0j
            continue
        n = int(np.ceil(L / ds_max))
        if n < 2:
            n = 2
        if n % 2 == 1:
            n += 1
        h = L / n
        acc = 0.0j
        for m in range(n + 1):
            s = sa[p] + m * h
            w = 1.0 if (m == 0 or m == n) else (4.0 if m % 2 == 1 else 2.0)
            acc += w * _interp3(vals, z[p, 0] - s * om[p, 0], z[p, 1] - s * om[p, 1], s,
                                lo[0], lo[1], lo[2], d[0], d[1], d[2])
        out[p] = acc * h / 3.0


def _line_np(vals, lo, d, z, om, sa, sb, ds_max, out, chunk=4096):
    L = sb - sa
    n = np.maximum(2, np.ceil(np.maximum(L, 0) / ds_max).astype(int))
    n = n + (n % 2)
    for a in range(0, z.shape[0], chunk):
        sl = slice(a, a + chunk)
        nmax = int(n[sl].max()) if n[sl].size else 2
        m = np.arange(nmax + 1)
        nn = n[sl][:, None]
        h = (L[sl] / n[sl])[:, None]
        s = sa[sl][:, None] + m[None, :] * h
        w = np.where((m == 0) | (m == nn), 1.0, np.where(m % 2 == 1, 4.0, 2.0))
        w = np.where(m <= nn, w, 0.0)
        g = interp3_np(vals, z[sl, 0:1] - s * om[sl, 0:1], z[sl, 1:2] - s * om[sl, 1:2], s, lo, d)
        res = np.sum(w * g, axis=1) * h[:, 0] / 3.0
        out[sl] = np.where(L[sl] > 0, res, 0.0)


def _prep(vals, lo, d, z, om, P):
    vals = np.ascontiguousarray(vals, dtype=np.complex128)
    if vals.ndim == 2:
        vals = vals[:, :, None]
    z = np.ascontiguousarray(np.atleast_2d(z), dtype=float)
    om = np.asarray(om, dtype=float)
    om = np.ascontiguousarray(np.broadcast_to(om if om.ndim == 2 else om[None, :], z.shape))
    return vals, np.asarray(lo, float), np.asarray(d, float), z, om


def line_integrals(vals, lo, d, z, omega, sa, sb, ds_max):
    """Simpson line integrals of a gridded function along s -> (z - s omega, s).

    vals: (n0, n1, nt) samples, lo/d: origin and spacing of (x0, x1, t).
    Vectorised over points z (P, 2); omega broadcasts to (P, 2).
    """
    z = np.atleast_2d(z)
    P = z.shape[0]
    vals, lo, d, z, om = _prep(vals, lo, d, z, omega, P)
    sa = np.ascontiguousarray(np.broadcast_to(np.asarray(sa, float), (P,)))
    sb = np.ascontiguousarray(np.broadcast_to(np.asarray(sb, float), (P,)))
    out = np.zeros(P, dtype=np.complex128)
    if USE_NUMBA:
        _line_nb(vals, lo, d, z, om, sa, sb, float(ds_max), out)
    else:
        _line_np(vals, lo, d, z, om, sa, sb, float(ds_max), out)
    return out


@njit
def _cumline_nb(vals, lo, d, z, om, s_levels, nsub, out):
    P = z.shape[0]
    M = s_levels.shape[0]
    for p in range(P):
        acc = 0.0j
        out[p, 0] = 0.0j
        for m in range(M - 1):
            a = s_levels[m]
            h = (s_levels[m + 1] - a) / nsub
            seg = 0.0j
            for q in range(nsub + 1):
                s = a + q * h
                w = 1.0 if (q == 0 or q == nsub) else (4.0 if q % 2 == 1 else 2.0)
                seg += w * _interp3(vals, z[p, 0] - s * om[p, 0], z[p, 1] - s * om[p, 1], s,
                                    lo[0], lo[1], lo[2], d[0], d[1], d[2])
            acc += seg * h / 3.0
            out[p, m + 1] = acc


def _cumline_np(vals, lo, d, z, om, s_levels, nsub, out, chunk=512):
    M = s_levels.size
    q = np.arange(nsub + 1)
    w = np.where((q == 0) | (q == nsub), 1.0, np.where(q % 2 == 1, 4.0, 2.0))
    h = np.diff(s_levels) / nsub
    s = s_levels[:-1, None] + q[None, :] * h[:, None]          # (M-1, nsub+1)
    for a in range(0, z.shape[0], chunk):
        sl = slice(a, a + chunk)
        zz = z[sl][:, None, None, :]
        oo = om[sl][:, None, None, :]
        g = interp3_np(vals, zz[..., 0] - s * oo[..., 0], zz[..., 1] - s * oo[..., 1],
                       np.broadcast_to(s, zz.shape[:1] + s.shape), lo, d)
        seg = np.sum(g * w, axis=-1) * h / 3.0
        out[sl, 0] = 0.0
        out[sl, 1:] = np.cumsum(seg, axis=1)


def cumulative_line_integrals(vals, lo, d, z, omega, s_levels, nsub=2):
    """J[p, m] = int_{s_0}^{s_m} g(z_p - s omega, s) ds for increasing s_levels."""
    if nsub < 2 or nsub % 2:
        raise ValueError("nsub must be even and >= 2")
    z = np.atleast_2d(z)
    P = z.shape[0]
    vals, lo, d, z, om = _prep(vals, lo, d, z, omega, P)
    s_levels = np.ascontiguousarray(s_levels, dtype=float)
    out = np.zeros((P, s_levels.size), dtype=np.complex128)
    if USE_NUMBA:
        _cumline_nb(vals, lo, d, z, om, s_levels, int(nsub), out)
    else:
        _cumline_np(vals, lo, d, z, om, s_levels, int(nsub), out)
    return out


# exposed for tests / benchmark
IMPLEMENTATIONS = {
    "leapfrog": {"numba": _leapfrog_nb, "numpy": _leapfrog_np},
    "line": {"numba": _line_nb, "numpy": _line_np},
    "cumline": {"numba": _cumline_nb, "numpy": _cumline_np},
}
