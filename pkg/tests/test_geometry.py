import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedn.geometry import (GeometryConfig, validate_geometry, classify_point, region_masks,
                             region_mask_grid, default_config, normalize_regime, regime_region)


def cfg13(**kw):
    return GeometryConfig(r=1.0, T=3.0, omega_min=(-0.3, -0.3), omega_max=(0.3, 0.3), **kw)


def test_validate_ok():
    c = cfg13(nx=64).refined(64)
    rep = validate_geometry(c)
    assert rep.ok, rep.names()
    assert c.diam == pytest.approx(0.848528, abs=1e-6)
    assert c.corner_norm() == pytest.approx(0.424264, abs=1e-6)


def test_validate_short_horizon():
    c = GeometryConfig(r=1.0, T=1.5, omega_min=(-0.3, -0.3), omega_max=(0.3, 0.3)).refined(32)
    rep = validate_geometry(c)
    v = {x.name: x for x in rep.violations}
    assert "T > 2*Diam(Omega)" in v
    assert v["T > 2*Diam(Omega)"].lhs == 1.5
    assert v["T > 2*Diam(Omega)"].rhs == pytest.approx(1.697, abs=1e-3)


def test_validate_box_outside_ball():
    c = GeometryConfig(r=1.0, T=3.0, omega_min=(-0.4, -0.4), omega_max=(0.4, 0.4)).refined(32)
    v = {x.name: x for x in validate_geometry(c).violations}
    assert "Omega in B(0,r/2)" in v
    assert v["Omega in B(0,r/2)"].lhs == pytest.approx(0.566, abs=1e-3)
    assert "T > 2*Diam(Omega)" not in v


def test_validate_cfl_and_nx():
    c = cfg13(nx=12, nt=10)
    names = validate_geometry(c).names()
    assert "nx >= 16" in names
    assert any(n.startswith("CFL") for n in names)
    c2 = cfg13(nx=64, nt=10)
    msg = [v.message for v in validate_geometry(c2).violations if v.name.startswith("CFL")][0]
    assert f"nt >= {c2.cfl_nt()}" in msg


def test_classify_examples():
    c = cfg13()
    f = classify_point(c, (0.2, 0.0), 1.5)
    assert f.in_fwd and f.in_bwd and f.in_I_star and f.in_I_sharp and f.in_Q
    f = classify_point(c, (1.0, 0.0), 2.0)
    assert f.in_fwd and not f.in_bwd and not f.in_I_star
    f = classify_point(c, (0.0, 0.0), 0.4)
    assert not f.in_fwd and f.in_bwd


def test_classify_boundary_is_outside():
    c = cfg13()
    # |x| = t - r/2 exactly
    f = classify_point(c, (0.25, 0.0), 0.75)
    assert not f.in_fwd
    # t = r/2 exactly
    assert not classify_point(c, (0.0, 0.0), 0.5).in_fwd
    # shell boundary |x| = r/2
    assert not classify_point(c, (0.5, 0.0), 1.0).in_shell


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.29, 0.29), st.floats(-0.29, 0.29))
def test_cone_monotone_in_time(x0, x1):
    c = cfg13()
    ts = np.linspace(0, 3, 301)
    m = region_masks(c, np.array([[x0, x1]] * ts.size), ts)
    fwd, bwd = m["in_fwd"], m["in_bwd"]
    # up-set and down-set in t
    if fwd.any():
        assert fwd[np.argmax(fwd):].all()
    if bwd.any():
        k = len(bwd) - np.argmax(bwd[::-1])
        assert bwd[:k].all() and not bwd[k:].any()


def test_region_inclusions_on_grid():
    c = cfg13().refined(32)
    star = region_mask_grid(c, "I_star")
    sharp = region_mask_grid(c, "I_sharp")
    q = region_mask_grid(c, "Q")
    assert star.shape == (32, 32, c.nt + 1)
    assert np.all(~star | sharp) and np.all(~sharp | q)
    assert star.sum() <= sharp.sum() <= q.sum()
    assert star.sum() > 0


def test_I_star_equals_I_for_ball():
    c = cfg13()
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.6, 0.6, (5000, 2))
    t = rng.uniform(0, 3, 5000)
    ball = lambda p: np.linalg.norm(p, axis=-1) < c.r / 2
    m = region_masks(c, x, t, in_omega=ball)
    inside_time = (t > 0) & (t < c.T)
    # I_r = F_r cap B_r inside Q_r = B(0, r/2) x (0, T)
    I_r = m["in_fwd"] & m["in_bwd"] & ball(x) & inside_time
    assert np.array_equal(m["in_I_star"], I_r)
    assert I_r.sum() > 100


def test_json_roundtrip():
    c = default_config(32)
    assert GeometryConfig.from_json(c.to_json()) == c
    assert set(c.to_dict()) == {"r", "T", "dim", "omega_min", "omega_max", "nx", "nt"}


def test_regime_names():
    assert normalize_regime("R") == "R" and normalize_regime("Lambda") == "lambda"
    assert regime_region("gamma") == "Q" and regime_region("r") == "I_sharp"
    with pytest.raises(ValueError):
        normalize_regime("x")
