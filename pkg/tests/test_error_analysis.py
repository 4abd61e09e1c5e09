from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freeflight.error_analysis import (
    apriori_bound,
    aposteriori_error,
    convergence_study,
    dilate,
    error_report,
    hessian_sup_estimate,
    regular_mask,
    transfer_mask,
)
from freeflight.hjb import BoundaryOracle
from freeflight.kinematics import ModelViolation
from freeflight.trimesh import build_mesh

X0 = np.array([0.0, 0.5])

pos = st.floats(1e-4, 10.0)


@settings(max_examples=200, deadline=None)
@given(h=pos, theta=st.floats(1.0, 5.0), hs=pos, maxval=pos)
def test_apriori_without_wind_gradient(h, theta, hs, maxval):
    got = apriori_bound(h, theta, hs, 0.5, 0.0, 1.0, maxval)
    assert got == pytest.approx(h * theta * hs * 1.5 * maxval + 14.0 * h, rel=1e-12)


def test_apriori_worked_example():
    c1 = 3.0 * math.sqrt(2.0 * math.e)
    assert apriori_bound(0.01, 2.0, 10.0, 0.5, c1, 1.0, 1.5) == pytest.approx(32.64, abs=0.01)


def test_apriori_linear_in_h():
    args = (2.0, 10.0, 0.5, 3.0, 1.0, 1.5)
    assert apriori_bound(0.02, *args) == pytest.approx(2.0 * apriori_bound(0.01, *args), rel=1e-14)


@settings(max_examples=300, deadline=None)
@given(h=pos, theta=st.floats(1.0, 5.0), hs=pos, c0=st.floats(0.0, 0.9), c1=st.floats(0.0, 50.0),
       maxval=pos, which=st.sampled_from(["h", "theta", "hs", "c0", "c1"]), bump=st.floats(1e-3, 0.5))
def test_apriori_monotone_in_each_input(h, theta, hs, c0, c1, maxval, which, bump):
    base = dict(h=h, theta=theta, hessian_sup=hs, c0=c0, c1=c1, vbar=1.0, max_value=maxval)
    up = dict(base)
    key = {"hs": "hessian_sup"}.get(which, which)
    up[key] = base[key] + (bump * (1.0 - c0) if key == "c0" else bump)
    assert apriori_bound(**up) >= apriori_bound(**base)


def test_apriori_rejects_invalid():
    with pytest.raises(ModelViolation):
        apriori_bound(0.01, 2.0, 10.0, 1.0, 1.0, 1.0, 1.0)
    for bad in ({"h": -0.01}, {"theta": 0.5}, {"hessian_sup": math.nan}, {"c1": -1.0}):
        kw = dict(h=0.01, theta=2.0, hessian_sup=10.0, c0=0.5, c1=1.0, vbar=1.0, max_value=1.0)
        kw.update(bad)
        with pytest.raises(ValueError):
            apriori_bound(**kw)


# ----------------------------------------------------------------------
# Hessian recovery


@pytest.mark.parametrize("n", [201, 401])
def test_hessian_zero_wind_matches_distance_curvature(solved, n):
    p = solved("zero", n)
    mask, region = regular_mask(p.values, 0.0)
    assert len(region.flagged) == 0
    hs = hessian_sup_estimate(p.values, p.mesh, mask)
    assert 9.0 <= hs <= 11.0, hs


def test_hessian_recovery_of_exact_distance():
    m = build_mesh(201)
    r = np.linalg.norm(m.points - X0, axis=1)
    assert hessian_sup_estimate(r, m) == pytest.approx(10.0, rel=0.05)


def test_hessian_of_linear_field_vanishes(solved):
    p = solved("zero", 101)
    u = 0.7 * p.mesh.points[:, 0] - 1.3 * p.mesh.points[:, 1] + 0.25
    assert hessian_sup_estimate(u, p.mesh) <= 1e-8


def test_hessian_reports_skips_and_respects_mask(solved):
    p = solved("zero", 101)
    hs, info = hessian_sup_estimate(p.values, p.mesh, return_details=True)
    assert info["skipped"] >= 0 and info["evaluated"] > 0.9 * p.mesh.n_nodes
    r = np.linalg.norm(p.mesh.points[p.mesh.triangles].mean(axis=1) - X0, axis=1)
    masked = hessian_sup_estimate(p.values, p.mesh, r < 0.3)
    assert masked < 0.6 * hs


def test_hessian_case_b_stable_under_refinement(solved, reference):
    ref = reference("b").values
    hs = {}
    for n in (201, 401):
        p = solved("b", n)
        eps = aposteriori_error(p.values, ref)["all"]
        mask, _ = regular_mask(p.values, eps)
        hs[n] = hessian_sup_estimate(p.values, p.mesh, mask)
    assert all(math.isfinite(v) for v in hs.values())
    assert abs(hs[401] - hs[201]) <= 0.25 * hs[201], hs


def test_masked_fraction_shrinks_like_a_band(solved, reference):
    ref = reference("b").values
    frac = {}
    for n in (201, 401):
        rep = error_report(solved("b", n), ref)
        frac[n] = rep.masked_triangles / solved("b", n).mesh.n_triangles
    # a one-dimensional band of width O(h) halves its area fraction; a blob would not
    assert 0.3 <= frac[401] / frac[201] <= 0.75, frac


# ----------------------------------------------------------------------
# a-posteriori comparison


def test_aposteriori_self_is_zero(solved):
    v = solved("a", 51).values
    e = aposteriori_error(v, v)
    assert e["all"] == 0.0 and e["masked"] == 0.0


def _exact_zero_wind(mesh):
    return SimpleNamespace(u=np.linalg.norm(mesh.points - X0, axis=1), mesh=mesh,
                           oracle=BoundaryOracle.constant_wind(mesh, (0.0, 0.0)))


def test_aposteriori_zero_wind_against_analytic(solved, reference_mesh):
    exact = _exact_zero_wind(reference_mesh)
    errs = []
    for n in (51, 101, 201):
        p = solved("zero", n)
        true = np.abs(p.values.u - np.linalg.norm(p.mesh.points - X0, axis=1)).max()
        est = aposteriori_error(p.values, exact)["all"]
        assert abs(est - true) <= 0.1 * true, (n, est, true)
        errs.append(est)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 0.9) & (orders <= 1.1)), orders


def test_case_a_error_halves(solved, reference):
    ref = reference("a").values
    e = [aposteriori_error(solved("a", n).values, ref)["masked"] for n in (101, 201)]
    assert 1.7 <= e[0] / e[1] <= 2.3, e


def test_aposteriori_rejects_mismatched_meshes(solved):
    v51 = solved("a", 51).values
    v101 = solved("a", 101).values
    with pytest.raises(ValueError, match="coarser"):
        aposteriori_error(v101, v51)
    other = build_mesh(101, x0=(0.0, 0.4))
    with pytest.raises(ValueError, match="different domains"):
        aposteriori_error(v51, v101, reference_mesh=other)


def test_aposteriori_mask_excludes_nodes(solved):
    v = solved("a", 51).values
    fake = SimpleNamespace(u=v.u.copy(), mesh=v.mesh, oracle=v.oracle)
    fake.u[v.mesh.triangles[7]] += 1.0
    mask = np.zeros(v.mesh.n_triangles, dtype=bool)
    mask[7] = True
    e = aposteriori_error(v, fake, mask=mask)
    assert e["all"] == pytest.approx(1.0) and e["masked"] == 0.0


def test_transfer_mask_identity_and_refinement():
    m = build_mesh(51)
    mask = np.zeros(m.n_triangles, dtype=bool)
    mask[::17] = True
    assert np.array_equal(transfer_mask(m, m, mask), mask)
    fine = build_mesh(101)
    cf = fine.points[fine.triangles].mean(axis=1)
    fmask = np.linalg.norm(cf - [1.0, 0.5], axis=1) < 0.2
    coarse = transfer_mask(m, fine, fmask)
    cc = m.points[m.triangles].mean(axis=1)
    d = np.linalg.norm(cc - [1.0, 0.5], axis=1)
    assert coarse[d < 0.2 - 2 * m.h].all()
    assert not coarse[d > 0.2 + 2 * m.h].any()


def test_dilate_grows_by_vertex_rings():
    m = build_mesh(51)
    mask = np.zeros(m.n_triangles, dtype=bool)
    mask[m.n_triangles // 2] = True
    one = dilate(m, mask, 1)
    assert 6 <= one.sum() <= 16
    assert dilate(m, mask, 2).sum() > one.sum()
    assert np.array_equal(dilate(m, mask, 0), mask)


# ----------------------------------------------------------------------
# convergence study


def test_convergence_study_case_a(reference):
    rows = convergence_study("a", [51, 101, 201], reference=reference("a"))
    assert [r.n for r in rows] == [51, 101, 201]
    assert rows[0].order is None
    for r in rows:
        assert r.apriori > r.error > 0
        for v in (r.h, r.h_perp, r.theta, r.hessian_sup, r.vbar, r.max_value, r.apriori):
            assert math.isfinite(v) and v > 0
    orders = [r.order for r in rows[1:]]
    assert all(0.8 <= o <= 1.2 for o in orders), orders


def test_convergence_study_rejects_bad_resolutions():
    with pytest.raises(ValueError, match="ascending"):
        convergence_study("a", [101, 51], reference_n=201)
    with pytest.raises(ValueError, match="below"):
        convergence_study("a", [51, 201], reference_n=201)


def test_error_report_without_reference_uses_bound(solved):
    rep = error_report(solved("a", 51))
    assert rep.error is None and rep.flagged_triangles == 0
    assert rep.apriori > 0 and rep.masked_triangles == 0
