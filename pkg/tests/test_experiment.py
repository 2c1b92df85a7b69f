import math

import numpy as np
import pytest

from spdefem.errors import ConfigError, FitError
from spdefem.experiment import (
    StudyConfig,
    StudyError,
    emit_report,
    fit_order,
    read_errors_csv,
    run_spatial_study,
    run_temporal_study,
)
from spdefem.noise import build_spectrum
from spdefem.problem import benchmark_problem, heat_exact, heat_problem


def ls_slope(points):
    # closed-form two-parameter least squares on the logs
    xs = [math.log(r) for r, _ in points]
    ys = [math.log(e) for _, e in points]
    xb, yb = sum(xs) / len(xs), sum(ys) / len(ys)
    sxy = sum((x - xb) * (y - yb) for x, y in zip(xs, ys))
    sxx = sum((x - xb) ** 2 for x in xs)
    return sxy / sxx, math.exp(yb - sxy / sxx * xb)


@pytest.mark.parametrize("points,order", [
    ([(1, 1), (0.5, 0.5)], 1.0),
    ([(0.5, 0.25), (0.25, 0.0625)], 2.0),
])
def test_fit_exact_orders(points, order):
    p, c = fit_order(points)
    assert p == pytest.approx(order, abs=1e-14)


def test_fit_matches_closed_form():
    pts = [(1, 1), (0.5, 0.51), (0.25, 0.26)]
    p_ref, c_ref = ls_slope(pts)
    assert p_ref == pytest.approx(0.97, abs=0.005)
    p, c = fit_order(pts)
    assert p == pytest.approx(p_ref, rel=1e-12)
    assert c == pytest.approx(c_ref, rel=1e-12)


@pytest.mark.parametrize("points", [[(1, 1), (0.5, 0.0)], [(1, -1), (0.5, 0.5)], [(0, 1), (0.5, 0.5)]])
def test_fit_rejects_non_positive(points):
    with pytest.raises(FitError):
        fit_order(points)


def test_fit_needs_two_points():
    with pytest.raises(FitError):
        fit_order([(0.5, 0.1)])


def heat_cfg(**kw):
    base = dict(problem=heat_problem(T=0.1), noise=None, schemes=("implicit",), mesh=(8, 8),
                dt_list=(0.1 / 4, 0.1 / 8, 0.1 / 16), reference_dt=0.1 / 256)
    base.update(kw)
    return StudyConfig(**base)


def test_deterministic_temporal_order():
    rep = run_temporal_study(heat_cfg())
    assert rep.n_samples == 1
    assert rep["implicit"].fitted_order >= 0.9


def test_single_dt_gives_nan_with_points():
    rep = run_temporal_study(heat_cfg(dt_list=(0.1 / 8,)))
    assert math.isnan(rep["implicit"].fitted_order)
    assert len(rep.points) == 1


def test_points_sorted_and_positive():
    rep = run_temporal_study(heat_cfg(dt_list=(0.1 / 16, 0.1 / 4, 0.1 / 8)))
    res = [r for r, _ in rep["implicit"].points]
    assert res == sorted(res)
    assert all(e > 0 for _, e in rep["implicit"].points)


def test_dt_must_be_multiple_of_reference():
    with pytest.raises(ConfigError):
        run_temporal_study(heat_cfg(dt_list=(0.1 / 3,)))


def test_spatial_heat_against_reference():
    cfg = heat_cfg(mesh_list=(4, 8, 16), reference_mesh=64, spatial_dt=1e-4)
    rep = run_spatial_study(cfg)
    assert 1.8 <= rep["implicit"].fitted_order <= 2.2
    hs = [r for r, _ in rep.points and rep["implicit"].points]
    assert hs[0] == pytest.approx(math.sqrt(2) / 16)


def test_spatial_heat_against_exact():
    cfg = heat_cfg(mesh_list=(4, 8, 16, 32), spatial_dt=1e-4, exact=heat_exact(0.1))
    rep = run_spatial_study(cfg)
    assert 1.8 <= rep["implicit"].fitted_order <= 2.2


def test_single_mesh_nan():
    rep = run_spatial_study(heat_cfg(mesh_list=(8,), reference_mesh=16))
    assert math.isnan(rep["implicit"].fitted_order)


def test_non_nested_meshes():
    with pytest.raises(ConfigError):
        run_spatial_study(heat_cfg(mesh_list=(3, 8), reference_mesh=16))


def small_noisy(**kw):
    base = dict(problem=benchmark_problem(), noise=build_spectrum(2.0, 0.001, 16, 16), samples=4,
                mesh=(8, 8), dt_list=(1 / 16, 1 / 32, 1 / 64), reference_dt=1 / 128, master_seed=3)
    base.update(kw)
    return StudyConfig(**base)


def test_coupling_same_step_is_exact():
    rep = run_temporal_study(small_noisy(schemes=("implicit",), dt_list=(1 / 128,)))
    assert rep["implicit"].points[0][1] <= 1e-12


def test_noisy_spatial_study_runs():
    cfg = small_noisy(schemes=("implicit",), mesh_list=(4, 8), reference_mesh=16, spatial_dt=1 / 64, samples=2)
    rep = run_spatial_study(cfg)
    assert len(rep.points) == 2 and all(e > 0 for _, _, e in rep.points)


def test_worker_count_does_not_change_results(tmp_path):
    r1 = run_temporal_study(small_noisy(), workers=1)
    r2 = run_temporal_study(small_noisy(), workers=3)
    emit_report(r1, tmp_path / "a")
    emit_report(r2, tmp_path / "b")
    assert (tmp_path / "a/errors.csv").read_bytes() == (tmp_path / "b/errors.csv").read_bytes()
    np.testing.assert_array_equal(r1["implicit"].per_sample_errors, r2["implicit"].per_sample_errors)


def test_seed_changes_results():
    r1 = run_temporal_study(small_noisy(schemes=("implicit",), samples=2))
    r2 = run_temporal_study(small_noisy(schemes=("implicit",), samples=2, master_seed=4))
    assert r1.points != r2.points


def test_failed_sample_aborts_with_provenance():
    cfg = small_noisy(noise=build_spectrum(0.6, 0.001, 16, 16), schemes=("semi_implicit",),
                      dt_list=(1 / 4, 1 / 8), reference_dt=1 / 16)
    with pytest.raises(StudyError) as info:
        run_temporal_study(cfg)
    assert info.value.scheme == "semi_implicit"
    assert info.value.sample == 0
    assert info.value.step is not None


def test_emit_report(tmp_path):
    rep = run_temporal_study(heat_cfg(schemes=("implicit", "semi_implicit"),
                                      dt_list=tuple(0.1 / k for k in (2, 4, 8, 16, 32))))
    files = emit_report(rep, tmp_path)
    assert [f.name for f in files] == ["errors.csv", "report.txt", "convergence.svg"]
    raw = (tmp_path / "errors.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "scheme,resolution,rms_error,n_samples,seed"
    assert len(lines) == 11
    back = read_errors_csv(tmp_path / "errors.csv")
    for name, sub in rep.schemes.items():
        assert back[name] == sub.points
    txt = (tmp_path / "report.txt").read_text()
    assert "fitted order" in txt and "sample_std" in txt
    assert (tmp_path / "convergence.svg").read_text().startswith("<svg")


def test_emit_empty_report_writes_nothing(tmp_path):
    rep = run_temporal_study(heat_cfg(dt_list=(0.1 / 8,)))
    for sub in rep.schemes.values():
        sub.points.clear()
    with pytest.raises(FitError):
        emit_report(rep, tmp_path / "out")
    assert not (tmp_path / "out").exists()
