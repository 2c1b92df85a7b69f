"""
Measuring convergence orders
============================

A reduced temporal study on a coarse mesh, then the spatial order of the
heat equation against its exact solution.
"""

from spdefem import (
    StudyConfig, benchmark_problem, build_spectrum, emit_report, heat_exact, heat_problem,
    run_spatial_study, run_temporal_study,
)

cfg = StudyConfig(problem=benchmark_problem(), noise=build_spectrum(2.0, 0.001, 32, 32), samples=8,
                  schemes=("implicit",), mesh=(16, 16), dt_list=(1 / 16, 1 / 32, 1 / 64, 1 / 128),
                  reference_dt=1 / 512)
report = run_temporal_study(cfg)
for dt, err in report["implicit"].points:
    print(f"dt = {dt:.5f}   rms error = {err:.3e}")
print("temporal order:", round(report["implicit"].fitted_order, 3))
emit_report(report, "demo_output")  # errors.csv, report.txt, convergence.svg

heat = StudyConfig(problem=heat_problem(T=0.1), noise=None, schemes=("implicit",), mesh_list=(4, 8, 16, 32),
                   exact=heat_exact(0.1))
print("spatial order:", round(run_spatial_study(heat)["implicit"].fitted_order, 3))
