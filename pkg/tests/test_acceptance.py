"""Release criteria, one test per criterion, each printing its PASS/FAIL line.

The learning-based criteria (6, 7, 11) train real models on the standard
synthetic benchmark and dominate the suite's runtime; everything else
finishes in seconds. Shared state (benchmark dataset, trained teacher)
lives in a module-scoped context so criteria 6 and 7 reuse one teacher.
"""

from takd import acceptance as ac

_ctx: dict = {}


def _run(number, name, fn):
    ok, detail = fn(_ctx)
    print(f"\n{'PASS' if ok else 'FAIL'} [{number:>2}] {name}: {detail}")
    assert ok, f"criterion {number} ({name}): {detail}"


def test_criterion_01_gradient_fidelity():
    _run(1, "gradient-fidelity", ac.criterion_1_gradient_fidelity)


def test_criterion_02_convolution_oracle():
    _run(2, "convolution-oracle", ac.criterion_2_conv_oracle)


def test_criterion_03_map_algebra():
    _run(3, "map-algebra", ac.criterion_3_map_algebra)


def test_criterion_04_interpolation_contract():
    _run(4, "interpolation-contract", ac.criterion_4_interpolation)


def test_criterion_05_architecture_accounting():
    _run(5, "architecture-accounting", ac.criterion_5_architecture)


def test_criterion_06_learning_works():
    _run(6, "learning-works", ac.criterion_6_learning)


def test_criterion_07_distillation_direction():
    _run(7, "distillation-direction", ac.criterion_7_distillation_direction)


def test_criterion_08_reductions():
    _run(8, "reductions", ac.criterion_8_reductions)


def test_criterion_09_pipeline_oracles():
    _run(9, "pipeline-oracles", ac.criterion_9_pipeline)


def test_criterion_10_metrics_oracles():
    _run(10, "metrics-oracles", ac.criterion_10_metrics)


def test_criterion_11_end_to_end_smoke():
    _run(11, "end-to-end-smoke", ac.criterion_11_cli_smoke)
