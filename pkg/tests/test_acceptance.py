"""End-to-end acceptance checks, one test per criterion, at the stated tolerances.

Each test records a single PASS/FAIL line; the lines are repeated in the
terminal summary.  Runs use the built-in configs, so this file is also the
reference for what ``sobolev-gd <mode>`` checks by default.
"""

import math
import time

import numpy as np
import pytest

from sobolev_gd.harness import MODES, config_from_dict, default_config, run_experiment
from sobolev_gd.simulate import filter_bound_check

INVERSE_PROBLEM = {
    "mode": "rates",
    "spec": {"alpha": 2.0, "p": -1.0, "q": -0.5, "beta": 1.0, "mu": 0.5, "n_trunc": 512},
    "gammas_eval": [0.0],
    "options": {"slope_tolerance": 0.15},
}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Lazily run each built-in config once on one thread; keeps report and wall time."""
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(name):
        if name not in cache:
            config = config_from_dict(INVERSE_PROBLEM) if name == "inverse" else default_config(name)
            start = time.perf_counter()
            report = run_experiment(config, out_dir=root / name / "t1", threads=1)
            cache[name] = (config, report, time.perf_counter() - start)
        return cache[name]

    get.root = root
    return get


def _slope(report, gamma):
    return report.summary["slopes"][repr(gamma)]["slope_scheduled"]


def test_c1_classical_kernel_rate(runs, record_criterion):
    _, report, seconds = runs("rates")
    slope = _slope(report, 0.0)
    ok = abs(slope + 2 / 3) <= 0.12 and seconds <= 600
    record_criterion("C1 classical kernel rate", ok,
                     f"slope {slope:.4f} vs -0.6667 (tol 0.12), {seconds:.0f} s")
    assert ok


def test_c2_sobolev_norm_rate(runs, record_criterion):
    _, report, _ = runs("rates")
    slope = _slope(report, 0.5)
    ok = abs(slope + 1 / 3) <= 0.12
    record_criterion("C2 Sobolev-norm rate", ok, f"slope {slope:.4f} vs -0.3333 (tol 0.12)")
    assert ok


def test_c3_inverse_problem_rate(runs, record_criterion):
    _, report, _ = runs("inverse")
    upper = -report.summary["slopes"]["0.0"]["theory_upper_exponent"]
    slope = _slope(report, 0.0)
    ok = math.isclose(upper, 1.0, rel_tol=1e-12) and abs(slope + 1.0) <= 0.15
    record_criterion("C3 inverse-problem rate", ok, f"slope {slope:.4f} vs -1 (tol 0.15)")
    assert ok


def test_c4_filter_identity_oracles(runs, record_criterion):
    config, report, _ = runs("filtercheck")
    pop = report.summary["population"]
    emp = report.summary["empirical"]
    ok = (
        pop["t_max"] >= 1000 and emp["modes"] <= 8
        and pop["max_abs_deviation"] <= 1e-12 and emp["max_abs_deviation"] <= 1e-12
    )
    record_criterion("C4 filter identity", ok,
                     f"population {pop['max_abs_deviation']:.2e}, "
                     f"empirical {emp['max_abs_deviation']:.2e} (tol 1e-12)")
    assert ok


def test_c5_filter_bound_suite(record_criterion):
    rep = filter_bound_check(range(1, 1025), 1.0, (0.0, 0.25, 0.5, 0.75, 1.0))
    ok = rep.residual_violations == 0 and rep.filter_violations == 0
    record_criterion("C5 filter bounds", ok,
                     f"{rep.n_checks} checks, {rep.residual_violations + rep.filter_violations} "
                     "violations")
    assert ok


def test_c6_bound_check_suite(runs, record_criterion):
    _, report, _ = runs("bounds")
    checks = {k: v for k, v in report.verdicts.items() if k.count(":") == 1}
    controls = {k: v for k, v in report.verdicts.items() if k.endswith("negative_control_fails")}
    quantities = {k.split(":")[1] for k in checks}
    specs = {k.split(":")[0] for k in checks}
    ok = (
        len(specs) == 3 and len(quantities) == 7 and all(checks.values())
        and controls and all(controls.values())
    )
    failed = sorted(k for k, v in {**checks, **controls}.items() if not v)
    record_criterion("C6 bound checks", ok,
                     f"{sum(checks.values())}/{len(checks)} envelopes hold, "
                     f"{sum(controls.values())}/{len(controls)} controls fail; failures {failed}")
    assert ok


def test_c7_lower_bound_certification(runs, record_criterion):
    _, report, _ = runs("lowerbound")
    code = report.summary["codebook"]
    fams = report.summary["families"]
    exact = report.summary["lower_rate_exponent"]
    fano_gap = max(abs(f["rate_exponent"] - exact) for fam in fams for f in fam["fano"])
    cert = [fam["certification"] for fam in fams]
    ok = (
        code["m"] == 64 and code["size"] >= 256 and code["min_pairwise_hamming"] >= 8
        and sorted(f["epsilon"] for f in fams) == [1e-3, 1e-2, 1e-1]
        and all(c["min_separation_sq"] >= c["separation_threshold"] * (1 - 1e-12) for c in cert)
        and all(c["beta_ok"] and c["identity_ok"] for c in cert)
        and fano_gap <= 1e-15
    )
    record_criterion("C7 lower-bound certification", ok,
                     f"{code['size']} words, min Hamming {code['min_pairwise_hamming']}, "
                     f"fano exponent gap {fano_gap:.1e}")
    assert ok


def test_c8_integration_by_parts(runs, record_criterion):
    config, report, _ = runs("pde")
    errs = report.summary["ibp_max_relative_error"]
    ok = (
        config.options["ibp_pairs"] >= 100 and sorted(errs) == [1, 2, 3]
        and all(e <= 1e-10 for e in errs.values())
    )
    record_criterion("C8 integration by parts", ok,
                     "max relative mismatch " + ", ".join(f"d={d}: {e:.1e}" for d, e in errs.items()))
    assert ok


def test_c9_sobolev_implicit_acceleration(runs, record_criterion):
    config, report, _ = runs("pde")
    ops = report.summary["operators"]
    drm, pinn = ops["DRM"], ops["PINN"]
    ok = (
        config.spec.dimension == 1 and config.replications == 10
        and list(config.n_grid) == [2**k for k in range(8, 13)]
        and pinn["slope"] < drm["slope"]
        and abs(drm["slope"] - drm["theory_exponent"]) <= 0.15
        and abs(pinn["slope"] - pinn["theory_exponent"]) <= 0.15
    )
    record_criterion("C9 implicit acceleration", ok,
                     f"DRM {drm['slope']:.4f} vs {drm['theory_exponent']:.4f}, "
                     f"PINN {pinn['slope']:.4f} vs {pinn['theory_exponent']:.4f} (tol 0.15)")
    assert ok


def test_c10_determinism_across_threads(runs, record_criterion):
    mismatched = []
    for name in (*MODES, "inverse"):
        config, report, _ = runs(name)
        again = run_experiment(config, out_dir=runs.root / name / "t2", threads=2)
        if [p.name for p in report.files] != [p.name for p in again.files]:
            mismatched.append(name)
            continue
        mismatched += [
            f"{name}/{a.name}" for a, b in zip(report.files, again.files)
            if a.read_bytes() != b.read_bytes()
        ]
    ok = not mismatched
    record_criterion("C10 determinism", ok,
                     f"{len(MODES) + 1} configs rerun at 2 threads; mismatches {mismatched}")
    assert ok


def test_every_default_mode_passes_its_own_verdicts(runs):
    for name in MODES:
        _, report, _ = runs(name)
        assert report.passed, {k: v for k, v in report.verdicts.items() if not v}
    assert np.isfinite(runs("rates")[2])
