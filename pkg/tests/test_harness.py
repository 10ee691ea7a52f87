import json

import numpy as np
import pytest

from freespectra import harness
from freespectra.errors import ParameterError, SizeError
from freespectra.harness import GapExperiment, WignerConfig
from freespectra.ncalg import parse_polynomial
from freespectra.spectra import SupportSet
from freespectra.subord import ModelSpec

SEMI = SupportSet([(-2.0, 2.0)], 1e-3, 1e-3)


def test_r_zero_inclusion_is_exact():
    A = np.diag([1.0, -1.0, 0.5, 2.0])
    model = ModelSpec(np.zeros((1, 1)), [], [np.eye(1)], [A])
    rep = harness.check_spectrum_inclusion(model, WignerConfig(), 4, 1e-6, 3)
    assert rep.verdict and rep.summary["total_outside"] == 0


def test_single_wigner_inclusion():
    model = ModelSpec(np.zeros((1, 1)), [np.eye(1)])
    rep = harness.check_spectrum_inclusion(model, WignerConfig(seed=5), 400, 0.3, 10, support=SEMI)
    assert rep.verdict
    assert rep.summary["fattened"] == [[-2.3, 2.3]]


def test_block_model_inclusion():
    model = ModelSpec(np.diag([1.0, -1.0]), [np.eye(2)])
    rep = harness.check_spectrum_inclusion(model, WignerConfig(seed=1), 512, 0.3, 10)
    assert rep.verdict
    (lo, hi), = rep.summary["support"]
    assert lo == pytest.approx(-3, abs=0.02) and hi == pytest.approx(3, abs=0.02)


def test_inclusion_is_monotone_in_eps():
    model = ModelSpec(np.zeros((1, 1)), [np.eye(1)])
    counts = [
        harness.check_spectrum_inclusion(model, WignerConfig(seed=2), 60, eps, 5, support=SEMI).summary["total_outside"]
        for eps in (0.0001, 0.05, 0.2, 0.5)
    ]
    assert counts == sorted(counts, reverse=True)


def test_inclusion_rejects_bad_eps():
    with pytest.raises(ValueError):
        harness.check_spectrum_inclusion(ModelSpec(np.zeros((1, 1)), [np.eye(1)]), WignerConfig(), 4, 0.0, 1, support=SEMI)


def test_counting_helpers():
    eigs = np.array([-1.0, 0.5 - 1e-10, 0.7, 2.0])
    assert harness.count_in_interval(eigs, 0.5, 1.0) == 2
    assert harness.count_outside(eigs, SupportSet([(-1.0, 0.6)], 1e-3, 1e-3)) == 2


def test_resolve_dets():
    out = harness.resolve_dets(["diag(1,-1)", lambda n: np.eye(n), np.eye(4)], 4)
    assert [A.shape for A in out] == [(4, 4)] * 3
    with pytest.raises(SizeError):
        harness.resolve_dets([np.eye(3)], 4)


# -- gaps ------------------------------------------------------------------------------

def test_gap_of_shifted_wigner_stays_empty():
    exp = GapExperiment(parse_polynomial("x1 + 3*a1", 1, 1), ["diag(1,-1)"], n_list=[200], trials=5, gap=(-0.5, 0.5), seed=4)
    rep = harness.check_gap(exp)
    assert rep.verdict and rep.summary["gap_disjoint_from_support"]


def test_outer_gap_of_single_wigner():
    exp = GapExperiment(parse_polynomial("x1", 1, 0), n_list=[300], trials=5, gap=(2.5, 3.0), seed=3)
    assert harness.check_gap(exp).verdict


def test_negative_control_fails():
    exp = GapExperiment(parse_polynomial("x1", 1, 0), n_list=[100], trials=3, gap=(-0.5, 0.5), seed=3)
    rep = harness.check_gap(exp)
    assert not rep.verdict
    assert not rep.summary["gap_disjoint_from_support"]
    assert rep.summary["trials_with_eigenvalues"] == 3


def test_no_gap_in_support():
    exp = GapExperiment(parse_polynomial("x1", 1, 0), n_list=[50], trials=1, predicted=SEMI)
    rep = harness.check_gap(exp)
    assert not rep.verdict and rep.summary == {"reason": "predicted support has no gap"}


def test_gap_validation():
    with pytest.raises(ValueError):
        GapExperiment(parse_polynomial("x1", 1, 0), delta=0)
    exp = GapExperiment(parse_polynomial("x1", 1, 0), gap=(1.0, 0.0), predicted=SEMI)
    with pytest.raises(ValueError):
        harness.check_gap(exp)


def test_gap_with_truncated_heavy_tails():
    exp = GapExperiment(
        parse_polynomial("x1 + 3*a1", 1, 1), ["diag(1,-1)"], laws=["student_t(5)", "gaussian"], n_list=[150],
        trials=2, gap=(-0.5, 0.5), truncation=(16.0, 0.5), seed=8,
        predicted=SupportSet([(-5.0, -1.2), (1.2, 5.0)], 1e-3, 1e-3),
    )
    rep = harness.check_gap(exp)
    assert rep.verdict and rep.summary["completed_trials"] == 4
    assert rep.parameters["truncation"] == [16.0, 0.5]


# -- norms -----------------------------------------------------------------------------

def test_strong_convergence_single_wigner():
    rep = harness.check_strong_convergence(
        parse_polynomial("x1", 1, 0), [], WignerConfig(seed=6), [250, 1000], 4, tol=0.05, limit=2.0
    )
    assert rep.summary["final_relative_error"] <= 0.05
    assert rep.verdict


def test_strong_convergence_deterministic_is_exact():
    rep = harness.check_strong_convergence(
        parse_polynomial("a1", 0, 1), ["diag(-3,1)"], WignerConfig(), [4, 8], 1, model_dets=[np.diag([-3.0, 1.0])]
    )
    assert rep.summary["limit"] == pytest.approx(3.0)
    assert rep.summary["relative_errors"] == pytest.approx([0.0, 0.0], abs=1e-12)
    assert rep.verdict


def test_strong_convergence_rejects_nonselfadjoint():
    with pytest.raises(ValueError):
        harness.check_strong_convergence(parse_polynomial("x1*x2", 2, 0), [], WignerConfig(), [10], 1, limit=1.0)


# -- densities -------------------------------------------------------------------------

def test_ks_distance_examples():
    pts = np.linspace(0, 1, 101)
    assert harness.ks_distance([0.5], pts, pts) == pytest.approx(0.5)
    x = np.random.default_rng(0).uniform(size=20_000)
    assert harness.ks_distance(x, pts, pts) < 0.02


def test_moment_discrepancy_normalization():
    np.testing.assert_allclose(harness.moment_discrepancy([0.01, 2.2], [0.0, 2.0]), [0.01, 0.1])


def test_compare_density_single_wigner():
    rep = harness.compare_density(
        parse_polynomial("x1", 1, 0), [], WignerConfig(seed=2), 400, 10, grid=np.linspace(-2.5, 2.5, 501), eps=1e-3
    )
    assert rep.summary["ks"] <= 0.02
    assert rep.verdict


def test_compare_density_square_first_moment():
    rep = harness.compare_density(
        parse_polynomial("x1^2", 1, 0), [], WignerConfig(seed=4), 300, 4, grid=np.linspace(-0.5, 4.5, 1001), eps=1e-3
    )
    assert rep.summary["predicted_moments"][0] == pytest.approx(1.0, abs=0.02)


# -- reports ---------------------------------------------------------------------------

def test_reports_are_reproducible(tmp_path):
    def once():
        model = ModelSpec(np.zeros((1, 1)), [np.eye(1)])
        return harness.check_spectrum_inclusion(model, WignerConfig(seed=9), 50, 0.2, 4, support=SEMI, threads=3)

    a, b = once(), once()
    assert a.to_json() == b.to_json()
    paths = a.write(tmp_path, "inc")
    assert [p.name for p in paths] == ["inc.json", "inc.csv", "inc.timing.json"]
    data = json.loads(paths[0].read_text())
    assert data["schema_version"] == 1 and data["verdict"] == "pass"
    assert "wall_clock" not in paths[0].read_text()
    header = paths[1].read_text().splitlines()[0]
    assert header == "max_eig,min_eig,outside,trial"


def test_trial_errors_are_recorded():
    model = ModelSpec(np.zeros((1, 1)), [np.eye(1)])

    class Broken(WignerConfig):
        def samples(self, n, r, trial):
            if trial == 1:
                raise ParameterError("bad draw")
            return super().samples(n, r, trial)

    rep = harness.check_spectrum_inclusion(model, Broken(), 20, 0.5, 3, support=SEMI)
    assert not rep.verdict
    assert rep.errors == [{"trial": 1, "error": "ParameterError: bad draw"}]
    assert rep.summary["completed_trials"] == 2
