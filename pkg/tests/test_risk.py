import math

import numpy as np
import pytest
from scipy import integrate

from minimaxdnn.architecture import NoiseProfile, RateExponents
from minimaxdnn.errors import FitError, InvalidInputError, UnsupportedInstanceError
from minimaxdnn.modular import bayes_classifier, builtin_gam, builtin_tensor_anova, constant_instance, gam_linear
from minimaxdnn.risk import (
    CellResult,
    RateStudy,
    StudyPlan,
    analytic_bayes_risk,
    compare_to_theory,
    fit_rate,
    mc_excess_risk,
    rate_study,
)
from minimaxdnn.trainer import TrainConfig


def x1_rule(X):
    return np.where(X[:, 0] >= 0.5, 1, -1)


def x1_rule_excess_oracle():
    """``E[|x1 + x2 - 1| / 2]`` over the two triangles where ``sign(x1 - 1/2)``
    disagrees with ``sign(x1 + x2 - 1)``."""
    f = lambda x2, x1: abs(x1 + x2 - 1) / 2
    a = integrate.dblquad(f, 0.5, 1.0, lambda x1: 0.0, lambda x1: 1.0 - x1, epsabs=1e-13)[0]
    b = integrate.dblquad(f, 0.0, 0.5, lambda x1: 1.0 - x1, lambda x1: 1.0, epsabs=1e-13)[0]
    return a + b


# --- excess risk -----------------------------------------------------------------

def test_bayes_classifier_has_zero_excess_risk():
    for inst in (gam_linear(), builtin_gam(5, [1, 3], "sin"), builtin_tensor_anova(4, 2, [(0, 1), (2, 3)])):
        est = mc_excess_risk(bayes_classifier(inst), inst, 50_000, 0)
        assert est.estimate == 0.0 and est.std_error == 0.0


def test_constant_integrand():
    est = mc_excess_risk(lambda X: -np.ones(len(X)), constant_instance(3, 0.75), 1000, 0)
    assert est.estimate == 0.5 and est.std_error == 0.0


def test_oracle_value_for_first_coordinate_rule():
    assert x1_rule_excess_oracle() == pytest.approx(1 / 48, abs=1e-12)


def test_first_coordinate_rule_matches_oracle():
    est = mc_excess_risk(x1_rule, gam_linear(), 1_000_000, 7)
    assert abs(est.estimate - x1_rule_excess_oracle()) <= 3 * est.std_error


def test_zero_probability_relabeling_does_not_change_estimate():
    inst = gam_linear()
    special = np.array([0.3] * 16)

    def patched(X):
        out = x1_rule(X)
        out[np.all(X == special, axis=1)] *= -1
        return out

    assert mc_excess_risk(patched, inst, 100_000, 2) == mc_excess_risk(x1_rule, inst, 100_000, 2)


def test_nested_disagreement_orders_estimates():
    inst = gam_linear()
    prev = 0.0
    for a in (0.0, 0.05, 0.1, 0.3, 0.6):
        rule = lambda X, a=a: np.where(X[:, 0] + X[:, 1] - 1 >= a, 1, -1)
        est = mc_excess_risk(rule, inst, 100_000, 5).estimate
        assert est >= prev
        prev = est


def test_n_test_must_be_positive():
    with pytest.raises(InvalidInputError):
        mc_excess_risk(x1_rule, gam_linear(), 0, 0)


# --- Bayes risk --------------------------------------------------------------------

def test_bayes_risk_constant_instances():
    assert analytic_bayes_risk(constant_instance(3, 0.5)) == 0.5
    assert analytic_bayes_risk(constant_instance(3, 1.0)) == 0.0
    assert analytic_bayes_risk(constant_instance(3, 0.5), method="quadrature") == pytest.approx(0.5, abs=1e-6)


def test_bayes_risk_gam_linear_quadrature_matches_closed_form():
    inst = gam_linear()
    assert analytic_bayes_risk(inst) == 5 / 12
    assert analytic_bayes_risk(inst, method="quadrature") == pytest.approx(5 / 12, abs=1e-6)


def test_bayes_risk_unsupported_instance():
    inst = builtin_gam(5, [0, 1, 2])
    with pytest.raises(UnsupportedInstanceError):
        analytic_bayes_risk(inst)


# --- rate fit ------------------------------------------------------------------------

NS = [512, 1024, 2048, 4096, 8192]


def test_fit_exact_inverse_law():
    fit = fit_rate(NS, [1 / n for n in NS])
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_recovers_scale_and_exponent():
    fit = fit_rate(NS, [2 * n ** (-1 / 3) for n in NS])
    assert fit.slope == pytest.approx(-1 / 3, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(2), abs=1e-12)


def test_fit_invariant_under_permutation(rng):
    risks = rng.uniform(0.01, 0.1, size=5)
    perm = rng.permutation(5)
    a = fit_rate(NS, risks)
    b = fit_rate(np.array(NS)[perm], risks[perm])
    assert a.slope == pytest.approx(b.slope, abs=1e-13) and a.intercept == pytest.approx(b.intercept, abs=1e-12)


def test_fit_drops_nonpositive_values():
    with pytest.warns(UserWarning):
        fit = fit_rate(NS, [0.1, 0.0, 0.05, 0.03, 0.02])
    assert fit.n_points == 4
    with pytest.raises(FitError), pytest.warns(UserWarning):
        fit_rate(NS, [0.1, 0.0, 0.0, -1.0, 0.02])


# --- theory comparison -------------------------------------------------------------

def synthetic_study(values, d=16):
    cells = [CellResult(n, d, 0, 0, v, 0.0) for n, v in zip(NS, values)]
    study = RateStudy(cells, d)
    if any(v > 0 for v in values):
        study.fit = fit_rate(NS, values)
    return study


def test_planted_power_law_passes():
    exps = RateExponents(0.5, 0.25, 0)
    study = synthetic_study([3.0 * n ** -0.5 for n in NS])
    rep = compare_to_theory(study, exps, NoiseProfile(1.0, 8.0))
    assert rep.slope == pytest.approx(-0.5, abs=1e-12)
    assert rep.verdict == "PASS"
    assert all(rep.upper(c.n, 16, 8.0) >= c.excess_risk * (1 - 1e-12) for c in study.cells)
    assert all(rep.lower(c.n, 16, 8.0) <= c.excess_risk * (1 + 1e-12) for c in study.cells)


def test_flat_study_is_flagged():
    rep = compare_to_theory(synthetic_study([0.05] * 5), RateExponents(0.5, 0.25, 0), NoiseProfile(1.0, 8.0))
    assert rep.verdict == "FLAG"


def test_two_inversions_are_flagged_despite_slope_in_band():
    study = synthetic_study([0.1, 0.05, 0.06, 0.03, 0.035])
    assert study.inversions() == 2
    rep = compare_to_theory(study, RateExponents(0.5, 0.25, 0), NoiseProfile(1.0, 8.0))
    assert -1.0 <= rep.slope <= -0.15
    assert rep.verdict == "FLAG"


def test_all_zero_study_is_not_applicable():
    rep = compare_to_theory(synthetic_study([0.0] * 5), RateExponents(0.5, 0.25, 0), NoiseProfile(1.0, 8.0))
    assert rep.verdict == "N/A"


# --- study runner ------------------------------------------------------------------

def test_plan_validation():
    with pytest.raises(InvalidInputError):
        StudyPlan({"family": "gam-linear"}, (1024, 512), (0,))
    with pytest.raises(InvalidInputError):
        StudyPlan({"family": "gam-linear"}, (512,), (1, 1))


def test_small_study_runs_and_is_seed_stable():
    plan = StudyPlan({"family": "gam-linear", "d": 4}, (64, 128, 256), (0, 1),
                     cfg=TrainConfig(epochs=3, restarts=1), candidates=(0.0,), n_test=2000,
                     arch={"L": 2, "widths": [4, 4, 4, 1], "s": 8, "B": 1.0})
    a, b = rate_study(plan), rate_study(plan)
    assert not a.errors and len(a.cells) == 6
    assert [c.excess_risk for c in a.cells] == [c.excess_risk for c in b.cells]
    assert repr(a.rows()) == repr(b.rows())
