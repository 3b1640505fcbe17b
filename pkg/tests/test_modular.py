import numpy as np
import pytest

from minimaxdnn.architecture import NoiseProfile, SmoothnessSpec
from minimaxdnn.errors import InstanceValidationError, InvalidInputError
from minimaxdnn.modular import (
    Component,
    Dataset,
    ModularInstance,
    bayes_classifier,
    bayes_classify,
    builtin_gam,
    builtin_tensor_anova,
    check_prop1,
    constant_instance,
    estimate_margin_exponent,
    eval_eta,
    gam_linear,
    load_instance,
    margin_probabilities,
    prop1_constants,
    sample_dataset,
)


def ratio_instance():
    """1-D instance with likelihood ratio ``q/p = 1/2 + x`` under ``X ~ U[0, 1]`` and
    equal priors, so ``eta = 1 / (3/2 + x)``; the ratio is uniform on ``[1/2, 3/2]``."""
    sp = SmoothnessSpec(q=0, dims=(), t=(1,), beta=(1.0,), K=(1.0,), ambient_dim=1)
    comp = Component((0,), lambda z: 1.0 / (1.5 + z[:, 0]), "ratio")
    return ModularInstance(spec=sp, stages=((comp,),), d=1, noise=NoiseProfile(1.0, 12.0))


# --- eta and Bayes rule ------------------------------------------------------------

def test_constant_half_everywhere(rng):
    inst = constant_instance(5, 0.5)
    assert np.all(inst.eta(rng.uniform(size=(50, 5))) == 0.5)


def test_gam_linear_hand_values():
    inst = gam_linear()
    assert eval_eta(inst, np.r_[1.0, 1.0, np.full(14, 0.3)]) == 0.75
    assert eval_eta(inst, np.r_[0.5, 0.5, np.full(14, 0.9)]) == 0.5


def test_eval_eta_rejects_points_outside_cube():
    with pytest.raises(InvalidInputError):
        eval_eta(gam_linear(), np.full(16, 1.5))


def test_stage_range_violation_detected(rng):
    sp = SmoothnessSpec(q=0, dims=(), t=(1,), beta=(1.0,), ambient_dim=2)
    bad = ModularInstance(spec=sp, stages=((Component((0,), lambda z: 2 * z[:, 0]),),), d=2)
    with pytest.raises(InstanceValidationError):
        bad.eta(rng.uniform(size=(100, 2)))


@pytest.mark.parametrize("value,label", [(0.5, 1), (0.49, -1), (1.0, 1)])
def test_bayes_classify(value, label):
    assert bayes_classify(value) == label


# --- sampling ------------------------------------------------------------------------

def test_sampling_with_eta_one_gives_positive_labels():
    assert np.all(sample_dataset(constant_instance(3, 1.0), 500, 0).y == 1)


def test_sampling_with_eta_half_is_balanced():
    n = 10_000
    data = sample_dataset(constant_instance(3, 0.5), n, 1)
    assert abs(data.y.mean()) <= 4 / np.sqrt(n)


def test_sampling_is_deterministic_per_seed():
    a = sample_dataset(gam_linear(), 100, 5)
    b = sample_dataset(gam_linear(), 100, 5)
    c = sample_dataset(gam_linear(), 100, 6)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert a.X.tobytes() != c.X.tobytes()


def test_dataset_csv_round_trip(tmp_path):
    data = sample_dataset(gam_linear(4), 20, 0)
    data.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert back.X.tobytes() == data.X.tobytes() and np.array_equal(back.y, data.y)


# --- built-in families ---------------------------------------------------------------

def test_gam_two_indices_default_squash(rng):
    inst = builtin_gam(4, [0, 1])
    X = rng.uniform(size=(20_000, 4))
    eta = inst.eta(X)
    assert eta.min() >= 0.25 and eta.max() <= 0.75
    np.testing.assert_allclose(eta, 0.5 + (X[:, 0] + X[:, 1] - 1) / 4, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(bayes_classifier(inst)(X), np.where(X[:, 0] + X[:, 1] >= 1, 1, -1))


def test_gam_single_index_boundary_at_half():
    inst = builtin_gam(3, [0], squash=(0.0, 1.0))
    assert eval_eta(inst, np.array([0.5, 0.2, 0.9])) == 0.5
    assert bayes_classify(eval_eta(inst, np.array([0.49, 0.0, 0.0]))) == -1
    assert bayes_classify(eval_eta(inst, np.array([0.51, 0.0, 0.0]))) == 1


def test_tensor_anova_product_stage(rng):
    inst = builtin_tensor_anova(3, 2, [(0, 1)])
    X = rng.uniform(size=(30, 3))
    np.testing.assert_allclose(inst.stage_outputs(X)[0][:, 0], X[:, 0] * X[:, 1], rtol=1e-15)


def test_gam_rejects_bad_index_set():
    with pytest.raises(InvalidInputError):
        builtin_gam(3, [0, 3])


def test_load_instance_round_trip():
    inst = load_instance({"family": "gam-linear", "d": 8})
    assert inst.d == 8 and inst.closed_form_bayes_risk == 5 / 12


# --- noise condition ---------------------------------------------------------------

def test_margin_infinite_for_eta_one():
    est = estimate_margin_exponent(constant_instance(2, 1.0), [0.01, 0.1, 0.3], n_mc=10_000)
    assert est.infinite_margin
    assert all(row["p_hat"] == 0 for row in est.table)


def test_margin_exponent_zero_for_eta_half():
    est = estimate_margin_exponent(constant_instance(2, 0.5), [0.01, 0.1, 0.3], n_mc=10_000)
    assert all(row["p_hat"] == 1 for row in est.table)
    assert est.alpha_hat == pytest.approx(0.0, abs=1e-12)


def test_gam_linear_margin_law_and_exponent():
    t = [0.01, 0.05, 0.1]
    p, se = margin_probabilities(gam_linear(), t, 1_000_000, 3)
    law = np.array([8 * x - 16 * x * x for x in t])
    assert np.all(np.abs(p - law) <= 3 * se)
    est = estimate_margin_exponent(gam_linear(), t, n_mc=1_000_000, seed=3)
    assert 0.9 <= est.alpha_hat <= 1.1
    assert est.ok


def test_margin_grid_validation():
    with pytest.raises(InvalidInputError):
        estimate_margin_exponent(gam_linear(), [0.0, 0.1], n_mc=100)


# --- density-ratio sufficient condition -------------------------------------------

def test_prop1_reference_constants():
    assert prop1_constants(0.5, 0.0, 0.5) == (10.0, 12.0)


def test_prop1_first_constant_diverges_as_tau_approaches_one():
    c1 = [prop1_constants(0.5, tau, 0.5)[0] for tau in (0.9, 0.99, 0.999, 0.999999)]
    assert all(a < b for a, b in zip(c1, c1[1:]))
    assert c1[-1] > 1e6


def test_prop1_rejects_bad_parameters():
    for args in [(0.0, 0.0, 0.5), (0.5, 1.0, 0.5), (0.5, 0.0, 0.6)]:
        with pytest.raises(InvalidInputError):
            prop1_constants(*args)


def test_prop1_holds_for_bounded_ratio_density():
    uniform = lambda r: np.where((r >= 0.5) & (r <= 1.5), 1.0, 0.0)
    rep = check_prop1(0.5, 0.0, 0.5, M_d=1.0, ratio_density=uniform)
    assert rep.holds and rep.sup_value == 1.0
    assert (rep.alpha, rep.C_d) == (1.0, 12.0)


def test_prop1_flags_density_above_bound():
    uniform = lambda r: np.where((r >= 0.5) & (r <= 1.5), 1.0, 0.0)
    assert not check_prop1(0.5, 0.0, 0.5, M_d=0.5, ratio_density=uniform).holds


def test_prop1_bound_dominates_margin_probabilities():
    inst = ratio_instance()
    rng = np.random.default_rng(0)
    ratio = 0.5 + inst.sample_x(200_000, rng)[:, 0]
    rep = check_prop1(0.5, 0.0, 0.5, ratio_samples=ratio)
    t = np.geomspace(1e-3, 0.49, 12)
    p, se = margin_probabilities(inst, t, 1_000_000, 1)
    assert np.all(p <= rep.C_d * t ** rep.alpha + 3 * se)
