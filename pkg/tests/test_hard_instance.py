import json
import math

import numpy as np
import pytest
from scipy import integrate

from minimaxdnn.architecture import SmoothnessSpec
from minimaxdnn.errors import CalibrationError, InvalidInputError
from minimaxdnn.hard_instance import (
    BumpFunction,
    HardInstance,
    bump_h,
    calibrate_hard,
    cell_indices,
    eta_sigma,
    gamma,
    gamma1,
    grid_points,
    holder_quotient,
    nearest_center,
    sample_hard,
    select_bump_amplitude,
    verify_margin,
)
from minimaxdnn.modular import bayes_classify

LIPSCHITZ = SmoothnessSpec(q=0, dims=(), t=(1,), beta=(1.0,))


def make(nu=2, m=1, w=0.5, sigma=None, C_gamma=0.5, beta_star=1.0, t_star=1, d=3, residual_eta=1.0):
    return HardInstance(t_star=t_star, beta_star=beta_star, beta_tilde=1.0, nu=nu, C_gamma=C_gamma, m=m,
                        sigma=sigma if sigma is not None else (1,) * m, w=w, d=d, residual_eta=residual_eta)


# --- bump ------------------------------------------------------------------------

def test_bump_plateau_and_support():
    assert gamma(0.2) == 1.0
    assert gamma(0.6) == 0.0


def test_bump_midpoint_is_half_by_symmetry():
    # gamma1 is symmetric about 3/8, so half its mass lies to the right
    assert 0 < gamma(0.375) < 1
    assert gamma(0.375) == pytest.approx(0.5, abs=1e-12)


def test_bump_matches_adaptive_quadrature():
    total = integrate.quad(gamma1, 0.25, 0.5, epsabs=1e-14, epsrel=1e-13)[0]
    for x in (0.26, 0.3, 0.33, 0.41, 0.45, 0.49):
        tail = integrate.quad(gamma1, x, 0.5, epsabs=1e-14, epsrel=1e-13)[0]
        assert gamma(x) == pytest.approx(tail / total, abs=1e-9)


def test_bump_two_resolutions_agree_and_decrease():
    xs = np.arange(0, 0.6 + 1e-12, 1e-3)
    coarse = BumpFunction(1e-5)(xs)
    fine = BumpFunction(5e-6)(xs)
    assert np.max(np.abs(coarse - fine)) <= 1e-8
    assert np.all(np.diff(coarse) <= 0)


# --- grid ------------------------------------------------------------------------

def test_grid_points():
    assert grid_points(1, 1).tolist() == [[0.5]]
    assert grid_points(2, 1).tolist() == [[0.25], [0.75]]
    assert grid_points(2, 2).tolist() == [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]]


def test_nearest_center():
    assert nearest_center(np.array([0.3]), 2).tolist() == [0.25]
    # equidistant: lower center wins
    assert nearest_center(np.array([0.5]), 2).tolist() == [0.25]
    assert cell_indices(np.array([[0.0, 1.0]]), 4).tolist() == [[0, 3]]


# --- bump height and eta -----------------------------------------------------------

def test_bump_height_at_center():
    inst = make(nu=4, m=2, w=0.1, C_gamma=0.25)
    assert bump_h(np.array([0.375, 0.1, 0.2]), inst) == pytest.approx(4 ** -1.0 * 0.25, rel=1e-15)


def test_bump_vanishes_half_a_cell_away():
    inst = make(nu=4, m=2, w=0.1)
    assert bump_h(np.array([0.25, 0.5, 0.5]), inst) == 0.0


def test_bump_single_cell_hand_value():
    inst = make(nu=1, m=1, w=1.0, C_gamma=0.5)
    assert bump_h(np.array([0.5, 0.0, 0.0]), inst) == 0.5


@pytest.mark.parametrize("sign", [1, -1])
def test_eta_at_active_center(sign):
    inst = make(nu=4, m=2, w=0.1, sigma=(sign, 1), C_gamma=0.5)
    expected = 0.5 + sign * 0.5 * (0.5 * 4 ** -1.0)
    assert eta_sigma(np.array([0.125]), inst) == pytest.approx(expected, rel=1e-15)


def test_sign_flip_mirrors_eta_and_bayes_labels(rng):
    sig = tuple(int(s) for s in rng.choice([-1, 1], size=5))
    a = make(nu=8, m=5, w=0.1, sigma=sig)
    b = make(nu=8, m=5, w=0.1, sigma=tuple(-s for s in sig))
    X = rng.uniform(size=(5000, 3))
    X[:, 0] *= 5 / 8  # active cells only
    ea, eb = a.eta(X), b.eta(X)
    np.testing.assert_allclose(ea, 1 - eb, atol=1e-15)
    off = np.abs(ea - 0.5) > 0
    assert np.all(bayes_classify(ea[off]) == -bayes_classify(eb[off]))


def test_eta_in_unit_interval(rng):
    inst = calibrate_hard(10_000, 16, LIPSCHITZ, 1.0, 1.0)
    eta = inst.eta(inst.sample_x(20_000, rng))
    assert eta.min() >= 0 and eta.max() <= 1
    eta = inst.eta(rng.uniform(size=(20_000, 16)))
    assert eta.min() >= 0 and eta.max() <= 1


# --- sampling ------------------------------------------------------------------------

def test_single_full_cell_holds_all_samples():
    inst = make(nu=3, m=1, w=1.0)
    X = sample_hard(inst, 2000, 0).X
    assert np.all(np.abs(X[:, 0] - 1 / 6) <= 1 / 12)


def test_active_fraction_matches_mass():
    n = 10_000
    inst = make(nu=10, m=5, w=0.1)
    X = sample_hard(inst, n, 4).X
    frac = np.mean(cell_indices(X[:, :1], 10)[:, 0] < 5)
    assert abs(frac - 0.5) <= 4 * math.sqrt(0.25 / n)


def test_sampling_deterministic():
    inst = make(nu=10, m=5, w=0.1)
    a, b = sample_hard(inst, 300, 9), sample_hard(inst, 300, 9)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_mass_above_one_rejected():
    with pytest.raises(InvalidInputError):
        make(nu=10, m=5, w=0.3)


# --- calibration ---------------------------------------------------------------------

def test_calibration_coarse_resolution():
    inst = calibrate_hard(100, 3, LIPSCHITZ, 0.0, 1.0)
    assert inst.diagnostics["nu0"] == 5


def test_calibration_resolution_monotone_in_n():
    nus = [calibrate_hard(2 ** k, 16, LIPSCHITZ, 1.0, 1.0, C_gamma=0.5).nu for k in range(4, 20)]
    assert all(a <= b for a, b in zip(nus, nus[1:]))


def test_calibration_infeasible_raises():
    with pytest.raises(CalibrationError):
        calibrate_hard(2, 2, LIPSCHITZ, 0.0, 1.0)


def test_calibration_hits_target_mass():
    inst = calibrate_hard(10_000, 16, LIPSCHITZ, 1.0, 1.0)
    d = inst.diagnostics
    assert inst.m <= inst.nu ** inst.t_star
    assert inst.m * inst.w <= d["target_mass"] + 1e-12


def test_selected_amplitude_passes_holder_test_and_next_power_fails():
    c = select_bump_amplitude(6, 1.0, 1, K_star=1.0)
    assert holder_quotient(6, 1.0, 1, c) <= 1.0
    if c < 1.0 and 2 * c * 6 ** -1.0 <= 1:
        assert holder_quotient(6, 1.0, 1, 2 * c) > 1.0


def test_round_trip_through_json():
    inst = calibrate_hard(5000, 8, LIPSCHITZ, 1.0, 2.0, seed=3)
    back = HardInstance.from_description(json.loads(json.dumps(inst.to_dict())))
    assert back.to_dict() == inst.to_dict()


# --- margin --------------------------------------------------------------------------

def test_margin_above_amplitude_counts_active_mass():
    inst = make(nu=10, m=5, w=0.1)
    t = inst.amplitude * 1.01
    rep = verify_margin(inst, 1.0, 10.0, [t], n_mc=200_000)
    row = rep.rows[0]
    assert row["p_exact"] == 0.5
    assert abs(row["p_hat"] - 0.5) <= 3 * row["std_error"]


def test_margin_below_amplitude_is_zero():
    inst = make(nu=10, m=5, w=0.1)
    rep = verify_margin(inst, 1.0, 1.0, [inst.amplitude * 0.99], n_mc=100_000)
    assert rep.rows[0]["p_hat"] == 0.0 and rep.rows[0]["p_exact"] == 0.0


def test_residual_region_excluded_below_half():
    inst = make(nu=10, m=5, w=0.1)
    assert inst.margin_law(0.49) == 0.5
    assert inst.margin_law(0.5) == 1.0


def test_calibrated_instance_passes_margin_check():
    inst = calibrate_hard(10_000, 16, LIPSCHITZ, 0.0, 1.0)
    rep = verify_margin(inst, 0.0, 1.0, np.linspace(0.01, 0.45, 10), n_mc=200_000)
    assert rep.passed
