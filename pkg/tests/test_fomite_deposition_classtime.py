import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from classroom_aerosol.classtime import LinearFit, fit_deviation, fit_max_risk, safe_class_time
from classroom_aerosol.config import FomiteParams, default_config
from classroom_aerosol.deposition import EfficiencyTable, deposition_counts, time_average
from classroom_aerosol.droplets import SurfaceLedger
from classroom_aerosol.exposure import risk_from_dose
from classroom_aerosol.fomite import fomite_risk, mean_hand_load, mucous_dose, surface_loading
from classroom_aerosol.scene import build_scene

P = FomiteParams()


def _lam(p):
    return p.hand_decay + p.f_h * p.c_h + p.f_m * p.c_m


def test_hand_load_zero_surface():
    assert mean_hand_load(P, 0.0) == 0.0


def test_hand_load_approaches_steady_state_like_one_over_x():
    steady = P.f_h * P.c_h / _lam(P)
    for x in (50.0, 500.0, 5000.0):
        gap = 1.0 - mean_hand_load(P, 1.0, x / _lam(P)) / steady
        assert gap * x == pytest.approx(1.0 - math.exp(-x), rel=1e-9)


def test_hand_load_small_interval_series():
    for x in (1e-2, 1e-3, 1e-5, 1e-7):
        t_o = x / _lam(P)
        ratio = mean_hand_load(P, 1.0, t_o) / (P.f_h * P.c_h * t_o / 2)
        assert ratio == pytest.approx(1.0 - x / 3.0 + x * x / 12.0 - x ** 3 / 60.0, rel=1e-9)


def test_hand_load_validation():
    with pytest.raises(ValueError):
        mean_hand_load(P, 1.0, 0.0)
    with pytest.raises(ValueError):
        mean_hand_load(FomiteParams(hand_decay=0.0, f_h=0.0, f_m=0.0), 1.0, 1.0)


def test_mucous_dose_arithmetic():
    p = FomiteParams(f_m=1.0, c_m=0.5, contact_area=0.01)
    assert mucous_dose(p, 100.0, 10.0) == pytest.approx(5.0)
    assert mucous_dose(p, 100.0, 20.0) == pytest.approx(10.0)
    assert mucous_dose(p, 0.0, 10.0) == 0.0


@given(st.floats(1e-4, 1.0), st.floats(0.0, 1e4))
def test_fomite_risk_is_dose_response(sigma, dose):
    assert fomite_risk(dose, sigma) == risk_from_dose(dose, sigma)


@given(st.floats(0.0, 1e6), st.floats(0.0, 1e6))
def test_hand_load_monotone_in_surface_load(a, b):
    lo, hi = sorted((a, b))
    assert mean_hand_load(P, lo) <= mean_hand_load(P, hi)


def test_surface_loading_from_ledger(oracle):
    sc = build_scene(default_config(intervention="shields"))
    led = SurfaceLedger.for_scene(sc)
    loads = surface_loading(sc, led, P)
    assert all(L.C_s == 0 for L in loads)
    shield = next(s for s in sc.surfaces if s.kind == "desk_shield")
    led.add([shield.id], [3e-6], 7e12)
    load = next(L for L in surface_loading(sc, led, P) if L.surface_id == shield.id)
    assert load.C_s * shield.touch_area / 0.5 == pytest.approx(oracle["shield_load_3um_half_m2"], rel=1e-12)


def test_equal_capture_inverse_area():
    sc = build_scene(default_config())
    led = SurfaceLedger.for_scene(sc)
    desk = next(s for s in sc.surfaces if s.name == "desk-1")
    seat = next(s for s in sc.surfaces if s.name == "bench-seat-1")
    led.add([desk.id, seat.id], [3e-6, 3e-6], 7e12)
    loads = {L.name: L for L in surface_loading(sc, led, P)}
    ratio = loads["bench-seat-1"].C_s / loads["desk-1"].C_s
    assert ratio == pytest.approx(desk.touch_area / seat.touch_area, rel=1e-12)


# ---- deposition

SYN = EfficiencyTable.from_rows([(1.0, 0.1, 0.4), (3.0, 0.05, 0.5)])


def test_deposition_synthetic_example():
    assert deposition_counts({1e-6: 10, 3e-6: 4}, SYN) == pytest.approx((1.2, 6.0), rel=1e-14)


def test_deposition_identity_and_empty():
    ones = EfficiencyTable.from_rows([(0.1, 1.0, 1.0), (50.0, 1.0, 1.0)])
    assert deposition_counts({1e-6: 3, 7e-6: 5}, ones) == (8.0, 8.0)
    assert deposition_counts({}, SYN) == (0.0, 0.0)


@given(st.lists(st.tuples(st.floats(0.2, 20.0), st.integers(0, 50)), max_size=20),
       st.lists(st.tuples(st.floats(0.2, 20.0), st.integers(0, 50)), max_size=20))
def test_deposition_linearity(h1, h2):
    tab = EfficiencyTable.from_csv()

    def arr(h):
        return (np.array([d * 1e-6 for d, _ in h]), np.array([n for _, n in h], dtype=float))

    a, b = deposition_counts(arr(h1), tab), deposition_counts(arr(h2), tab)
    both = deposition_counts(arr(h1 + h2), tab)
    assert both[0] == pytest.approx(a[0] + b[0], rel=1e-12, abs=1e-300)
    assert both[1] == pytest.approx(a[1] + b[1], rel=1e-12, abs=1e-300)
    total = sum(n for _, n in h1)
    assert a[0] <= total and a[1] <= total


def test_table_clamps_and_validates():
    po, pb = SYN.lookup([0.1e-6, 10e-6])
    assert po.tolist() == [0.1, 0.05] and pb.tolist() == [0.4, 0.5]
    with pytest.raises(ValueError):
        SYN.lookup([0.0])
    with pytest.raises(ValueError):
        EfficiencyTable.from_rows([(2.0, 0.1, 0.1), (1.0, 0.1, 0.1)])


def test_time_average():
    assert time_average([(0, 0), (2, 4)]) == (1.0, 2.0)
    assert time_average([(3, 5)] * 4) == (3.0, 5.0)
    rng = np.random.default_rng(0)
    s = rng.random((50, 2))
    assert time_average(s) == pytest.approx(tuple(s.mean(axis=0)))
    with pytest.raises(ValueError):
        time_average([])


# ---- class time

def test_exact_line_round_trip():
    t = np.linspace(0, 100, 101)
    fit = fit_max_risk(np.c_[t, 0.001 * t])
    assert fit.slope == pytest.approx(0.001, rel=1e-12)
    assert abs(fit.intercept) < 1e-15 and fit.r_squared == pytest.approx(1.0)
    assert safe_class_time(fit) == pytest.approx(500.0, rel=1e-12)
    assert fit_deviation(fit, np.c_[t[1:], 0.001 * t[1:]]) < 1e-12


def test_constant_series_flags_r_squared():
    fit = fit_max_risk([(0, 0.1), (1, 0.1), (2, 0.1)])
    assert fit.slope == 0.0 and fit.r_squared is None
    assert math.isinf(safe_class_time(fit))


def test_degenerate_times_rejected():
    with pytest.raises(ValueError):
        fit_max_risk([(1, 0.1), (1, 0.2)])


def test_noisy_fit_matches_normal_equations():
    rng = np.random.default_rng(5)
    t = np.sort(rng.uniform(0, 100, 200))
    y = 0.002 * t + 0.01 + rng.normal(0, 0.01, 200)
    fit = fit_max_risk(np.c_[t, y])
    A = np.c_[t, np.ones_like(t)]
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    assert fit.slope == pytest.approx(coef[0], abs=1e-10)
    assert fit.intercept == pytest.approx(coef[1], abs=1e-10)


def test_reference_slope_and_threshold_cases():
    assert safe_class_time(LinearFit(0.5 / 3312, 0.0)) == pytest.approx(3312.0, rel=1e-12)
    assert safe_class_time(LinearFit(0.001, 0.5)) == 0.0
    assert math.isinf(safe_class_time(LinearFit(0.0, 0.1)))


def test_unit_rescaling_invariance():
    t = np.linspace(0, 100, 11)
    y = 0.003 * t + 0.02
    ts = safe_class_time(fit_max_risk(np.c_[t, y]))
    tm = safe_class_time(fit_max_risk(np.c_[t / 60.0, y]))
    assert tm * 60.0 == pytest.approx(ts, rel=1e-12)


def test_deviation_of_shifted_holdout():
    fit = LinearFit(0.001, 0.0)
    t = np.linspace(1, 100, 50)
    assert fit_deviation(fit, np.c_[t, 1.1 * fit.predict(t)]) == pytest.approx(0.1 / 1.1, rel=1e-9)
    assert fit_deviation(fit, np.c_[t, fit.predict(t)]) == 0.0
