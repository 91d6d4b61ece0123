import math

import mpmath as mp
import numpy as np
import pytest

from classroom_aerosol.breathing import Breathing
from classroom_aerosol.config import default_config
from classroom_aerosol.exposure import (
    BoxArrays, ExposureLedger, NotInfectedError, accumulate_dose, dose_increment, r0_estimate, read_heatmap,
    risk_from_dose, risk_heatmap, total_risk,
)
from classroom_aerosol.scene import build_scene

CFG = default_config()
SCENE = build_scene(CFG)
IDS = tuple(SCENE.occupant_ids)
BOXES = BoxArrays.from_scene(SCENE, IDS)
BREATH = Breathing(2.0, 0.0, 1e-4)


def _ledger(infected=(4, 14, 15, 20)):
    return ExposureLedger(IDS, infected, 0.01)


def test_risk_closed_forms(oracle):
    assert risk_from_dose(0.0, 0.01) == 0.0
    assert risk_from_dose(math.log(2.0), 1.0) == pytest.approx(0.5, rel=1e-15)
    assert risk_from_dose(50.0, 0.01) == pytest.approx(oracle["risk_sigma_0p01_mu_50"], rel=1e-14)


def test_risk_rejects_negative_inputs():
    with pytest.raises(ValueError):
        risk_from_dose(-1.0, 0.01)


def test_risk_matches_high_precision_random():
    rng = np.random.default_rng(3)
    s = 10 ** rng.uniform(-4, 0, 500)
    m = 10 ** rng.uniform(-6, 3, 500)
    got = risk_from_dose(m, s)
    mp.mp.dps = 40
    ref = np.array([float(1 - mp.exp(-mp.mpf(a) * mp.mpf(b))) for a, b in zip(s, m)])
    assert np.max(np.abs(got - ref) / ref) < 1e-12


def _one_droplet(d0, t_a=1.0, t_b=2.0, receptor=1, source=4):
    led = _ledger()
    r = led.index(receptor)
    centre = 0.5 * (BOXES.lo[r] + BOXES.hi[r])
    accumulate_dose(led, BOXES, BREATH, CFG.dose.__class__(pulmonary_rate=1e-4),
                    np.array([led.index(source)]), np.array([d0]), centre[None, :], np.array([t_a]), np.array([t_b]))
    return led, led.mu[led.index(source), r]


def test_single_droplet_full_inhale(oracle):
    _, inc = _one_droplet(3e-6)
    assert inc == pytest.approx(oracle["dose_3um_one_inhale"], rel=1e-12)
    assert dose_increment(3e-6, 1.0, CFG.dose.__class__(pulmonary_rate=1e-4)) == pytest.approx(inc, rel=1e-12)


def test_exhale_interval_contributes_nothing():
    _, inc = _one_droplet(3e-6, 0.0, 1.0)
    assert inc == 0.0


def test_linearity_and_cubic_scaling():
    _, a = _one_droplet(2e-6)
    _, b = _one_droplet(4e-6)
    assert b == pytest.approx(8.0 * a, rel=1e-12)
    led = _ledger()
    r = led.index(1)
    c = 0.5 * (BOXES.lo[r] + BOXES.hi[r])
    accumulate_dose(led, BOXES, BREATH, CFG.dose.__class__(pulmonary_rate=1e-4), np.array([led.index(4)] * 2),
                    np.array([2e-6] * 2), np.array([c, c]), np.array([1.0] * 2), np.array([2.0] * 2))
    assert led.mu[led.index(4), r] == pytest.approx(2.0 * a, rel=1e-12)


def test_source_never_doses_itself():
    led, _ = _one_droplet(3e-6, receptor=4, source=4)
    assert led.mu.sum() == 0.0


def test_empty_box_gives_zero():
    led = _ledger()
    accumulate_dose(led, BOXES, BREATH, CFG.dose, np.array([0]), np.array([3e-6]),
                    np.array([[2.5, 2.5, 2.9]]), np.array([1.0]), np.array([2.0]))
    assert led.mu.sum() == 0.0


def test_total_risk_and_heatmap_rows():
    led = _ledger()
    rng = np.random.default_rng(1)
    led.mu[:] = rng.uniform(0, 100, led.mu.shape)
    csv_text = risk_heatmap(led)
    ids, m = read_heatmap(csv_text)
    assert ids == list(IDS)
    assert np.all(np.isnan(np.diag(m)))
    for s in led.infected:
        i = led.index(s)
        brute = sum(1 - math.exp(-0.01 * led.mu[i, j]) for j in range(len(IDS)) if j != i)
        assert total_risk(led, s) == pytest.approx(brute, rel=1e-12)
        assert np.nansum(m[i]) == pytest.approx(total_risk(led, s), rel=1e-6)


def test_total_risk_of_uniform_quarter():
    led = _ledger()
    i = led.index(4)
    led.mu[i, :] = -math.log(0.75) / 0.01
    assert total_risk(led, 4) == pytest.approx(6.0, rel=1e-12)


def test_total_risk_requires_infected_source():
    with pytest.raises(NotInfectedError):
        total_risk(_ledger(), 1)


def test_empty_heatmap():
    ids, m = read_heatmap(risk_heatmap(_ledger()))
    off = m[~np.eye(len(ids), dtype=bool)]
    assert np.all(off == 0.0)


def test_r0_examples():
    led = _ledger((4,))
    i = led.index(4)
    targets = [led.index(k) for k in (1, 2, 3, 5, 6, 7)]
    led.mu[i, targets] = np.inf
    assert r0_estimate(led) == pytest.approx(6.0)
    assert r0_estimate(_ledger((4,))) == 0.0
    led = _ledger((4, 14))
    r = led.index(1)
    led.mu[led.index(4), r] = led.mu[led.index(14), r] = math.log(2.0) / 0.01
    assert r0_estimate(led) == pytest.approx(0.75)
