import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ruinlevy.errors import DomainError, GridError, UnsupportedModel
from ruinlevy.fluctuation import (RenewalTable, asymptotic_constant_check, kappa, kappa_hat, ladder_levy_measure,
                                  lundberg_root, phi_hat, renewal_table, renewal_transform, sup_normalization,
                                  wiener_hopf_residual)
from ruinlevy.model import build_model, constants
from conftest import load


def test_phi_hat_zero(m0, m1):
    assert phi_hat(m0, 0.0) == 0.0
    assert phi_hat(m1, 0.0) == 0.0


def test_phi_hat_m1_closed_form(m1):
    assert phi_hat(m1, 1.0) == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    assert kappa_hat(m1, 1.0, 0.0) == pytest.approx(1 / math.sqrt(2), abs=1e-10)


def test_phi_hat_m0_residual(m0):
    assert abs(m0.laplace_exponent(-phi_hat(m0, 0.5)) - 0.5) <= 1e-10


def test_kappa_removable_singularity_gives_q(m0, m1):
    for m in (m0, m1):
        assert kappa(m, 0.0, 0.0) == pytest.approx(constants(m).killing_rate, rel=1e-12)
    assert kappa_hat(m0, 0.0, 0.0) == 0.0


def test_kappa_m1_closed_form(m1):
    for b in (0.3, 1.0, 4.0):
        assert kappa(m1, 0.0, b) == pytest.approx(2 - 1 / (1 + b), abs=1e-12)


def test_kappa_at_minus_alpha_is_first_constant(m0):
    c = constants(m0)
    assert kappa(m0, 0.0, -m0.alpha) == pytest.approx(c.jump_rate / m0.alpha, rel=1e-12)
    assert kappa(m0, 0.0, -m0.alpha) * kappa_hat(m0, 0.0, m0.alpha) == pytest.approx(c.jump_rate, rel=1e-12)


def test_kappa_rejects_deep_tilt(m0):
    with pytest.raises(DomainError):
        kappa(m0, 0.0, -1.5)
    with pytest.raises(DomainError):
        kappa(m0, -1.0, 0.0)


@pytest.mark.parametrize("a", [0.0, 0.1, 1.0, 10.0])
def test_kappa_positive_at_minus_alpha(m0, m1, a):
    assert kappa(m0, a, -m0.alpha) > 0
    assert kappa(m1, a, -m1.alpha) > 0


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.0, 5.0), frac=st.floats(0.0, 1.0))
def test_wiener_hopf_identity_holds_everywhere(m0, a, frac):
    assert wiener_hopf_residual(m0, a, frac * m0.alpha) <= 1e-10


def test_ladder_measure_total_mass(m0):
    lad = ladder_levy_measure(m0)
    assert lad.tail(0.0) == pytest.approx(m0.intensity * m0.claim.mean, rel=1e-10)
    assert constants(m0).killing_rate + lad.total_mass == pytest.approx(m0.premium, rel=1e-12)


@pytest.mark.parametrize("b", [0.1, 0.5, 1.0, 3.0])
def test_ladder_measure_reproduces_kappa(m0, m1, b):
    for m in (m0, m1):
        assert ladder_levy_measure(m).exponent(b) == pytest.approx(kappa(m, 0.0, b), abs=1e-8)


def test_ladder_measure_needs_pure_jumps():
    cfg = load("m0")
    cfg["sigma"] = 0.3
    m = build_model(cfg)
    with pytest.raises(UnsupportedModel):
        ladder_levy_measure(m)
    with pytest.raises(UnsupportedModel):
        renewal_table(m)


def test_renewal_oracle_exponential_claims(t1):
    u = t1.x[t1.x <= 20.0]
    assert np.max(np.abs(t1.ruin_probability(u) - 0.5 * np.exp(-0.5 * u))) <= 1e-5
    assert t1.ruin_probability(0.0) == pytest.approx(0.5, abs=1e-5)
    assert t1.ruin_probability(2.0) == pytest.approx(0.5 * math.exp(-1), abs=1e-5)


def test_renewal_table_conventions(t0):
    assert t0.renewal(-1.0) == 0.0
    assert t0.renewal(0.0) >= 0
    assert np.all(np.diff(t0.V) >= -1e-15)
    assert 1 - 1e-6 <= t0.killing_rate * t0.V[-1] <= 1.0
    assert t0.ruin[-1] < 1e-6
    assert np.all((t0.ruin >= 0) & (t0.ruin <= 1))


def test_ruin_probability_domain(t0):
    with pytest.raises(DomainError):
        t0.ruin_probability(-0.1)
    with pytest.raises(GridError):
        t0.ruin_probability(t0.x_max + 1)


def test_coarse_step_rejected(m0):
    with pytest.raises(DomainError):
        renewal_table(m0, h=0.02)


def test_grid_cap_enforced(m0):
    with pytest.raises(GridError):
        renewal_table(m0, x_max=10.0, x_cap=20.0)


@pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
def test_renewal_transform_matches_kappa(m0, m1, t0, t1, b):
    for m, t in ((m0, t0), (m1, t1)):
        assert renewal_transform(t, b) * kappa(m, 0.0, b) == pytest.approx(1.0, abs=1e-4)


def test_sup_normalization(m0, m1, t0, t1):
    assert sup_normalization(m0, t0) == pytest.approx(1.0, abs=1e-4)
    assert sup_normalization(m1, t1) == pytest.approx(1.0, abs=1e-4)


def test_first_constant_integral_closed_form(m0):
    # A * int_0^inf e^{t psi(alpha)} dt = A / A
    a = constants(m0).jump_rate
    assert a * (1.0 / -m0.laplace_exponent(m0.alpha)) == pytest.approx(1.0, abs=1e-15)


def test_asymptotic_constant_trend(m0, t0):
    check = asymptotic_constant_check(m0, t0, (10, 20, 30, 40))
    c = constants(m0)
    assert check.target == c.tail_constant == c.jump_rate * c.overshoot_prob
    assert abs(check.ratios[-1] / check.target - 1) <= 0.1
    assert check.distances[-1] < check.distances[0]


def test_extrapolated_ruin_is_continuous(t0, t1):
    for t in (t0, t1):
        edge = t.x_max
        assert t.ruin_extended(edge + 1e-9) == pytest.approx(t.ruin[-1], rel=1e-6)
        assert t.ruin_extended(edge + 5) < t.ruin[-1]


def test_tilted_mass_beyond_grid_matches_extrapolation(t0):
    assert t0.tilted_tail_mass(t0.x_max) == pytest.approx(t0.beyond_mass, rel=1e-9)
    assert t0.tilted_tail_mass(2 * t0.x_max) < t0.beyond_mass


@pytest.mark.parametrize("zeta", [0.1, 0.5, 1.0, 2.0])
def test_lundberg_root_residual(m0, m1, zeta):
    for m in (m0, m1):
        assert abs(m.laplace_exponent(-lundberg_root(m, zeta)) - zeta) <= 1e-10
        assert kappa_hat(m, zeta, -lundberg_root(m, zeta)) == pytest.approx(0.0, abs=1e-12)


def test_lundberg_root_special_values(m1):
    assert lundberg_root(m1, 0.0) == 0.0
    assert lundberg_root(m1, 1.0) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_table_csv_round_trip(t1, tmp_path):
    path = tmp_path / "table.csv"
    t1.to_csv(path, meta={"config_hash": "x"})
    back = RenewalTable.from_csv(path)
    assert np.array_equal(back.x, t1.x)
    assert np.allclose(back.ruin, t1.ruin, rtol=1e-15, atol=0)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
    assert rows[0] == ["x", "V", "qVbar"]


def test_corrupt_table_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# step=0.005\nx,V,qVbar\n0,1,nan\n")
    with pytest.raises(ValueError):
        RenewalTable.from_csv(path)
