import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slime_po import gradient as G
from slime_po.objective import SlimeHyperParams, chosen_loss, dual_margin_loss, rejected_penalty

mp.mp.dps = 40


def mp_sigmoid(z):
    return 1 / (1 + mp.e ** (-mp.mpf(z)))


def test_grad_chosen(hp):
    assert G.grad_chosen(hp) == -0.1
    assert G.grad_chosen(hp.replace(lambda_w=0.0)) == 0.0
    assert G.grad_chosen(hp.replace(enable_chosen=False)) == 0.0
    for x in np.linspace(-10, 0, 11):
        num = G.finite_difference(lambda t: chosen_loss(t, hp), x)
        assert G.relative_error(G.grad_chosen(hp), num) <= 1e-9


def test_grad_rejected_spot(hp):
    expected = float(-2.5 * 0.1 * mp.log(2) ** 1.5 * 0.5)
    assert G.grad_rejected_token(-1.25, hp) == pytest.approx(expected, rel=1e-13)
    assert G.grad_rejected_token(-1.25, hp) == pytest.approx(-0.072137, abs=1e-5)


def test_grad_rejected_gate_shuts_off(hp):
    assert abs(G.grad_rejected_token(40.0, hp)) < 1e-30
    assert G.grad_rejected_token(-1.25, hp, n_tokens=4) == pytest.approx(G.grad_rejected_token(-1.25, hp) / 4)


def test_grad_rejected_matches_fd(hp, rng):
    for x in rng.uniform(-12, 0, size=200):
        num = G.finite_difference(lambda t: rejected_penalty(np.array([t]), hp), x)
        assert G.relative_error(G.grad_rejected_token(x, hp), num) <= 1e-6


def test_grad_rejected_sign_and_monotone(hp):
    grid = np.linspace(-30, 10, 4001)
    g = G.grad_rejected_token(grid, hp)
    assert np.all(g <= 0)
    assert np.all(np.diff(np.abs(g)) <= 0)


def test_grad_dual_margin_spot(hp):
    assert G.grad_dual_margin(2.0, hp) == 0.0
    assert G.grad_dual_margin(1.0, hp) == -0.8125
    v = mp_sigmoid(2.5)
    assert G.grad_dual_margin(0.0, hp) == pytest.approx(float(-(v + 2.5 * 1.5 * v * (1 - v))), rel=1e-13)
    assert G.grad_dual_margin(0.0, hp) == pytest.approx(-1.18703, abs=1e-5)


def test_grad_dual_margin_kink_is_zero(hp):
    assert G.grad_dual_margin(hp.m_h, hp) == 0.0


def test_grad_dual_margin_sign(hp, rng):
    below = rng.uniform(-30, hp.m_h, size=10_000)
    above = rng.uniform(hp.m_h, 30, size=10_000)
    assert np.all(G.grad_dual_margin(below, hp) < 0)
    assert np.all(G.grad_dual_margin(above, hp) == 0.0)


@pytest.mark.parametrize("flags", [dict(enable_soft=False), dict(enable_hard=False), dict(kappa=0.7, m_s=-0.5)])
def test_grad_dual_margin_ablations_match_fd(hp, rng, flags):
    h2 = hp.replace(**flags)
    for d in rng.uniform(-5, 5, size=200):
        if abs(d - h2.m_h) < 1e-3:
            continue
        num = G.finite_difference(lambda t: dual_margin_loss(t, h2), d)
        # the pure soft gate saturates far from m_s: loss ~1, slope ~1e-6, so
        # central-difference roundoff (~eps/h) needs an absolute floor
        assert G.relative_error(G.grad_dual_margin(d, h2), num, floor=1e-4) <= 1e-5


def test_chain_to_sequences(hp):
    assert G.chain_to_sequences(-1.18703) == (-1.18703, 1.18703)
    assert G.chain_to_sequences(0.0) == (0.0, -0.0)
    b = G.gradient_bundle(-1.0, -1.0, [-0.5, -3.0], hp)
    assert b.d_loss_d_lbar_w == pytest.approx(-0.1 + b.d_dist_d_delta)
    assert b.d_loss_d_lbar_l == -b.d_dist_d_delta
    np.testing.assert_allclose(b.d_loss_d_token_l, G.grad_rejected_token(np.array([-0.5, -3.0]), hp, 2))


def test_finite_difference_basics():
    for x in (-3.0, 0.0, 7.5):
        for h in (1e-3, 1e-5, 0.5):
            assert G.finite_difference(lambda t: t, x, h) == pytest.approx(1.0, abs=1e-10)
    assert G.finite_difference(lambda t: t * t, 3.0, 1e-5) == pytest.approx(6.0, abs=1e-8)
    with pytest.raises(ValueError):
        G.finite_difference(lambda t: t, 0.0, 0.0)
    with pytest.raises(G.GradientCheckError):
        G.finite_difference(lambda t: math.inf, 0.0)


def test_fd_cross_check_dual_margin(hp):
    num = G.finite_difference(lambda t: dual_margin_loss(t, hp), 0.0)
    assert G.relative_error(G.grad_dual_margin(0.0, hp), num) <= 1e-6


def test_sweep_default(hp):
    rep = G.gradcheck_sweep(hp, 1000, seed=0)
    assert len(rep.rows) == 3000
    assert all(err <= 1e-5 for err in rep.max_error().values())
    assert all(abs(r["point"] - hp.m_h) >= 1e-3 for r in rep.rows if r["component"] == "dual_margin")


def test_sweep_deadzone_point(hp):
    rep = G.gradcheck_sweep(hp, 1, points={"chosen": [-1.0], "rejected_token": [-1.0], "dual_margin": [2.0]})
    row = [r for r in rep.rows if r["component"] == "dual_margin"][0]
    assert row["analytic"] == 0.0 and row["numeric"] == 0.0 and row["rel_error"] == 0.0


def test_sweep_deterministic(hp):
    assert G.gradcheck_sweep(hp, 50, seed=4).rows == G.gradcheck_sweep(hp, 50, seed=4).rows


def test_sweep_detects_corruption(hp, monkeypatch):
    monkeypatch.setattr(G, "grad_dual_margin", lambda d, hp: 1.01 * np.asarray(dual_margin_loss(d, hp)))
    assert G.gradcheck_sweep(hp, 20).max_error()["dual_margin"] > 1e-5


def test_report_csv(tmp_path, hp):
    rep = G.gradcheck_sweep(hp, 5)
    rep.write_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "component,point,analytic,numeric,rel_error"
    assert len(lines) == 16


@given(st.floats(-30, 1.49))
def test_dual_margin_grad_negative_property(d):
    assert G.grad_dual_margin(d, SlimeHyperParams()) < 0
