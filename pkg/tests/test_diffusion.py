import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfdiff import numerics as nx
from surfdiff.diffusion import (
    antithetic_steps,
    gaussian_kl,
    loss,
    make_schedule,
    posterior_mean_variance,
    predict_x0,
    q_sample,
    reverse_step,
    reverse_variance,
)
from surfdiff.errors import ArgumentError, NumericError

SCHED = make_schedule()


def test_alpha_bar_first_and_single_step():
    assert SCHED.at("alpha_bar", 1) == pytest.approx(0.9999, abs=1e-15)
    s1 = make_schedule(T=1, beta_min=3e-3, beta_max=3e-3)
    assert s1.at("alpha_bar", 1) == pytest.approx(1 - 3e-3, abs=1e-15)


def test_alpha_bar_last_high_precision():
    mpmath.mp.dps = 50
    prod = mpmath.mpf(1)
    lo, hi = mpmath.mpf("1e-4"), mpmath.mpf("0.02")
    for i in range(1000):
        prod *= 1 - (lo + (hi - lo) * i / 999)
    ref = float(prod)
    assert ref == pytest.approx(4.04e-5, rel=2e-3)
    assert SCHED.at("alpha_bar", 1000) == pytest.approx(ref, rel=1e-7)


def test_schedule_brackets():
    assert (SCHED.beta_tilde <= SCHED.beta).all()
    assert SCHED.beta_tilde[0] == 0.0
    # clipped log at t=1 reuses the t=2 value
    assert SCHED.log_beta_tilde_clipped[0] == math.log(SCHED.beta_tilde[1])
    assert np.all(np.diff(SCHED.alpha_bar) < 0)


def test_schedule_errors():
    with pytest.raises(ArgumentError):
        make_schedule(T=0)
    with pytest.raises(ArgumentError):
        make_schedule(beta_min=0.1, beta_max=0.01)
    with pytest.raises(ArgumentError):
        SCHED.at("beta", 0)
    with pytest.raises(ArgumentError):
        SCHED.at("beta", 1001)


def test_q_sample_limits():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((3, 4))
    eps = rng.standard_normal((3, 4))
    t = np.array([1, 10, 999])
    ab = SCHED.at("alpha_bar", t)[:, None]
    np.testing.assert_allclose(q_sample(x0, t, np.zeros_like(x0), SCHED), np.sqrt(ab) * x0)
    np.testing.assert_allclose(q_sample(np.zeros_like(x0), t, eps, SCHED), np.sqrt(1 - ab) * eps)
    np.testing.assert_allclose(predict_x0(q_sample(x0, t, eps, SCHED), t, eps, SCHED), x0, atol=1e-10)


def test_q_sample_matches_step_composition():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal(8)
    n, t = 20000, 50
    x = np.broadcast_to(x0, (n, 8)).copy()
    for s in range(1, t + 1):
        b = SCHED.at("beta", s)
        x = np.sqrt(1 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
    ab = SCHED.at("alpha_bar", t)
    se_mean = np.sqrt((1 - ab) / n)
    assert np.all(np.abs(x.mean(0) - np.sqrt(ab) * x0) < 4 * se_mean)
    se_var = (1 - ab) * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(x.var(0, ddof=1) - (1 - ab)) < 4 * se_var)


def test_posterior_t1_and_zero():
    x0, xt = np.array([0.3, -1.2]), np.array([2.0, 0.5])
    mean, var = posterior_mean_variance(x0, xt, 1, SCHED)
    np.testing.assert_allclose(mean, x0, atol=1e-15)
    assert var == 0.0
    mean, _ = posterior_mean_variance(np.zeros(3), np.zeros(3), 500, SCHED)
    np.testing.assert_array_equal(mean, 0.0)


def test_posterior_matches_gaussian_conditioning():
    s = make_schedule(T=100)
    rng = np.random.default_rng(2)
    x0, xt = rng.standard_normal(5), rng.standard_normal(5)
    t = 10
    ab_prev = s.at("alpha_bar_prev", t)
    a, b = s.at("alpha", t), s.at("beta", t)
    # joint of (x_{t-1}, x_t) given x0, then condition on x_t
    m1 = np.sqrt(ab_prev) * x0
    s11 = 1 - ab_prev
    s12 = np.sqrt(a) * s11
    s22 = a * s11 + b
    m2 = np.sqrt(a) * m1
    ref_mean = m1 + s12 / s22 * (xt - m2)
    ref_var = s11 - s12**2 / s22
    mean, var = posterior_mean_variance(x0, xt, t, s)
    np.testing.assert_allclose(mean, ref_mean, atol=1e-10)
    assert var == pytest.approx(ref_var, abs=1e-10)


def test_kl_example():
    assert gaussian_kl(0.0, 1.0, 1.0, 4.0) == pytest.approx(math.log(2) + 2 / 8 - 0.5, abs=1e-12)
    assert gaussian_kl(0.0, 1.0, 1.0, 4.0) == pytest.approx(0.443147, abs=1e-6)
    assert gaussian_kl(1.5, 2.0, 1.5, 2.0) == 0.0


def test_reverse_variance_endpoints():
    for t in (2, 100, 1000):
        assert reverse_variance(t, 1.0, SCHED) == pytest.approx(SCHED.at("beta", t), rel=1e-12)
        assert reverse_variance(t, 0.0, SCHED) == pytest.approx(SCHED.at("beta_tilde", t), rel=1e-12)


def test_reverse_step_exact_eps_gives_posterior_mean():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(-2, 2, (2, 6))
    eps = rng.standard_normal((2, 6))
    t = 300
    xt = q_sample(x0, t, eps, SCHED)
    v = rng.uniform(0, 1, (2, 6))
    out = reverse_step(xt, t, eps, v, np.zeros_like(xt), SCHED)
    ref, _ = posterior_mean_variance(x0, xt, t, SCHED)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_reverse_step_t1_deterministic_and_clip():
    xt = np.array([[0.2, 0.1]])
    a = reverse_step(xt, 1, np.zeros_like(xt), np.full_like(xt, 0.5), np.ones_like(xt), SCHED)
    b = reverse_step(xt, 1, np.zeros_like(xt), np.full_like(xt, 0.5), -np.ones_like(xt), SCHED)
    np.testing.assert_array_equal(a, b)
    big = np.array([[1e3, -1e3]])
    out = reverse_step(big, 1, np.zeros_like(big), np.zeros_like(big), None, SCHED, clip=5.0)
    np.testing.assert_allclose(out, [[5.0, -5.0]], rtol=1e-12)


def test_antithetic_pairs():
    t = antithetic_steps(np.random.default_rng(0), 7, 1000)
    assert t.shape == (7,) and t.min() >= 1 and t.max() <= 1000
    np.testing.assert_array_equal(t[:3] + t[4:7], 1001)


class Oracle:
    """Returns the true noise and the variance coefficient that reproduces beta_tilde."""

    def __init__(self, eps, v):
        self.eps, self.v = eps, v

    def __call__(self, x, t, ages):
        return nx.Tensor(self.eps, requires_grad=True), nx.Tensor(self.v, requires_grad=True)


def test_loss_perfect_oracle_mse_zero():
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((4, 3, 5))
    eps = rng.standard_normal(x0.shape)
    t = np.array([5, 50, 500, 996])
    terms = loss(Oracle(eps, np.zeros_like(x0)), x0, np.full(4, 30.0), SCHED, t=t, eps=eps, drop=np.zeros(4, bool))
    assert terms.mse == 0.0


def test_loss_zero_prediction_mse_equals_dimension():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((2000, 3, 4))
    zero = lambda x, t, a: (nx.Tensor(np.zeros_like(x), requires_grad=True), nx.Tensor(np.full_like(x, 0.5)))
    terms = loss(zero, x0, np.full(2000, 30.0), SCHED, np.random.default_rng(6))
    # ||eps||^2 has mean 12 and sd sqrt(24); the batch mean has sd ~0.11
    assert abs(terms.mse - 12.0) < 0.5


def test_vlb_gradient_reaches_only_variance_head():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((3, 4))
    e_hat = nx.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    v_hat = nx.Tensor(rng.uniform(0.2, 0.8, (3, 4)), requires_grad=True)
    model = lambda x, t, a: (e_hat, v_hat)
    kw = dict(t=np.array([1, 20, 700]), eps=rng.standard_normal((3, 4)), drop=np.zeros(3, bool))
    terms = loss(model, x0, np.full(3, 30.0), SCHED, lambda_vlb=1.0, **kw)
    ge, gv = nx.backward(terms.total, [e_hat, v_hat])
    terms0 = loss(model, x0, np.full(3, 30.0), SCHED, lambda_vlb=0.0, **kw)
    e_hat.grad = v_hat.grad = None
    ge0, gv0 = nx.backward(terms0.total, [e_hat, v_hat])
    np.testing.assert_allclose(ge, ge0, atol=1e-12)
    assert np.abs(gv).max() > 0
    np.testing.assert_array_equal(gv0, 0.0)


def test_vlb_gradient_matches_finite_difference_in_v():
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((4, 3))
    eps = rng.standard_normal((4, 3))
    # late steps have beta_tilde ~ beta, so v barely matters there and round-off dominates
    t = np.array([1, 2, 40, 200])
    e_hat = nx.Tensor(eps + 0.3 * rng.standard_normal((4, 3)))
    v_hat = nx.Tensor(rng.uniform(0.2, 0.8, (4, 3)), requires_grad=True)
    f = lambda: loss(lambda x, tt, a: (e_hat, v_hat), x0, np.zeros(4), SCHED, lambda_vlb=1.0, t=t, eps=eps, drop=np.ones(4, bool)).total
    assert nx.gradcheck(f, [v_hat], coords_per_param=12) < 1e-4


def test_vlb_matches_closed_form_kl():
    rng = np.random.default_rng(9)
    x0 = rng.standard_normal((1, 6))
    eps = rng.standard_normal((1, 6))
    t = np.array([250])
    e_hat = rng.standard_normal((1, 6))
    v = rng.uniform(0, 1, (1, 6))
    model = lambda x, tt, a: (nx.Tensor(e_hat), nx.Tensor(v, requires_grad=True))
    terms = loss(model, x0, np.zeros(1), SCHED, t=t, eps=eps, drop=np.ones(1, bool))
    xt = q_sample(x0, t, eps, SCHED)
    mu_q, var_q = posterior_mean_variance(x0, xt, t, SCHED)
    mu_p, _ = posterior_mean_variance(predict_x0(xt, t, e_hat, SCHED), xt, t, SCHED)
    var_p = reverse_variance(250, v, SCHED)
    ref = gaussian_kl(mu_q, var_q, mu_p, var_p).sum()
    assert terms.vlb == pytest.approx(ref, rel=1e-10)


def test_loss_drop_mask_and_p_uncond():
    seen = {}

    def model(x, t, ages):
        seen["ages"] = ages.copy()
        return nx.Tensor(np.zeros_like(x), requires_grad=True), nx.Tensor(np.full_like(x, 0.5))

    x0 = np.zeros((4, 2))
    loss(model, x0, np.full(4, 30.0), SCHED, np.random.default_rng(0), drop=np.array([1, 0, 1, 0], bool))
    np.testing.assert_array_equal(np.isnan(seen["ages"]), [True, False, True, False])
    loss(model, x0, np.full(4, 30.0), SCHED, np.random.default_rng(0), p_uncond=1.0)
    assert np.isnan(seen["ages"]).all()
    loss(model, x0, np.full(4, 30.0), SCHED, np.random.default_rng(0), p_uncond=0.0)
    assert not np.isnan(seen["ages"]).any()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_loss_non_finite_names_term():
    bad = lambda x, t, a: (nx.Tensor(np.full_like(x, 1e200)), nx.Tensor(np.full_like(x, 0.5)))
    with pytest.raises(NumericError) as exc:
        loss(bad, np.zeros((2, 3)), np.zeros(2), SCHED, np.random.default_rng(0))
    assert "mse" in (exc.value.op or "") or "mul" in (exc.value.op or "")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 1000), st.floats(0, 1))
def test_reverse_variance_bracketed(t, v):
    s2 = reverse_variance(t, v, SCHED)
    assert SCHED.at("beta_tilde", t) * (1 - 1e-12) <= s2 <= SCHED.at("beta", t) * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 1000), st.integers(0, 2**31))
def test_q_sample_inverts(t, seed):
    rng = np.random.default_rng(seed)
    x0, eps = rng.standard_normal(7), rng.standard_normal(7)
    np.testing.assert_allclose(predict_x0(q_sample(x0, t, eps, SCHED), t, eps, SCHED), x0, atol=1e-6)
