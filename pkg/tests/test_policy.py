import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncnav.nn import UsageError
from asyncnav.policy import (BetaParams, ConfigurationError, Policy, PolicyConfig, assemble_observation,
                             beta_entropy, beta_entropy_grad, beta_log_prob, beta_log_prob_grad, no_tem_phi,
                             proprio_vector, read_checkpoint, sample_and_logprob, scale_action)
from asyncnav.temporal import encode
from asyncnav.world import VehicleState, quat_from_euler

import gradcheck
import oracles

CFG = PolicyConfig()


@pytest.mark.parametrize("head", ["actor_logprob", "value", "ppo_loss"])
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(head, seed):
    worst, n = gradcheck.check_head(head, seed)
    assert n >= 100 and worst < 1e-4


def test_zero_actor_gives_ln2_plus_one():
    pol = Policy(CFG, seed=0)
    pol.store.value("actor.w")[...] = 0.0
    pol.store.value("actor.b")[...] = 0.0
    z = pol.encode(np.full(CFG.image_shape, CFG.r_max))
    bp, _ = pol.act_params(z, np.zeros(CFG.proprio_dim))
    assert np.allclose(bp.alpha, math.log(2) + 1, atol=1e-15) and np.array_equal(bp.alpha, bp.beta)
    assert np.allclose(pol.mean_action(z, np.zeros(CFG.proprio_dim)), 0.0, atol=1e-15)


def test_encoder_determinism_and_bias_pattern():
    pol = Policy(CFG, seed=3)
    empty = np.full(CFG.image_shape, CFG.r_max)
    assert np.array_equal(pol.encode_perception(empty), pol.encode_perception(empty))
    pol.params[...] = 0.0
    pol.store.value("proj.b")[...] = np.arange(CFG.feature_dim)
    assert np.array_equal(pol.encode_perception(empty), np.arange(CFG.feature_dim, dtype=float))
    with pytest.raises(ConfigurationError):
        pol.encode(np.zeros((10, 10)))


def test_beta_examples():
    u = np.array([[0.1, 0.5, 0.93]])
    assert beta_log_prob(u, np.ones(3), np.ones(3))[0] == 0.0
    two = np.full(3, 2.0)
    assert beta_log_prob(np.full((1, 3), 0.5), two, two)[0] == pytest.approx(3 * math.log(1.5), abs=1e-14)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(1, 6, 3), rng.uniform(1, 6, 3)
        x = rng.uniform(0.01, 0.99, 3)
        assert beta_log_prob(x, a, b) == pytest.approx(oracles.beta_logpdf(x, a, b), abs=1e-12)
        assert beta_entropy(a, b) == pytest.approx(oracles.beta_entropy(a, b), abs=1e-12)


def test_beta_derivatives_match_differences():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(1, 5, 3), rng.uniform(1, 5, 3)
    u = rng.uniform(0.05, 0.95, 3)
    h = 1e-6
    ga, gb = beta_log_prob_grad(u, a, b)
    ha, hb = beta_entropy_grad(a, b)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        assert ga[k] == pytest.approx((beta_log_prob(u, a + e, b) - beta_log_prob(u, a - e, b)) / (2 * h), rel=1e-7)
        assert gb[k] == pytest.approx((beta_log_prob(u, a, b + e) - beta_log_prob(u, a, b - e)) / (2 * h), rel=1e-7)
        assert ha[k] == pytest.approx((beta_entropy(a + e, b) - beta_entropy(a - e, b)) / (2 * h), rel=1e-6, abs=1e-9)
        assert hb[k] == pytest.approx((beta_entropy(a, b + e) - beta_entropy(a, b - e)) / (2 * h), rel=1e-6, abs=1e-9)


def test_monte_carlo_mean():
    bp = BetaParams(np.array([1.3, 4.0, 2.2]), np.array([3.1, 1.5, 2.2]))
    rng = np.random.default_rng(0)
    u = np.stack([sample_and_logprob(bp, rng).u for _ in range(20000)])
    mean = bp.mean()
    var = bp.alpha * bp.beta / ((bp.alpha + bp.beta) ** 2 * (bp.alpha + bp.beta + 1))
    se = np.sqrt(var / len(u))
    assert np.all(np.abs(u.mean(axis=0) - mean) < 3 * se)


def test_sample_scaling_and_interior():
    rng = np.random.default_rng(2)
    bp = BetaParams(np.full(3, 1.0), np.full(3, 1.0))
    for _ in range(200):
        s = sample_and_logprob(bp, rng)
        assert np.all((s.u > 0) & (s.u < 1)) and np.all(np.abs(s.a) <= CFG.v_max)
        assert np.allclose(s.a, -5 + 10 * s.u)
    assert np.array_equal(scale_action([0.0, 0.5, 1.0], 5.0), [-5.0, 0.0, 5.0])
    assert np.isfinite(beta_log_prob(np.array([[0.0, 1.0, 0.5]]), np.full(3, 7.0), np.full(3, 1.0)))


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 30.0))
def test_alpha_beta_exceed_epsilon(seed, scale):
    rng = np.random.default_rng(seed)
    pol = Policy(CFG, seed=seed % 1000)
    pol.params[...] *= scale
    z = rng.normal(0, scale, (16, CFG.feature_dim))
    bp, v = pol.act_params(z, rng.normal(0, scale, (16, CFG.proprio_dim)))
    assert np.all(bp.alpha > CFG.epsilon) and np.all(bp.beta > CFG.epsilon) and np.all(np.isfinite(v))


def test_backward_requires_forward():
    pol = Policy(CFG, seed=0)
    with pytest.raises(UsageError):
        pol.backward(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1))


def test_gradient_linearity_and_unused_parameters():
    pol, images, proprio, index, u, w, _ = gradcheck.random_problem(5)
    a = CFG.action_dim

    def grad_of(dv):
        pol.zero_grad()
        pol.forward(images, proprio, index)
        pol.backward(np.zeros((len(w), a)), np.zeros((len(w), a)), dv)
        return pol.grad.copy()

    g1, g2, g12 = grad_of(w), grad_of(w ** 2), grad_of(w + w ** 2)
    assert np.allclose(g12, g1 + g2, atol=1e-12)
    # the value loss does not depend on the actor head
    for name in ("actor.w", "actor.b"):
        assert np.all(g1[pol.store.slice(name)] == 0)


def test_observation_layout():
    st0 = VehicleState(np.array([1.0, 2.0, 1.5]), quat_from_euler(0, 0, math.pi / 2), v=[0.0, 1.0, 0.0])
    obs = assemble_observation(np.zeros(32), st0, np.array([1.0, 2.0, 1.5]), np.zeros(3), 2.0, encode(0.0))
    assert np.allclose(obs.p_rel, 0.0) and np.array_equal(obs.phi, [0.0, 1.0, 0.0, 1.0])
    assert np.allclose(obs.v, [1.0, 0.0, 0.0])  # body frame: moving straight ahead
    assert obs.vector().size == 32 + 3 + 4 + 3 + 3 + 3 + 1 + 4 == CFG.obs_dim
    obs = assemble_observation(np.zeros(32), st0, np.array([1.0, 5.0, 1.5]), np.zeros(3), 2.0, encode(0.0))
    assert np.allclose(obs.p_rel, [3.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        assemble_observation(np.full(32, np.nan), st0, st0.p, np.zeros(3), 2.0, encode(0.0))


def test_no_tem_changes_only_phi_slots():
    st0 = VehicleState(np.array([1.0, 2.0, 1.5]), quat_from_euler(0.1, 0.0, 0.4), v=[0.5, 1.0, 0.0])
    goal = np.array([9.0, 0.0, 1.5])
    with_tem = proprio_vector(st0, goal, np.ones(3), 2.0, encode(0.07))
    without = proprio_vector(st0, goal, np.ones(3), 2.0, no_tem_phi())
    assert with_tem.size == without.size
    diff = np.nonzero(with_tem != without)[0]
    assert set(diff) <= set(range(with_tem.size - 4, with_tem.size)) and np.all(without[-4:] == 0)


def test_checkpoint_round_trip_and_rejection(tmp_path):
    pol = Policy(CFG, seed=9)
    pol.save(tmp_path / "p.ckpt", meta={"note": "x"})
    back = Policy.load(tmp_path / "p.ckpt", expect=CFG)
    assert np.array_equal(back.params, pol.params)
    cfg, _, meta = read_checkpoint(tmp_path / "p.ckpt")
    assert cfg == CFG and meta == {"note": "x"}
    with pytest.raises(ConfigurationError):
        Policy.load(tmp_path / "p.ckpt", expect=PolicyConfig(hidden=(64, 64)))
    data = (tmp_path / "p.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-8])
    with pytest.raises(ConfigurationError):
        Policy.load(tmp_path / "cut.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello")
    with pytest.raises(ConfigurationError):
        Policy.load(tmp_path / "junk.ckpt")


def test_forward_is_pure():
    pol, images, proprio, index, _, _, _ = gradcheck.random_problem(2)
    a1, v1 = pol.forward(images, proprio, index)
    a2, v2 = pol.forward(images, proprio, index)
    assert np.array_equal(a1.alpha, a2.alpha) and np.array_equal(v1, v2)
    bp, v3 = pol.act_params(pol.encode(images)[index], proprio)
    assert np.allclose(bp.alpha, a1.alpha, atol=1e-13) and np.allclose(v3, v1, atol=1e-13)


def test_concentration_stays_strictly_above_epsilon_when_softplus_underflows():
    pol = Policy(PolicyConfig(), seed=0)
    pol.store.value("actor.b")[...] = -60.0  # softplus(-60) is far below half an ulp of 1
    pol.store.value("actor.w")[...] = 0.0
    bp, _ = pol.act_params(np.zeros((2, 32)), np.zeros((2, pol.cfg.proprio_dim)))
    assert np.all(bp.alpha == np.nextafter(1.0, 2.0)) and np.all(bp.beta > 1.0)
