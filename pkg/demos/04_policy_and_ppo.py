"""
Beta policy and PPO, by hand
============================

The actor-critic is a small conv encoder over the range image, an MLP,
a Beta head per action axis and a value head, with hand-written backprop.
Here we check one gradient numerically and let PPO solve a one-step bandit.
"""
import numpy as np

from asyncnav.learn import AdamW, PpoConfig, RolloutBuffer, ppo_update
from asyncnav.policy import Policy, PolicyConfig, beta_log_prob

cfg = PolicyConfig()
pol = Policy(cfg, seed=0)
print("parameters:", pol.params.size)

rng = np.random.default_rng(0)
image = rng.uniform(0.5, cfg.r_max, (1,) + cfg.image_shape)
proprio = rng.normal(size=(1, cfg.proprio_dim))
bp, value = pol.act_params(pol.encode(image), proprio)
print("alpha", bp.alpha.round(3), "beta", bp.beta.round(3), "value", value.round(4))

# central difference on one parameter of the value head
u = np.full((1, 3), 0.4)
def logp():
    b, _ = pol.act_params(pol.encode(image), proprio)
    return beta_log_prob(u, b.alpha, b.beta)[0]
pol.zero_grad()
b, _ = pol.forward(image, proprio)
from asyncnav.policy import beta_log_prob_grad
ga, gb = beta_log_prob_grad(u, b.alpha, b.beta)
pol.backward(ga, gb, np.zeros(1))
c = pol.store.slice("actor.b").start
h = 1e-5
pol.params[c] += h; fp = logp()
pol.params[c] -= 2 * h; fm = logp()
pol.params[c] += h
print(f"d logp / d actor.b[0]: analytic {pol.grad[c]:.8f}  numeric {(fp - fm) / (2 * h):.8f}")

# a bandit: reward 1 when the first action axis lands above its midpoint
small = Policy(PolicyConfig(image_shape=(4, 4), conv_channels=(2,), feature_dim=4, hidden=(16,), r_max=1.0), seed=1)
pcfg = PpoConfig()
opt = AdamW(small.params.size, pcfg.lr, pcfg.weight_decay)
img = np.ones((1, 4, 4))
for it in range(201):
    n = 256
    p0 = np.zeros((n, 1, small.cfg.proprio_dim))
    b, v = small.act_params(small.encode(img), p0[0])
    act = rng.beta(np.repeat(b.alpha, n, 0), np.repeat(b.beta, n, 0))
    lp = beta_log_prob(act, b.alpha, b.beta)
    reward = (act[:, 0] > 0.5).astype(float)
    buf = RolloutBuffer(p0, np.zeros((n, 1), dtype=np.int64), act[:, None], lp[:, None], np.repeat(v, n)[:, None],
                        reward[:, None], np.ones((n, 1)), np.zeros((n, 1)), img, np.zeros(1))
    buf.finish(pcfg.gamma, pcfg.gae_lambda)
    ppo_update(small, opt, buf, pcfg, rng)
    if it % 50 == 0:
        print(f"update {it:3d}: mean first action {b.mean()[0, 0]:.3f}, success {reward.mean():.2f}")
