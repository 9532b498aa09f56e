"""Variance and entropy bookkeeping for delayed observations on small Markov chains.

Setup: the state S evolves by a fixed-policy transition matrix. The agent sees
O' = S delayed by k steps, with k drawn from a small discrete distribution, and
O = (O', k) when the delay is reported alongside. G is the discounted return
from the current state over a short horizon.

Two routes are provided for every quantity: exact enumeration over the chain
and Monte Carlo sampling. The check compares them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ToyMdp:
    transition: np.ndarray  # (n, n) row-stochastic, policy already folded in
    reward: np.ndarray  # (n,)
    aoi_probs: np.ndarray  # P(k) for k = 0, 1, 2, ...
    gamma: float = 0.9
    horizon: int = 3

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.allclose(P.sum(axis=1), 1.0) or (P < 0).any():
            raise ValueError("transition must be a square row-stochastic matrix")
        pk = np.asarray(self.aoi_probs, dtype=np.float64)
        if (pk < 0).any() or not math.isclose(pk.sum(), 1.0):
            raise ValueError("aoi_probs must be a probability vector")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=np.float64))
        object.__setattr__(self, "aoi_probs", pk)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def stationary(self) -> np.ndarray:
        w, v = np.linalg.eig(self.transition.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        return pi / pi.sum()


def three_state_chain(aoi_probs=(0.5, 0.5, 0.0)) -> ToyMdp:
    P = np.array([[0.6, 0.3, 0.1],
                  [0.2, 0.5, 0.3],
                  [0.3, 0.1, 0.6]])
    return ToyMdp(P, np.array([1.0, -1.0, 2.0]), np.asarray(aoi_probs, dtype=np.float64))


def delay_free(mdp: ToyMdp) -> ToyMdp:
    pk = np.zeros_like(mdp.aoi_probs)
    pk[0] = 1.0
    return ToyMdp(mdp.transition, mdp.reward, pk, mdp.gamma, mdp.horizon)


# -- exact route ----------------------------------------------------------------------

def return_moments(mdp: ToyMdp) -> tuple[np.ndarray, np.ndarray]:
    """E[G | S=s] and E[G^2 | S=s] by summing over every path of the horizon."""
    n = mdp.n_states
    m1 = np.zeros(n)
    m2 = np.zeros(n)
    disc = mdp.gamma ** np.arange(mdp.horizon)
    for s0 in range(n):
        for tail in itertools.product(range(n), repeat=mdp.horizon - 1):
            path = (s0,) + tail
            p = 1.0
            for a, b in zip(path[:-1], path[1:]):
                p *= mdp.transition[a, b]
            g = float(np.dot(disc, mdp.reward[list(path)]))
            m1[s0] += p * g
            m2[s0] += p * g * g
    return m1, m2


@dataclass
class VarianceTerms:
    var_given_obs: float  # E_{O'}[Var(G | O')]
    expected_var: float  # E[Var(G | O', k)]
    excess: float  # E_{O'}[Var_k(E[G | O', k])]

    @property
    def residual(self) -> float:
        return self.var_given_obs - self.expected_var - self.excess


def exact_terms(mdp: ToyMdp) -> VarianceTerms:
    pi = mdp.stationary()
    m1, m2 = return_moments(mdp)
    pk = mdp.aoi_probs
    Pk = [np.linalg.matrix_power(mdp.transition, k) for k in range(len(pk))]
    mean_ok = np.stack([Pk[k] @ m1 for k in range(len(pk))], axis=1)  # (o', k)
    sq_ok = np.stack([Pk[k] @ m2 for k in range(len(pk))], axis=1)
    var_ok = sq_ok - mean_ok ** 2
    mean_o = mean_ok @ pk
    sq_o = sq_ok @ pk
    var_o = sq_o - mean_o ** 2
    expected_var = float(pi @ (var_ok @ pk))
    excess = float(pi @ (((mean_ok - mean_o[:, None]) ** 2) @ pk))
    return VarianceTerms(float(pi @ var_o), expected_var, excess)


def joint_state_obs(mdp: ToyMdp) -> np.ndarray:
    """Joint P(S, O', k) with O' drawn from the stationary distribution."""
    pi = mdp.stationary()
    pk = mdp.aoi_probs
    n = mdp.n_states
    joint = np.zeros((n, n, len(pk)))
    for k, p in enumerate(pk):
        joint[:, :, k] = (pi[:, None] * np.linalg.matrix_power(mdp.transition, k)).T * p
    return joint


def conditional_entropy(joint: np.ndarray, target: tuple[int, ...], given: tuple[int, ...]) -> float:
    """H(target | given) in nats by direct summation over a joint probability table.

    Axes outside ``target`` and ``given`` are marginalized out first.
    """
    joint = np.asarray(joint, dtype=np.float64)
    keep = tuple(sorted(set(target) | set(given)))
    drop = tuple(a for a in range(joint.ndim) if a not in keep)
    pj = joint.sum(axis=drop, keepdims=True) if drop else joint
    drop_t = tuple(a for a in target if a not in given)
    pg = pj.sum(axis=drop_t, keepdims=True) if drop_t else pj
    pg = np.broadcast_to(pg, pj.shape)
    mask = pj > 0
    return float(-np.sum(pj[mask] * np.log(pj[mask] / pg[mask]))) + 0.0


# -- Monte Carlo route ----------------------------------------------------------------

def _sample_next(P_cum: np.ndarray, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(len(s))
    return (u[:, None] > P_cum[s]).sum(axis=1)


def sample(mdp: ToyMdp, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draws (O', k, S, G) tuples."""
    P_cum = np.cumsum(mdp.transition, axis=1)
    P_cum[:, -1] = 1.0
    pi_cum = np.cumsum(mdp.stationary())
    pi_cum[-1] = 1.0
    obs = (rng.random(n)[:, None] > pi_cum[None, :]).sum(axis=1)
    pk_cum = np.cumsum(mdp.aoi_probs)
    pk_cum[-1] = 1.0
    k = (rng.random(n)[:, None] > pk_cum[None, :]).sum(axis=1)
    s = obs.copy()
    for step in range(1, len(mdp.aoi_probs)):
        move = k >= step
        s[move] = _sample_next(P_cum, s[move], rng)
    g = np.zeros(n)
    cur = s.copy()
    for h in range(mdp.horizon):
        g += mdp.gamma ** h * mdp.reward[cur]
        if h + 1 < mdp.horizon:
            cur = _sample_next(P_cum, cur, rng)
    return obs, k, s, g


def plugin_terms(obs: np.ndarray, k: np.ndarray, g: np.ndarray, n_states: int, n_k: int) -> VarianceTerms:
    """Empirical (population-weighted) decomposition from samples."""
    n = len(g)
    cell = obs * n_k + k
    cnt = np.bincount(cell, minlength=n_states * n_k).astype(np.float64)
    s1 = np.bincount(cell, weights=g, minlength=n_states * n_k)
    s2 = np.bincount(cell, weights=g * g, minlength=n_states * n_k)
    safe = np.maximum(cnt, 1.0)
    mean_c = s1 / safe
    var_c = s2 / safe - mean_c ** 2
    cnt_o = cnt.reshape(n_states, n_k).sum(axis=1)
    safe_o = np.maximum(cnt_o, 1.0)
    mean_o = s1.reshape(n_states, n_k).sum(axis=1) / safe_o
    var_o = s2.reshape(n_states, n_k).sum(axis=1) / safe_o - mean_o ** 2
    expected_var = float(np.sum(cnt * var_c) / n)
    dev = (mean_c.reshape(n_states, n_k) - mean_o[:, None]) ** 2
    excess = float(np.sum(cnt.reshape(n_states, n_k) * dev) / n)
    return VarianceTerms(float(np.sum(cnt_o * var_o) / n), expected_var, excess)


@dataclass
class DecompositionReport:
    n_samples: int
    estimate: VarianceTerms
    stderr: VarianceTerms
    exact: VarianceTerms
    h_state_given_obs: float  # H(S | O')
    h_state_given_obs_aoi: float  # H(S | O', k)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        e, se, x = self.estimate, self.stderr, self.exact
        out = [f"Var(G|O')        mc={e.var_given_obs:.6f} se={se.var_given_obs:.2e} exact={x.var_given_obs:.6f}",
               f"E_k[Var(G|O)]    mc={e.expected_var:.6f} se={se.expected_var:.2e} exact={x.expected_var:.6f}",
               f"Var_k(E[G|O])    mc={e.excess:.6f} se={se.excess:.2e} exact={x.excess:.6f}",
               f"H(S|O)={self.h_state_given_obs_aoi:.6f} H(S|O')={self.h_state_given_obs:.6f}"]
        out += [f"{name}: {'pass' if ok else 'FAIL'}" for name, ok in self.checks.items()]
        return out


def variance_decomposition_check(mdp: ToyMdp, n_samples: int = 1_000_000, seed: int = 0,
                                 n_batches: int = 50) -> DecompositionReport:
    """Monte Carlo Law-of-Total-Variance check against exact enumeration, plus the entropy inequality."""
    rng = np.random.default_rng(seed)
    obs, k, _, g = sample(mdp, n_samples, rng)
    n_states, n_k = mdp.n_states, len(mdp.aoi_probs)
    est = plugin_terms(obs, k, g, n_states, n_k)
    parts = [plugin_terms(o, kk, gg, n_states, n_k)
             for o, kk, gg in zip(np.array_split(obs, n_batches), np.array_split(k, n_batches),
                                  np.array_split(g, n_batches))]
    sd = lambda attr: float(np.std([getattr(p, attr) for p in parts], ddof=1) / math.sqrt(n_batches))
    se = VarianceTerms(sd("var_given_obs"), sd("expected_var"), sd("excess"))
    combined = math.sqrt(se.var_given_obs ** 2 + se.expected_var ** 2 + se.excess ** 2)
    exact = exact_terms(mdp)
    joint = joint_state_obs(mdp)
    h_o = conditional_entropy(joint, (0,), (1,))
    h_ok = conditional_entropy(joint, (0,), (1, 2))
    random_aoi = np.count_nonzero(mdp.aoi_probs) > 1
    checks = {
        "identity within 3 combined SE": abs(est.residual) <= 3 * combined + 1e-12,
        "exact identity": abs(exact.residual) <= 1e-10,
        "mc matches exact within 3 SE": all(
            abs(getattr(est, a) - getattr(exact, a)) <= 3 * getattr(se, a) + 1e-12
            for a in ("var_given_obs", "expected_var", "excess")),
        "H(S|O) <= H(S|O')": h_ok <= h_o + 1e-12,
    }
    if random_aoi:
        checks["excess variance > 0"] = exact.excess > 0 and est.excess - 3 * se.excess > 0
    else:
        checks["excess variance = 0"] = exact.excess == 0.0 and est.excess == 0.0
    return DecompositionReport(n_samples, est, se, exact, h_o, h_ok, checks)


def entropy_inequality_check(n_dists: int = 100, seed: int = 0, max_card: int = 4) -> tuple[bool, list[float]]:
    """H(S | X, Y) <= H(S | X) over random joint tables; returns (all hold, margins)."""
    rng = np.random.default_rng(seed)
    margins = []
    for _ in range(n_dists):
        shape = tuple(rng.integers(2, max_card + 1, size=3))
        joint = rng.dirichlet(np.ones(int(np.prod(shape))) * rng.uniform(0.2, 2.0)).reshape(shape)
        margins.append(conditional_entropy(joint, (0,), (1,)) - conditional_entropy(joint, (0,), (1, 2)))
    return all(m >= -1e-12 for m in margins), margins
