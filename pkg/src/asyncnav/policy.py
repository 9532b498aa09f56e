"""Actor-critic network: conv encoder over the range image, shared MLP, Beta actor and value head."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import betaln, digamma, polygamma

from . import temporal
from .nn import Conv2d, Linear, ParamStore, UsageError, elu, elu_grad, sigmoid, softplus
from .pointcloud import PseudoImage
from .world import VehicleState, quat_to_matrix

CHECKPOINT_MAGIC = b"ASNVCKPT"
CHECKPOINT_VERSION = 1
U_CLAMP = 1e-6


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    image_shape: tuple[int, int] = (18, 60)
    conv_channels: tuple[int, ...] = (8, 16)
    feature_dim: int = 32
    hidden: tuple[int, ...] = (128, 128)
    action_dim: int = 3
    epsilon: float = 1.0
    v_max: float = 5.0
    r_max: float = 10.0

    @property
    def proprio_dim(self) -> int:
        # p_rel, q, v, omega, a_prev, v_des, temporal encoding
        return 3 + 4 + 3 + 3 + self.action_dim + 1 + temporal.ENCODING_DIM

    @property
    def obs_dim(self) -> int:
        return self.feature_dim + self.proprio_dim

    def proprio_scale(self) -> np.ndarray:
        a = self.action_dim
        return np.concatenate([
            np.full(3, 0.1), np.ones(4), np.full(3, 1 / self.v_max), np.full(3, 1 / 3.0),
            np.full(a, 1 / self.v_max), [0.25], np.ones(temporal.ENCODING_DIM),
        ])

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        for k in ("image_shape", "conv_channels", "hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# -- observation ------------------------------------------------------------------

@dataclass
class Observation:
    z: np.ndarray
    p_rel: np.ndarray
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    a_prev: np.ndarray
    v_des: float
    phi: np.ndarray

    def proprio(self) -> np.ndarray:
        return np.concatenate([self.p_rel, self.q, self.v, self.omega, self.a_prev, [self.v_des], self.phi])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.z, self.proprio()])


def proprio_vector(state: VehicleState, goal, a_prev, v_des: float, phi) -> np.ndarray:
    """Observation without the perception feature, in the fixed slot order.

    Goal offset and linear velocity are expressed in the body frame.
    """
    rot_t = quat_to_matrix(state.q).T
    p_rel = rot_t @ (np.asarray(goal, dtype=np.float64) - state.p)
    return np.concatenate([p_rel, state.q, rot_t @ state.v, state.omega, np.asarray(a_prev, dtype=np.float64),
                           [v_des], np.asarray(phi, dtype=np.float64)])


def assemble_observation(z, state: VehicleState, goal, a_prev, v_des: float, phi) -> Observation:
    vec = proprio_vector(state, goal, a_prev, v_des, phi)
    z = np.asarray(z, dtype=np.float64)
    if not (np.all(np.isfinite(vec)) and np.all(np.isfinite(z))):
        raise ValueError("observation contains non-finite values")
    if abs(np.linalg.norm(state.q) - 1.0) > 1e-6:
        raise ValueError("orientation quaternion is not unit length")
    n_a = len(np.atleast_1d(a_prev))
    return Observation(z, vec[:3], vec[3:7], vec[7:10], vec[10:13], vec[13:13 + n_a],
                       float(vec[13 + n_a]), vec[14 + n_a:])


def no_tem_phi() -> np.ndarray:
    return np.zeros(temporal.ENCODING_DIM)


# -- Beta distribution helpers ----------------------------------------------------------

@dataclass
class BetaParams:
    alpha: np.ndarray
    beta: np.ndarray

    def mean(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class ActionSample:
    u: np.ndarray
    a: np.ndarray
    log_prob: np.ndarray


def beta_log_prob(u, alpha, beta) -> np.ndarray:
    """Sum over the last axis of per-dimension Beta log densities, u clamped to [1e-6, 1 - 1e-6]."""
    u = np.clip(u, U_CLAMP, 1 - U_CLAMP)
    lp = (alpha - 1) * np.log(u) + (beta - 1) * np.log1p(-u) - betaln(alpha, beta)
    return lp.sum(axis=-1)


def beta_log_prob_grad(u, alpha, beta) -> tuple[np.ndarray, np.ndarray]:
    u = np.clip(u, U_CLAMP, 1 - U_CLAMP)
    dab = digamma(alpha + beta)
    return np.log(u) - digamma(alpha) + dab, np.log1p(-u) - digamma(beta) + dab


def beta_entropy(alpha, beta) -> np.ndarray:
    s = alpha + beta
    h = (betaln(alpha, beta) - (alpha - 1) * digamma(alpha) - (beta - 1) * digamma(beta)
         + (s - 2) * digamma(s))
    return h.sum(axis=-1)


def beta_entropy_grad(alpha, beta) -> tuple[np.ndarray, np.ndarray]:
    s = alpha + beta
    t = (s - 2) * polygamma(1, s)
    return -(alpha - 1) * polygamma(1, alpha) + t, -(beta - 1) * polygamma(1, beta) + t


def scale_action(u, v_max: float) -> np.ndarray:
    return -v_max + 2.0 * v_max * np.asarray(u)


def unscale_action(a, v_max: float) -> np.ndarray:
    return (np.asarray(a) + v_max) / (2.0 * v_max)


def sample_and_logprob(bp: BetaParams, rng: np.random.Generator, v_max: float = 5.0) -> ActionSample:
    u = np.clip(rng.beta(bp.alpha, bp.beta), U_CLAMP, 1 - U_CLAMP)
    return ActionSample(u, scale_action(u, v_max), beta_log_prob(u, bp.alpha, bp.beta))


# -- network ----------------------------------------------------------------------

class Policy:
    """Actor-critic with exact reverse-mode gradients.

    Call :meth:`forward` (which records intermediates) and then
    :meth:`backward` with the loss gradients w.r.t. alpha, beta and value.
    Gradients accumulate into :attr:`grad` until :meth:`zero_grad`.
    """

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: Optional[int] = 0):
        self.cfg = cfg
        self.store = ParamStore()
        h, w = cfg.image_shape
        self.convs = []
        c_in = 1
        for k, c_out in enumerate(cfg.conv_channels):
            conv = Conv2d(self.store, f"conv{k}", c_in, c_out)
            self.convs.append(conv)
            h, w = conv.out_shape(h, w)
            c_in = c_out
        self.conv_out = (h, w, c_in)
        self.proj = Linear(self.store, "proj", h * w * c_in, cfg.feature_dim)
        self.mlp = []
        n_in = cfg.obs_dim
        for k, n in enumerate(cfg.hidden):
            self.mlp.append(Linear(self.store, f"mlp{k}", n_in, n))
            n_in = n
        self.actor = Linear(self.store, "actor", n_in, 2 * cfg.action_dim)
        self.critic = Linear(self.store, "critic", n_in, 1)
        self.store.finalize()
        self._scale = cfg.proprio_scale()
        self._cache = None
        if seed is not None:
            self.init(np.random.default_rng(seed))

    # parameter access
    @property
    def params(self) -> np.ndarray:
        return self.store.flat

    @property
    def grad(self) -> np.ndarray:
        return self.store.grad

    def zero_grad(self) -> None:
        self.store.grad[...] = 0.0

    def init(self, rng: np.random.Generator) -> None:
        for conv in self.convs:
            conv.init(rng, math.sqrt(2.0))
        self.proj.init(rng, 1.0)
        for layer in self.mlp:
            layer.init(rng, math.sqrt(2.0))
        self.actor.init(rng, 0.01)
        self.critic.init(rng, 1.0)

    def copy(self) -> "Policy":
        other = Policy(self.cfg, seed=None)
        other.params[...] = self.params
        return other

    # perception
    def _check_images(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != self.cfg.image_shape:
            raise ConfigurationError(
                f"pseudo-image shape {images.shape[1:]} does not match configured {self.cfg.image_shape}")
        return images

    def _encode(self, images: np.ndarray, keep: bool) -> np.ndarray:
        x = (images / self.cfg.r_max)[..., None]
        pre = []
        for conv in self.convs:
            y = conv.forward(x, keep)
            pre.append(y)
            x = elu(y)
        z = self.proj.forward(x.reshape(len(x), -1), keep)
        return z, pre

    def encode(self, images) -> np.ndarray:
        """Perception features (B, feature_dim) for raw-range images (B, H, W) or one (H, W) image."""
        if isinstance(images, PseudoImage):
            images = images.values
        return self._encode(self._check_images(images), keep=False)[0]

    def encode_perception(self, img) -> np.ndarray:
        return self.encode(img)[0]

    # heads
    def _heads(self, z: np.ndarray, proprio: np.ndarray, keep: bool):
        x = np.concatenate([z, proprio * self._scale], axis=1)
        acts = []
        for layer in self.mlp:
            x = np.tanh(layer.forward(x, keep))
            acts.append(x)
        h = self.actor.forward(x, keep)
        value = self.critic.forward(x, keep)[:, 0]
        a = self.cfg.action_dim
        # once softplus drops below half an ulp of epsilon the sum rounds to epsilon itself; keep it strictly above
        floor = np.nextafter(self.cfg.epsilon, np.inf)
        alpha = np.maximum(softplus(h[:, :a]) + self.cfg.epsilon, floor)
        beta = np.maximum(softplus(h[:, a:]) + self.cfg.epsilon, floor)
        return alpha, beta, value, h, acts

    def act_params(self, z: np.ndarray, proprio: np.ndarray) -> tuple[BetaParams, np.ndarray]:
        """Beta parameters and values from precomputed features; records nothing."""
        z = np.atleast_2d(z)
        proprio = np.atleast_2d(proprio)
        alpha, beta, value, _, _ = self._heads(z, proprio, keep=False)
        return BetaParams(alpha, beta), value

    def forward(self, images: np.ndarray, proprio: np.ndarray,
                image_index: Optional[np.ndarray] = None) -> tuple[BetaParams, np.ndarray]:
        """Full differentiable pass. ``image_index`` maps each row of ``proprio`` to a row of ``images``."""
        images = self._check_images(images)
        proprio = np.atleast_2d(np.asarray(proprio, dtype=np.float64))
        z_u, pre = self._encode(images, keep=True)
        z = z_u if image_index is None else z_u[image_index]
        alpha, beta, value, h, acts = self._heads(z, proprio, keep=True)
        self._cache = (pre, h, acts, image_index, len(images))
        return BetaParams(alpha, beta), value

    def backward(self, d_alpha: np.ndarray, d_beta: np.ndarray, d_value: np.ndarray) -> None:
        """Accumulate parameter gradients of a scalar loss given its gradients at the outputs."""
        if self._cache is None:
            raise UsageError("backward called without a recorded forward pass")
        pre, h, acts, image_index, n_images = self._cache
        self._cache = None
        a = self.cfg.action_dim
        dh = np.concatenate([d_alpha * sigmoid(h[:, :a]), d_beta * sigmoid(h[:, a:])], axis=1)
        dx = self.actor.backward(dh) + self.critic.backward(np.asarray(d_value, dtype=np.float64)[:, None])
        for layer, act in zip(reversed(self.mlp), reversed(acts)):
            dx = layer.backward(dx * (1.0 - act * act))
        dz = dx[:, :self.cfg.feature_dim]
        if image_index is not None:
            dz_u = np.zeros((n_images, dz.shape[1]))
            np.add.at(dz_u, image_index, dz)
            dz = dz_u
        dx = self.proj.backward(dz).reshape((n_images,) + self.conv_out)
        for k in range(len(self.convs) - 1, -1, -1):
            dy = dx * elu_grad(pre[k])
            dx = self.convs[k].backward(dy, need_dx=k > 0)

    # acting
    def sample(self, z: np.ndarray, proprio: np.ndarray, rng: np.random.Generator):
        bp, value = self.act_params(z, proprio)
        return sample_and_logprob(bp, rng, self.cfg.v_max), value

    def mean_action(self, z: np.ndarray, proprio: np.ndarray) -> np.ndarray:
        bp, _ = self.act_params(z, proprio)
        return scale_action(bp.mean(), self.cfg.v_max)

    # persistence
    def save(self, path: Union[str, Path], meta: Optional[dict] = None) -> None:
        header = json.dumps({"config": asdict(self.cfg), "n_params": int(self.params.size),
                             "meta": meta or {}}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
            fh.write(header)
            fh.write(self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path], expect: Optional[PolicyConfig] = None) -> "Policy":
        cfg, params, _ = read_checkpoint(path)
        if expect is not None and cfg != expect:
            raise ConfigurationError(f"checkpoint architecture {cfg} does not match expected {expect}")
        pol = cls(cfg, seed=None)
        if params.size != pol.params.size:
            raise ConfigurationError(
                f"checkpoint has {params.size} parameters, architecture needs {pol.params.size}")
        pol.params[...] = params
        return pol


def read_checkpoint(path: Union[str, Path]) -> tuple[PolicyConfig, np.ndarray, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ConfigurationError(f"{path}: not a policy checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, n_header = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + n_header])
    off += n_header
    params = np.frombuffer(data[off:], dtype="<f8").astype(np.float64)
    if params.size != header["n_params"]:
        raise ConfigurationError(f"{path}: truncated parameter block")
    return PolicyConfig.from_dict(header["config"]), params, header.get("meta", {})
