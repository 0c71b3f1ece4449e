"""Actor-critic networks for the PPO experts.

The actor emits a tanh-squashed mean in [-1, 1] (scaled to env units by the
caller); exploration noise is a state-independent Gaussian std, fixed by
default. Deterministic queries return the mean: that is the "optimal action"
stored by the data-collection stage.
"""

from __future__ import annotations

import numpy as np

from ..numerics import Rng, Tensor, no_grad
from ..numerics import tensor as F
from ..numerics.modules import MLP, collect_params

LOG_2PI = float(np.log(2.0 * np.pi))


class ExpertPolicy:
    def __init__(
        self,
        rng: Rng,
        obs_dim: int,
        act_dim: int,
        hidden: tuple[int, ...] = (64, 64),
        exploration_noise: float = 0.25,
        action_scale: float = 1.0,
        task_subset_id: str = "",
    ):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.action_scale = float(action_scale)
        self.task_subset_id = task_subset_id
        self.actor = MLP(rng.spawn("actor"), [obs_dim, *hidden, act_dim], "actor", activation="relu")
        self.critic = MLP(rng.spawn("critic"), [obs_dim, *hidden, 1], "critic", activation="relu")
        self.log_std = Tensor(np.full(act_dim, np.log(exploration_noise)), requires_grad=False)

    def actor_params(self):
        return self.actor.params()

    def critic_params(self):
        return self.critic.params()

    def params(self):
        return collect_params(self.actor, self.critic) + [("log_std", self.log_std)]

    def mean_t(self, obs: Tensor) -> Tensor:
        return F.tanh(self.actor(obs))

    def mean(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic (optimal) normalized action for a (B, obs_dim) batch."""
        with no_grad():
            return self.mean_t(Tensor(obs)).data

    def value(self, obs: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.critic(Tensor(obs)).data[..., 0]

    def sample(self, obs: np.ndarray, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        """Noisy normalized action and its log-prob under the Gaussian policy."""
        mu = self.mean(obs)
        std = np.exp(self.log_std.data)
        eps = rng.normal(mu.shape)
        act = mu + std * eps
        logp = self.log_prob_np(mu, act)
        return act, logp

    def log_prob_np(self, mu: np.ndarray, act: np.ndarray) -> np.ndarray:
        std = np.exp(self.log_std.data)
        z = (act - mu) / std
        return (-0.5 * z * z - self.log_std.data - 0.5 * LOG_2PI).sum(axis=-1)

    def log_prob_t(self, obs: Tensor, act: np.ndarray) -> Tensor:
        """Tape log-prob of fixed executed actions; differentiable w.r.t. actor."""
        mu = self.mean_t(obs)
        inv_std = np.exp(-self.log_std.data)
        z = F.mul(F.sub(Tensor(act), mu), Tensor(inv_std))
        const = float((-self.log_std.data - 0.5 * LOG_2PI).sum())
        return F.add(F.sum_(F.mul(z, z) * Tensor(-0.5), axis=-1), Tensor(const))

    def env_action(self, normalized: np.ndarray) -> np.ndarray:
        return self.action_scale * normalized
