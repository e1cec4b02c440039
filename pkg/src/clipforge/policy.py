"""Policy network, action/resolution spaces and Gumbel sampling.

The policy maps ``[h : station_feature]`` through GroupNorm and a dense layer to
a softmax over the action space.  Actions are sampled with Gumbel-Max; the
Gumbel-Softmax relaxation supplies gradients.  ``straight_through`` pairs the two
under one shared noise draw so the hard choice and the relaxed vector agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.layers import Dense, GroupNorm, log_softmax, softmax

FULL_SCALE_ACTIONS = (1, 3, 5, 7)
FULL_SCALE_RESOLUTIONS = (224, 168, 112, 84)
DESK_RESOLUTIONS = (32, 24, 16, 12)


@dataclass(frozen=True)
class ActionSpace:
    """Fuse counts paired index-wise with input resolutions."""

    actions: tuple[int, ...] = FULL_SCALE_ACTIONS
    resolutions: tuple[int, ...] = DESK_RESOLUTIONS

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "resolutions", tuple(int(r) for r in self.resolutions))
        if len(self.actions) != len(self.resolutions) or not self.actions:
            raise ValueError("actions and resolutions must be non-empty and of equal length")
        if any(b <= a for a, b in zip(self.actions, self.actions[1:])) or self.actions[0] < 1:
            raise ValueError(f"actions must be positive and strictly increasing: {self.actions}")
        if any(b >= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ValueError(f"resolutions must be strictly decreasing: {self.resolutions}")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def full_resolution(self) -> int:
        return self.resolutions[0]

    def index_of(self, action: int) -> int:
        return self.actions.index(action)


@dataclass
class ActionDistribution:
    probs: np.ndarray
    logits: np.ndarray
    gumbel_soft: np.ndarray | None = None
    chosen: int | None = None
    noise: np.ndarray | None = None
    tau: float | None = None

    def one_hot(self) -> np.ndarray:
        if self.chosen is None:
            raise ValueError("no action has been chosen for this distribution")
        out = np.zeros_like(self.probs)
        out[self.chosen] = 1.0
        return out


@dataclass(frozen=True)
class TemperatureSchedule:
    initial: float = 5.0
    floor: float = 0.01
    total_steps: int = 1000

    def __post_init__(self) -> None:
        if not (self.initial >= self.floor > 0):
            raise ValueError("temperature schedule needs initial >= floor > 0")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")


def anneal(schedule: TemperatureSchedule, step: int) -> float:
    """Linear decay from ``initial`` to ``floor`` over ``total_steps``, then flat."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.total_steps == 0:
        return schedule.floor
    frac = min(step / schedule.total_steps, 1.0)
    return schedule.initial + (schedule.floor - schedule.initial) * frac


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, shape)
    return -np.log(-np.log(u))


def _noise(dist: ActionDistribution, rng, noise):
    if noise is not None:
        return np.asarray(noise, dtype=np.float64)
    if rng is None:
        raise ValueError("either rng or noise must be given")
    return sample_gumbel(rng, dist.probs.shape)


def gumbel_max(dist: ActionDistribution, rng=None, noise=None) -> int:
    """argmax(log p + G); ``np.argmax`` breaks ties toward the smaller index.

    Works from the logits, so a probability that underflowed to 0.0 in float64 is
    still a valid (finite log-probability) action; a genuinely impossible action
    has a -inf logit and is rejected.
    """
    if not np.all(np.isfinite(dist.logits)):
        raise ValueError("gumbel_max needs strictly positive probabilities (finite logits)")
    g = _noise(dist, rng, noise)
    return int(np.argmax(log_softmax(dist.logits) + g))


def gumbel_softmax(dist: ActionDistribution, tau: float, rng=None, noise=None) -> np.ndarray:
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    g = _noise(dist, rng, noise)
    return softmax((log_softmax(dist.logits) + g) / tau)


def gumbel_softmax_backward(logits: np.ndarray, soft: np.ndarray, tau: float, grad: np.ndarray) -> np.ndarray:
    """d loss / d logits given d loss / d (relaxed sample)."""
    du = soft * (grad - np.sum(grad * soft, axis=-1, keepdims=True)) / tau
    p = softmax(logits)
    return du - p * np.sum(du, axis=-1, keepdims=True)


def straight_through(dist: ActionDistribution, tau: float, rng=None, noise=None) -> ActionDistribution:
    """Hard Gumbel-Max choice and its Gumbel-Softmax relaxation under shared noise.

    Fills ``chosen``, ``gumbel_soft``, ``noise`` and ``tau`` on ``dist`` and returns it.
    """
    g = _noise(dist, rng, noise)
    dist.noise = g
    dist.tau = tau
    dist.chosen = gumbel_max(dist, noise=g)
    dist.gumbel_soft = gumbel_softmax(dist, tau, noise=g)
    return dist


class PolicyNetwork:
    """GroupNorm followed by a dense layer, softmax on top."""

    def __init__(self, hidden_size: int, feature_size: int, num_actions: int, groups: int = 8, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        width = hidden_size + feature_size
        self.norm = GroupNorm(groups, width)
        self.fc = Dense(width, num_actions, rng)
        self.hidden_size = hidden_size
        self.feature_size = feature_size
        self.num_actions = num_actions

    def named_params(self) -> dict[str, np.ndarray]:
        out = {f"norm.{k}": v for k, v in self.norm.params.items()}
        out.update({f"fc.{k}": v for k, v in self.fc.params.items()})
        return out

    def logits_cached(self, h: np.ndarray, station: np.ndarray):
        h = np.atleast_2d(h)
        station = np.atleast_2d(station)
        if h.shape[1] != self.hidden_size or station.shape[1] != self.feature_size:
            raise ValueError(
                f"policy expects hidden {self.hidden_size} + station {self.feature_size}, "
                f"got {h.shape[1]} + {station.shape[1]}"
            )
        z = np.concatenate([h, station], axis=1)
        zn, ncache = self.norm.forward_cached(z)
        logits, fcache = self.fc.forward_cached(zn)
        return logits, (ncache, fcache)

    def __call__(self, h: np.ndarray, station: np.ndarray) -> ActionDistribution:
        logits = self.logits_cached(h, station)[0][0]
        return ActionDistribution(softmax(logits), logits)

    def backward(self, cache, dlogits: np.ndarray):
        """Returns (param grads, d hidden, d station)."""
        ncache, fcache = cache
        gfc, dzn = self.fc.backward(fcache, np.atleast_2d(dlogits))
        gnorm, dz = self.norm.backward(ncache, dzn)
        grads = {f"norm.{k}": v for k, v in gnorm.items()}
        grads.update({f"fc.{k}": v for k, v in gfc.items()})
        return grads, dz[:, : self.hidden_size], dz[:, self.hidden_size :]

    def flops(self) -> int:
        width = self.hidden_size + self.feature_size
        return self.norm.flops((1, width)) + self.fc.flops((1, width)) + 3 * self.num_actions


def policy_forward(policy: PolicyNetwork, h: np.ndarray, station_feature: np.ndarray) -> ActionDistribution:
    return policy(h, station_feature)
