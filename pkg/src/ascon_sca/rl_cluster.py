"""Actor-critic clustering of feature vectors into two clusters.

Each step the actor maps every (normalized) feature vector to a Gaussian
``N(mu_j, sigma_j)``; a sampled action ``a_j >= 0.5`` puts trace ``j`` in
cluster 1.  The environment state is the per-dimension mean difference
between the clusters and the reward trades their largest separation
against the KL divergence of the cluster fractions from uniform.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
EMPTY_PENALTY = 10.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class RlConfig:
    gamma: float = 0.9
    max_steps: int = 350
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    actor_hidden: int = 512
    critic_hidden: int = 256
    seed: int = 0
    label_source: str = "mu"  # or "action"

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.label_source not in ("mu", "action"):
            raise ValueError("label_source must be 'mu' or 'action'")

    def to_dict(self) -> dict:
        return asdict(self)


class ClusteringError(RuntimeError):
    """No step produced two non-empty clusters."""


class Actor:
    def __init__(self, dim: int, hidden: int = 512, rng: np.random.Generator | None = None) -> None:
        self.net = nn.MLP([dim, hidden, hidden, 2], "relu", "sigmoid", rng, "actor.")
        self.params = self.net.params

    def forward(self, x: np.ndarray):
        out, caches = self.net.forward(x)
        mu = out[:, 0]
        sigma = np.maximum(out[:, 1], SIGMA_FLOOR)
        return mu, sigma, (out, caches)

    def log_density(self, x: np.ndarray, actions: np.ndarray) -> float:
        mu, sigma, _ = self.forward(x)
        return float(np.sum(log_normal(actions, mu, sigma)))

    def log_density_grads(self, actions: np.ndarray, mu: np.ndarray, sigma: np.ndarray, cache) -> dict:
        """Gradient of ``sum_j log N(a_j; mu_j, sigma_j)`` w.r.t. actor parameters."""
        out, caches = cache
        z = actions - mu
        dmu = z / sigma ** 2
        dsigma = np.where(out[:, 1] > SIGMA_FLOOR, -1.0 / sigma + z * z / sigma ** 3, 0.0)
        _, grads = self.net.backward(np.stack([dmu, dsigma], axis=1), caches)
        return grads


class Critic:
    def __init__(self, dim: int, hidden: int = 256, rng: np.random.Generator | None = None) -> None:
        self.net = nn.MLP([dim, hidden, hidden, 1], "relu", "linear", rng, "critic.")
        self.params = self.net.params

    def value(self, s: np.ndarray) -> float:
        v, _ = self.net.forward(s[None, :])
        return float(v[0, 0])

    def value_and_cache(self, s: np.ndarray):
        v, caches = self.net.forward(s[None, :])
        return float(v[0, 0]), caches


def log_normal(a, mu, sigma) -> np.ndarray:
    z = (np.asarray(a) - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - _LOG_SQRT_2PI


@dataclass
class ClusterAssignment:
    actions: np.ndarray
    labels: np.ndarray  # bool, True = C_1

    @property
    def p1(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else 0.0

    @property
    def p0(self) -> float:
        return 1.0 - self.p1

    @property
    def degenerate(self) -> bool:
        n1 = int(self.labels.sum())
        return n1 == 0 or n1 == len(self.labels)


def act(actor: Actor, features: np.ndarray, rng: np.random.Generator):
    """Sample one action per trace; returns (assignment, mu, sigma, cache)."""
    mu, sigma, cache = actor.forward(features)
    a = mu + sigma * rng.standard_normal(len(mu))
    return ClusterAssignment(actions=a, labels=a >= 0.5), mu, sigma, cache


def env_state(features: np.ndarray, labels: np.ndarray) -> np.ndarray | None:
    """``mean(C_0) - mean(C_1)`` per dimension; None if a cluster is empty."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    labels = np.asarray(labels, dtype=bool)
    n1 = int(labels.sum())
    if n1 == 0 or n1 == len(labels):
        return None
    return features[~labels].mean(axis=0) - features[labels].mean(axis=0)


def normalized_state(s: np.ndarray) -> np.ndarray:
    """``s / (max(s) - min(s))``; a flat state is returned unscaled."""
    span = float(s.max() - s.min())
    return s / span if span > 0 else s.copy()


def kl_to_uniform(p0: float) -> float:
    """``D_KL(Q || P)`` in bits with ``Q = {1/2, 1/2}``; infinite at an empty cluster."""
    if p0 <= 0.0 or p0 >= 1.0:
        return float("inf")
    return -(1.0 + 0.5 * (np.log2(p0) + np.log2(1.0 - p0)))


def reward_terms(s: np.ndarray | None, p0: float) -> tuple[float, float, float]:
    """Returns ``(reward, inter_cluster, kl)`` with ``reward = inter_cluster - kl``.

    An empty cluster yields the fixed penalty ``-EMPTY_PENALTY`` (inter 0,
    kl ``EMPTY_PENALTY``) so the decomposition still holds.
    """
    if s is None:
        return -EMPTY_PENALTY, 0.0, EMPTY_PENALTY
    inter = float(np.abs(s).max())
    kl = kl_to_uniform(p0)
    if not np.isfinite(kl):
        return -EMPTY_PENALTY, 0.0, EMPTY_PENALTY
    return inter - kl, inter, kl


def reward(s: np.ndarray | None, assign: ClusterAssignment) -> float:
    return reward_terms(s, assign.p0)[0]


@dataclass
class StepRecord:
    step: int
    reward: float
    inter: float
    kl: float
    p0: float
    delta: float


def td_update(actor: Actor, critic: Critic, s_tilde: np.ndarray, s_tilde_next: np.ndarray, r: float,
              actions: np.ndarray, mu: np.ndarray, sigma: np.ndarray, actor_cache,
              cfg: RlConfig, actor_opt: nn.AdamState, critic_opt: nn.AdamState) -> float:
    """One critic descent step and one actor ascent step; returns the TD error."""
    v_next = critic.value(s_tilde_next)
    v, ccache = critic.value_and_cache(s_tilde)
    y = r + cfg.gamma * v_next
    delta = y - v
    if not np.isfinite(delta):
        raise FloatingPointError(f"non-finite TD error (r={r}, V={v}, V'={v_next})")
    _, cgrads = critic.net.backward(np.array([[-2.0 * delta]]), ccache)
    agrads = actor.log_density_grads(actions, mu, sigma, actor_cache)
    agrads = {k: delta * g for k, g in agrads.items()}
    nn.adam_step(critic.params, cgrads, critic_opt)
    nn.adam_step(actor.params, agrads, actor_opt, sign=-1.0)
    return float(delta)


@dataclass
class ClusteringResult:
    labels: np.ndarray  # l_j used for leakage fitting
    assignment: ClusterAssignment
    best_step: int
    best_state: np.ndarray
    history: list[StepRecord] = field(default_factory=list)

    @property
    def best(self) -> StepRecord:
        return self.history[self.best_step - 1]

    def history_text(self) -> str:
        lines = ["step,reward,inter_cluster,kl,p0,td_error"]
        for h in self.history:
            lines.append(f"{h.step},{h.reward:.17g},{h.inter:.17g},{h.kl:.17g},{h.p0:.17g},{h.delta:.17g}")
        return "\n".join(lines) + "\n"


def run_clustering(features: np.ndarray, cfg: RlConfig, normalized: np.ndarray | None = None) -> ClusteringResult:
    """Cluster raw ``features`` (n, D); ``normalized`` is the actor input (default: normalize ``features``)."""
    from .autoencoder import normalize_features

    cfg.validate()
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if len(features) < 2:
        raise ValueError("need at least two feature vectors")
    x = normalize_features(features) if normalized is None else np.asarray(normalized, dtype=np.float64)
    dim = features.shape[1]
    root = np.random.SeedSequence(cfg.seed)
    init_seq, act_seq = root.spawn(2)
    init_rng = np.random.default_rng(init_seq)
    act_rng = np.random.default_rng(act_seq)
    actor = Actor(x.shape[1], cfg.actor_hidden, init_rng)
    critic = Critic(dim, cfg.critic_hidden, init_rng)
    actor_opt = nn.AdamState(lr=cfg.actor_lr)
    critic_opt = nn.AdamState(lr=cfg.critic_lr)

    assign, _, _, _ = act(actor, x, act_rng)
    s = env_state(features, assign.labels)
    s_tilde = normalized_state(s) if s is not None else np.zeros(dim)

    history: list[StepRecord] = []
    best = None  # (reward, step, labels, assignment, state)
    for step in range(1, cfg.max_steps + 1):
        assign, mu, sigma, cache = act(actor, x, act_rng)
        s_next = env_state(features, assign.labels)
        r, inter, kl = reward_terms(s_next, assign.p0)
        s_tilde_next = normalized_state(s_next) if s_next is not None else s_tilde
        if s_next is not None and (best is None or r > best[0]):
            lab = mu.copy() if cfg.label_source == "mu" else assign.actions.copy()
            best = (r, step, lab, assign, s_next)
        delta = td_update(actor, critic, s_tilde, s_tilde_next, r, assign.actions, mu, sigma, cache,
                          cfg, actor_opt, critic_opt)
        history.append(StepRecord(step, r, inter, kl, assign.p0, delta))
        s_tilde = s_tilde_next
        if step % 50 == 0:
            log.info("rl step %d reward %.4f inter %.4f p0 %.3f", step, r, inter, assign.p0)
    if best is None:
        raise ClusteringError("every step left a cluster empty")
    return ClusteringResult(labels=best[2], assignment=best[3], best_step=best[1], best_state=best[4], history=history)
