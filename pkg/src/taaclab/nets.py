"""Attention actor-critic networks, counterfactual baseline, conformity loss.

The actor embeds each agent's observation, runs the embeddings through
multi-head attention, and maps each agent's concatenated head outputs to
a distribution over the 18 discrete actions. The original embedding is
deliberately NOT forwarded past the attention block, so each agent's
policy depends on teammates only through attention. The critic embeds
(observation, one-hot action) pairs, and its post-network consumes the
original embedding concatenated with the attended one, so its own-input
path survives even with attention zeroed out.

Observations are divided by ``obs_scale`` before the embedding layers so
pitch-scale coordinates land in a range where Xavier-initialized nets
start near-uniform.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Mlp, MultiHeadAttention, weights_to_doc


@dataclass(frozen=True)
class TaacNetConfig:
    obs_width: int = 22
    n_actions: int = 18
    d_model: int = 64
    actor_heads: int = 4
    critic_heads: int = 4
    embed_hidden: int = 64
    post_hidden: int = 64
    obs_scale: float = 100.0

    def validate(self) -> "TaacNetConfig":
        for name in ("obs_width", "n_actions", "d_model", "actor_heads", "critic_heads",
                     "embed_hidden", "post_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.actor_heads != 0 or self.d_model % self.critic_heads != 0:
            raise ValueError("d_model must be divisible by both head counts")
        if self.obs_scale <= 0:
            raise ValueError("obs_scale must be positive")
        return self


def _stable_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class ActorNet:
    """Shared-parameter policy producing one action distribution per agent."""

    def __init__(self, cfg: TaacNetConfig, rng: np.random.Generator, attention_off: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.attention_off = attention_off
        self.embed = Mlp.create([cfg.obs_width, cfg.embed_hidden, cfg.d_model], ("relu", "relu"), rng)
        self.attn: Optional[MultiHeadAttention] = (
            None if attention_off else MultiHeadAttention.create(cfg.d_model, cfg.actor_heads, rng)
        )
        post_in = cfg.d_model if attention_off else self.attn.out_width
        self.post = Mlp.create(
            [post_in, cfg.post_hidden, cfg.post_hidden, cfg.n_actions],
            ("relu", "relu", "identity"), rng,
        )

    def forward(self, obs: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns (n x n_actions action distributions, n x out attended embeddings)."""
        obs = np.asarray(obs, dtype=np.float64)
        x = Tensor(obs / self.cfg.obs_scale)
        m = self.embed.forward(x)
        e = self.attn.forward(m)[0] if self.attn is not None else m
        logits = self.post.forward(e)
        return ad.softmax_rows(logits), e

    def probs_np(self, obs: np.ndarray) -> np.ndarray:
        """Tape-free distributions for rollouts; supports stacked (..., n, obs) inputs."""
        x = np.asarray(obs, dtype=np.float64) / self.cfg.obs_scale
        m = self.embed.forward_np(x)
        e = self.attn.forward_np(m) if self.attn is not None else m
        return _stable_softmax_np(self.post.forward_np(e))

    def parameters(self) -> list[Tensor]:
        out = self.embed.parameters()
        if self.attn is not None:
            out += self.attn.parameters()
        return out + self.post.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.embed.named_parameters("actor.embed")
        if self.attn is not None:
            out.update(self.attn.named_parameters("actor.attn"))
        out.update(self.post.named_parameters("actor.post"))
        return out


class CriticNet:
    """Shared-parameter critic producing one state-action value per agent."""

    def __init__(self, cfg: TaacNetConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        in_width = cfg.obs_width + cfg.n_actions
        self.embed = Mlp.create([in_width, cfg.embed_hidden, cfg.d_model], ("relu", "relu"), rng)
        self.attn = MultiHeadAttention.create(cfg.d_model, cfg.critic_heads, rng)
        self.post = Mlp.create(
            [cfg.d_model + self.attn.out_width, cfg.post_hidden, cfg.post_hidden, 1],
            ("relu", "relu", "identity"), rng,
        )

    def _inputs(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64) / self.cfg.obs_scale
        actions = np.asarray(actions, dtype=np.int64)
        if np.any(actions < 0) or np.any(actions >= self.cfg.n_actions):
            raise ValueError(f"action ids out of range [0, {self.cfg.n_actions})")
        onehot = np.zeros(obs.shape[:-1] + (self.cfg.n_actions,))
        np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
        return np.concatenate([obs, onehot], axis=-1)

    def forward(self, obs: np.ndarray, actions: np.ndarray) -> Tensor:
        """Returns the n per-agent values for one joint (observations, actions)."""
        x = Tensor(self._inputs(obs, actions))
        m = self.embed.forward(x)
        e, _ = self.attn.forward(m)
        h = ad.concat([m, e], axis=1)
        q = self.post.forward(h)
        return ad.reshape(q, (q.shape[0],))

    def q_np(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Tape-free values; supports stacked (..., n, obs) / (..., n) inputs."""
        x = self._inputs(obs, actions)
        m = self.embed.forward_np(x)
        e = self.attn.forward_np(m)
        h = np.concatenate([m, e], axis=-1)
        return self.post.forward_np(h)[..., 0]

    def parameters(self) -> list[Tensor]:
        return self.embed.parameters() + self.attn.parameters() + self.post.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.embed.named_parameters("critic.embed")
        out.update(self.attn.named_parameters("critic.attn"))
        out.update(self.post.named_parameters("critic.post"))
        return out

    def value_matrices(self) -> list[Tensor]:
        return [head.wv for head in self.attn.heads]


# ---------------------------------------------------------------------------
# counterfactual baseline


def counterfactual_baselines(obs: np.ndarray, actions: np.ndarray, probs: np.ndarray,
                             critic: CriticNet) -> np.ndarray:
    """Per-agent expected value over the agent's own action choices.

    b_i = sum_a probs[i, a] * Q_i(obs, (a, actions of everyone else)),
    evaluated with one stacked tape-free critic pass over all n * A
    single-action substitutions. Never depends on actions[i].
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    n = obs.shape[0]
    n_act = critic.cfg.n_actions
    act_stack = np.tile(actions, (n * n_act, 1))
    for i in range(n):
        act_stack[i * n_act:(i + 1) * n_act, i] = np.arange(n_act)
    obs_stack = np.broadcast_to(obs, (n * n_act,) + obs.shape)
    q = critic.q_np(obs_stack, act_stack)  # (n * n_act, n)
    b = np.empty(n)
    for i in range(n):
        b[i] = probs[i] @ q[i * n_act:(i + 1) * n_act, i]
    return b


def counterfactual_baseline(i: int, obs: np.ndarray, actions: np.ndarray,
                            actor: ActorNet, critic: CriticNet) -> float:
    """Baseline for a single agent, marginalizing its own action under the actor."""
    if not 0 <= i < np.asarray(obs).shape[0]:
        raise ValueError(f"agent index {i} out of range")
    with ad.no_grad():
        probs = actor.probs_np(obs)
    return float(counterfactual_baselines(obs, actions, probs, critic)[i])


def counterfactual_baselines_batch(obs_stack: np.ndarray, act_stack: np.ndarray,
                                   probs_stack: np.ndarray, critic: CriticNet,
                                   chunk: int = 8192) -> np.ndarray:
    """Baselines for a whole batch of transitions in chunked stacked passes.

    ``obs_stack`` is (T, n, obs_width), ``act_stack`` (T, n), ``probs_stack``
    (T, n, A). Returns (T, n). Matches counterfactual_baselines applied per
    transition.
    """
    obs_stack = np.asarray(obs_stack, dtype=np.float64)
    act_stack = np.asarray(act_stack, dtype=np.int64)
    T, n = act_stack.shape
    A = critic.cfg.n_actions
    # variants[t, i, a] = act_stack[t] with agent i's action replaced by a
    variants = np.broadcast_to(act_stack[:, None, None, :], (T, n, A, n)).copy()
    idx = np.arange(n)
    variants[:, idx, :, idx] = np.broadcast_to(np.arange(A), (T, n, A)).transpose(1, 0, 2)
    variants = variants.reshape(T * n * A, n)
    obs_big = np.broadcast_to(obs_stack[:, None, None, :, :], (T, n, A, n, obs_stack.shape[-1]))
    obs_big = obs_big.reshape(T * n * A, n, obs_stack.shape[-1])
    q_own = np.empty(T * n * A)
    group_agent = np.repeat(np.tile(idx, T), A)  # owning agent per variant group
    for start in range(0, T * n * A, chunk):
        stop = min(start + chunk, T * n * A)
        q = critic.q_np(obs_big[start:stop], variants[start:stop])
        q_own[start:stop] = q[np.arange(stop - start), group_agent[start:stop]]
    q_own = q_own.reshape(T, n, A)
    return np.einsum("tia,tia->ti", probs_stack, q_own)


# ---------------------------------------------------------------------------
# conformity loss


def conformity_loss(embeddings: Tensor, scale_coef: float, floor: float) -> Tensor:
    """scale_coef * max(mean pairwise cosine similarity of rows, floor).

    High when the agents' attended embeddings align (low role diversity).
    Gradients flow only while the mean similarity exceeds the floor.
    """
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError(f"conformity loss needs at least 2 embeddings, got {n}")
    rows = [ad.row(embeddings, i) for i in range(n)]
    sims = [
        ad.cosine_similarity(rows[i], rows[j])
        for i in range(n)
        for j in range(i + 1, n)
    ]
    mean = ad.scale(ad.add_n(sims), 1.0 / len(sims))
    return ad.scale(ad.maximum_const(mean, floor), scale_coef)


# ---------------------------------------------------------------------------
# snapshots


@dataclass(frozen=True)
class PolicySnapshot:
    """Immutable copy of a policy's parameters plus identifying metadata."""

    kind: str
    flags: dict
    version: int
    config_hash: str
    params: dict = field(repr=False)

    def to_doc(self) -> dict:
        named = {path: Tensor(arr) for path, arr in self.params.items()}
        return {
            "kind": self.kind,
            "flags": dict(self.flags),
            "version": self.version,
            "config_hash": self.config_hash,
            "params": weights_to_doc(named),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PolicySnapshot":
        params = {
            path: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for path, entry in doc["params"].items()
        }
        return cls(
            kind=doc["kind"],
            flags=dict(doc["flags"]),
            version=int(doc["version"]),
            config_hash=doc["config_hash"],
            params=params,
        )


def save_snapshot(snapshot: PolicySnapshot, path) -> None:
    with open(path, "w") as fh:
        json.dump(snapshot.to_doc(), fh)


def load_snapshot(path) -> PolicySnapshot:
    with open(path) as fh:
        return PolicySnapshot.from_doc(json.load(fh))


def architecture_hash(kind: str, flags: dict, cfg: TaacNetConfig) -> str:
    desc = {
        "kind": kind,
        "flags": {k: flags[k] for k in sorted(flags)},
        "net": {
            "obs_width": cfg.obs_width,
            "n_actions": cfg.n_actions,
            "d_model": cfg.d_model,
            "actor_heads": cfg.actor_heads,
            "critic_heads": cfg.critic_heads,
            "embed_hidden": cfg.embed_hidden,
            "post_hidden": cfg.post_hidden,
            "obs_scale": cfg.obs_scale,
        },
    }
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()


def snapshot_params(named: dict[str, Tensor]) -> dict:
    return {path: t.data.copy() for path, t in named.items()}


def restore_params(named: dict[str, Tensor], params: dict) -> None:
    """Copy stored arrays into live parameters, validating names and shapes."""
    missing = set(named) - set(params)
    extra = set(params) - set(named)
    if missing or extra:
        raise ValueError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for path, t in named.items():
        arr = np.asarray(params[path], dtype=np.float64)
        if arr.shape != t.shape:
            raise ValueError(f"shape mismatch for {path}: stored {arr.shape}, architecture expects {t.shape}")
        t.data = arr.copy()
