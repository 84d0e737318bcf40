"""User encoder and losses.

Each timestep of the current workout is the concatenation of its (masked,
normalized) features, the broadcast history context vector, and learned
embeddings of user id, sport, and gender. A two-layer bidirectional LSTM
encodes the sequence; the final hidden state is the user embedding fed to
the contrastive objective (after ℓ2 normalization); a position-wise FFN maps
every hidden state to a normalized heart-rate value, de-normalized to bpm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx


@dataclass
class UserConfig:
    hidden: int = 128
    dropout: float = 0.2
    bidirectional: bool = True
    user_dim: int = 16
    sport_dim: int = 8
    gender_dim: int = 2

    @property
    def state_dim(self) -> int:
        return 2 * self.hidden if self.bidirectional else self.hidden


@dataclass
class ContrastiveConfig:
    tau: float = 0.1
    weight: float = 0.1  # λ
    group: str = "user_sport"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.weight < 0:
            raise ValueError("contrastive weight must be nonnegative")


def register_params(store: nx.ParameterStore, cfg: UserConfig, input_dim: int, context_dim: int,
                    n_users: int, n_sports: int, n_genders: int, rng: np.random.Generator) -> None:
    # one extra table row each for out-of-vocabulary ids
    store.add("user.emb.user", (n_users + 1, cfg.user_dim), rng, fan_in=cfg.user_dim)
    store.add("user.emb.sport", (n_sports + 1, cfg.sport_dim), rng, fan_in=cfg.sport_dim)
    store.add("user.emb.gender", (n_genders + 1, cfg.gender_dim), rng, fan_in=cfg.gender_dim)
    din = input_dim + context_dim + cfg.user_dim + cfg.sport_dim + cfg.gender_dim
    if cfg.bidirectional:
        store.add_bilstm("user.l1", din, cfg.hidden, rng)
        store.add_bilstm("user.l2", 2 * cfg.hidden, cfg.hidden, rng)
    else:
        store.add_lstm("user.l1", din, cfg.hidden, rng)
        store.add_lstm("user.l2", cfg.hidden, cfg.hidden, rng)
    store.add_ffn("user.pred", cfg.state_dim, cfg.hidden, 1, rng)


def param_paths(store: nx.ParameterStore) -> list[str]:
    return [p for p in store.paths() if p.startswith("user.")]


def _layer(x: nx.Tensor, params, prefix: str, bidirectional: bool) -> nx.Tensor:
    if bidirectional:
        return nx.bilstm(x, params, prefix)
    return nx.lstm_seq(x, params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"])


def encode_user(channels: np.ndarray, u_context: nx.Tensor, user_ids, sport_ids, gender_ids,
                params, cfg: UserConfig, drop_p: float = 0.0, rng=None,
                training: bool = False) -> tuple[nx.Tensor, nx.Tensor]:
    """(B, T, D) features + (B, C) context -> (hidden states (B, T, S), z_u (B, S)).

    Static inputs (context and attribute embeddings) broadcast identically to
    every timestep.
    """
    B, T, _ = channels.shape
    emb_u = nx.gather_rows(params["user.emb.user"], np.asarray(user_ids, np.int64))
    emb_s = nx.gather_rows(params["user.emb.sport"], np.asarray(sport_ids, np.int64))
    emb_g = nx.gather_rows(params["user.emb.gender"], np.asarray(gender_ids, np.int64))
    static = nx.concat([u_context, emb_u, emb_s, emb_g], axis=1)  # (B, C+du+ds+dg)
    static_t = nx.broadcast_to(nx.reshape(static, (B, 1, static.shape[1])), (B, T, static.shape[1]))
    x = nx.concat([nx.Tensor(channels), static_t], axis=2)
    h1 = _layer(x, params, "user.l1", cfg.bidirectional)
    if training and drop_p > 0.0:
        h1 = nx.dropout(h1, drop_p, rng, training=True)
    h2 = _layer(h1, params, "user.l2", cfg.bidirectional)
    if cfg.bidirectional:
        H = cfg.hidden
        z = nx.concat([h2[:, T - 1, :H], h2[:, 0, H:]], axis=1)
    else:
        z = h2[:, T - 1]
    return h2, z


def predict_hr(hidden: nx.Tensor, params, hr_mean: float, hr_std: float,
               drop_p: float = 0.0, rng=None, training: bool = False) -> nx.Tensor:
    """(B, T, S) hidden states -> (B, T) predictions in bpm."""
    B, T, S = hidden.shape
    flat = nx.reshape(hidden, (B * T, S))
    out = nx.feed_forward(flat, params, "user.pred", drop_p=drop_p, rng=rng, training=training)
    return nx.add(nx.mul(nx.reshape(out, (B, T)), hr_std), hr_mean)


def info_nce(z: nx.Tensor, groups, tau: float) -> nx.Tensor:
    """InfoNCE over a batch of embeddings with group labels.

    Positives are ordered pairs (b, c) with matching groups, b ≠ c; the
    denominator for anchor b runs over every other batch element. Embeddings
    are ℓ2-normalized before the temperature-scaled dot products. A batch with
    no positive pair contributes exactly 0.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    B = z.shape[0]
    if B < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    groups = list(groups)
    anchors, positives = [], []
    for b in range(B):
        for c in range(B):
            if b != c and groups[b] == groups[c]:
                anchors.append(b)
                positives.append(c)
    if not anchors:
        return nx.Tensor(np.asarray(0.0, z.dtype))
    zn = nx.l2_normalize(z, axis=1)
    sim = nx.mul(nx.matmul(zn, nx.transpose(zn, (1, 0))), 1.0 / tau)  # (B, B)
    sim = nx.masked_fill(sim, np.eye(B, dtype=bool), -np.inf)
    log_denom = nx.logsumexp(sim, axis=1)  # (B,)
    ai = np.asarray(anchors, np.int64)
    pi = np.asarray(positives, np.int64)
    pair_terms = nx.add(sim[ai, pi], nx.mul(log_denom[ai], -1.0))
    return nx.mul(nx.reduce_mean(pair_terms), -1.0)


def mse_loss(pred: nx.Tensor, target: np.ndarray) -> nx.Tensor:
    """Mean over timesteps then over the batch (all windows share one length)."""
    diff = nx.add(pred, -np.asarray(target, pred.data.dtype))
    return nx.reduce_mean(nx.square(diff))


def mae_metric(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - target)))
