"""History encoder: compresses a user's recent workouts into a fixed-size
context vector.

Per workout, the inter-session gap is embedded (tanh of an affine map of
log(1+Δτ)) and concatenated to every timestep of two streams — the channel
matrix and the heart-rate trace — each encoded by its own BiLSTM; the two
bidirectional finals concatenate into the workout summary. Summaries run
through a causal GRU across workouts; multi-head attention with the most
recent context as query pools the sequence, and an FFN fuses query and
pooled vector into the context embedding. Empty histories fall back to a
learned default vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx


@dataclass
class HistConfig:
    depth: int = 10  # max workouts retained
    bilstm_hidden: int = 64
    gru_hidden: int = 128
    attn_heads: int = 4
    time_dim: int = 16
    context_dim: int = 128

    @property
    def summary_dim(self) -> int:
        # two streams x (forward ‖ backward) finals
        return 4 * self.bilstm_hidden


def register_params(store: nx.ParameterStore, cfg: HistConfig, input_dim: int,
                    rng: np.random.Generator) -> None:
    store.add("hist.time.w", (1, cfg.time_dim), rng, fan_in=1)
    store.add("hist.time.b", (cfg.time_dim,), fill=0.0)
    store.add_bilstm("hist.feat_lstm", input_dim + cfg.time_dim, cfg.bilstm_hidden, rng)
    store.add_bilstm("hist.hr_lstm", 1 + cfg.time_dim, cfg.bilstm_hidden, rng)
    store.add_gru("hist.gru", cfg.summary_dim, cfg.gru_hidden, rng)
    g = cfg.gru_hidden
    for name in ("wq", "wk", "wv", "wo"):
        store.add(f"hist.attn.{name}", (g, g), rng, fan_in=g)
    store.add_ffn("hist.fuse", 2 * g, cfg.context_dim, cfg.context_dim, rng)
    # zero init keeps the all-zero-parameters fixed point of the whole pipeline
    store.add("hist.default_context", (cfg.context_dim,), fill=0.0)


def param_paths(store: nx.ParameterStore) -> list[str]:
    return [p for p in store.paths() if p.startswith("hist.")]


def param_count(store: nx.ParameterStore) -> int:
    return int(sum(store[p].data.size for p in param_paths(store)))


def embed_gap(gaps, params) -> nx.Tensor:
    """(n,) gap seconds -> (n, D_t) embedding: tanh(affine(log1p(Δτ)))."""
    g = np.asarray(gaps, np.float64)
    if np.any(g < 0):
        raise ValueError("negative inter-session gap")
    x = nx.Tensor(np.log1p(g)[:, None].astype(params["hist.time.w"].dtype))
    return nx.tanh(nx.affine(x, params["hist.time.w"], params["hist.time.b"]))


def _bilstm_final(x: nx.Tensor, params, prefix: str) -> nx.Tensor:
    """Concat of the forward final (last step) and backward final (first step)."""
    T = x.shape[1]
    fwd = nx.lstm_seq(x, params[f"{prefix}.fwd.wx"], params[f"{prefix}.fwd.wh"], params[f"{prefix}.fwd.b"])
    bwd = nx.lstm_seq(x, params[f"{prefix}.bwd.wx"], params[f"{prefix}.bwd.wh"], params[f"{prefix}.bwd.b"],
                      reverse=True)
    return nx.concat([fwd[:, T - 1], bwd[:, 0]], axis=1)


def encode_workouts(channels: np.ndarray, hr: np.ndarray, gaps, params, cfg: HistConfig) -> nx.Tensor:
    """Summaries for n workouts at once.

    channels (n, T, D) and hr (n, T) are already masked/normalized constants;
    the gap embedding is tiled along time and concatenated to both streams.
    """
    n, T, _ = channels.shape
    if T == 0:
        raise ValueError("empty time axis")
    e = embed_gap(gaps, params)  # (n, Dt)
    e_tiled = nx.broadcast_to(nx.reshape(e, (n, 1, cfg.time_dim)), (n, T, cfg.time_dim))
    feat_in = nx.concat([nx.Tensor(channels), e_tiled], axis=2)
    hr_in = nx.concat([nx.Tensor(hr[:, :, None]), e_tiled], axis=2)
    w_feat = _bilstm_final(feat_in, params, "hist.feat_lstm")
    w_hr = _bilstm_final(hr_in, params, "hist.hr_lstm")
    return nx.concat([w_feat, w_hr], axis=1)  # (n, 4H)


def encode_workout(segment_channels: np.ndarray, segment_hr: np.ndarray, gap: float,
                   params, cfg: HistConfig) -> nx.Tensor:
    """Single-workout convenience wrapper; channels arrive channel-major (D, T)."""
    ch = np.asarray(segment_channels, np.float64).T[None]  # (1, T, D)
    return encode_workouts(ch, np.asarray(segment_hr, np.float64)[None], [gap], params, cfg)[0]


def encode_history(summaries: nx.Tensor, slot_mask: np.ndarray | None, params, cfg: HistConfig) -> nx.Tensor:
    """(B, N, S) summaries -> causal per-workout context vectors (B, N, G).
    Padded slots (mask 0) pass the recurrent state through unchanged."""
    return nx.gru_seq(summaries, params["hist.gru.wx"], params["hist.gru.wh"],
                      params["hist.gru.bx"], params["hist.gru.bh"], slot_mask=slot_mask)


def fuse_context(contexts: nx.Tensor, slot_mask: np.ndarray, params, cfg: HistConfig,
                 drop_p: float = 0.0, rng=None, training: bool = False) -> nx.Tensor:
    """Attention over context vectors with the most recent one as query, then
    FFN over [query; pooled]. Histories are left-padded, so the query is the
    last slot; padded slots get exactly zero attention weight."""
    B, N, G = contexts.shape
    q = contexts[:, N - 1]
    a = nx.multi_head_attention(q, contexts, contexts, slot_mask, params, "hist.attn", cfg.attn_heads)
    fused = nx.concat([q, a], axis=1)
    return nx.feed_forward(fused, params, "hist.fuse", drop_p=drop_p, rng=rng, training=training)


def default_context(params) -> nx.Tensor:
    return params["hist.default_context"]


def encode_context_batch(hist_channels: np.ndarray, hist_hr: np.ndarray, hist_gaps: np.ndarray,
                         slot_of: list[tuple[int, int]], batch_size: int, params, cfg: HistConfig,
                         drop_p: float = 0.0, rng=None, training: bool = False) -> nx.Tensor:
    """Context embeddings for a whole batch, (B, context_dim).

    The histories of all examples are flattened: hist_channels (n_h, T, D),
    hist_hr (n_h, T), hist_gaps (n_h,), with slot_of[i] = (example index,
    left-padded slot index) for flat workout i. Examples with no history rows
    receive the learned default context.
    """
    B = batch_size
    N = cfg.depth
    if len(slot_of) == 0:
        table = nx.reshape(default_context(params), (1, cfg.context_dim))
        return nx.gather_rows(table, np.zeros(B, np.int64))
    w = encode_workouts(hist_channels, hist_hr, hist_gaps, params, cfg)  # (n_h, S)
    n_h = w.shape[0]
    # scatter flat summaries into left-padded (B, N) slots via an index table;
    # row n_h of the augmented table is a constant zero row for padding
    pad_row = nx.Tensor(np.zeros((1, cfg.summary_dim), w.dtype))
    w_aug = nx.concat([w, pad_row], axis=0)
    idx = np.full((B, N), n_h, np.int64)
    slot_mask = np.zeros((B, N))
    for flat, (b, slot) in enumerate(slot_of):
        idx[b, slot] = flat
        slot_mask[b, slot] = 1.0
    padded = nx.gather_rows(w_aug, idx)  # (B, N, S)
    has_hist = slot_mask.any(axis=1)
    if not np.all(has_hist):
        # run the attention path only over examples that have history
        rows = np.flatnonzero(has_hist)
        sub = padded[rows]
        ctx = encode_history(sub, slot_mask[rows], params, cfg)
        u_hist = fuse_context(ctx, slot_mask[rows].astype(bool), params, cfg, drop_p, rng, training)
        table = nx.concat([u_hist, nx.reshape(default_context(params), (1, cfg.context_dim))], axis=0)
        pick = np.full(B, len(rows), np.int64)
        pick[rows] = np.arange(len(rows))
        return nx.gather_rows(table, pick)
    ctx = encode_history(padded, slot_mask, params, cfg)
    return fuse_context(ctx, slot_mask.astype(bool), params, cfg, drop_p, rng, training)
