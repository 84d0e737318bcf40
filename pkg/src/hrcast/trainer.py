"""Joint optimization of the prediction and contrastive objectives.

Batches are packed group-aware (so the contrastive term has positive pairs),
channel masks follow the curriculum schedule, and RMSProp with global-norm
clipping drives the updates. Early stopping watches validation MSE; the
best-validation parameters are what a run returns. The user-mean and MLP
baselines live here too, sharing the same optimizer and stopping rules.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from . import featdrop, histenc, userenc
from . import numerics as nx
from .datamodel import (
    NormalizationStats,
    SegmentStore,
    TrainingExample,
    Vocabulary,
    compute_normalization,
    denormalize_hr,
    normalize_channels,
    normalize_hr,
    split_corpus,
    split_corpus_by_session,
)

EPOCH_FIELDS = ("epoch", "train_total", "train_mse", "train_contrastive",
                "val_mse", "val_mae", "dropout_p", "wall_time_s")


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.01
    clip: float = 2.0
    patience: int = 10
    max_epochs: int = 100
    contrastive_weight: float = 0.1
    tau: float = 0.1
    group: str = "user_sport"
    hidden: int = 128
    dropout: float = 0.2
    bidirectional: bool = True
    history_depth: int = 10
    hist_hidden: int = 64
    hist_gru: int = 128
    hist_heads: int = 4
    hist_time_dim: int = 16
    hist_context: int = 128
    p_min: float = 0.1
    p_max: float = 0.5
    ramp_epochs: int = 20
    min_keep: int = 2
    mlp_hidden: int = 128
    seed: int = 0
    mode: str = "fast"
    split_by: str = "example"
    time_budget_s: float | None = None
    no_dropout: bool = False
    no_tat: bool = False
    no_contrastive: bool = False

    def __post_init__(self):
        for name in ("batch_size", "lr", "clip", "patience", "max_epochs",
                     "tau", "hidden", "history_depth", "mlp_hidden", "hist_hidden",
                     "hist_gru", "hist_heads", "hist_time_dim", "hist_context"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.contrastive_weight < 0:
            raise ValueError("contrastive_weight must be nonnegative")
        if self.mode not in ("reference", "fast"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.split_by not in ("example", "session"):
            raise ValueError(f"unknown split_by {self.split_by!r}")

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.no_contrastive else self.contrastive_weight

    def dropout_config(self) -> featdrop.DropoutConfig:
        return featdrop.DropoutConfig(p_min=self.p_min, p_max=self.p_max,
                                      epochs=self.ramp_epochs, min_keep=self.min_keep)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_total: float
    train_mse: float
    train_contrastive: float
    val_mse: float
    val_mae: float
    dropout_p: float
    wall_time_s: float

    def loss_key(self) -> tuple:
        """Everything except wall time — the deterministic part of the record."""
        return (self.epoch, self.train_total, self.train_mse, self.train_contrastive,
                self.val_mse, self.val_mae, self.dropout_p)


def write_epoch_records(path, records: list[EpochRecord], config: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("# format_version = 1\n")
        for k, v in sorted((config or {}).items()):
            fh.write(f"# config.{k} = {v}\n")
        fh.write("\t".join(EPOCH_FIELDS) + "\n")
        for r in records:
            fh.write("\t".join("%.10g" % getattr(r, f) for f in EPOCH_FIELDS) + "\n")


def read_epoch_records(path) -> list[EpochRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("epoch"):
                continue
            vals = line.split("\t")
            records.append(EpochRecord(int(float(vals[0])), *(float(v) for v in vals[1:])))
    return records


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class Batch:
    channels: np.ndarray          # (B, T, D) masked + normalized
    norm_hr: np.ndarray | None    # (B, T) z-scored target; None for planned workouts
    hr_bpm: np.ndarray | None     # (B, T) raw target
    user_ids: np.ndarray
    sport_ids: np.ndarray
    gender_ids: np.ndarray
    groups: list[str]
    example_ids: list[str]
    hist_channels: np.ndarray     # (n_h, T, D)
    hist_hr: np.ndarray           # (n_h, T)
    hist_gaps: np.ndarray         # (n_h,)
    prev_stats: np.ndarray        # (B, 3D+1) most-recent-workout summary

    @property
    def size(self) -> int:
        return self.channels.shape[0]


def _masked_normalized(segment, mask: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    ch = featdrop.apply_mask(segment.channels, mask)
    return normalize_channels(ch, mask, stats).T  # (T, D)


def _summary_stats(example: TrainingExample, stats: NormalizationStats, dim: int) -> np.ndarray:
    """mean/min/max per channel plus mean hr of the most recent previous workout."""
    out = np.zeros(3 * dim + 1)
    if example.history:
        prev = example.history[-1]
        ch = normalize_channels(prev.channels, prev.observed, stats)
        out[0:dim] = ch.mean(axis=1)
        out[dim:2 * dim] = ch.min(axis=1)
        out[2 * dim:3 * dim] = ch.max(axis=1)
        out[3 * dim] = normalize_hr(prev.hr, stats).mean()
    return out


def assemble_batch(examples: list[TrainingExample], stats: NormalizationStats, vocabs: dict,
                   depth: int, dtype, sampler: featdrop.MaskSampler | None = None,
                   epoch: int = 0, training: bool = False) -> Batch:
    B = len(examples)
    dim = examples[0].current.channels.shape[0]
    T = examples[0].current.T
    channels = np.zeros((B, T, dim), dtype)
    has_hr = all(ex.current.hr is not None for ex in examples)
    norm_hr = np.zeros((B, T), dtype) if has_hr else None
    hr_bpm = np.zeros((B, T)) if has_hr else None
    uids = np.zeros(B, np.int64)
    sids = np.zeros(B, np.int64)
    gids = np.zeros(B, np.int64)
    groups, ids = [], []
    hist_ch, hist_hr, hist_gaps, slot_of = [], [], [], []
    prev_stats = np.zeros((B, 3 * dim + 1), dtype)
    for b, ex in enumerate(examples):
        if sampler is not None:
            masks = sampler.masks_for_example(ex, epoch, training)
        else:
            masks = [ex.current.observed.copy()] + [h.observed.copy() for h in ex.history]
        channels[b] = _masked_normalized(ex.current, masks[0], stats)
        if has_hr:
            norm_hr[b] = normalize_hr(ex.current.hr, stats)
            hr_bpm[b] = ex.current.hr
        uids[b] = vocabs["user"].encode(ex.current.attrs.user_id)
        sids[b] = vocabs["sport"].encode(ex.current.attrs.sport)
        gids[b] = vocabs["gender"].encode(ex.current.attrs.gender)
        groups.append(ex.group)
        ids.append(ex.example_id)
        hist = ex.history[-depth:]
        for j, h in enumerate(hist):
            hist_ch.append(_masked_normalized(h, masks[1 + j], stats))
            hist_hr.append(normalize_hr(h.hr, stats))
            hist_gaps.append(h.gap_seconds)
            slot_of.append((b, depth - len(hist) + j))
        prev_stats[b] = _summary_stats(ex, stats, dim)
    n_h = len(hist_ch)
    return Batch(
        channels=channels, norm_hr=norm_hr, hr_bpm=hr_bpm,
        user_ids=uids, sport_ids=sids, gender_ids=gids,
        groups=groups, example_ids=ids,
        hist_channels=np.stack(hist_ch).astype(dtype) if n_h else np.zeros((0, T, dim), dtype),
        hist_hr=np.stack(hist_hr).astype(dtype) if n_h else np.zeros((0, T), dtype),
        hist_gaps=np.asarray(hist_gaps, np.float64),
        prev_stats=prev_stats,
    ), slot_of


def pack_batches(groups: list[str], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle while keeping same-group examples adjacent, then chunk.

    Keeps ≥2 same-group members per batch whenever group sizes allow, which the
    contrastive loss needs to be non-degenerate.
    """
    by_group: dict[str, list[int]] = {}
    for i, g in enumerate(groups):
        by_group.setdefault(g, []).append(i)
    keys = sorted(by_group)
    order = []
    for k in (keys[j] for j in rng.permutation(len(keys))):
        members = by_group[k]
        order.extend(members[j] for j in rng.permutation(len(members)))
    order = np.asarray(order, np.int64)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


# ---------------------------------------------------------------------------
# models


@dataclass
class ForwardOut:
    total: nx.Tensor | None   # None on the target-less (planned workout) path
    mse: float
    contrastive: float
    norm_pred: np.ndarray         # (B, T)
    z: np.ndarray | None = None   # (B, S) user embeddings


class FullModel:
    """History context + user encoder + per-timestep predictor."""

    kind = "full"

    def __init__(self, cfg: TrainConfig, input_dim: int, n_users: int, n_sports: int,
                 n_genders: int, rng: np.random.Generator):
        self.cfg = cfg
        self.input_dim = input_dim
        self.hist_cfg = histenc.HistConfig(depth=cfg.history_depth, bilstm_hidden=cfg.hist_hidden,
                                           gru_hidden=cfg.hist_gru, attn_heads=cfg.hist_heads,
                                           time_dim=cfg.hist_time_dim, context_dim=cfg.hist_context)
        self.user_cfg = userenc.UserConfig(hidden=cfg.hidden, dropout=cfg.dropout,
                                           bidirectional=cfg.bidirectional)
        self.store = nx.ParameterStore(nx.dtype_for_mode(cfg.mode))
        if not cfg.no_tat:
            histenc.register_params(self.store, self.hist_cfg, input_dim, rng)
        userenc.register_params(self.store, self.user_cfg, input_dim, self.hist_cfg.context_dim,
                                n_users, n_sports, n_genders, rng)

    def forward(self, batch: Batch, slot_of, training: bool, rng=None) -> ForwardOut:
        cfg = self.cfg
        B = batch.size
        drop_p = cfg.dropout if training else 0.0
        if cfg.no_tat or not slot_of:
            ctx = nx.Tensor(np.zeros((B, self.hist_cfg.context_dim), self.store.dtype))
        else:
            ctx = histenc.encode_context_batch(batch.hist_channels, batch.hist_hr,
                                               batch.hist_gaps, slot_of, B, self.store,
                                               self.hist_cfg, drop_p=drop_p, rng=rng,
                                               training=training)
        hidden, z = userenc.encode_user(batch.channels, ctx, batch.user_ids, batch.sport_ids,
                                        batch.gender_ids, self.store, self.user_cfg,
                                        drop_p=drop_p, rng=rng, training=training)
        norm_pred = userenc.predict_hr(hidden, self.store, 0.0, 1.0,
                                       drop_p=drop_p, rng=rng, training=training)
        lam = cfg.effective_lambda
        if batch.norm_hr is None:
            return ForwardOut(None, float("nan"), 0.0, norm_pred.data, z.data)
        mse = userenc.mse_loss(norm_pred, batch.norm_hr)
        if lam > 0.0:
            cl = userenc.info_nce(z, batch.groups, cfg.tau)
            total = nx.add(mse, nx.mul(cl, lam))
            cl_val = float(cl.data)
        else:
            total = mse
            cl_val = 0.0
        return ForwardOut(total, float(mse.data), cl_val, norm_pred.data, z.data)


class MLPModel:
    """Per-timestep feed-forward baseline: two hidden layers over the current
    features, attribute embeddings, and previous-workout summary statistics."""

    kind = "mlp"

    def __init__(self, cfg: TrainConfig, input_dim: int, n_users: int, n_sports: int,
                 n_genders: int, rng: np.random.Generator):
        self.cfg = cfg
        self.input_dim = input_dim
        self.user_cfg = userenc.UserConfig(hidden=cfg.hidden)
        self.store = nx.ParameterStore(nx.dtype_for_mode(cfg.mode))
        uc = self.user_cfg
        self.store.add("mlp.emb.user", (n_users + 1, uc.user_dim), rng, fan_in=uc.user_dim)
        self.store.add("mlp.emb.sport", (n_sports + 1, uc.sport_dim), rng, fan_in=uc.sport_dim)
        self.store.add("mlp.emb.gender", (n_genders + 1, uc.gender_dim), rng, fan_in=uc.gender_dim)
        din = input_dim + uc.user_dim + uc.sport_dim + uc.gender_dim + 3 * input_dim + 1
        h = cfg.mlp_hidden
        self.store.add("mlp.h1.w", (din, h), rng, fan_in=din)
        self.store.add("mlp.h1.b", (h,), fill=0.0)
        self.store.add("mlp.h2.w", (h, h), rng, fan_in=h)
        self.store.add("mlp.h2.b", (h,), fill=0.0)
        self.store.add("mlp.out.w", (h, 1), rng, fan_in=h)
        self.store.add("mlp.out.b", (1,), fill=0.0)

    def forward(self, batch: Batch, slot_of, training: bool, rng=None) -> ForwardOut:
        p = self.store
        B, T, _ = batch.channels.shape
        emb_u = nx.gather_rows(p["mlp.emb.user"], batch.user_ids)
        emb_s = nx.gather_rows(p["mlp.emb.sport"], batch.sport_ids)
        emb_g = nx.gather_rows(p["mlp.emb.gender"], batch.gender_ids)
        static = nx.concat([emb_u, emb_s, emb_g, nx.Tensor(batch.prev_stats)], axis=1)
        static_t = nx.broadcast_to(nx.reshape(static, (B, 1, static.shape[1])), (B, T, static.shape[1]))
        x = nx.concat([nx.Tensor(batch.channels), static_t], axis=2)
        flat = nx.reshape(x, (B * T, x.shape[2]))
        h1 = nx.gelu(nx.affine(flat, p["mlp.h1.w"], p["mlp.h1.b"]))
        h2 = nx.gelu(nx.affine(h1, p["mlp.h2.w"], p["mlp.h2.b"]))
        out = nx.affine(h2, p["mlp.out.w"], p["mlp.out.b"])
        norm_pred = nx.reshape(out, (B, T))
        if batch.norm_hr is None:
            return ForwardOut(None, float("nan"), 0.0, norm_pred.data)
        mse = userenc.mse_loss(norm_pred, batch.norm_hr)
        return ForwardOut(mse, float(mse.data), 0.0, norm_pred.data)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class TrainResult:
    records: list[EpochRecord]
    best_epoch: int
    best_val_mse: float
    diverged: bool = False
    stopped_early: bool = False
    budget_exhausted: bool = False


def _evaluate(model, examples, stats, vocabs, cfg: TrainConfig) -> tuple[float, float]:
    """Validation/test metrics in bpm² / bpm (de-normalized predictions)."""
    se_sum = ae_sum = 0.0
    n = 0
    for i in range(0, len(examples), cfg.batch_size):
        chunk = examples[i:i + cfg.batch_size]
        batch, slot_of = assemble_batch(chunk, stats, vocabs, cfg.history_depth,
                                        model.store.dtype, sampler=None, training=False)
        out = model.forward(batch, slot_of, training=False)
        pred = denormalize_hr(out.norm_pred.astype(np.float64), stats)
        err = pred - batch.hr_bpm
        se_sum += float(np.mean(err ** 2, axis=1).sum())
        ae_sum += float(np.mean(np.abs(err), axis=1).sum())
        n += batch.size
        del out, batch
    return se_sum / n, ae_sum / n


def _fit(model, train_ex, val_ex, cfg: TrainConfig, stats, vocabs,
         sampler: featdrop.MaskSampler | None, progress=None) -> TrainResult:
    opt = nx.RMSProp(model.store, lr=cfg.lr, clip=cfg.clip)
    dcfg = cfg.dropout_config()
    records: list[EpochRecord] = []
    best_state = model.store.state_dict()
    best_val = float("inf")
    best_epoch = -1
    bad = 0
    diverged = stopped_early = budget_exhausted = False
    t_start = time.monotonic()
    groups = [ex.group for ex in train_ex]
    for epoch in range(cfg.max_epochs):
        t0 = time.monotonic()
        order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11, epoch]))
        drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13, epoch]))
        p_e = featdrop.dropout_prob(epoch, dcfg) if sampler is not None else 0.0
        sum_total = sum_mse = sum_cl = 0.0
        n_seen = 0
        for idx in pack_batches(groups, cfg.batch_size, order_rng):
            batch, slot_of = assemble_batch([train_ex[i] for i in idx], stats, vocabs,
                                            cfg.history_depth, model.store.dtype,
                                            sampler=sampler, epoch=epoch, training=True)
            out = model.forward(batch, slot_of, training=True, rng=drop_rng)
            if not np.isfinite(float(out.total.data)):
                diverged = True
                break
            model.store.zero_grad()
            out.total.backward()
            try:
                opt.step()
            except FloatingPointError:
                diverged = True
                break
            sum_total += float(out.total.data) * batch.size
            sum_mse += out.mse * batch.size
            sum_cl += out.contrastive * batch.size
            n_seen += batch.size
            del out, batch  # free this graph before the next forward builds
        if diverged:
            break
        val_mse, val_mae = _evaluate(model, val_ex, stats, vocabs, cfg)
        records.append(EpochRecord(epoch, sum_total / n_seen, sum_mse / n_seen,
                                   sum_cl / n_seen, val_mse, val_mae, p_e,
                                   time.monotonic() - t0))
        if progress is not None:
            progress(records[-1])
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_state = model.store.state_dict()
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                stopped_early = True
                break
        if cfg.time_budget_s is not None and time.monotonic() - t_start > cfg.time_budget_s:
            budget_exhausted = True
            break
    model.store.load_state_dict(best_state)
    return TrainResult(records, best_epoch, best_val, diverged, stopped_early, budget_exhausted)


@dataclass
class FittedRun:
    model: object
    result: TrainResult
    stats: NormalizationStats
    vocabs: dict
    splits: tuple


def split_examples(examples, cfg: TrainConfig):
    """The train/val/test partition a config implies (split_by + seed)."""
    if cfg.split_by == "session":
        return split_corpus_by_session(examples, seed=cfg.seed)
    return split_corpus(examples, seed=cfg.seed)


def _train_impl(store: SegmentStore, cfg: TrainConfig, kind: str, progress=None) -> FittedRun:
    examples = store.examples(cfg.history_depth, cfg.group)
    train_ex, val_ex, test_ex = split_examples(examples, cfg)
    if not train_ex or not val_ex:
        raise ValueError("empty train or validation split")
    # always from the current train split, so (config, seed) fully determine the run
    stats = compute_normalization(train_ex, store.registry.dim)
    vocabs = store.vocabs
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    cls = FullModel if kind == "full" else MLPModel
    model = cls(cfg, store.registry.dim, len(vocabs["user"]), len(vocabs["sport"]),
                len(vocabs["gender"]), rng)
    sampler = None
    if kind == "full" and not cfg.no_dropout:
        sampler = featdrop.MaskSampler(cfg.dropout_config(), tuple(store.registry.main_indices),
                                       cfg.seed)
    result = _fit(model, train_ex, val_ex, cfg, stats, vocabs, sampler, progress)
    return FittedRun(model, result, stats, vocabs, (train_ex, val_ex, test_ex))


def train(store: SegmentStore, cfg: TrainConfig, progress=None) -> FittedRun:
    return _train_impl(store, cfg, "full", progress)


def baseline_mlp(store: SegmentStore, cfg: TrainConfig, progress=None) -> FittedRun:
    return _train_impl(store, cfg, "mlp", progress)


# ---------------------------------------------------------------------------
# prediction / embedding / persistence


def model_predictions(model, examples, stats, vocabs, batch_size: int = 64) -> dict[str, np.ndarray]:
    cfg = model.cfg
    preds = {}
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batch, slot_of = assemble_batch(chunk, stats, vocabs, cfg.history_depth,
                                        model.store.dtype, sampler=None, training=False)
        out = model.forward(batch, slot_of, training=False)
        bpm = denormalize_hr(out.norm_pred.astype(np.float64), stats)
        for b, ex_id in enumerate(batch.example_ids):
            preds[ex_id] = bpm[b]
        del out, batch
    return preds


def prediction_metrics(preds: dict[str, np.ndarray], examples) -> dict[str, float]:
    se, ae = [], []
    for ex in examples:
        err = preds[ex.example_id] - ex.current.hr
        se.append(float(np.mean(err ** 2)))
        ae.append(float(np.mean(np.abs(err))))
    return {"mse": float(np.mean(se)), "mae": float(np.mean(ae)), "n": len(se)}


def export_embeddings(model: FullModel, examples, stats, vocabs,
                      batch_size: int = 64) -> tuple[list[str], list[str], list[str], np.ndarray]:
    """z_u per example with its user id and group label (for cluster analysis)."""
    ids, users, groups, zs = [], [], [], []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batch, slot_of = assemble_batch(chunk, stats, vocabs, model.cfg.history_depth,
                                        model.store.dtype, sampler=None, training=False)
        out = model.forward(batch, slot_of, training=False)
        ids.extend(batch.example_ids)
        users.extend(ex.current.attrs.user_id for ex in chunk)
        groups.extend(batch.groups)
        zs.append(out.z.astype(np.float64))
        del out, batch
    return ids, users, groups, np.concatenate(zs, axis=0)


def save_model(path, run: FittedRun, extra: dict | None = None) -> None:
    model = run.model
    meta = {
        "format_version": 1,
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "input_dim": model.input_dim,
        "n_users": len(run.vocabs["user"]),
        "n_sports": len(run.vocabs["sport"]),
        "n_genders": len(run.vocabs["gender"]),
        "vocab": {k: v.names for k, v in run.vocabs.items()},
        "normalization": run.stats.to_dict(),
        "best_epoch": run.result.best_epoch,
        "best_val_mse": run.result.best_val_mse,
    }
    if extra:
        meta.update(extra)
    nx.save_checkpoint(path, model.store.state_dict(), meta)


def load_model(path):
    """-> (model, stats, vocabs, metadata). Missing file raises."""
    arrays, meta = nx.load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    cls = FullModel if meta["kind"] == "full" else MLPModel
    model = cls(cfg, meta["input_dim"], meta["n_users"], meta["n_sports"], meta["n_genders"],
                np.random.default_rng(0))
    model.store.load_state_dict(arrays)
    stats = NormalizationStats.from_dict(meta["normalization"])
    vocabs = {k: Vocabulary(v) for k, v in meta["vocab"].items()}
    return model, stats, vocabs, meta


def predict_example(model, stats, vocabs, example: TrainingExample) -> np.ndarray:
    """Inference for one (possibly hr-less, i.e. planned) workout."""
    batch, slot_of = assemble_batch([example], stats, vocabs, model.cfg.history_depth,
                                    model.store.dtype, sampler=None, training=False)
    out = model.forward(batch, slot_of, training=False)
    return denormalize_hr(out.norm_pred[0].astype(np.float64), stats)


# ---------------------------------------------------------------------------
# user-mean baseline


@dataclass
class UserMeanPredictor:
    user_means: dict[str, float]
    global_mean: float

    def mean_for(self, user_id: str) -> float:
        return self.user_means.get(user_id, self.global_mean)

    def predict(self, example: TrainingExample) -> np.ndarray:
        return np.full(example.current.T, self.mean_for(example.current.attrs.user_id))


def baseline_user_mean(train_examples: list[TrainingExample]) -> UserMeanPredictor:
    """Per-user constant predictor: that user's training-set mean heart rate."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    total = 0.0
    n = 0
    for ex in train_examples:
        u = ex.current.attrs.user_id
        s = float(ex.current.hr.sum())
        sums[u] = sums.get(u, 0.0) + s
        counts[u] = counts.get(u, 0) + ex.current.T
        total += s
        n += ex.current.T
    if n == 0:
        raise ValueError("no training heart-rate values")
    return UserMeanPredictor({u: sums[u] / counts[u] for u in sums}, total / n)


# ---------------------------------------------------------------------------
# estimator-style wrappers


class _Estimator:
    """fit/predict/get_params in the familiar estimator idiom."""

    _config_cls = TrainConfig

    def __init__(self, **params):
        self._params = self._config_cls.from_dict(params).to_dict() if params else \
            self._config_cls().to_dict()
        for k, v in self._params.items():
            setattr(self, k, v)

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in self._params}

    def set_params(self, **params):
        cfg = dict(self.get_params())
        for k, v in params.items():
            if k not in cfg:
                raise ValueError(f"invalid parameter {k!r}")
            cfg[k] = v
        self._config_cls.from_dict(cfg)  # re-validate
        for k, v in cfg.items():
            setattr(self, k, v)
        return self

    def _config(self) -> TrainConfig:
        return self._config_cls.from_dict(self.get_params())


class HeartRateRegressor(_Estimator):
    """Full model: history context, user encoder, joint MSE + contrastive loss."""

    def fit(self, store: SegmentStore) -> "HeartRateRegressor":
        run = train(store, self._config())
        self.run_ = run
        self.model_ = run.model
        self.records_ = run.result.records
        self.best_epoch_ = run.result.best_epoch
        return self

    def predict(self, examples=None) -> dict[str, np.ndarray]:
        if examples is None:
            examples = self.run_.splits[2]
        return model_predictions(self.model_, examples, self.run_.stats, self.run_.vocabs,
                                 self.batch_size)

    def score(self, examples=None) -> dict[str, float]:
        if examples is None:
            examples = self.run_.splits[2]
        return prediction_metrics(self.predict(examples), examples)


class MLPBaseline(_Estimator):
    """Per-timestep MLP with two hidden layers, same optimizer settings."""

    def fit(self, store: SegmentStore) -> "MLPBaseline":
        run = baseline_mlp(store, self._config())
        self.run_ = run
        self.model_ = run.model
        self.records_ = run.result.records
        return self

    predict = HeartRateRegressor.predict
    score = HeartRateRegressor.score


class UserMeanBaseline(_Estimator):
    """Constant per-user predictor; unseen users get the global training mean."""

    def fit(self, store: SegmentStore) -> "UserMeanBaseline":
        cfg = self._config()
        examples = store.examples(cfg.history_depth, cfg.group)
        train_ex, val_ex, test_ex = _split(examples, cfg)
        self.predictor_ = baseline_user_mean(train_ex)
        self.splits_ = (train_ex, val_ex, test_ex)
        return self

    def predict(self, examples=None) -> dict[str, np.ndarray]:
        if examples is None:
            examples = self.splits_[2]
        return {ex.example_id: self.predictor_.predict(ex) for ex in examples}

    def score(self, examples=None) -> dict[str, float]:
        if examples is None:
            examples = self.splits_[2]
        return prediction_metrics(self.predict(examples), examples)
