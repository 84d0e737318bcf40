"""Command-line entry point: ingest, synth, train, predict, embed, evaluate,
stats, and ablate.

Configuration is a flat text file of `section.key = value` lines ('#' starts a
comment); `--set section.key=value` overrides single entries and CLI flags win
over both. Every key has a documented default (see DEFAULTS), unknown keys are
rejected, and the resolved configuration is echoed into each output artifact so
a result is reproducible from (config, seed) alone. `--log json` switches the
stderr progress stream to JSON lines.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalstats, ingest, synthgen, trainer
from .datamodel import (
    ChannelRegistry,
    Segment,
    SegmentStore,
    StaticAttributes,
    TrainingExample,
    fill_gaps,
    group_label,
    wearable_registry,
)

# ---------------------------------------------------------------------------
# run configuration


# config key -> TrainConfig field
_TRAIN_KEYS = {
    "train.batch_size": "batch_size",
    "train.lr": "lr",
    "train.clip": "clip",
    "train.patience": "patience",
    "train.max_epochs": "max_epochs",
    "train.seed": "seed",
    "train.mode": "mode",
    "train.split_by": "split_by",
    "train.time_budget_s": "time_budget_s",
    "model.hidden": "hidden",
    "model.dropout": "dropout",
    "model.bidirectional": "bidirectional",
    "model.history_depth": "history_depth",
    "model.hist_hidden": "hist_hidden",
    "model.hist_gru": "hist_gru",
    "model.hist_heads": "hist_heads",
    "model.hist_time_dim": "hist_time_dim",
    "model.hist_context": "hist_context",
    "model.mlp_hidden": "mlp_hidden",
    "dropout.p_min": "p_min",
    "dropout.p_max": "p_max",
    "dropout.ramp_epochs": "ramp_epochs",
    "dropout.min_keep": "min_keep",
    "contrastive.tau": "tau",
    "contrastive.lambda": "contrastive_weight",
    "contrastive.group": "group",
    "ablation.no_dropout": "no_dropout",
    "ablation.no_tat": "no_tat",
    "ablation.no_contrastive": "no_contrastive",
}

_TC_DEFAULTS = trainer.TrainConfig()

DEFAULTS: dict[str, object] = {
    **{k: getattr(_TC_DEFAULTS, f) for k, f in _TRAIN_KEYS.items()},
    "train.model": "full",          # full | mlp
    "data.window": 450,
    "synth.users": 20,
    "synth.sessions": 60,
    "synth.seed": 1,
    "eval.split": "test",           # train | val | test | all
    "eval.bootstrap_iters": 200,
    "eval.bootstrap_frac": 0.8,
    "eval.bootstrap_seed": 0,
    "stats.fdr_family": "per_baseline",
    "ablate.runs": 5,
    # path fallbacks for the corresponding flags; empty = must come from a flag
    "paths.store": "",
    "paths.ckpt": "",
    "paths.out": "",
    "paths.fixtures": "",
}


def _parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ValueError(f"unknown config key {key!r}; known keys: {sorted(DEFAULTS)}")
    default = DEFAULTS[key]
    text = text.strip()
    if key == "train.time_budget_s":  # float | none
        return None if text.lower() == "none" else float(text)
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return f"{v:.10g}" if isinstance(v, float) else str(v)


class RunConfig:
    """Resolved flat configuration: defaults <- config file <- --set overrides."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        if path:
            with open(path) as fh:
                for ln, line in enumerate(fh, 1):
                    line = line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    key, sep, val = line.partition("=")
                    if not sep:
                        raise ValueError(f"{path}:{ln}: expected 'section.key = value'")
                    key = key.strip()
                    values[key] = _parse_value(key, val)
        for item in overrides or []:
            key, sep, val = item.partition("=")
            if not sep:
                raise ValueError(f"--set {item!r}: expected section.key=value")
            key = key.strip()
            values[key] = _parse_value(key, val)
        return cls(values)

    def __getitem__(self, key: str):
        return self.values[key]

    def train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig.from_dict(
            {f: self.values[k] for k, f in _TRAIN_KEYS.items()})

    def echo(self) -> dict[str, str]:
        """Formatted key-value view for artifact headers; path keys excluded so
        identically configured runs produce identical artifacts."""
        return {k: _format_value(v) for k, v in sorted(self.values.items())
                if not k.startswith("paths.")}


def write_config(path, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        for k, v in sorted(cfg.values.items()):
            fh.write(f"{k} = {_format_value(v)}\n")


# ---------------------------------------------------------------------------
# progress logging


class Logger:
    def __init__(self, fmt: str = "plain"):
        self.fmt = fmt

    def __call__(self, event: str, **fields) -> None:
        if self.fmt == "json":
            line = json.dumps({"event": event, **fields}, sort_keys=True)
        else:
            kv = " ".join(f"{k}={v}" for k, v in fields.items())
            line = f"[{event}] {kv}".rstrip()
        print(line, file=sys.stderr, flush=True)


def _num(v: float) -> float:
    return float(f"{v:.6g}")


def _epoch_progress(log: Logger):
    def cb(r: trainer.EpochRecord) -> None:
        log("train.epoch", epoch=r.epoch, train_total=_num(r.train_total),
            train_mse=_num(r.train_mse), train_contrastive=_num(r.train_contrastive),
            val_mse=_num(r.val_mse), val_mae=_num(r.val_mae),
            dropout_p=_num(r.dropout_p), wall_time_s=_num(r.wall_time_s))
    return cb


# ---------------------------------------------------------------------------
# shared helpers


def _required(flag_value, cfg: RunConfig, key: str, flag: str) -> str:
    v = flag_value or cfg[key]
    if not v:
        raise ValueError(f"missing {flag} (no {key} in config either)")
    return str(v)


def _write_echo(fh, cfg: RunConfig, **extra) -> None:
    fh.write("# format_version = 1\n")
    for k, v in extra.items():
        fh.write(f"# {k} = {v}\n")
    for k, v in cfg.echo().items():
        fh.write(f"# config.{k} = {v}\n")


def _amend_manifest(store_path, extra: dict) -> None:
    mpath = SegmentStore.manifest_path(store_path)
    with open(mpath) as fh:
        manifest = json.load(fh)
    manifest.update(extra)
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _select_split(examples, tc: trainer.TrainConfig, which: str):
    if which == "all":
        return examples
    parts = dict(zip(("train", "val", "test"), trainer.split_examples(examples, tc)))
    if which not in parts:
        raise ValueError(f"unknown split {which!r} (train, val, test, or all)")
    return parts[which]


def _load_ckpt(path):
    model, stats, vocabs, meta = trainer.load_model(path)
    return model, stats, vocabs, meta


# segment files for `predict`: '#' metadata lines, then CSV whose header names
# canonical channels (plus optional `hr`); rows are the 1 s grid.


def read_segment_file(path, registry: ChannelRegistry) -> Segment:
    meta: dict[str, str] = {}
    rows: list[str] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            else:
                rows.append(line)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    header = rows[0].split(",")
    for col in header:
        if col != "hr" and col not in registry.units:
            raise ValueError(f"{path}: unknown channel {col!r}")
    data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]], np.float64)
    if data.shape[0] == 0:
        raise ValueError(f"{path}: no samples")
    T = data.shape[0]
    channels = np.zeros((registry.dim, T))
    observed = np.zeros(registry.dim, bool)
    hr = None
    for j, col in enumerate(header):
        if col == "hr":
            hr = data[:, j].copy()
        else:
            idx = registry.index(col)
            channels[idx] = data[:, j]
            observed[idx] = True
    attrs = StaticAttributes(meta.get("user_id", ""), meta.get("sport", ""),
                             meta.get("device", ""), meta.get("gender", ""))
    return Segment(channels=channels, observed=observed, hr=hr, attrs=attrs,
                   gap_seconds=0.0, session_id=Path(path).stem, segment_index=0,
                   start_time=float(meta.get("start_time", "0")), dt=1.0)


def write_segment_file(path, segment: Segment, registry: ChannelRegistry) -> None:
    names = [n for n, o in zip(registry.names, segment.observed) if o]
    with open(path, "w") as fh:
        fh.write(f"# user_id = {segment.attrs.user_id}\n")
        fh.write(f"# sport = {segment.attrs.sport}\n")
        fh.write(f"# device = {segment.attrs.device}\n")
        if segment.attrs.gender:
            fh.write(f"# gender = {segment.attrs.gender}\n")
        fh.write(f"# start_time = {segment.start_time:.10g}\n")
        cols = names + (["hr"] if segment.hr is not None else [])
        fh.write(",".join(cols) + "\n")
        T = segment.channels.shape[1]
        for t in range(T):
            vals = [f"{segment.channels[registry.index(n), t]:.10g}" for n in names]
            if segment.hr is not None:
                vals.append(f"{segment.hr[t]:.10g}")
            fh.write(",".join(vals) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg: RunConfig, log: Logger) -> int:
    if args.schema:
        schema = ingest.read_schema(args.schema)
    elif args.vendor:
        schemas = ingest.default_schemas()
        if args.vendor not in schemas:
            raise ValueError(f"unknown vendor {args.vendor!r}; built-ins: {sorted(schemas)}")
        schema = schemas[args.vendor]
    else:
        raise ValueError("need --vendor (built-in schema) or --schema (schema file)")
    if args.registry:
        with open(args.registry) as fh:
            registry = ChannelRegistry.from_dict(json.load(fh))
    else:
        registry = wearable_registry()
    out = _required(args.out, cfg, "paths.out", "--out")
    segments, report = ingest.ingest_directory(args.indir, schema, registry,
                                               window=cfg["data.window"], out_path=out)
    _amend_manifest(out, {"config": cfg.echo(), "vendor": schema.vendor})
    report["config"] = cfg.echo()
    with open(out + ".report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    log("ingest.done", files=report["files"], segments=report["segments"],
        out=out, vendor=schema.vendor)
    return 0


def cmd_synth(args, cfg: RunConfig, log: Logger) -> int:
    users = args.users if args.users is not None else cfg["synth.users"]
    sessions = args.sessions if args.sessions is not None else cfg["synth.sessions"]
    seed = args.seed if args.seed is not None else cfg["synth.seed"]
    templates = synthgen.read_templates(args.devices) if args.devices else None
    out = _required(args.out, cfg, "paths.out", "--out")
    segments, profiles = synthgen.generate_corpus(
        users, sessions, templates, seed=seed, window=cfg["data.window"], out_path=out)
    _amend_manifest(out, {"config": {**cfg.echo(), "synth.users": str(users),
                                     "synth.sessions": str(sessions),
                                     "synth.seed": str(seed)}})
    log("synth.done", users=users, sessions_per_user=sessions, seed=seed,
        segments=len(segments), out=out)
    return 0


def cmd_train(args, cfg: RunConfig, log: Logger) -> int:
    store_path = _required(args.store, cfg, "paths.store", "--store")
    out = _required(args.out, cfg, "paths.ckpt", "--out")
    store = SegmentStore.load(store_path)
    tc = cfg.train_config()
    kind = cfg["train.model"]
    if kind not in ("full", "mlp"):
        raise ValueError(f"train.model must be 'full' or 'mlp', got {kind!r}")
    log("train.start", model=kind, mode=tc.mode, seed=tc.seed,
        segments=len(store.segments), store=store_path)
    fit = trainer.train if kind == "full" else trainer.baseline_mlp
    run = fit(store, tc, progress=_epoch_progress(log))
    trainer.save_model(out, run, extra={"registry": store.registry.to_dict(),
                                        "window": store.window,
                                        "run_config": cfg.echo()})
    records_path = out + ".records.tsv"
    trainer.write_epoch_records(records_path, run.result.records, config=cfg.echo())
    r = run.result
    log("train.done", best_epoch=r.best_epoch, best_val_mse=_num(r.best_val_mse),
        epochs_run=len(r.records), diverged=r.diverged, stopped_early=r.stopped_early,
        budget_exhausted=r.budget_exhausted, ckpt=out, records=records_path)
    print(f"best epoch {r.best_epoch}  val mse {r.best_val_mse:.4f} bpm^2  "
          f"({len(r.records)} epochs, checkpoint {out})")
    return 0


def cmd_predict(args, cfg: RunConfig, log: Logger) -> int:
    ckpt = _required(args.ckpt, cfg, "paths.ckpt", "--ckpt")
    model, stats, vocabs, meta = _load_ckpt(ckpt)
    if "registry" not in meta:
        raise ValueError("checkpoint has no channel registry metadata; "
                         "re-train with `hrcast train`")
    registry = ChannelRegistry.from_dict(meta["registry"])
    current = read_segment_file(args.segment, registry)
    history = [read_segment_file(p, registry) for p in args.history or []]
    for h in history:
        if h.hr is None:
            raise ValueError(f"history segment {h.session_id} has no hr column")
        if h.attrs.user_id != current.attrs.user_id:
            raise ValueError("history and current segments belong to different users")
    times = [h.start_time for h in history]
    if times != sorted(times):
        raise ValueError("history files must be in chronological order")
    timeline = history + [current]
    fill_gaps(timeline)
    example = TrainingExample(current=current, history=history,
                              group=group_label(current.attrs, model.cfg.group))
    pred = trainer.predict_example(model, stats, vocabs, example)
    out_fh = open(args.out, "w") if args.out else sys.stdout
    try:
        _write_echo(out_fh, cfg, ckpt=ckpt, example_id=example.example_id,
                    user_id=current.attrs.user_id, sport=current.attrs.sport,
                    n_history=len(history))
        out_fh.write("t\thr_pred_bpm\n")
        for t, v in enumerate(pred):
            out_fh.write(f"{t}\t{v:.4f}\n")
    finally:
        if args.out:
            out_fh.close()
    log("predict.done", example=example.example_id, steps=len(pred),
        mean_bpm=_num(float(np.mean(pred))))
    return 0


def cmd_embed(args, cfg: RunConfig, log: Logger) -> int:
    ckpt = _required(args.ckpt, cfg, "paths.ckpt", "--ckpt")
    store_path = _required(args.store, cfg, "paths.store", "--store")
    out = _required(args.out, cfg, "paths.out", "--out")
    model, stats, vocabs, meta = _load_ckpt(ckpt)
    if model.kind != "full":
        raise ValueError("embeddings require a full-model checkpoint")
    store = SegmentStore.load(store_path)
    examples = store.examples(model.cfg.history_depth, model.cfg.group)
    examples = _select_split(examples, model.cfg, args.split)
    ids, users, groups, Z = trainer.export_embeddings(model, examples, stats, vocabs)
    with open(out, "w") as fh:
        _write_echo(fh, cfg, ckpt=ckpt, split=args.split, dim=Z.shape[1])
        fh.write("example_id\tuser\tgroup\t" +
                 "\t".join(f"z{j}" for j in range(Z.shape[1])) + "\n")
        for i, ex_id in enumerate(ids):
            zs = "\t".join(f"{v:.6g}" for v in Z[i])
            fh.write(f"{ex_id}\t{users[i]}\t{groups[i]}\t{zs}\n")
    log("embed.done", examples=len(ids), dim=Z.shape[1], out=out)
    return 0


def cmd_evaluate(args, cfg: RunConfig, log: Logger) -> int:
    ckpt = _required(args.ckpt, cfg, "paths.ckpt", "--ckpt")
    store_path = _required(args.store, cfg, "paths.store", "--store")
    out = _required(args.out, cfg, "paths.out", "--out")
    model, stats, vocabs, meta = _load_ckpt(ckpt)
    store = SegmentStore.load(store_path)
    examples = store.examples(model.cfg.history_depth, model.cfg.group)
    # the checkpoint's own config decides the split, so "test" is the part the
    # training run never touched
    which = args.split or cfg["eval.split"]
    examples = _select_split(examples, model.cfg, which)
    if not examples:
        raise ValueError(f"split {which!r} is empty")
    preds = trainer.model_predictions(model, examples, stats, vocabs)
    overall = trainer.prediction_metrics(preds, examples)
    errors = evalstats.per_example_errors(preds, examples)
    boot = evalstats.bootstrap_summary(errors, iters=cfg["eval.bootstrap_iters"],
                                       frac=cfg["eval.bootstrap_frac"],
                                       seed=cfg["eval.bootstrap_seed"])
    sports = evalstats.per_sport_table(errors)
    with open(out, "w") as fh:
        _write_echo(fh, cfg, ckpt=ckpt, split=which, model=model.kind)
        fh.write("\n[overall]\nmetric\tvalue\n")
        fh.write(f"mse\t{overall['mse']:.6g}\nmae\t{overall['mae']:.6g}\n"
                 f"n\t{overall['n']}\n")
        fh.write("\n[bootstrap]\nmetric\tmean\tstd\titers\tfrac\n")
        for metric in ("mse", "mae"):
            m, s = boot[metric]
            fh.write(f"{metric}\t{m:.6g}\t{s:.6g}\t{cfg['eval.bootstrap_iters']}\t"
                     f"{cfg['eval.bootstrap_frac']:g}\n")
        fh.write("\n[per_sport]\nsport\tn\tmse\tmae\n")
        for row in sports:
            fh.write(f"{row['sport']}\t{row['n']}\t{row['mse']:.6g}\t{row['mae']:.6g}\n")
    log("evaluate.done", split=which, n=overall["n"], mse=_num(overall["mse"]),
        mae=_num(overall["mae"]), out=out)
    print(f"{which} split: mse {overall['mse']:.4f} bpm^2  mae {overall['mae']:.4f} bpm  "
          f"(n={overall['n']})")
    return 0


def cmd_stats(args, cfg: RunConfig, log: Logger) -> int:
    fixtures = args.fixtures or cfg["paths.fixtures"] or None
    out = _required(args.out, cfg, "paths.out", "--out")
    report = evalstats.stats_report(fixtures, family=cfg["stats.fdr_family"])
    evalstats.write_stats_report(report, out, config=cfg.echo())
    n_sig = sum(1 for c in report["pairwise"] if c["significant"])
    log("stats.done", improvements=len(report["improvements"]),
        friedman_tables=len(report["friedman"]), pairwise=len(report["pairwise"]),
        significant=n_sig, out=out)
    return 0


_ABLATION_VARIANTS = (
    ("full", {}),
    ("no_dropout", {"no_dropout": True}),
    ("no_tat", {"no_tat": True}),
    ("no_contrastive", {"no_contrastive": True}),
)


def cmd_ablate(args, cfg: RunConfig, log: Logger) -> int:
    store_path = _required(args.store, cfg, "paths.store", "--store")
    out = _required(args.out, cfg, "paths.out", "--out")
    store = SegmentStore.load(store_path)
    base = cfg.train_config()
    n_runs = args.runs if args.runs is not None else cfg["ablate.runs"]
    if n_runs < 1:
        raise ValueError("ablate.runs must be >= 1")
    seeds = [base.seed + i for i in range(n_runs)]
    rows: list[dict] = []
    failures: list[str] = []
    for name, flags in _ABLATION_VARIANTS:
        for seed in seeds:
            tc = replace(base, seed=seed, **flags)
            log("ablate.run", variant=name, seed=seed)
            try:
                run = trainer.train(store, tc)
                test_ex = run.splits[2]
                preds = trainer.model_predictions(run.model, test_ex, run.stats, run.vocabs)
                metrics = trainer.prediction_metrics(preds, test_ex)
                _, users, _, Z = trainer.export_embeddings(run.model, test_ex,
                                                           run.stats, run.vocabs)
                try:
                    sil = evalstats.silhouette(Z, users)
                except ValueError:
                    sil = float("nan")
                r = run.result
                contrastive = r.records[r.best_epoch].train_contrastive if r.records else float("nan")
                rows.append({"variant": name, "seed": seed, "mse": metrics["mse"],
                             "mae": metrics["mae"], "silhouette_user": sil,
                             "contrastive": contrastive, "best_epoch": r.best_epoch})
                log("ablate.run_done", variant=name, seed=seed,
                    mse=_num(metrics["mse"]), mae=_num(metrics["mae"]),
                    silhouette_user=_num(sil) if np.isfinite(sil) else None)
            except (ValueError, FloatingPointError, OSError) as exc:
                failures.append(f"{name}/seed={seed}: {exc}")
                log("ablate.run_failed", variant=name, seed=seed, error=str(exc))
    with open(out, "w") as fh:
        _write_echo(fh, cfg, seeds=",".join(map(str, seeds)),
                    note="summary std is over seeds (population, ddof=0)")
        fh.write("\n[runs]\nvariant\tseed\ttest_mse\ttest_mae\tsilhouette_user\t"
                 "train_contrastive\tbest_epoch\n")
        for r in rows:
            fh.write(f"{r['variant']}\t{r['seed']}\t{r['mse']:.6g}\t{r['mae']:.6g}\t"
                     f"{r['silhouette_user']:.6g}\t{r['contrastive']:.6g}\t"
                     f"{r['best_epoch']}\n")
        fh.write("\n[summary]\nvariant\tn_runs\tmse_mean\tmse_std\tmae_mean\tmae_std\t"
                 "silhouette_mean\tcontrastive_mean\n")
        for name, _ in _ABLATION_VARIANTS:
            vr = [r for r in rows if r["variant"] == name]
            if not vr:
                fh.write(f"{name}\t0\tnan\tnan\tnan\tnan\tnan\tnan\n")
                continue
            mse = np.array([r["mse"] for r in vr])
            mae = np.array([r["mae"] for r in vr])
            sil = np.array([r["silhouette_user"] for r in vr])
            cl = np.array([r["contrastive"] for r in vr])
            fh.write(f"{name}\t{len(vr)}\t{mse.mean():.6g}\t{mse.std():.6g}\t"
                     f"{mae.mean():.6g}\t{mae.std():.6g}\t{np.nanmean(sil):.6g}\t"
                     f"{cl.mean():.6g}\n")
        if failures:
            fh.write("\n[failures]\nrun\terror\n")
            for f in failures:
                run_id, _, msg = f.partition(": ")
                fh.write(f"{run_id}\t{msg}\n")
    log("ablate.done", runs_ok=len(rows), runs_failed=len(failures), out=out)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat `section.key = value` config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")
    common.add_argument("--log", choices=("plain", "json"), default="plain",
                        help="stderr progress format")

    p = argparse.ArgumentParser(prog="hrcast",
                                description="Heart-rate sequence prediction toolkit")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    sp = sub.add_parser("ingest", parents=[common],
                        help="normalize vendor session files into a segment store")
    sp.add_argument("--vendor", help="built-in schema name")
    sp.add_argument("--schema", help="schema file (overrides --vendor)")
    sp.add_argument("--in", dest="indir", required=True, help="directory of session CSVs")
    sp.add_argument("--registry", help="channel registry JSON (default: wearable)")
    sp.add_argument("--out", help="output store path")
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("synth", parents=[common],
                        help="generate the synthetic corpus with known dynamics")
    sp.add_argument("--users", type=int)
    sp.add_argument("--sessions", type=int, help="sessions per user")
    sp.add_argument("--devices", help="device template file (default: built-ins)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output store path")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", parents=[common],
                        help="train the model; writes checkpoint + epoch records TSV")
    sp.add_argument("--store", help="segment store path")
    sp.add_argument("--out", help="checkpoint path (records at <out>.records.tsv)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("predict", parents=[common],
                        help="predict heart rate for one (possibly planned) workout")
    sp.add_argument("--ckpt", help="checkpoint from `hrcast train`")
    sp.add_argument("--segment", required=True, help="current workout segment file")
    sp.add_argument("--history", nargs="*", default=[],
                    help="chronological past-workout segment files (with hr)")
    sp.add_argument("--out", help="write predictions here instead of stdout")
    sp.set_defaults(fn=cmd_predict)

    sp = sub.add_parser("embed", parents=[common],
                        help="export user embeddings with group labels")
    sp.add_argument("--ckpt")
    sp.add_argument("--store")
    sp.add_argument("--out")
    sp.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    sp.set_defaults(fn=cmd_embed)

    sp = sub.add_parser("evaluate", parents=[common],
                        help="score a checkpoint: MSE/MAE, bootstrap, per-sport table")
    sp.add_argument("--ckpt")
    sp.add_argument("--store")
    sp.add_argument("--out")
    sp.add_argument("--split", choices=("train", "val", "test", "all"))
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("stats", parents=[common],
                        help="reproduce the comparison tables from shipped fixtures")
    sp.add_argument("--fixtures", help="fixtures directory (default: packaged)")
    sp.add_argument("--out", help="report path")
    sp.set_defaults(fn=cmd_stats)

    sp = sub.add_parser("ablate", parents=[common],
                        help="train full / no_dropout / no_tat / no_contrastive over seeds")
    sp.add_argument("--store")
    sp.add_argument("--out", help="ablation report path")
    sp.add_argument("--runs", type=int, help="seeds per variant (default 5)")
    sp.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    log = Logger(args.log)
    try:
        cfg = RunConfig.load(args.config, args.set)
        return args.fn(args, cfg, log)
    except (ValueError, OSError, KeyError) as exc:
        log("error", command=args.command, message=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
