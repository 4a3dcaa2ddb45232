"""End-to-end experiment pipeline and the four ablation studies.

Stages: generate world -> train statistic forecaster -> train product
forecaster -> precompute per-(room, bucket) foresight vectors -> train ranker
variants -> write CSV reports. Foresight models are cached as checkpoints
keyed by config hash so ablations don't retrain them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, statfore, prodfore, ranker, simgen
from .config import (
    SERVICES,
    ExperimentConfig,
    ProdConfig,
    StatConfig,
    config_hash,
    to_dict,
)
from .errors import ConfigurationError
from .prodfore import ProductModel
from .statfore import StatisticModel

ABLATIONS = ("accuracy-stat", "accuracy-prod", "channels", "steps")


def split_rooms(n_streams, eval_every=5):
    """Deterministic room split: every `eval_every`-th room is held out."""
    idx = np.arange(n_streams)
    return idx[idx % eval_every != eval_every - 1], idx[idx % eval_every == eval_every - 1]


@dataclass
class Artifacts:
    cfg: ExperimentConfig
    world: simgen.World
    train_rooms: np.ndarray
    eval_rooms: np.ndarray
    stat_model: StatisticModel
    prod_model: ProductModel
    bank: dict
    widths: dict
    vocab: dict
    timings: dict = field(default_factory=dict)


def _seeded(cfg_section, seed):
    """Copy a model config with its training seed tied to the experiment seed."""
    d = to_dict(cfg_section)
    d["seed"] = seed
    return d


def build_models(cfg, world, train_rooms, timings=None):
    timings = {} if timings is None else timings
    stat_cfg = StatConfig(**_seeded(cfg.stat, cfg.seed))
    prod_cfg = ProdConfig(**_seeded(cfg.prod, cfg.seed))
    train_panels = [world.streams[i].panel for i in train_rooms]
    train_seqs = [world.streams[i].events for i in train_rooms]

    t0 = time.monotonic()
    stat_model = StatisticModel(stat_cfg)
    statfore.train_statistic(stat_model, train_panels)
    timings["train_stat"] = time.monotonic() - t0

    t0 = time.monotonic()
    prod_model = ProductModel(prod_cfg, world.hierarchy)
    prodfore.train_product(prod_model, train_seqs)
    timings["train_prod"] = time.monotonic() - t0
    return stat_model, prod_model


def build_foresight_bank(world, stat_model, prod_model, k_enc=8):
    """Foresight constants for every (room, bucket) that appears in a sample."""
    c = stat_model.config
    d = prod_model.config.d_model
    by_room = {}
    for s in world.samples:
        by_room.setdefault(s.room_id, set()).add(s.bucket)
    streams = {st.room_id: st for st in world.streams}
    bank = {}
    for room_id, buckets in by_room.items():
        st = streams[room_id]
        ts = sorted(buckets)
        windows = np.stack(
            [st.panel.values[:, t - c.context + 1 : t + 1] for t in ts]
        )
        pred5, enc = statfore.forecast_batch(stat_model, windows, c.horizon_train)
        probs, enc_prod = prodfore.forecast_all_prefixes(prod_model, st.events)
        for row, t in enumerate(ts):
            cur = int(np.searchsorted(st.event_buckets, t, side="right")) - 1
            # encodings exist for positions 1..cur; take the trailing k_enc
            tail = enc_prod[max(1, cur + 1 - k_enc) : cur + 1]
            bank[(room_id, t)] = {
                "stat": np.concatenate(
                    [pred5[row, :, : c.horizon_infer].ravel(), enc[row].ravel()]
                ),
                "stat_steps": pred5[row].ravel(),
                "dist": probs[cur].copy(),
                "prod_enc": tail.ravel().copy(),
            }
    widths = {
        "stat": len(st.panel.channels) * (c.horizon_infer + stat_model.config.d_model),
        "stat_steps": len(st.panel.channels) * c.horizon_train,
        "n_c3": world.hierarchy.n_c3,
        "d_mix": d,
        "prod_enc": k_enc * d,
    }
    return bank, widths


def prepare(cfg, out_dir=None, reuse=True):
    """Generate (or regenerate) the world and produce trained foresight models.

    With `reuse`, checkpoints in `out_dir` whose config hash matches are
    loaded instead of retrained.
    """
    timings = {}
    t0 = time.monotonic()
    world = simgen.gen_world(cfg.sim, cfg.seed)
    timings["gen"] = time.monotonic() - t0
    train_rooms, eval_rooms = split_rooms(len(world.streams))

    out = Path(out_dir) if out_dir else None
    stat_cfg = StatConfig(**_seeded(cfg.stat, cfg.seed))
    prod_cfg = ProdConfig(**_seeded(cfg.prod, cfg.seed))
    stat_hash = config_hash(to_dict(stat_cfg))
    prod_hash = config_hash(to_dict(prod_cfg))
    stat_path = out / f"statfore-{stat_hash}.ckpt" if out else None
    prod_path = out / f"prodfore-{prod_hash}.ckpt" if out else None

    if reuse and stat_path and stat_path.exists() and prod_path and prod_path.exists():
        stat_model = StatisticModel(stat_cfg)
        checkpoint.load_checkpoint(stat_path, stat_model.store, config_hash=stat_hash)
        prod_model = ProductModel(prod_cfg, world.hierarchy)
        checkpoint.load_checkpoint(prod_path, prod_model.store, config_hash=prod_hash)
    else:
        stat_model, prod_model = build_models(cfg, world, train_rooms, timings)
        if out:
            out.mkdir(parents=True, exist_ok=True)
            checkpoint.save_checkpoint(
                stat_path, stat_model.store, config_hash=stat_hash,
                extra={"config": to_dict(stat_cfg)},
            )
            checkpoint.save_checkpoint(
                prod_path, prod_model.store, config_hash=prod_hash,
                extra={"config": to_dict(prod_cfg)},
            )

    t0 = time.monotonic()
    bank, widths = build_foresight_bank(world, stat_model, prod_model, k_enc=cfg.rank.k_enc)
    timings["bank"] = time.monotonic() - t0
    vocab = {
        "user_id": cfg.sim.users,
        "aff_bucket": cfg.sim.n_c1,
        "author_id": cfg.sim.streams,
        "room_category": cfg.sim.n_c1,
        "item_c3": cfg.sim.n_c3,
        "cross_match": 2,
        "click_bucket": 4,
    }
    return Artifacts(
        cfg=cfg,
        world=world,
        train_rooms=train_rooms,
        eval_rooms=eval_rooms,
        stat_model=stat_model,
        prod_model=prod_model,
        bank=bank,
        widths=widths,
        vocab=vocab,
        timings=timings,
    )


def train_variant(art, variant, bank=None, widths=None):
    """Train one ranker variant against (a possibly substituted) bank."""
    tasks = SERVICES[art.cfg.sim.service]
    _, report, history = ranker.train_ranker(
        art.world.samples,
        variant,
        art.cfg.rank,
        tasks,
        art.vocab,
        bank=bank if bank is not None else art.bank,
        widths=widths if widths is not None else art.widths,
    )
    return report, history


def forecast_reports(art):
    """Original-scale MSE and next-category hit rates on held-out rooms."""
    eval_panels = [art.world.streams[i].panel for i in art.eval_rooms]
    eval_seqs = [art.world.streams[i].events for i in art.eval_rooms]
    stat_eval = statfore.evaluate_statistic(art.stat_model, eval_panels)
    prod_eval = prodfore.evaluate_hitrate(art.prod_model, eval_seqs)
    return stat_eval, prod_eval


# ---------------------------------------------------------------------------
# report files


def write_csv(path, cfg, columns, rows):
    """Deterministic CSV: hash+seed header, fixed float formatting."""
    lines = [f"# config_hash={config_hash(to_dict(cfg))} seed={cfg.seed}"]
    lines.append(",".join(columns))
    for row in rows:
        cells = []
        for v in row:
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def run_pipeline(cfg):
    """gen -> train models -> train ranker variants -> reports. Returns file paths."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = prepare(cfg, out_dir=out, reuse=True)
    simgen.export_dataset(art.world, out / "data")

    service_variants = ("base", "+stat") if cfg.sim.service == "talent" else (
        "base", "+stat", "+prod", "+both"
    )
    tasks = SERVICES[cfg.sim.service]
    rank_rows = []
    for variant in service_variants:
        report, _ = train_variant(art, variant)
        for task in tasks:
            m = report[task]
            rank_rows.append([variant, task, m["AUC"], m["UAUC"], m["GAUC"]])
    rank_path = write_csv(
        out / "rank_report.csv", cfg, ["variant", "task", "AUC", "UAUC", "GAUC"], rank_rows
    )

    stat_eval, prod_eval = forecast_reports(art)
    forecast_rows = [
        ["mean", "MSE", stat_eval["mean"]],
        ["latest", "MSE", stat_eval["latest"]],
        ["model", "MSE", stat_eval["model"]],
        ["most-frequent", "HitRate", prod_eval["most-frequent"]],
        ["latest-category", "HitRate", prod_eval["latest"]],
        ["model-category", "HitRate", prod_eval["model"]],
    ]
    forecast_path = write_csv(
        out / "forecast_report.csv", cfg, ["method", "metric", "value"], forecast_rows
    )
    return {"rank_report": rank_path, "forecast_report": forecast_path}


# ---------------------------------------------------------------------------
# ablations


def _mask_stat_bank(art, keep_channels, horizon):
    """Bank whose statistic part keeps only some channels/steps of the forecasts.

    `keep_channels` indexes into the panel channel order; `horizon` truncates
    the forecast steps. Encodings ride along only for full-channel masks.
    """
    c = art.stat_model.config
    pred_idx = []
    for ch in keep_channels:
        pred_idx.extend(range(ch * c.horizon_train, ch * c.horizon_train + horizon))
    pred_idx = np.asarray(pred_idx, dtype=np.int64)
    bank = {}
    for key, entry in art.bank.items():
        bank[key] = dict(entry)
        bank[key]["stat"] = entry["stat_steps"][pred_idx]
    widths = dict(art.widths)
    widths["stat"] = len(pred_idx)
    return bank, widths


def _stat_with_encodings_masked(art, keep_channels):
    """Forecast+encoding foresight restricted to a channel group."""
    c = art.stat_model.config
    n = len(art.world.streams[0].panel.channels)
    d = c.d_model
    idx = []
    for ch in keep_channels:
        idx.extend(range(ch * c.horizon_infer, (ch + 1) * c.horizon_infer))
    for ch in keep_channels:
        idx.extend(n * c.horizon_infer + ch * d + np.arange(d))
    idx = np.asarray(idx, dtype=np.int64)
    bank = {}
    for key, entry in art.bank.items():
        bank[key] = dict(entry)
        bank[key]["stat"] = entry["stat"][idx]
    widths = dict(art.widths)
    widths["stat"] = len(idx)
    return bank, widths


def _substituted_stat_bank(art, method):
    """Swap the model's forecasts for a baseline's; forecast-only features."""
    c = art.stat_model.config
    streams = {st.room_id: st for st in art.world.streams}
    n = len(art.world.streams[0].panel.channels)
    model_idx = np.asarray(
        [ch * c.horizon_train + k for ch in range(n) for k in range(c.horizon_infer)]
    )
    bank = {}
    for (room_id, t), entry in art.bank.items():
        if method == "model":
            vec = entry["stat_steps"][model_idx]
        else:
            st = streams[room_id]
            window = st.panel.values[:, t - c.context + 1 : t + 1]
            vec = statfore.baseline_forecast(window, c.horizon_infer, method).ravel()
        bank[(room_id, t)] = dict(entry)
        bank[(room_id, t)]["stat"] = vec
    widths = dict(art.widths)
    widths["stat"] = n * c.horizon_infer
    return bank, widths


def _substituted_prod_bank(art, method):
    """Swap the model's category distribution for a baseline's one-hot."""
    streams = {st.room_id: st for st in art.world.streams}
    n_c3 = art.world.hierarchy.n_c3
    bank = {}
    for (room_id, t), entry in art.bank.items():
        entry = dict(entry)
        if method != "model":
            st = streams[room_id]
            cur = int(np.searchsorted(st.event_buckets, t, side="right")) - 1
            cat = prodfore.baseline_category(st.events[: cur + 1], method)
            onehot = np.zeros(n_c3)
            onehot[cat] = 1.0
            entry["dist"] = onehot
        entry["prod_enc"] = np.zeros(0)
        bank[(room_id, t)] = entry
    widths = dict(art.widths)
    widths["prod_enc"] = 0
    return bank, widths


def run_ablation(cfg, which, art=None):
    """One of the four ablation studies; writes ablation_<which>.csv."""
    if which not in ABLATIONS:
        raise ConfigurationError(f"unknown ablation {which!r}; choose from {ABLATIONS}")
    if cfg.sim.service != "shopping":
        raise ConfigurationError("ablation studies run on the shopping service")
    out = Path(cfg.out_dir)
    if art is None:
        art = prepare(cfg, out_dir=out, reuse=True)

    rows = []
    if which == "accuracy-stat":
        stat_eval, _ = forecast_reports(art)
        for method in ("mean", "latest", "model"):
            bank, widths = _substituted_stat_bank(art, method)
            report, _ = train_variant(art, "+stat", bank, widths)
            rows.append(
                [method, stat_eval[method], report["ctr"]["AUC"], report["cvr"]["AUC"]]
            )
        columns = ["method", "mse", "auc_ctr", "auc_cvr"]
    elif which == "accuracy-prod":
        _, prod_eval = forecast_reports(art)
        for method in ("most-frequent", "latest", "model"):
            bank, widths = _substituted_prod_bank(art, method)
            report, _ = train_variant(art, "+prod", bank, widths)
            rows.append(
                [method, prod_eval[method], report["ctr"]["AUC"], report["cvr"]["AUC"]]
            )
        columns = ["method", "hitrate", "auc_ctr", "auc_cvr"]
    elif which == "channels":
        base_report, _ = train_variant(art, "base")
        groups = {}
        panel = art.world.streams[0].panel
        for i, g in enumerate(panel.groups):
            groups.setdefault(g, []).append(i)
        for group in statfore.GROUPS:
            bank, widths = _stat_with_encodings_masked(art, groups[group])
            report, _ = train_variant(art, "+stat", bank, widths)
            rows.append(
                [
                    group,
                    report["ctr"]["AUC"],
                    report["ctr"]["AUC"] - base_report["ctr"]["AUC"],
                    report["cvr"]["AUC"],
                    report["cvr"]["AUC"] - base_report["cvr"]["AUC"],
                ]
            )
        columns = ["group", "auc_ctr", "delta_ctr", "auc_cvr", "delta_cvr"]
    else:  # steps
        eval_panels = [art.world.streams[i].panel for i in art.eval_rooms]
        per_step = statfore.mse_per_step(art.stat_model, eval_panels)
        base_report, _ = train_variant(art, "base")
        all_channels = range(len(art.world.streams[0].panel.channels))
        for h in range(1, art.stat_model.config.horizon_train + 1):
            bank, widths = _mask_stat_bank(art, list(all_channels), h)
            report, _ = train_variant(art, "+stat", bank, widths)
            rows.append(
                [
                    h,
                    float(per_step[h - 1]),
                    report["ctr"]["AUC"],
                    report["ctr"]["AUC"] - base_report["ctr"]["AUC"],
                ]
            )
        columns = ["h", "mse", "auc_ctr", "gain_ctr"]

    return write_csv(out / f"ablation_{which}.csv", cfg, columns, rows)
