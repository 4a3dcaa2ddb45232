"""Synthetic live-streaming world.

Each stream is an author with a home category neighborhood and a hidden
per-bucket phase (steady / highlight / grab) driving Poisson behavior counts.
Product switches walk the category tree with configurable persistence, and
interaction labels deliberately depend on what happens NEXT (upcoming
categories, an imminent grab phase), so features that see the future carry
signal that past-only features cannot.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SERVICES, SimConfig, to_dict
from .errors import ConfigurationError, DatasetError, ParseError
from .metrics import auc
from .prodfore import CategoryHierarchy
from .statfore import StatPanel

PHASES = ("steady", "highlight", "grab")
STEADY, HIGHLIGHT, GRAB = 0, 1, 2

# name, group, base rate, multiplier in highlight, multiplier in grab
CHANNELS = (
    ("exposure", "out-room", 40.0, 1.5, 1.0),
    ("audience_enter", "out-room", 10.0, 4.0, 1.2),
    ("gmv", "convert", 30.0, 1.0, 4.0),
    ("orders", "convert", 2.0, 1.0, 4.0),
    ("gift_value", "convert", 3.0, 2.0, 4.0),
    ("comments", "interaction", 6.0, 2.5, 1.0),
    ("likes", "interaction", 20.0, 3.0, 1.0),
    ("product_clicks", "in-room", 5.0, 1.2, 5.0),
)

CHANNEL_NAMES = tuple(c[0] for c in CHANNELS)
CHANNEL_GROUPS = tuple(c[1] for c in CHANNELS)

# multipliers[phase, channel]
PHASE_MULTIPLIERS = np.array(
    [[1.0] * len(CHANNELS), [c[3] for c in CHANNELS], [c[4] for c in CHANNELS]]
)


@dataclass
class AuthorStyle:
    author_id: int
    home_c1: int
    stay_level2: float
    move_level1: float
    jump: float
    base_rates: np.ndarray  # per-channel Poisson base rates
    repeat_within_stay: float = 0.2  # else: ring-step to the next sibling c3

    def __post_init__(self):
        total = self.stay_level2 + self.move_level1 + self.jump
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"style probabilities sum to {total}, not 1")
        self.base_rates = np.asarray(self.base_rates, dtype=np.float64)


@dataclass
class Stream:
    room_id: str
    author: AuthorStyle
    panel: StatPanel
    events: np.ndarray  # (L, 4) int: product, c1, c2, c3
    event_buckets: np.ndarray  # (L,) int, strictly increasing
    phases: np.ndarray  # (T,) int in {0, 1, 2}


@dataclass
class RankSample:
    room_id: str
    bucket: int
    user_id: int
    aff_bucket: int
    author_id: int
    room_category: int
    item_c3: int
    cross_match: int
    click_bucket: int
    weight: float
    labels: dict

    FIELD_NAMES = (
        "user_id",
        "aff_bucket",
        "author_id",
        "room_category",
        "item_c3",
        "cross_match",
        "click_bucket",
    )

    def field_values(self):
        return [getattr(self, name) for name in self.FIELD_NAMES]


@dataclass
class World:
    config: SimConfig
    seed: int
    hierarchy: CategoryHierarchy
    streams: list
    user_prefs: np.ndarray  # (U, n_c1) Dirichlet rows
    user_aff_bucket: np.ndarray
    user_click_bucket: np.ndarray
    samples: list = field(default_factory=list)


def _sample_phases(rng, matrix, t_total):
    phases = np.zeros(t_total, dtype=np.int64)
    state = STEADY
    rows = [np.asarray(r) for r in matrix]
    for t in range(t_total):
        phases[t] = state
        state = int(rng.choice(3, p=rows[state]))
    return phases


def _next_category(rng, c3, style, hierarchy):
    u = rng.random()
    if u < style.stay_level2:
        # stay in the level-2 neighborhood: mostly step to the next sibling
        # (a learnable rule), sometimes re-feature the same product category
        if rng.random() < style.repeat_within_stay:
            return c3
        sibs = hierarchy.c3_children_of_c2(int(hierarchy.c3_to_c2[c3]))
        pos = int(np.searchsorted(sibs, c3))
        return int(sibs[(pos + 1) % len(sibs)])
    if u < style.stay_level2 + style.move_level1:
        # moving within the home level-1 must leave the current level-2,
        # or measured persistence would overshoot the configured 0.6
        home = hierarchy.c3_children_of_c1(style.home_c1)
        away = home[hierarchy.c3_to_c2[home] != hierarchy.c3_to_c2[c3]]
        pool = away if len(away) else home
        return int(pool[rng.integers(len(pool))])
    return int(rng.integers(hierarchy.n_c3))


def gen_stream(author, hierarchy, t_total, seed, config=None):
    """One room: phase path, Poisson count panel, and its product-switch walk."""
    if t_total < 48:
        raise ConfigurationError(f"stream length {t_total} < 48 buckets")
    cfg = config or SimConfig(buckets=t_total)
    rng = np.random.default_rng(seed)
    phases = _sample_phases(rng, cfg.phase_matrix, t_total)
    rates = author.base_rates[None, :] * PHASE_MULTIPLIERS[phases]  # (T, N)
    counts = rng.poisson(rates).T.astype(np.int64)  # (N, T)

    home = hierarchy.c3_children_of_c1(author.home_c1)
    c3 = int(home[rng.integers(len(home))])
    events, buckets = [], []
    bucket = 0
    while bucket < t_total:
        prods = np.flatnonzero(hierarchy.p_to_c3 == c3)
        p = int(prods[rng.integers(len(prods))])
        c2 = int(hierarchy.c3_to_c2[c3])
        events.append((p, int(hierarchy.c2_to_c1[c2]), c2, c3))
        buckets.append(bucket)
        bucket += int(rng.integers(cfg.event_gap_min, cfg.event_gap_max + 1))
        c3 = _next_category(rng, c3, author, hierarchy)

    panel = StatPanel(
        room_id=f"room{author.author_id:04d}",
        t0_bucket=0,
        channels=list(CHANNEL_NAMES),
        values=counts,
        groups=list(CHANNEL_GROUPS),
    )
    return Stream(
        room_id=panel.room_id,
        author=author,
        panel=panel,
        events=np.asarray(events, dtype=np.int64),
        event_buckets=np.asarray(buckets, dtype=np.int64),
        phases=phases,
    )


def _make_author(rng, i, cfg):
    return AuthorStyle(
        author_id=i,
        home_c1=int(rng.integers(cfg.n_c1)),
        stay_level2=cfg.stay_level2,
        move_level1=cfg.move_level1,
        jump=cfg.jump,
        base_rates=np.array([c[2] for c in CHANNELS]) * rng.uniform(0.7, 1.3, len(CHANNELS)),
        repeat_within_stay=cfg.repeat_within_stay,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def _task_coeffs(cfg):
    a, b, c = cfg.future_affinity_coeff, cfg.future_grab_coeff, cfg.future_bias
    per_task = {
        "cvr": (a, b, c),
        "lvtr": (a, 0.8 * b, c + 0.4),
        "evtr": (0.8 * a, 0.6 * b, c + 0.6),
        "cmtr": (0.6 * a, 0.5 * b, c + 0.7),
        "gtr": (0.7 * a, 1.2 * b, c + 0.2),
    }
    return {t: per_task[t] for t in SERVICES[cfg.service] if t != "ctr"}


def gen_interactions(streams, world, seed, bucket_lo=32, lookahead=5):
    """Exposure events with labels whose ground truth peeks at the future.

    Click follows sigmoid(a*affinity + b*[highlight] + c0) where affinity is
    the user's preference for the UPCOMING product's level-1 category (the
    product being teased as the viewer decides), measured as excess over the
    uniform 1/|C1| baseline — raw preferences (mean 0.2) would pin the
    positive rate above 15% for any preference spread. The conversion-style
    labels read the NEXT 3 product events and whether a grab phase lands
    within the next `lookahead` buckets.
    """
    if not streams:
        raise DatasetError("no streams to sample exposures from")
    cfg = world.config
    rng = np.random.default_rng(seed)
    hierarchy = world.hierarchy
    prefs = world.user_prefs
    coeffs = _task_coeffs(cfg)
    samples = []
    for _ in range(cfg.n_samples):
        r = int(rng.integers(len(streams)))
        u = int(rng.integers(cfg.users))
        st = streams[r]
        t_total = st.phases.shape[0]
        # future labels need 3 upcoming events and `lookahead` more buckets
        hi = min(t_total - lookahead - 1, int(st.event_buckets[-3]) - 1)
        if hi < bucket_lo:
            continue
        t = int(rng.integers(bucket_lo, hi + 1))
        cur = int(np.searchsorted(st.event_buckets, t, side="right")) - 1
        nxt = st.events[cur + 1 : cur + 4]
        uniform = 1.0 / cfg.n_c1
        aff_next = prefs[u, nxt[0, 1]] - uniform
        aff_future = float(prefs[u, nxt[:, 1]].mean()) - uniform
        grab_soon = bool((st.phases[t + 1 : t + 1 + lookahead] == GRAB).any())
        click_logit = (
            cfg.click_affinity_coeff * aff_next
            + cfg.click_highlight_coeff * float(st.phases[t] == HIGHLIGHT)
            + cfg.click_bias
        )
        labels = {"ctr": int(rng.random() < _sigmoid(click_logit))}
        for task, (a2, b2, c2) in coeffs.items():
            logit = a2 * aff_future + b2 * float(grab_soon) + c2
            labels[task] = int(rng.random() < _sigmoid(logit))
        samples.append(
            RankSample(
                room_id=st.room_id,
                bucket=t,
                user_id=u,
                aff_bucket=int(world.user_aff_bucket[u]),
                author_id=st.author.author_id,
                room_category=st.author.home_c1,
                item_c3=int(st.events[cur, 3]),
                cross_match=int(world.user_aff_bucket[u] == st.author.home_c1),
                click_bucket=int(world.user_click_bucket[u]),
                weight=1.0,
                labels=labels,
            )
        )
    if not samples:
        raise DatasetError("no valid exposure buckets; streams too short")
    return samples


def gen_world(config, seed):
    """Full synthetic dataset: streams, users, and labeled exposures."""
    hierarchy = CategoryHierarchy.balanced(
        config.n_c1, config.n_c2, config.n_c3, config.n_products
    )
    author_rng = np.random.default_rng([seed, 0xA0])
    streams = [
        gen_stream(
            _make_author(author_rng, i, config),
            hierarchy,
            config.buckets,
            seed=[seed, 0x57, i],
            config=config,
        )
        for i in range(config.streams)
    ]
    user_rng = np.random.default_rng([seed, 0xB1])
    prefs = user_rng.dirichlet(np.full(config.n_c1, config.dirichlet_alpha), size=config.users)
    world = World(
        config=config,
        seed=seed,
        hierarchy=hierarchy,
        streams=streams,
        user_prefs=prefs,
        user_aff_bucket=prefs.argmax(axis=1).astype(np.int64),
        user_click_bucket=user_rng.integers(4, size=config.users),
    )
    world.samples = gen_interactions(streams, world, seed=[seed, 0xC2])
    return world


def label_rates(samples):
    tasks = samples[0].labels.keys()
    return {t: float(np.mean([s.labels[t] for s in samples])) for t in tasks}


# ---------------------------------------------------------------------------
# serialization


def _dump_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def _load_jsonl(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", path=str(path), line=lineno) from exc
    return rows


FILES = ("panels.jsonl", "products.jsonl", "samples.jsonl", "users.jsonl", "latent.jsonl")


def _data_digest(dir_path):
    h = hashlib.sha256()
    for name in FILES + ("hierarchy.json",):
        with open(dir_path / name, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def export_dataset(world, dir_path):
    """Write the world as JSON Lines plus a manifest with a content hash."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    _dump_jsonl(
        dir_path / "panels.jsonl",
        (
            {
                "room_id": st.room_id,
                "t0_bucket": st.panel.t0_bucket,
                "channels": {
                    name: st.panel.values[i].astype(np.int64).tolist()
                    for i, name in enumerate(st.panel.channels)
                },
            }
            for st in world.streams
        ),
    )
    _dump_jsonl(
        dir_path / "products.jsonl",
        (
            {
                "room_id": st.room_id,
                "events": st.events.tolist(),
                "event_buckets": st.event_buckets.tolist(),
            }
            for st in world.streams
        ),
    )
    _dump_jsonl(
        dir_path / "samples.jsonl",
        (
            {
                "room_id": s.room_id,
                "bucket": s.bucket,
                "user_id": s.user_id,
                "aff_bucket": s.aff_bucket,
                "author_id": s.author_id,
                "room_category": s.room_category,
                "item_c3": s.item_c3,
                "cross_match": s.cross_match,
                "click_bucket": s.click_bucket,
                "weight": s.weight,
                "labels": s.labels,
            }
            for s in world.samples
        ),
    )
    _dump_jsonl(
        dir_path / "users.jsonl",
        (
            {
                "user_id": u,
                "prefs": world.user_prefs[u].tolist(),
                "aff_bucket": int(world.user_aff_bucket[u]),
                "click_bucket": int(world.user_click_bucket[u]),
            }
            for u in range(len(world.user_prefs))
        ),
    )
    _dump_jsonl(
        dir_path / "latent.jsonl",
        (
            {
                "room_id": st.room_id,
                "phases": st.phases.tolist(),
                "home_c1": st.author.home_c1,
                "base_rates": st.author.base_rates.tolist(),
            }
            for st in world.streams
        ),
    )
    world.hierarchy.to_json(dir_path / "hierarchy.json")
    manifest = {
        "seed": world.seed,
        "config": to_dict(world.config),
        "counts": {
            "streams": len(world.streams),
            "users": int(len(world.user_prefs)),
            "samples": len(world.samples),
        },
        "data_sha256": _data_digest(dir_path),
    }
    with open(dir_path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def import_dataset(dir_path):
    """Inverse of export_dataset; warns (not fails) on a manifest hash mismatch."""
    from .config import from_dict

    dir_path = Path(dir_path)
    with open(dir_path / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("data_sha256") != _data_digest(dir_path):
        warnings.warn(
            f"dataset in {dir_path} does not match its manifest hash; "
            "files may have been edited after generation",
            stacklevel=2,
        )
    cfg = from_dict({"sim": manifest["config"]}).sim
    hierarchy = CategoryHierarchy.from_json(dir_path / "hierarchy.json")
    panels = {r["room_id"]: r for r in _load_jsonl(dir_path / "panels.jsonl")}
    products = {r["room_id"]: r for r in _load_jsonl(dir_path / "products.jsonl")}
    latents = {r["room_id"]: r for r in _load_jsonl(dir_path / "latent.jsonl")}
    users = _load_jsonl(dir_path / "users.jsonl")

    streams = []
    for i, room_id in enumerate(sorted(panels)):
        pan, prod, lat = panels[room_id], products[room_id], latents[room_id]
        author = AuthorStyle(
            author_id=i,
            home_c1=lat["home_c1"],
            stay_level2=cfg.stay_level2,
            move_level1=cfg.move_level1,
            jump=cfg.jump,
            base_rates=np.asarray(lat["base_rates"]),
        )
        values = np.asarray([pan["channels"][n] for n in CHANNEL_NAMES], dtype=np.int64)
        streams.append(
            Stream(
                room_id=room_id,
                author=author,
                panel=StatPanel(
                    room_id=room_id,
                    t0_bucket=pan["t0_bucket"],
                    channels=list(CHANNEL_NAMES),
                    values=values,
                    groups=list(CHANNEL_GROUPS),
                ),
                events=np.asarray(prod["events"], dtype=np.int64),
                event_buckets=np.asarray(prod["event_buckets"], dtype=np.int64),
                phases=np.asarray(lat["phases"], dtype=np.int64),
            )
        )
    world = World(
        config=cfg,
        seed=manifest["seed"],
        hierarchy=hierarchy,
        streams=streams,
        user_prefs=np.asarray([u["prefs"] for u in users]),
        user_aff_bucket=np.asarray([u["aff_bucket"] for u in users], dtype=np.int64),
        user_click_bucket=np.asarray([u["click_bucket"] for u in users], dtype=np.int64),
    )
    world.samples = [
        RankSample(
            room_id=r["room_id"],
            bucket=r["bucket"],
            user_id=r["user_id"],
            aff_bucket=r["aff_bucket"],
            author_id=r["author_id"],
            room_category=r["room_category"],
            item_c3=r["item_c3"],
            cross_match=r["cross_match"],
            click_bucket=r["click_bucket"],
            weight=r["weight"],
            labels=r["labels"],
        )
        for r in _load_jsonl(dir_path / "samples.jsonl")
    ]
    return world


def structurally_equal(a, b):
    if len(a.streams) != len(b.streams) or len(a.samples) != len(b.samples):
        return False
    for sa, sb in zip(a.streams, b.streams):
        if sa.room_id != sb.room_id or not np.array_equal(sa.panel.values, sb.panel.values):
            return False
        if sa.author.home_c1 != sb.author.home_c1:
            return False
        if not np.array_equal(sa.events, sb.events):
            return False
        if not np.array_equal(sa.event_buckets, sb.event_buckets):
            return False
        if not np.array_equal(sa.phases, sb.phases):
            return False
    if not np.allclose(a.user_prefs, b.user_prefs):
        return False
    return all(xa == xb for xa, xb in zip(a.samples, b.samples))


# ---------------------------------------------------------------------------
# oracle probe: does the future carry label signal the past cannot?


def _probe_features(world, future):
    rows, ys = [], []
    streams = {st.room_id: st for st in world.streams}
    task = "cvr" if "cvr" in world.samples[0].labels else "lvtr"
    for s in world.samples:
        st = streams[s.room_id]
        t = s.bucket
        cur = int(np.searchsorted(st.event_buckets, t, side="right")) - 1
        past = [
            world.user_prefs[s.user_id, st.events[cur, 1]],
            float(st.phases[t] == HIGHLIGHT),
            float(st.phases[t] == GRAB),
            float(st.panel.values[1, max(0, t - 7) : t + 1].mean()),
        ]
        if future:
            nxt = st.events[cur + 1 : cur + 4]
            past = past + [
                float(world.user_prefs[s.user_id, nxt[:, 1]].mean()),
                float((st.phases[t + 1 : t + 6] == GRAB).any()),
                float((st.phases[t + 1 : t + 6] == HIGHLIGHT).any()),
            ]
        rows.append(past)
        ys.append(s.labels[task])
    return np.asarray(rows), np.asarray(ys)


def _logistic_auc(x, y, seed=0, epochs=400, lr=0.5):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    cut = len(x) // 2
    tr, ev = order[:cut], order[cut:]
    mean, std = x[tr].mean(axis=0), x[tr].std(axis=0) + 1e-9
    xs = (x - mean) / std
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = _sigmoid(xs[tr] @ w + b)
        g = p - y[tr]
        w -= lr * (xs[tr].T @ g) / len(tr)
        b -= lr * g.mean()
    return auc(xs[ev] @ w + b, y[ev])


def probe_future_vs_past(world, seed=0):
    """AUC of a logistic probe on true past-only vs past+future features."""
    x_past, y = _probe_features(world, future=False)
    x_future, _ = _probe_features(world, future=True)
    return {
        "past": _logistic_auc(x_past, y, seed=seed),
        "future": _logistic_auc(x_future, y, seed=seed),
    }
