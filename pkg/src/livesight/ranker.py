"""Multi-task ranking model with optional foresight feature injection.

The foresight inputs arrive as plain numpy constants — forecasts, channel
encodings, and a next-category distribution — so no gradient can reach the
models that produced them. The single trainable bridge is the category
mixing table: `distribution @ c3_mix`, where c3_mix lives in THIS model's
parameter store and the distribution does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import metrics
from . import tensor as T
from .config import RankConfig
from .errors import ConfigurationError, ContractError, DimensionError
from .optim import ParamStore, adam_step
from .simgen import RankSample
from .tensor import Tensor

FIELD_NAMES = RankSample.FIELD_NAMES


@dataclass
class ForesightVector:
    """Per-(room, bucket) foresight constants; absent parts are None."""

    stat: np.ndarray = None  # flattened forecasts + channel encodings
    dist: np.ndarray = None  # next level-3 category distribution
    prod_enc: np.ndarray = None  # flattened last-K product encodings

    def __post_init__(self):
        for name in ("stat", "dist", "prod_enc"):
            val = getattr(self, name)
            if val is not None and not isinstance(val, np.ndarray):
                raise ContractError(
                    f"foresight part {name!r} must be a detached numpy array, "
                    f"got {type(val).__name__}; foresight models stay frozen"
                )


def _uses(variant):
    if variant not in ("base", "+stat", "+prod", "+both"):
        raise ConfigurationError(f"unknown variant {variant!r}")
    return variant in ("+stat", "+both"), variant in ("+prod", "+both")


class RankingModel:
    def __init__(self, config: RankConfig, vocab_sizes, tasks, variant, stat_width=0, n_c3=0, d_mix=32, prod_enc_width=0):
        self.config = config
        self.tasks = tuple(tasks)
        self.variant = variant
        self.use_stat, self.use_prod = _uses(variant)
        if self.use_stat and stat_width <= 0:
            raise ConfigurationError(f"variant {variant} needs a statistic foresight width")
        if self.use_prod and (n_c3 <= 0 or prod_enc_width < 0):
            raise ConfigurationError(f"variant {variant} needs product foresight shapes")
        self.stat_width = stat_width if self.use_stat else 0
        self.prod_enc_width = prod_enc_width if self.use_prod else 0
        self.d_mix = d_mix if self.use_prod else 0
        self.store = ParamStore()
        rng = np.random.default_rng([config.seed, 0xF0])
        for name in FIELD_NAMES:
            self.store.add(
                f"emb.{name}",
                layers.embedding_init(rng, vocab_sizes[name], config.emb_width),
            )
        if self.use_prod:
            # unit-ish row scale: a 0.02-scale init would leave the mixture
            # feature ~50x quieter than the standardized blocks next to it
            self.store.add("c3_mix", layers.embedding_init(rng, n_c3, d_mix, scale=0.5))
        self.input_width = (
            config.emb_width * len(FIELD_NAMES)
            + self.stat_width
            + self.d_mix
            + self.prod_enc_width
        )
        layers.init_dense(self.store, "trunk.l1", self.input_width, config.hidden, rng)
        layers.init_dense(self.store, "trunk.l2", config.hidden, config.hidden, rng)
        for task in self.tasks:
            layers.init_dense(self.store, f"head.{task}", config.hidden, 1, rng)
        # train-split standardization of the foresight blocks (counts vs
        # unit-scale embeddings); identity until fitted
        self.stat_norm = (np.zeros(self.stat_width), np.ones(self.stat_width))
        self.enc_norm = (np.zeros(self.prod_enc_width), np.ones(self.prod_enc_width))

    def fit_normalizers(self, stat_block, enc_block):
        if self.use_stat and stat_block is not None:
            self.stat_norm = (
                stat_block.mean(axis=0),
                np.maximum(stat_block.std(axis=0), 1e-6),
            )
        if self.use_prod and enc_block is not None:
            self.enc_norm = (
                enc_block.mean(axis=0),
                np.maximum(enc_block.std(axis=0), 1e-6),
            )

    def features(self, fields, stat=None, dist=None, prod_enc=None):
        """Assemble the trunk input for a batch: (B, input_width) tensor."""
        fields = np.asarray(fields, dtype=np.int64)
        parts = [
            layers.lookup(self.store[f"emb.{name}"], fields[:, k], name)
            for k, name in enumerate(FIELD_NAMES)
        ]
        if self.use_stat:
            if stat is None:
                raise ConfigurationError(f"variant {self.variant} requires the statistic part")
            mean, std = self.stat_norm
            # block scale 1/sqrt(width): a z-scored 280-dim block would
            # otherwise dominate the first-layer preactivations
            scale = 1.0 / np.sqrt(max(self.stat_width, 1))
            parts.append(Tensor((np.asarray(stat) - mean) / std * scale))
        if self.use_prod:
            if dist is None or prod_enc is None:
                raise ConfigurationError(f"variant {self.variant} requires the product part")
            parts.append(Tensor(np.asarray(dist)) @ self.store["c3_mix"])
            mean, std = self.enc_norm
            # harder damping than the stat block: these dims mostly restate
            # context the id embeddings already carry
            scale = 1.0 / max(self.prod_enc_width, 1)
            parts.append(Tensor((np.asarray(prod_enc) - mean) / std * scale))
        return T.concat(parts, axis=1)

    def forward(self, x):
        """Trunk input (B, input_width) -> per-task probabilities (B, n_tasks)."""
        x = T.as_tensor(x)
        if x.shape[-1] != self.input_width:
            raise DimensionError(
                f"input width {x.shape[-1]} != trained width {self.input_width}"
            )
        h = T.relu(layers.dense_forward(x, self.store["trunk.l1.w"], self.store["trunk.l1.b"]))
        h = T.relu(layers.dense_forward(h, self.store["trunk.l2.w"], self.store["trunk.l2.b"]))
        heads = [
            layers.dense_forward(h, self.store[f"head.{t}.w"], self.store[f"head.{t}.b"])
            for t in self.tasks
        ]
        return T.sigmoid(T.concat(heads, axis=1))


def assemble_input(model, sample, foresight=None):
    """One sample -> the assembled 1-D input vector (embeddings then foresight)."""
    foresight = foresight or ForesightVector()
    kwargs = {}
    if model.use_stat:
        if foresight.stat is None:
            raise ConfigurationError(f"variant {model.variant} requires the statistic part")
        kwargs["stat"] = foresight.stat[None]
    if model.use_prod:
        if foresight.dist is None or foresight.prod_enc is None:
            raise ConfigurationError(f"variant {model.variant} requires the product part")
        kwargs["dist"] = foresight.dist[None]
        kwargs["prod_enc"] = foresight.prod_enc[None]
    x = model.features(np.asarray(sample.field_values())[None], **kwargs)
    return T.reshape(x, (model.input_width,))


def rank_forward(model, x):
    """Input vector(s) -> dict task -> probability tensor."""
    single = x.ndim == 1
    if single:
        x = T.reshape(x, (1,) + x.shape)
    probs = model.forward(x)
    out = {}
    for j, task in enumerate(model.tasks):
        col = T.take(probs, (slice(None), j))
        out[task] = T.take(col, (0,)) if single else col
    return out


def rank_loss(predictions, labels):
    """Summed-over-tasks, mean-over-batch binary cross entropy."""
    return T.binary_cross_entropy(predictions, labels)


def _banked(bank, samples, key, width):
    rows = np.zeros((len(samples), width))
    for i, s in enumerate(samples):
        vec = bank[(s.room_id, s.bucket)][key]
        if not isinstance(vec, np.ndarray):
            raise ContractError(
                f"foresight bank entry {key!r} is {type(vec).__name__}, not a "
                "detached numpy array"
            )
        rows[i, : len(vec)] = vec  # short prefixes zero-fill the tail
    return rows


def train_ranker(samples, variant, config, tasks, vocab_sizes, bank=None, widths=None):
    """Train one variant and report held-out AUC/UAUC/GAUC per task.

    `bank` maps (room_id, bucket) -> {"stat": vec, "dist": vec, "prod_enc": vec},
    all plain numpy. Foresight model objects are rejected: the only trainable
    path touching foresight is the c3_mix table created here.
    """
    use_stat, use_prod = _uses(variant)
    if (use_stat or use_prod) and bank is None:
        raise ConfigurationError(f"variant {variant} needs a foresight bank")
    if bank is not None and not isinstance(bank, dict):
        raise ContractError(
            f"foresight bank must be a dict of numpy vectors, got {type(bank).__name__}"
        )
    widths = widths or {}
    model = RankingModel(
        config,
        vocab_sizes,
        tasks,
        variant,
        stat_width=widths.get("stat", 0),
        n_c3=widths.get("n_c3", 0),
        d_mix=widths.get("d_mix", 32),
        prod_enc_width=widths.get("prod_enc", 0),
    )

    fields = np.asarray([s.field_values() for s in samples], dtype=np.int64)
    labels = np.asarray([[s.labels[t] for t in tasks] for s in samples], dtype=np.float64)
    users = np.asarray([s.user_id for s in samples])
    weights = np.asarray([s.weight for s in samples])
    stat = dist = enc = None
    if use_stat:
        stat = _banked(bank, samples, "stat", model.stat_width)
    if use_prod:
        dist = _banked(bank, samples, "dist", vocab_sizes["item_c3"])
        enc = _banked(bank, samples, "prod_enc", model.prod_enc_width)

    split_rng = np.random.default_rng([config.seed, 0xE5])
    order = split_rng.permutation(len(samples))
    n_eval = max(1, int(len(samples) * config.eval_fraction))
    ev, tr = order[:n_eval], order[n_eval:]
    # a slice of train picks the stopping epoch; the held-out slice stays unseen
    n_val = max(1, int(len(tr) * 0.1))
    va, fit = tr[:n_val], tr[n_val:]
    if not len(fit):
        va, fit = tr, tr
    model.fit_normalizers(
        stat[tr] if stat is not None else None, enc[tr] if enc is not None else None
    )

    def batch_input(idx):
        return model.features(
            fields[idx],
            stat=stat[idx] if use_stat else None,
            dist=dist[idx] if use_prod else None,
            prod_enc=enc[idx] if use_prod else None,
        )

    epoch_rng = np.random.default_rng([config.seed, 0xE6])
    history = []
    best_val, best_state, best_epoch = np.inf, None, -1
    for epoch in range(config.epochs):
        perm = fit[epoch_rng.permutation(len(fit))]
        losses = []
        for lo in range(0, len(perm), config.batch):
            idx = perm[lo : lo + config.batch]
            probs = model.forward(batch_input(idx))
            loss = rank_loss(probs, labels[idx])
            model.store.zero_grad()
            loss.backward()
            adam_step(model.store, lr=config.lr)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        val = float(rank_loss(model.forward(batch_input(va)), labels[va]).data)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in model.store.items()}
        elif epoch - best_epoch >= 3:  # wider variants overfit sooner; stop each at its own knee
            break
    if best_state is not None:
        for name, p in model.store.items():
            p.data = best_state[name]

    probs_ev = model.forward(batch_input(ev)).data
    report = {}
    for j, task in enumerate(tasks):
        report[task] = {
            "AUC": metrics.auc(probs_ev[:, j], labels[ev, j]),
            "UAUC": metrics.uauc(users[ev], probs_ev[:, j], labels[ev, j]),
            "GAUC": metrics.gauc(users[ev], probs_ev[:, j], labels[ev, j], weights[ev]),
        }
    return model, report, history
