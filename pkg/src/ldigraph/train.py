"""Training orchestration for every method, plus evaluation and sweeps.

Transductive runs forward the full graph and restrict the loss to train
nodes; inductive runs train on the train-node-induced subgraph and
evaluate with a full-graph forward by default. Model selection is best
validation accuracy; all randomness flows from the config seed through
named streams.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Tape, Tensor
from .gbbn import EVAL_ALPHA, alpha_schedule, blend_logits, gbbn_loss, reverse_sample
from .gml import GmlConfig, build_triplet, filter_hard, gml_loss, score_and_select, select_anchors
from .graph import (Graph, NodeSplit, induce_subgraph, k_hop_neighborhood, load_graph,
                    make_splits, normalize_adjacency)
from .imbalance import (ClassProbTracker, WeightVector, grs_sample, rescale_mean_one,
                        update_class_probs, weights_w1, weights_w2, weights_w3)
from .ldi import compute_ldi, layer_sweep_ratio, LayerSweepReport
from .metrics import Metrics, score_predictions
from .models import (AttentionIndex, ForwardOut, ModelParams, ModelSpec, attention_index,
                     dropedge_forward, gat_forward, gcn_forward, init_params, load_checkpoint,
                     save_checkpoint, sgc_forward, sgc_precompute, with_depth)
from .optim import AdamState, adam_step
from .rng import stream

METHODS = ("baseline", "grs", "grw", "gml", "gbbn")
WEIGHTINGS = ("w1", "w2", "w3")
LOSSES = ("ce", "fl", "ifl")
SETTINGS = ("transductive", "inductive")

SPARSE_DENSITY_CUTOFF = 0.25


class ConfigError(Exception):
    """Invalid experiment configuration."""


class RunError(Exception):
    """Training failed at runtime (divergence, undefined quantity)."""


@dataclass
class TrainConfig:
    """Complete experiment description."""

    data: str | None = None
    model: str = "gcn"
    layers: int = 2
    hidden: int = 64
    heads: int = 8
    out_heads: int = 1
    dropout: float = 0.5
    leaky_slope: float = 0.2
    sgc_hops: int = 2
    method: str = "baseline"
    weighting: str = "w1"
    loss: str = "ce"
    gamma: float = 2.0
    setting: str = "transductive"
    shuffle: bool = False
    ratios: tuple[float, float, float] = (0.2, 0.4, 0.4)
    epochs: int = 1500
    lr: float | None = None
    weight_decay: float = 5e-4
    seed: int = 0
    repeats: int = 1
    gml: GmlConfig = field(default_factory=GmlConfig)
    gbbn_alpha: str | float = "linear"
    inductive_eval: str = "full"
    allow_label_leak: bool = False

    def __post_init__(self):
        if self.model not in ("gcn", "sgc", "gat", "mlp"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.inductive_eval not in ("full", "train_plus_eval"):
            raise ConfigError(f"unknown inductive_eval {self.inductive_eval!r}")
        if self.epochs < 1 or self.repeats < 1:
            raise ConfigError("epochs and repeats must be >= 1")
        if self.method in ("gml", "gbbn") and self.loss != "ifl":
            raise ConfigError(f"method {self.method} uses the improved focal loss; set loss=ifl")
        uses_weights = self.method in ("grs", "grw", "gbbn")
        if (uses_weights and self.weighting in ("w2", "w3")
                and self.setting == "transductive" and not self.allow_label_leak):
            raise ConfigError(
                "w2/w3 under the transductive setting leak validation/test labels; "
                "set allow_label_leak to override")
        if self.lr is None:
            self.lr = 0.005 if self.model == "gat" else 0.01
        if isinstance(self.gbbn_alpha, str) and self.gbbn_alpha != "linear":
            raise ConfigError("gbbn_alpha is 'linear' or a fixed value in [0, 1]")
        if isinstance(self.gbbn_alpha, float) and not 0.0 <= self.gbbn_alpha <= 1.0:
            raise ConfigError("fixed gbbn_alpha must be in [0, 1]")

    def model_spec(self, in_dim: int, num_classes: int) -> ModelSpec:
        return ModelSpec(kind=self.model, in_dim=in_dim, num_classes=num_classes,
                         layers=self.layers, hidden=self.hidden, heads=self.heads,
                         out_heads=self.out_heads, dropout=self.dropout,
                         leaky_slope=self.leaky_slope, sgc_hops=self.sgc_hops)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "data": self.data,
            "model": {"type": self.model, "layers": self.layers, "hidden": self.hidden,
                      "heads": self.heads, "out_heads": self.out_heads,
                      "dropout": self.dropout, "leaky_slope": self.leaky_slope,
                      "sgc_hops": self.sgc_hops},
            "method": self.method,
            "weighting": self.weighting,
            "loss": self.loss,
            "gamma": self.gamma,
            "setting": self.setting,
            "shuffle": self.shuffle,
            "ratios": list(self.ratios),
            "epochs": self.epochs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "repeats": self.repeats,
            "gml": self.gml.__dict__.copy(),
            "gbbn": {"alpha": self.gbbn_alpha},
            "inductive_eval": self.inductive_eval,
            "allow_label_leak": self.allow_label_leak,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", 1)
        if version != 1:
            raise ConfigError(f"unsupported schema_version {version}")
        kwargs: dict = {}

        def take(src: dict, key: str, dest: str, allowed: dict):
            if key in src:
                allowed.pop(key, None)
                kwargs[dest] = src.pop(key)

        model = raw.pop("model", {})
        if not isinstance(model, dict):
            raise ConfigError("'model' must be an object")
        model = dict(model)
        for key, dest in (("type", "model"), ("layers", "layers"), ("hidden", "hidden"),
                          ("heads", "heads"), ("out_heads", "out_heads"),
                          ("dropout", "dropout"), ("leaky_slope", "leaky_slope"),
                          ("sgc_hops", "sgc_hops")):
            if key in model:
                kwargs[dest] = model.pop(key)
        if model:
            raise ConfigError(f"unknown model keys: {sorted(model)}")

        gml_raw = raw.pop("gml", {})
        if not isinstance(gml_raw, dict):
            raise ConfigError("'gml' must be an object")
        gml_fields = {f.name for f in fields(GmlConfig)}
        unknown = set(gml_raw) - gml_fields
        if unknown:
            raise ConfigError(f"unknown gml keys: {sorted(unknown)}")
        kwargs["gml"] = GmlConfig(**gml_raw)

        gbbn_raw = raw.pop("gbbn", {})
        if not isinstance(gbbn_raw, dict):
            raise ConfigError("'gbbn' must be an object")
        gbbn_raw = dict(gbbn_raw)
        if "alpha" in gbbn_raw:
            kwargs["gbbn_alpha"] = gbbn_raw.pop("alpha")
        if gbbn_raw:
            raise ConfigError(f"unknown gbbn keys: {sorted(gbbn_raw)}")

        plain = {"data", "method", "weighting", "loss", "gamma", "setting", "shuffle",
                 "epochs", "lr", "weight_decay", "seed", "repeats", "inductive_eval",
                 "allow_label_leak"}
        for key in plain:
            if key in raw:
                kwargs[key] = raw.pop(key)
        if "ratios" in raw:
            kwargs["ratios"] = tuple(raw.pop("ratios"))
        if raw:
            raise ConfigError(f"unknown config keys: {sorted(raw)}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(raw)


@dataclass
class RunRecord:
    config: dict
    history: list[dict]
    best_epoch: int
    metrics: dict[str, Metrics]
    wall_clock: float
    params: ModelParams
    lower_params: ModelParams | None = None


# ---------------------------------------------------------------------------
# graph-side caches


class GraphContext:
    """Per-graph structures a forward pass needs, built lazily."""

    def __init__(self, graph: Graph):
        self.graph = graph
        dense = graph.features.astype(np.float64)
        density = np.count_nonzero(dense) / max(1, dense.size)
        if density < SPARSE_DENSITY_CUTOFF:
            import scipy.sparse as sp
            self.x = SparseMatrix(sp.csr_matrix(dense))
        else:
            self.x = Tensor(dense)
        self._adj = None
        self._att = None
        self._sgc: dict[int, object] = {}

    @property
    def adj(self):
        if self._adj is None:
            self._adj = normalize_adjacency(self.graph)
        return self._adj

    @property
    def att(self) -> AttentionIndex:
        if self._att is None:
            self._att = attention_index(self.graph)
        return self._att

    def sgc_features(self, hops: int):
        if hops not in self._sgc:
            self._sgc[hops] = sgc_precompute(self.adj, self.x, hops)
        return self._sgc[hops]

    def dense_embedding_source(self, hops: int) -> np.ndarray:
        feats = self.sgc_features(hops)
        if isinstance(feats, SparseMatrix):
            return np.asarray(feats.csr.todense())
        if isinstance(feats, Tensor):
            return feats.value
        return feats


def forward_model(tape, params: ModelParams, ctx: GraphContext, training: bool,
                  rng) -> ForwardOut:
    kind = params.spec.kind
    if kind == "gcn":
        return gcn_forward(tape, params, ctx.adj, ctx.x, training, rng)
    if kind == "mlp":
        return dropedge_forward(tape, params, ctx.x, training, rng)
    if kind == "gat":
        return gat_forward(tape, params, ctx.att, ctx.x, training, rng)
    if kind == "sgc":
        return sgc_forward(tape, params, ctx.sgc_features(params.spec.sgc_hops), training, rng)
    raise ValueError(kind)


def evaluate(params: ModelParams, g: Graph, nodes) -> Metrics:
    """Metrics of a trained single-branch model on the given nodes."""
    nodes = np.asarray(list(nodes), dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty evaluation split")
    ctx = GraphContext(g)
    out = forward_model(None, params, ctx, training=False, rng=None)
    preds = out.logits.value.argmax(axis=1)
    return score_predictions(g.labels[nodes], preds[nodes], g.num_classes)


# ---------------------------------------------------------------------------
# the training loop


def _loss_weights(logp_values: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                  tracker: ClassProbTracker) -> np.ndarray:
    if cfg.loss == "ce":
        return np.ones(labels.size)
    if cfg.loss == "fl":
        p = np.exp(logp_values[np.arange(labels.size), labels])
        return (1.0 - p) ** cfg.gamma
    return (1.0 - tracker.p_bar[labels]) ** cfg.gamma


def _build_weights(cfg: TrainConfig, train_graph: Graph, train_ids: np.ndarray,
                   full_graph: Graph, full_train_ids: np.ndarray) -> WeightVector:
    labels = train_graph.labels
    if cfg.weighting == "w1":
        return weights_w1(labels, train_ids)
    # w2/w3 use the index computed from train-visible labels only
    if cfg.setting == "inductive":
        report = compute_ldi(train_graph)
        ldi_vals = report.values(train_ids)
    else:
        report = compute_ldi(full_graph, visible_labels=full_train_ids)
        ldi_vals = report.values(full_train_ids)
    if cfg.weighting == "w2":
        return weights_w2(ldi_vals, train_ids)
    return weights_w3(labels, train_ids, ldi_vals)


class _GmlState:
    """Per-run triplet machinery: eligibility, candidate pools, anchor rng."""

    def __init__(self, cfg: TrainConfig, train_graph: Graph, train_ids: np.ndarray, seed: int):
        self.cfg = cfg.gml
        self.graph = train_graph
        self.train_ids = train_ids
        if cfg.setting == "inductive":
            report = compute_ldi(train_graph)
        else:
            report = compute_ldi(train_graph, visible_labels=train_ids)
        self.ldi = report.values(train_ids)
        self.eligible = filter_hard(train_ids, self.ldi, self.cfg.hard_fraction)
        lookup = {int(nid): v for nid, v in zip(train_ids, self.ldi)}
        self.eligible_ldi = np.array([lookup[int(i)] for i in self.eligible])
        self.rng = stream(seed, "gml.anchors")
        self._pools: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._train_set = set(int(i) for i in train_ids)

    def _pool(self, anchor: int) -> tuple[np.ndarray, np.ndarray]:
        if anchor not in self._pools:
            khop = k_hop_neighborhood(self.graph, anchor, self.cfg.k_hops)
            labels = self.graph.labels
            cls = labels[anchor]
            in_hop = np.array(sorted(v for v in khop if v in self._train_set), dtype=np.int64)
            negs = in_hop[labels[in_hop] != cls] if in_hop.size else in_hop
            outside = np.array(sorted(self._train_set - khop - {anchor}), dtype=np.int64)
            poss = outside[labels[outside] == cls] if outside.size else outside
            self._pools[anchor] = (negs, poss)
        return self._pools[anchor]

    def triplets(self, embeddings: np.ndarray) -> list:
        from .gml import Triplet
        count = min(self.cfg.anchors_per_epoch, self.eligible.size)
        if count == 0:
            return []
        anchors = select_anchors(self.eligible, self.eligible_ldi, count, self.rng,
                                 self.cfg.epsilon)
        out = []
        for anchor in anchors:
            negs, poss = self._pool(int(anchor))
            if negs.size == 0 or poss.size == 0:
                continue
            d_neg = ((embeddings[negs] - embeddings[anchor]) ** 2).sum(axis=1)
            d_pos = ((embeddings[poss] - embeddings[anchor]) ** 2).sum(axis=1)
            out.append(Triplet(anchor=int(anchor), positive=int(poss[np.argmax(d_pos)]),
                               negative=int(negs[np.argmin(d_neg)])))
        return out


def train(config: TrainConfig, graph: Graph | None = None, seed: int | None = None) -> RunRecord:
    """One seeded run; returns the record with best-validation parameters."""
    start = time.perf_counter()
    if graph is None:
        if config.data is None:
            raise ConfigError("config has no data path and no graph was supplied")
        graph = load_graph(config.data)
    seed = config.seed if seed is None else seed

    split = make_splits(graph, config.ratios, config.shuffle,
                        stream(seed, "splits") if config.shuffle else None)

    inductive = config.setting == "inductive"
    if inductive:
        induced = induce_subgraph(graph, split.train)
        train_graph = induced.graph
        train_ids = np.sort(induced.old_to_new[split.train])
    else:
        train_graph = graph
        train_ids = np.sort(split.train)

    train_ctx = GraphContext(train_graph)
    eval_ctxs = _eval_contexts(config, graph, split, train_ctx)

    spec = config.model_spec(graph.num_features, graph.num_classes)
    params = init_params(spec, seed)
    lower = None
    if config.method == "gbbn":
        lower_spec = replace(spec, kind="mlp")
        lower = init_params(lower_spec, seed, namespace="de.")

    all_params: dict[str, Tensor] = dict(params.tensors)
    if lower is not None:
        all_params.update({f"de.{k}": v for k, v in lower.tensors.items()})
    adam = AdamState()

    rng_drop = stream(seed, "dropout")
    rng_drop_de = stream(seed, "dropout.de")
    rng_grs = stream(seed, "sampler.grs")
    rng_reverse = stream(seed, "sampler.reverse")

    labels_train_graph = train_graph.labels
    tracker = ClassProbTracker.uniform(graph.num_classes)
    needs_tracker = config.loss == "ifl" or config.method in ("gml", "gbbn")

    weights = None
    if config.method in ("grs", "grw", "gbbn"):
        weights = _build_weights(config, train_graph, train_ids, graph, np.sort(split.train))
    grw_scaled = rescale_mean_one(weights.values) if config.method == "grw" else None
    gml_state = _GmlState(config, train_graph, train_ids, seed) if config.method == "gml" else None

    history: list[dict] = []
    best_val = -1.0
    best_epoch = -1
    best_values = params.copy_values()
    best_lower_values = lower.copy_values() if lower is not None else None

    def train_alpha(epoch):
        if isinstance(config.gbbn_alpha, (int, float)):
            return float(config.gbbn_alpha)
        return alpha_schedule(epoch, config.epochs)

    def eval_alpha():
        if isinstance(config.gbbn_alpha, (int, float)):
            return float(config.gbbn_alpha)
        return EVAL_ALPHA

    def branch_logits(ctx: GraphContext) -> tuple[np.ndarray, np.ndarray | None]:
        out = forward_model(None, params, ctx, training=False, rng=None)
        if lower is None:
            return out.logits.value, None
        out_de = dropedge_forward(None, lower, ctx.x, training=False, rng=None)
        return out.logits.value, out_de.logits.value

    def log_softmax_np(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    val_ctx, val_ids = eval_ctxs["val"]

    for epoch in range(config.epochs):
        tape = Tape()
        out = forward_model(tape, params, train_ctx, training=True, rng=rng_drop)

        if config.method == "gbbn":
            out_de = dropedge_forward(tape, lower, train_ctx.x, training=True, rng=rng_drop_de)
            alpha = train_alpha(epoch)
            z = blend_logits(tape, out.logits, out_de.logits, alpha)
            y_de = reverse_sample(weights, train_ids.size, rng_reverse)
            loss = gbbn_loss(tape, z, labels_train_graph, train_ids, y_de,
                             tracker, config.gamma, alpha)
        else:
            if config.method == "grs":
                scored = grs_sample(weights, train_ids.size, rng_grs)
            else:
                scored = train_ids
            rows = ad.gather_rows(tape, out.logits, scored)
            logp = ad.log_softmax_rows(tape, rows)
            y = labels_train_graph[scored]
            w = _loss_weights(logp.value, y, config, tracker)
            if config.method == "grw":
                w = w * grw_scaled
            loss = ad.mul_scalar(tape, ad.weighted_nll(tape, logp, y, w), 1.0 / scored.size)
            if config.method == "gml" and out.embedding is not None:
                triplets = gml_state.triplets(out.embedding.value)
                triplet_term, _ = score_and_select(tape, out.embedding, triplets,
                                                   config.gml.margin, config.gml.rho)
                loss = gml_loss(tape, triplet_term, loss, epoch, config.epochs)
            elif config.method == "gml" and spec.kind == "sgc":
                source = Tensor(train_ctx.dense_embedding_source(spec.sgc_hops))
                triplets = gml_state.triplets(source.value)
                triplet_term, _ = score_and_select(tape, source, triplets,
                                                   config.gml.margin, config.gml.rho)
                loss = gml_loss(tape, triplet_term, loss, epoch, config.epochs)

        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise RunError(f"non-finite training loss at epoch {epoch}")
        tape.backward(loss)
        grads = {name: t.grad for name, t in all_params.items() if t.grad is not None}
        adam_step(all_params, grads, adam, lr=config.lr, weight_decay=config.weight_decay)

        # one no-dropout pass per graph: scores validation now and, being the
        # epoch-start state of the next epoch, refreshes the tracker
        upper_val, lower_val = branch_logits(val_ctx)
        if lower is None:
            val_logits = upper_val
        else:
            a = eval_alpha()
            val_logits = a * upper_val + (1.0 - a) * lower_val
        preds = val_logits.argmax(axis=1)
        val_acc = float((preds[val_ids] == val_ctx.graph.labels[val_ids]).mean())
        history.append({"epoch": epoch, "train_loss": loss_value, "val_acc": val_acc})
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_values = params.copy_values()
            if lower is not None:
                best_lower_values = lower.copy_values()

        if needs_tracker and epoch + 1 < config.epochs:
            if val_ctx is train_ctx:
                upper_track, lower_track = upper_val, lower_val
            else:
                upper_track, lower_track = branch_logits(train_ctx)
            if lower is None:
                track_logits = upper_track
            else:
                a = train_alpha(epoch + 1)
                track_logits = a * upper_track + (1.0 - a) * lower_track
            tracker = update_class_probs(tracker, log_softmax_np(track_logits),
                                         labels_train_graph, train_ids, epoch=epoch + 1)

    params.load_values(best_values)
    if lower is not None:
        lower.load_values(best_lower_values)

    metrics: dict[str, Metrics] = {}
    for name in ("train", "val", "test"):
        ctx, ids = eval_ctxs[name]
        preds = eval_logits(ctx).argmax(axis=1)
        metrics[name] = score_predictions(ctx.graph.labels[ids], preds[ids],
                                          graph.num_classes)

    return RunRecord(
        config=config.to_dict(),
        history=history,
        best_epoch=best_epoch,
        metrics=metrics,
        wall_clock=time.perf_counter() - start,
        params=params,
        lower_params=lower,
    )


def _eval_contexts(config: TrainConfig, graph: Graph, split: NodeSplit,
                   train_ctx: GraphContext):
    """(context, node-ids) per split under the configured protocol."""
    out = {}
    if config.setting == "transductive" or config.inductive_eval == "full":
        full_ctx = train_ctx if config.setting == "transductive" else GraphContext(graph)
        for name in ("train", "val", "test"):
            out[name] = (full_ctx, np.sort(getattr(split, name)))
        return out
    # train_plus_eval: score each split on the subgraph of train + that split
    train_sorted = np.sort(split.train)
    for name in ("train", "val", "test"):
        if name == "train":
            sub_ids = np.arange(train_sorted.size)
            out[name] = (train_ctx, np.sort(sub_ids))
            continue
        keep = np.union1d(train_sorted, getattr(split, name))
        induced = induce_subgraph(graph, keep)
        ids = np.sort(induced.old_to_new[getattr(split, name)])
        out[name] = (GraphContext(induced.graph), ids)
    return out


# ---------------------------------------------------------------------------
# experiments, sweeps, run directories


def run_experiment(config: TrainConfig, graph: Graph | None = None) -> list[RunRecord]:
    """`repeats` seeded runs; run i uses seed + i."""
    if graph is None:
        if config.data is None:
            raise ConfigError("config has no data path")
        graph = load_graph(config.data)
    return [train(config, graph=graph, seed=config.seed + i) for i in range(config.repeats)]


def layer_sweep(config: TrainConfig, depths: list[int],
                graph: Graph | None = None) -> LayerSweepReport:
    """Train one model per depth and relate newly-wrong nodes to their LDI."""
    if list(depths) != sorted(depths) or any(
            b - a != 1 for a, b in zip(depths, depths[1:])):
        raise ConfigError("depths must be consecutive ascending")
    if graph is None:
        graph = load_graph(config.data)
    correct_sets: list[set[int]] = []
    accuracies: list[float] = []
    test_ids = None
    for depth in depths:
        record = train(replace(config, layers=depth), graph=graph)
        split = make_splits(graph, config.ratios, config.shuffle,
                            stream(config.seed, "splits") if config.shuffle else None)
        test_ids = np.sort(split.test)
        ctx_pair = _predictions_for(record, config, graph, split)
        correct = set(int(i) for i in test_ids[ctx_pair[test_ids] == graph.labels[test_ids]])
        correct_sets.append(correct)
        accuracies.append(record.metrics["test"].accuracy)
    report = compute_ldi(graph)
    return layer_sweep_ratio(correct_sets, report, depths=list(depths), accuracies=accuracies)


def _predictions_for(record: RunRecord, config: TrainConfig, graph: Graph,
                     split: NodeSplit) -> np.ndarray:
    ctx = GraphContext(graph)
    out = forward_model(None, record.params, ctx, training=False, rng=None)
    logits = out.logits.value
    if record.lower_params is not None:
        out_de = dropedge_forward(None, record.lower_params, ctx.x, training=False, rng=None)
        a = config.gbbn_alpha if isinstance(config.gbbn_alpha, (int, float)) else EVAL_ALPHA
        logits = a * logits + (1.0 - a) * out_de.logits.value
    return logits.argmax(axis=1)


def write_run_dir(record: RunRecord, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(record.config, indent=2, sort_keys=True) + "\n")
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_acc"])
        for row in record.history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_acc"])])
    (out / "metrics.json").write_text(
        json.dumps(record.metrics["test"].to_dict(), sort_keys=True) + "\n")
    for name in ("train", "val"):
        (out / f"metrics_{name}.json").write_text(
            json.dumps(record.metrics[name].to_dict(), sort_keys=True) + "\n")
    save_checkpoint(record.params, out / "checkpoint")
    if record.lower_params is not None:
        save_checkpoint(record.lower_params, out / "checkpoint_de")
    summary = {"best_epoch": record.best_epoch, "wall_clock": record.wall_clock}
    (out / "run.json").write_text(json.dumps(summary, sort_keys=True) + "\n")


def load_run_params(run_dir) -> tuple[ModelParams, ModelParams | None]:
    run_dir = Path(run_dir)
    params = load_checkpoint(run_dir / "checkpoint")
    lower = None
    if (run_dir / "checkpoint_de").is_dir():
        lower = load_checkpoint(run_dir / "checkpoint_de")
    return params, lower
