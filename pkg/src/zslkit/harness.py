"""End-to-end training, zero-shot inference and evaluation.

Training runs full-graph batches: one optimizer step per epoch, loss recorded
before each step. Inference scores a visual feature against predicted
classifier rows by inner product; the conventional protocol restricts
candidates to unseen classes, the generalized protocol ranks all classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, NumericError, ShapeError
from .graph import ClassIndex, EmbeddingTable, GraphBundle, build_bundle
from .net import (
    ArchSpec,
    Hyper,
    ModelState,
    adam_step,
    backward_model,
    build_model,
    forward_model,
    mse_loss_masked,
)
from .tensor import Rng, row_l2_normalize

HIT_KS = (1, 2, 5, 10, 20)
SETTINGS = ("conventional", "generalized")
GRADCHECK_TOLERANCE = 1e-4


@dataclass(frozen=True)
class ZslDataset:
    """Class index, embeddings, seen-class targets and labeled eval features.

    oracle_classifiers (full, including unseen rows) is only populated by the
    synthetic generator and is meant for test oracles, never for training.
    """

    index: ClassIndex
    embeddings: EmbeddingTable
    gt_classifiers: np.ndarray
    eval_features: np.ndarray
    eval_labels: np.ndarray
    oracle_classifiers: np.ndarray | None = None

    def __post_init__(self):
        gt = row_l2_normalize(np.asarray(self.gt_classifiers, dtype=np.float64))
        object.__setattr__(self, "gt_classifiers", gt)
        feats = np.asarray(self.eval_features, dtype=np.float64)
        labels = np.asarray(self.eval_labels, dtype=np.int64)
        object.__setattr__(self, "eval_features", feats)
        object.__setattr__(self, "eval_labels", labels)
        if gt.shape[0] != self.index.n_seen:
            raise ShapeError(
                f"{gt.shape[0]} ground-truth classifiers for {self.index.n_seen} seen classes"
            )
        if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
            raise ShapeError("eval features and labels disagree in length")
        if not np.all(np.isfinite(feats)):
            raise InputError("eval features contain non-finite entries")
        if labels.size and (labels.min() < 0 or labels.max() >= self.index.n_total):
            raise InputError("eval label out of range")

    @property
    def n_eval(self) -> int:
        return int(self.eval_labels.shape[0])


@dataclass(frozen=True)
class EvalReport:
    setting: str
    hit_at: dict
    n_samples: int
    per_class_hit1: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "setting": self.setting,
            "n_samples": self.n_samples,
            "hit_at": {str(k): self.hit_at[k] for k in HIT_KS},
        }


@dataclass(frozen=True)
class TrainConfig:
    """Training defaults, frozen to the reference configuration."""

    epochs: int = 300
    lr: float = 0.001
    weight_decay: float = 0.0005
    dropout: float = 0.5
    slope: float = 0.2
    norm_mode: str = "random_walk"
    model_id: int = 4
    k: int = 2
    alpha: float = 0.5
    seed: int = 0
    embed_dim: int = 300

    def hyper(self) -> Hyper:
        return Hyper(
            lr=self.lr, weight_decay=self.weight_decay,
            dropout_rate=self.dropout, slope=self.slope,
        )


@dataclass
class TrainResult:
    arch: ArchSpec
    state: ModelState
    loss_curve: list
    seed: int


def train(dataset: ZslDataset, bundle: GraphBundle, config: TrainConfig,
          *, stop_loss: float | None = None) -> TrainResult:
    """Full-graph training for config.epochs steps (or until stop_loss).

    The recorded curve holds the loss of the weights *before* each step, so
    curve[0] is the initial loss.
    """
    n = dataset.index.n_total
    if bundle.n != n:
        raise ShapeError(f"graph has {bundle.n} nodes for {n} classes")
    if config.epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {config.epochs}")
    d_out = dataset.gt_classifiers.shape[1]
    rng = Rng(config.seed)
    arch, state = build_model(
        config.model_id, dataset.embeddings.dim, d_out, rng, hyper=config.hyper(),
    )
    gt_full = np.zeros((n, d_out))
    gt_full[: dataset.index.n_seen] = dataset.gt_classifiers
    seen_mask = np.zeros(n, dtype=bool)
    seen_mask[: dataset.index.n_seen] = True

    curve = []
    for epoch in range(config.epochs):
        f_pred, tape = forward_model(
            arch, state, bundle.normalized, dataset.embeddings.vectors,
            training=True, rng=rng,
        )
        loss, grad_f = mse_loss_masked(f_pred, gt_full, seen_mask)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} at epoch {epoch} "
                               f"(model {config.model_id}, lr {config.lr})")
        curve.append(loss)
        if stop_loss is not None and loss < stop_loss:
            break
        grads = backward_model(arch, grad_f, tape)
        adam_step(state, grads)
    return TrainResult(arch=arch, state=state, loss_curve=curve, seed=config.seed)


def predict_classifiers(arch: ArchSpec, state: ModelState, bundle: GraphBundle,
                        embeddings: EmbeddingTable) -> np.ndarray:
    """Deterministic eval-mode forward; rows are unit (or zero) classifiers."""
    f_pred, _ = forward_model(
        arch, state, bundle.normalized, embeddings.vectors, training=False,
    )
    return f_pred


def predict_scores(x: np.ndarray, f_pred: np.ndarray, candidates) -> list:
    """Inner-product scores for x against candidate classifier rows,
    sorted by descending score with ties broken by ascending class index."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cand = sorted(int(c) for c in candidates)
    if not cand:
        raise ConfigError("empty candidate set")
    if not np.all(np.isfinite(x)):
        raise InputError("feature vector contains non-finite entries")
    if max(cand) >= f_pred.shape[0] or min(cand) < 0:
        raise InputError("candidate index out of range")
    scores = f_pred[cand] @ x
    order = sorted(range(len(cand)), key=lambda i: (-scores[i], cand[i]))
    return [(cand[i], float(scores[i])) for i in order]


def evaluate(dataset: ZslDataset, f_pred: np.ndarray, setting: str,
             with_per_class: bool = True) -> EvalReport:
    """Hit@k over the eval samples under one protocol.

    A sample's true label counts as a hit at k when fewer than k candidates
    outrank it (score strictly higher, or equal score with a lower index).
    """
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}, expected one of {SETTINGS}")
    if f_pred.shape[0] != dataset.index.n_total:
        raise ShapeError(
            f"{f_pred.shape[0]} predicted classifiers for {dataset.index.n_total} classes"
        )
    if dataset.n_eval == 0:
        raise InputError("no eval samples")
    if setting == "conventional":
        cand = np.arange(dataset.index.n_seen, dataset.index.n_total)
    else:
        cand = np.arange(dataset.index.n_total)
    cand_pos = {int(c): i for i, c in enumerate(cand)}
    scores = dataset.eval_features @ f_pred[cand].T

    hits = {k: 0 for k in HIT_KS}
    per_class_hits = {}
    per_class_counts = {}
    for row, label in enumerate(dataset.eval_labels):
        label = int(label)
        if label not in cand_pos:
            raise InputError(
                f"eval sample {row} has label {label}, outside the {setting} candidate set"
            )
        s = scores[row]
        s_true = s[cand_pos[label]]
        outranked = int(np.sum((s > s_true) | ((s == s_true) & (cand < label))))
        for k in HIT_KS:
            if outranked < k:
                hits[k] += 1
        per_class_counts[label] = per_class_counts.get(label, 0) + 1
        per_class_hits[label] = per_class_hits.get(label, 0) + (1 if outranked < 1 else 0)
    n = dataset.n_eval
    report = EvalReport(
        setting=setting,
        hit_at={k: hits[k] / n for k in HIT_KS},
        n_samples=n,
        per_class_hit1=(
            {c: per_class_hits[c] / per_class_counts[c] for c in sorted(per_class_hits)}
            if with_per_class else None
        ),
    )
    return report


def synth_dataset(seed: int, n_seen: int = 20, n_unseen: int = 10,
                  embed_dim: int = 16, classifier_dim: int = 32,
                  noise: float = 0.05, *, samples_per_class: int = 20,
                  k: int = 2, alpha: float = 0.5,
                  norm_mode: str = "random_walk") -> tuple:
    """Seeded synthetic zero-shot problem at desk scale.

    Class embeddings are unit vectors clustered on the sphere (clusters mix
    seen and unseen classes), the taxonomy is a random recursive tree, and
    true classifiers are a smooth function of the embeddings
    (L2-normalized tanh of a fixed random linear map), so nearby embeddings
    get nearby classifiers and graph-based regression is learnable. Eval
    features are unseen-class classifiers plus Gaussian noise whose RMS norm
    is `noise`, re-normalized.

    Returns (ZslDataset, GraphBundle); the dataset keeps the full true
    classifier matrix in oracle_classifiers for test oracles.
    """
    if n_seen < 2 or n_unseen < 2:
        raise ConfigError("need at least 2 seen and 2 unseen classes")
    if embed_dim < 2 or classifier_dim < 2:
        raise ConfigError("embedding and classifier dims must be >= 2")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = Rng(seed)
    n = n_seen + n_unseen
    n_clusters = max(2, n // 5)
    centers = row_l2_normalize(rng.normal((n_clusters, embed_dim)))
    jitter = 0.05
    assignments = np.arange(n) % n_clusters
    vectors = row_l2_normalize(
        centers[assignments] + jitter * rng.normal((n, embed_dim))
    )

    width = len(str(max(n_seen, n_unseen) - 1))
    names = tuple(f"s{i:0{width}d}" for i in range(n_seen)) + tuple(
        f"u{i:0{width}d}" for i in range(n_unseen)
    )
    index = ClassIndex(names=names, n_seen=n_seen, n_unseen=n_unseen)
    table = EmbeddingTable(index=index, vectors=vectors)

    parents = [int(rng.integers(0, i)) for i in range(1, n)]
    edges = [(names[p], names[i + 1]) for i, p in enumerate(parents)]

    mapping = rng.normal((embed_dim, classifier_dim))
    true_classifiers = row_l2_normalize(np.tanh(vectors @ mapping))

    feats, labels = [], []
    for c in range(n_seen, n):
        for _ in range(samples_per_class):
            eps = noise * rng.normal((classifier_dim,)) / np.sqrt(classifier_dim)
            feats.append(true_classifiers[c] + eps)
            labels.append(c)
    feats = row_l2_normalize(np.asarray(feats))

    dataset = ZslDataset(
        index=index,
        embeddings=table,
        gt_classifiers=true_classifiers[:n_seen],
        eval_features=feats,
        eval_labels=np.asarray(labels, dtype=np.int64),
        oracle_classifiers=true_classifiers,
    )
    bundle = build_bundle(table, edges, k=k, alpha=alpha, norm_mode=norm_mode)
    return dataset, bundle


def relative_error(analytic: float, numeric: float) -> float:
    """|a-n| / max(|a|, |n|, 1e-8); the floor guards the both-zero case."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


@dataclass(frozen=True)
class GradCheckDims:
    """Reduced problem size for the finite-difference oracle."""

    embed_dim: int = 16
    classifier_dim: int = 32
    n_nodes: int = 12
    n_seen: int = 8
    width_divisor: int = 64


def grad_check(model_id: int, dims: GradCheckDims = GradCheckDims(),
               seed: int = 0, h: float = 1e-5,
               max_entries_per_layer: int = 1024) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout is disabled (eval-mode forward). Layers larger than
    max_entries_per_layer are subsampled down to 500 random entries.
    """
    if dims.n_seen < 1 or dims.n_seen > dims.n_nodes:
        raise ConfigError("n_seen must be in [1, n_nodes]")
    rng = Rng(seed)
    n = dims.n_nodes
    vectors = row_l2_normalize(rng.normal((n, dims.embed_dim)))
    names = tuple(f"n{i:03d}" for i in range(n))
    index = ClassIndex(names=names, n_seen=dims.n_seen, n_unseen=n - dims.n_seen)
    table = EmbeddingTable(index=index, vectors=vectors)
    edges = [(names[int(rng.integers(0, i))], names[i]) for i in range(1, n)]
    bundle = build_bundle(table, edges, k=2, alpha=10.0)

    arch, state = build_model(
        model_id, dims.embed_dim, dims.classifier_dim, rng,
        width_divisor=dims.width_divisor,
        hyper=Hyper(dropout_rate=0.0, weight_decay=0.0),
    )
    gt_full = np.zeros((n, dims.classifier_dim))
    gt_full[: dims.n_seen] = row_l2_normalize(rng.normal((dims.n_seen, dims.classifier_dim)))
    mask = np.zeros(n, dtype=bool)
    mask[: dims.n_seen] = True

    def loss_only() -> float:
        f_pred, _ = forward_model(
            arch, state, bundle.normalized, vectors, training=False,
        )
        return mse_loss_masked(f_pred, gt_full, mask)[0]

    f_pred, tape = forward_model(
        arch, state, bundle.normalized, vectors, training=False,
    )
    _, grad_f = mse_loss_masked(f_pred, gt_full, mask)
    analytic = backward_model(arch, grad_f, tape)

    worst = 0.0
    for w, ga in zip(state.weights, analytic):
        flat_w = w.reshape(-1)
        flat_g = ga.reshape(-1)
        if flat_w.size > max_entries_per_layer:
            idx = rng.integers(0, flat_w.size, size=500)
        else:
            idx = np.arange(flat_w.size)
        for j in idx:
            orig = flat_w[j]
            flat_w[j] = orig + h
            up = loss_only()
            flat_w[j] = orig - h
            down = loss_only()
            flat_w[j] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, relative_error(flat_g[j], numeric))
    return worst
