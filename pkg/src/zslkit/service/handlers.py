"""Request handlers: the whole pipeline behind both the HTTP API and the CLI.

Each handler takes a request model, touches the filesystem of the host it
runs on, and returns a response model. Domain errors propagate as zslkit
exceptions; the app layer maps them to HTTP codes and the CLI to exit codes.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .. import formats
from ..errors import InputError
from ..checkpoint import load_checkpoint, save_checkpoint
from ..graph import EmbeddingTable, build_bundle, build_embedding_table
from ..harness import (
    GRADCHECK_TOLERANCE,
    GradCheckDims,
    TrainConfig,
    ZslDataset,
    evaluate,
    grad_check,
    predict_classifiers,
    synth_dataset,
    train,
)
from ..tensor import row_l2_normalize
from . import models

STATS_FILE = "stats.json"


def _load_embeddings(class_list_path, word_vectors_path):
    index = formats.read_class_list(class_list_path)
    word_vectors = formats.read_word_vectors(word_vectors_path)
    table, missing = build_embedding_table(index, word_vectors)
    return index, table, missing


def _undirected_edge_count(adj) -> int:
    """Off-diagonal entry pairs counted once."""
    rows, cols, _ = adj.coo()
    return int(np.sum(rows < cols))


def run_build_graph(req: models.BuildGraphRequest) -> models.BuildGraphResponse:
    index, table, missing = _load_embeddings(req.class_list, req.word_vectors)
    edges = formats.read_taxonomy(req.taxonomy)
    if not edges:
        warnings.warn(f"{req.taxonomy}: no taxonomy edges; that graph is self-loops only")
    bundle = build_bundle(
        table, edges, k=req.k, alpha=req.alpha, norm_mode=req.norm_mode,
    )
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for part, fname in formats.GRAPH_FILES.items():
        path = str(out / fname)
        mode = req.norm_mode if part == "normalized" else "raw"
        formats.write_adjacency(path, getattr(bundle, part), norm_mode=mode,
                                k=req.k, alpha=req.alpha)
        files[part] = path
    # a node is isolated when its merged row holds nothing but the self-loop
    degrees = bundle.merged.row_sums()
    isolated = [index.names[i] for i in np.nonzero(degrees <= 1.0)[0]]
    if isolated:
        warnings.warn(f"isolated nodes (self-loop only): {', '.join(isolated[:10])}")
    stats = models.BuildGraphResponse(
        out_dir=str(out),
        files=files,
        n=index.n_total,
        n_seen=index.n_seen,
        n_unseen=index.n_unseen,
        edges_taxonomy=_undirected_edge_count(bundle.taxonomy),
        edges_knn=_undirected_edge_count(bundle.knn),
        edges_merged=_undirected_edge_count(bundle.merged),
        isolated_nodes=isolated,
        missing_token_classes=missing,
    )
    with open(out / STATS_FILE, "w", encoding="utf-8") as fh:
        fh.write(stats.model_dump_json(indent=2))
        fh.write("\n")
    files["stats"] = str(out / STATS_FILE)
    return stats


def _load_graph_bundle_like(graph_dir, index):
    """Read the normalized adjacency export and check it against the classes."""
    path = Path(graph_dir) / formats.GRAPH_FILES["normalized"]
    if not path.exists():
        raise InputError(f"{graph_dir}: missing graph export {path.name}")
    adj, header = formats.read_adjacency(path)
    if adj.n != index.n_total:
        raise InputError(
            f"{path}: graph has {adj.n} nodes but class list has {index.n_total}"
        )
    return adj, header


class _FileBundle:
    """Duck-typed stand-in for GraphBundle when only the normalized
    adjacency export was loaded."""

    def __init__(self, normalized, norm_mode):
        self.normalized = normalized
        self.norm_mode = norm_mode
        self.n = normalized.n


def run_train(req: models.TrainRequest) -> models.TrainResponse:
    index, table, _ = _load_embeddings(req.class_list, req.word_vectors)
    adj, header = _load_graph_bundle_like(req.graph_dir, index)
    gt = formats.read_classifiers(req.gt_classifiers, index, expect="seen")
    cfg = req.config
    dataset = ZslDataset(
        index=index, embeddings=table, gt_classifiers=gt,
        eval_features=np.zeros((0, gt.shape[1])),
        eval_labels=np.zeros(0, dtype=np.int64),
    )
    config = TrainConfig(
        epochs=cfg.epochs, lr=cfg.lr, weight_decay=cfg.weight_decay,
        dropout=cfg.dropout, slope=cfg.slope, norm_mode=cfg.norm_mode,
        model_id=cfg.model_id, k=cfg.k, alpha=cfg.alpha, seed=cfg.seed,
        embed_dim=cfg.embed_dim,
    )
    bundle = _FileBundle(adj, header.get("norm_mode", cfg.norm_mode))
    result = train(dataset, bundle, config, stop_loss=req.stop_loss)
    out = Path(req.out_checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.arch, result.state, result.seed)
    if req.loss_log:
        formats.write_loss_curve(req.loss_log, result.loss_curve)
    return models.TrainResponse(
        checkpoint=str(out),
        loss_log=req.loss_log,
        epochs_run=len(result.loss_curve),
        final_loss=result.loss_curve[-1] if result.loss_curve else None,
    )


def run_eval(req: models.EvalRequest) -> models.EvalResponse:
    if (req.checkpoint is None) == (req.classifiers is None):
        raise InputError("exactly one of checkpoint/classifiers must be given")
    index = formats.read_class_list(req.class_list)
    if req.checkpoint is not None:
        if req.graph_dir is None or req.word_vectors is None:
            raise InputError("evaluating a checkpoint needs graph_dir and word_vectors")
        word_vectors = formats.read_word_vectors(req.word_vectors)
        table, _ = build_embedding_table(index, word_vectors)
        adj, header = _load_graph_bundle_like(req.graph_dir, index)
        arch, state, _ = load_checkpoint(req.checkpoint)
        if arch.input_dim != table.dim:
            raise InputError(
                f"{req.checkpoint}: model expects embedding dim {arch.input_dim}, "
                f"{req.word_vectors} provides {table.dim}"
            )
        bundle = _FileBundle(adj, header.get("norm_mode", "random_walk"))
        f_pred = predict_classifiers(arch, state, bundle, table)
    else:
        f_pred = row_l2_normalize(
            formats.read_classifiers(req.classifiers, index, expect="all")
        )
    feats, labels = formats.read_features(req.features, index)
    if feats.shape[1] != f_pred.shape[1]:
        raise InputError(
            f"{req.features}: features have dim {feats.shape[1]}, "
            f"classifiers have dim {f_pred.shape[1]}"
        )
    dataset = ZslDataset(
        index=index,
        embeddings=_dummy_embeddings(index),
        gt_classifiers=np.zeros((index.n_seen, f_pred.shape[1])),
        eval_features=feats,
        eval_labels=labels,
    )
    report = evaluate(dataset, f_pred, req.setting, with_per_class=req.per_class)
    return models.EvalResponse(
        setting=req.setting,
        n_samples=report.n_samples,
        hit_at={str(k): v for k, v in report.hit_at.items()},
        per_class_hit1=(
            {index.names[c]: v for c, v in report.per_class_hit1.items()}
            if req.per_class and report.per_class_hit1 is not None else None
        ),
    )


def _dummy_embeddings(index):
    # evaluate() only needs the index; keep the dataclass invariants happy
    return EmbeddingTable(index=index, vectors=np.zeros((index.n_total, 1)))


def run_gradcheck(req: models.GradCheckRequest) -> models.GradCheckResponse:
    err = grad_check(
        req.model_id,
        GradCheckDims(
            embed_dim=req.embed_dim,
            classifier_dim=req.classifier_dim,
            n_nodes=req.n_nodes,
            width_divisor=req.width_divisor,
        ),
        seed=req.seed,
    )
    return models.GradCheckResponse(
        model_id=req.model_id,
        max_relative_error=err,
        tolerance=GRADCHECK_TOLERANCE,
        passed=bool(err < GRADCHECK_TOLERANCE),
    )


def run_synth(req: models.SynthRequest) -> models.SynthResponse:
    dataset, bundle = synth_dataset(
        req.seed, n_seen=req.n_seen, n_unseen=req.n_unseen,
        embed_dim=req.embed_dim, classifier_dim=req.classifier_dim,
        noise=req.noise, samples_per_class=req.samples_per_class,
    )
    # the tree is undirected on disk; emit each off-diagonal pair once
    rows, cols, _ = bundle.taxonomy.coo()
    names = dataset.index.names
    edges = [
        (names[i], names[j])
        for i, j in zip(rows.tolist(), cols.tolist())
        if i < j
    ]
    # out_dir excluded: identical seeds must give identical directory contents
    manifest = json.loads(req.model_dump_json(exclude={"out_dir"}))
    paths = formats.write_synth_fixture(req.out_dir, dataset, edges, manifest)
    return models.SynthResponse(
        out_dir=req.out_dir,
        files=paths,
        n_classes=dataset.index.n_total,
        n_eval_samples=dataset.n_eval,
    )
