"""Pydantic request/response models for the service endpoints.

Paths in requests are interpreted on the machine running the service; the
thin-client CLI runs the service in-process by default, so they are ordinary
local paths there.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

NormMode = Literal["random_walk", "sym"]
Setting = Literal["conventional", "generalized"]


class TrainSettings(BaseModel):
    """Training hyperparameters; defaults are the reference configuration."""

    epochs: int = Field(default=300, ge=0)
    lr: float = Field(default=0.001, gt=0)
    weight_decay: float = Field(default=0.0005, ge=0)
    dropout: float = Field(default=0.5, ge=0, lt=1)
    slope: float = Field(default=0.2, gt=0, lt=1)
    norm_mode: NormMode = "random_walk"
    model_id: int = Field(default=4, ge=1, le=5)
    k: int = Field(default=2, ge=1)
    alpha: float = Field(default=0.5, gt=0)
    seed: int = 0
    embed_dim: int = Field(default=300, ge=1)


class BuildGraphRequest(BaseModel):
    class_list: str
    taxonomy: str
    word_vectors: str
    out_dir: str
    k: int = Field(default=2, ge=1)
    alpha: float = Field(default=0.5, gt=0)
    norm_mode: NormMode = "random_walk"


class BuildGraphResponse(BaseModel):
    out_dir: str
    files: dict[str, str]
    n: int
    n_seen: int
    n_unseen: int
    edges_taxonomy: int
    edges_knn: int
    edges_merged: int
    isolated_nodes: list[str]
    missing_token_classes: dict[str, int]


class TrainRequest(BaseModel):
    graph_dir: str
    class_list: str
    word_vectors: str
    gt_classifiers: str
    out_checkpoint: str
    loss_log: Optional[str] = None
    config: TrainSettings = TrainSettings()
    # optional convergence early-stop: halt once the recorded loss drops below
    stop_loss: Optional[float] = Field(default=None, gt=0)


class TrainResponse(BaseModel):
    checkpoint: str
    loss_log: Optional[str]
    epochs_run: int
    final_loss: Optional[float]


class EvalRequest(BaseModel):
    class_list: str
    features: str
    setting: Setting = "conventional"
    # exactly one of the two classifier sources
    checkpoint: Optional[str] = None
    classifiers: Optional[str] = None
    # required with checkpoint: the model needs the graph and embeddings
    graph_dir: Optional[str] = None
    word_vectors: Optional[str] = None
    per_class: bool = False


class EvalResponse(BaseModel):
    setting: Setting
    n_samples: int
    hit_at: dict[str, float]
    per_class_hit1: Optional[dict[str, float]] = None


class GradCheckRequest(BaseModel):
    model_id: int = Field(default=4, ge=1, le=5)
    seed: int = 0
    embed_dim: int = Field(default=16, ge=2)
    classifier_dim: int = Field(default=32, ge=2)
    n_nodes: int = Field(default=12, ge=4)
    width_divisor: int = Field(default=64, ge=1)


class GradCheckResponse(BaseModel):
    model_id: int
    max_relative_error: float
    tolerance: float
    passed: bool


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 0
    n_seen: int = Field(default=20, ge=2)
    n_unseen: int = Field(default=10, ge=2)
    embed_dim: int = Field(default=16, ge=2)
    classifier_dim: int = Field(default=32, ge=2)
    noise: float = Field(default=0.05, ge=0)
    samples_per_class: int = Field(default=20, ge=1)


class SynthResponse(BaseModel):
    out_dir: str
    files: dict[str, str]
    n_classes: int
    n_eval_samples: int


class HealthResponse(BaseModel):
    status: str
    version: str
