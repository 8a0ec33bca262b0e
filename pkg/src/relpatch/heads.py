"""SSL heads over patch tokens and the task losses.

Pairwise heads (spatial relation, distance, angle) emit raw bilinear scores
``a_k = z W_k z^T / sqrt(D)``, one ``D x D`` matrix per output channel. The
absolute-position head is a linear layer with one class per token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .backbone import trunc_normal
from .errors import ConfigurationError, DimensionError
from .numerics import Tensor, mse, softmax_ce
from .ssl_targets import NUM_RELATIONS, TargetSet

PAIRWISE_TASKS = ("sp_rel", "dist", "angle")
SSL_TASKS = ("sp_rel", "abs_pos", "dist", "angle")
ALL_TASKS = SSL_TASKS + ("classification",)
_TASK_ALIASES = {"sp-rel": "sp_rel", "sprel": "sp_rel", "abs-pos": "abs_pos", "abspos": "abs_pos",
                 "ang": "angle", "cls": "classification", "classify": "classification"}


@dataclass(frozen=True)
class TaskSet:
    sp_rel: bool = False
    abs_pos: bool = False
    dist: bool = False
    angle: bool = False
    classification: bool = False

    def __post_init__(self):
        if not any(self.active):
            raise ConfigurationError("at least one task must be active")

    @property
    def active(self) -> tuple[str, ...]:
        return tuple(f.name for f in fields(self) if getattr(self, f.name))

    @property
    def ssl(self) -> tuple[str, ...]:
        return tuple(t for t in self.active if t != "classification")

    @classmethod
    def parse(cls, spec: str) -> TaskSet:
        """Parse a comma list such as ``"sp_rel,abs_pos"``."""
        names = [s.strip().lower() for s in spec.split(",") if s.strip()]
        names = [_TASK_ALIASES.get(n, n) for n in names]
        unknown = set(names) - set(ALL_TASKS)
        if unknown:
            raise ConfigurationError(f"unknown tasks {sorted(unknown)}; valid: {ALL_TASKS}")
        return cls(**{n: True for n in names})

    def __str__(self) -> str:
        return ",".join(self.active)


class PairwiseHead:
    def __init__(self, task: str, dim: int, rng: np.random.Generator, dtype=np.float32, weight=None):
        if task not in PAIRWISE_TASKS:
            raise ValueError(f"{task!r} is not a pairwise task")
        self.task = task
        self.K = NUM_RELATIONS if task == "sp_rel" else 1
        if weight is None:
            weight = trunc_normal(rng, (self.K, dim, dim), dtype=dtype)
        self.W = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        if self.W.shape != (self.K, dim, dim):
            raise DimensionError(f"{task} head weight must be {(self.K, dim, dim)}, got {self.W.shape}")

    @property
    def dim(self) -> int:
        return self.W.shape[-1]


class LinearHead:
    def __init__(self, dim: int, n_classes: int, rng: np.random.Generator, dtype=np.float32, weight=None, bias=None):
        if weight is None:
            weight = trunc_normal(rng, (dim, n_classes), dtype=dtype)
        if bias is None:
            bias = np.zeros(n_classes, dtype=dtype)
        self.W = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        self.b = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)

    @property
    def K(self) -> int:
        return self.W.shape[1]


def pairwise_scores(z: Tensor, head: PairwiseHead) -> Tensor:
    """``(B, N, D) -> (B, N, N, K)`` raw scores (unbatched ``(N, D) -> (N, N, K)``)."""
    squeeze = z.ndim == 2
    if squeeze:
        z = z.reshape(1, *z.shape)
    b, n, d = z.shape
    if d != head.dim:
        raise DimensionError(f"token dim {d} does not match head dim {head.dim}")
    zw = z.reshape(b, 1, n, d) @ head.W  # B, K, N, D
    a = (zw @ z.swapaxes(-1, -2).reshape(b, 1, d, n)) * (1.0 / math.sqrt(d))
    a = a.transpose(0, 2, 3, 1)
    return a[0] if squeeze else a


def abs_pos_logits(z: Tensor, head: LinearHead) -> Tensor:
    if z.shape[-1] != head.W.shape[0]:
        raise DimensionError(f"token dim {z.shape[-1]} does not match head input {head.W.shape[0]}")
    return z @ head.W + head.b


def loss_sp_rel(scores: Tensor, rel) -> Tensor:
    """Mean cross-entropy over all ordered token pairs (diagonal included)."""
    rel = np.asarray(rel)
    if scores.shape[-1] != NUM_RELATIONS or scores.shape[:-1] != rel.shape:
        raise DimensionError(f"scores {scores.shape} do not match relation labels {rel.shape}")
    return softmax_ce(scores.reshape(-1, NUM_RELATIONS), rel.reshape(-1))


def loss_abs_pos(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise DimensionError(f"logits {logits.shape} do not match labels {labels.shape}")
    return softmax_ce(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1))


def loss_regression(scores: Tensor, targets) -> Tensor:
    """Mean squared error between ``(..., N, N, 1)`` scores and ``(..., N, N)`` targets."""
    targets = np.asarray(targets)
    if scores.shape != (*targets.shape, 1):
        raise DimensionError(f"scores {scores.shape} do not match targets {targets.shape}")
    return mse(scores.reshape(targets.shape), targets)


loss_dist = loss_regression
loss_angle = loss_regression


class SSLHeads:
    """Heads for the active SSL tasks of one run."""

    def __init__(self, dim: int, n_tokens: int, tasks: TaskSet, rng=0, dtype=np.float32,
                 tensors: Mapping[str, np.ndarray] | None = None):
        rng = np.random.default_rng(rng)
        self.dim, self.n_tokens, self.tasks = dim, n_tokens, tasks
        self.pairwise: dict[str, PairwiseHead] = {}
        self.abs_pos: LinearHead | None = None
        for task in PAIRWISE_TASKS:
            if getattr(tasks, task):
                w = None if tensors is None else np.array(tensors[f"ssl.{task}.W"], dtype=dtype)
                self.pairwise[task] = PairwiseHead(task, dim, rng, dtype, weight=w)
        if tasks.abs_pos:
            w = b = None
            if tensors is not None:
                w = np.array(tensors["ssl.abs_pos.W"], dtype=dtype)
                b = np.array(tensors["ssl.abs_pos.b"], dtype=dtype)
                if w.shape != (dim, n_tokens):
                    raise DimensionError(f"abs_pos head is {w.shape}, expected {(dim, n_tokens)}")
            self.abs_pos = LinearHead(dim, n_tokens, rng, dtype, weight=w, bias=b)

    def parameters(self) -> dict[str, Tensor]:
        p = {f"ssl.{t}.W": h.W for t, h in self.pairwise.items()}
        if self.abs_pos is not None:
            p["ssl.abs_pos.W"] = self.abs_pos.W
            p["ssl.abs_pos.b"] = self.abs_pos.b
        return p


@dataclass
class LossResult:
    total: Tensor
    losses: dict[str, float]
    outputs: dict[str, Tensor]


def total_loss(heads: SSLHeads | None, patch_tokens: Tensor, class_logits: Tensor | None,
               targets: TargetSet | None, tasks: TaskSet, class_labels=None) -> LossResult:
    """Unweighted sum of the active task losses, with a per-task breakdown."""
    terms: dict[str, Tensor] = {}
    outputs: dict[str, Tensor] = {}
    if tasks.ssl:
        if targets is None:
            raise ConfigurationError(f"tasks {tasks.ssl} need SSL targets")
        if heads is None:
            raise ConfigurationError("SSL tasks need heads")
    for task in tasks.ssl:
        if task == "abs_pos":
            if heads.abs_pos is None:
                raise ConfigurationError("heads were built without abs_pos")
            out = abs_pos_logits(patch_tokens, heads.abs_pos)
            terms[task] = loss_abs_pos(out, targets.abs_pos)
        else:
            if task not in heads.pairwise:
                raise ConfigurationError(f"heads were built without {task}")
            out = pairwise_scores(patch_tokens, heads.pairwise[task])
            if task == "sp_rel":
                terms[task] = loss_sp_rel(out, targets.rel)
            else:
                terms[task] = loss_regression(out, targets.require("dist" if task == "dist" else "ang"))
        outputs[task] = out
    if tasks.classification:
        if class_labels is None or class_logits is None:
            raise ConfigurationError("classification needs class logits and labels")
        terms["classification"] = softmax_ce(class_logits, np.asarray(class_labels))
        outputs["classification"] = class_logits
    total = None
    for t in terms.values():
        total = t if total is None else total + t
    return LossResult(total, {k: float(v.data) for k, v in terms.items()}, outputs)


def head_overhead(dim: int, n_tokens: int) -> dict[str, int]:
    """Parameter count of each head for token width ``dim`` and ``n_tokens`` patch tokens."""
    return {"sp_rel": NUM_RELATIONS * dim * dim, "dist": dim * dim, "angle": dim * dim,
            "abs_pos": dim * n_tokens + n_tokens}
