"""Training regimes: SSL pre-training, fine-tuning, and joint downstream training.

Random streams are derived from ``plan.seed``: encoder init, head init, the
training stream (batch order, augmentation, shuffling, mega-patch layouts),
and a fresh evaluation stream per evaluation so repeated evaluations of the
same weights agree exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .backbone import (
    MODEL_PRESETS,
    ModelConfig,
    ViTEncoder,
    config_shape_matches,
    encoder_from_tensors,
    forward,
    load_checkpoint,
    preset,
    save_checkpoint,
)
from .data import ImageSet
from .errors import ConfigurationError, LoadError, NumericError
from .heads import SSLHeads, TaskSet, total_loss
from .numerics import Tensor, no_grad
from .patch_grid import Lattice, extract_megapatches, patchify, sample_megapatch_layout
from .ssl_targets import TargetSet, build_target_set, permute_batch, stack_targets

log = logging.getLogger(__name__)

REGIMES = ("pretrain", "finetune", "downstream_only")
METRIC_COLUMNS = (
    "epoch", "split", "lr", "loss_total", "loss_sp_rel", "loss_abs_pos", "loss_dist", "loss_angle",
    "loss_cls", "acc_sp_rel", "acc_abs_pos", "acc_cls", "mse_dist", "mse_angle",
)


# -- schedule and optimizer ------------------------------------------------

def lr_at(step: int, total_steps: int, warmup_steps: int, lr_max: float) -> float:
    """Linear warm-up from 0 to ``lr_max``, then cosine decay to 0 at ``total_steps``."""
    if warmup_steps >= total_steps:
        raise ConfigurationError(f"warm-up ({warmup_steps} steps) must be shorter than training ({total_steps})")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr_max * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * lr_max * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Mapping[str, Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.betas, self.eps, self.weight_decay = betas, eps, weight_decay
        self.state = OptimizerState(
            m={k: np.zeros_like(p.data) for k, p in self.params.items()},
            v={k: np.zeros_like(p.data) for k, p in self.params.items()},
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        st = self.state
        st.step += 1
        bc1, bc2 = 1 - b1**st.step, 1 - b2**st.step
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                p.data *= 1 - lr * self.weight_decay
            m, v = st.m[k], st.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


# -- augmentation ----------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    hflip_p: float = 0.5
    jitter: tuple[float, float, float, float] = (0.4, 0.4, 0.4, 0.1)  # brightness, contrast, saturation, hue
    jitter_p: float = 0.8
    gray_p: float = 0.2


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def _crop_matrices(n_in: int, n_out: int, start: np.ndarray, extent: np.ndarray) -> np.ndarray:
    """Per-item (n_out x n_in) bilinear sampling matrices for crops [start, start + extent)."""
    src = start[:, None] + (np.arange(n_out) + 0.5)[None, :] * (extent[:, None] / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    w = (src - lo).astype(np.float32)
    m = np.zeros((len(start), n_out, n_in), dtype=np.float32)
    b = np.arange(len(start))[:, None]
    o = np.arange(n_out)[None, :]
    np.add.at(m, (b, o, lo), 1 - w)
    np.add.at(m, (b, o, hi), w)
    return m


def random_resized_crop(x: np.ndarray, rng: np.random.Generator, scale=(0.2, 1.0), ratio=(3 / 4, 4 / 3)) -> np.ndarray:
    """Crop a random box of each ``(n, C, h, w)`` item and resize it back to ``h x w``."""
    n, _, h, w = x.shape
    area = rng.uniform(*scale, size=n)
    logr = rng.uniform(np.log(ratio[0]), np.log(ratio[1]), size=n)
    cw = np.clip(np.sqrt(area * np.exp(logr)) * w, 1.0, w)
    ch = np.clip(np.sqrt(area / np.exp(logr)) * h, 1.0, h)
    x0 = rng.uniform(0, 1, size=n) * (w - cw)
    y0 = rng.uniform(0, 1, size=n) * (h - ch)
    ry = _crop_matrices(h, h, y0, ch)
    rx = _crop_matrices(w, w, x0, cw)
    return ry[:, None] @ x @ rx.transpose(0, 2, 1)[:, None]


def _rgb_to_hsv(rgb):
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6, np.where(mx == g, (b - r) / safe + 2, (r - g) / safe + 4)) / 6
    h = np.where(delta > 0, h, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6)
    f = h * 6 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=1)


def _bcast(v, x):
    return v.reshape(-1, *([1] * (x.ndim - 1)))


def color_jitter(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Per-item brightness, contrast, saturation and hue jitter on ``(n, C, ...)`` arrays."""
    n, c = x.shape[:2]
    bs, cs, ss, hs = cfg.jitter
    apply = rng.random(n) < cfg.jitter_p
    bf = np.where(apply, rng.uniform(1 - bs, 1 + bs, n), 1.0).astype(np.float32)
    cf = np.where(apply, rng.uniform(1 - cs, 1 + cs, n), 1.0).astype(np.float32)
    sf = np.where(apply, rng.uniform(1 - ss, 1 + ss, n), 1.0).astype(np.float32)
    hf = np.where(apply, rng.uniform(-hs, hs, n), 0.0).astype(np.float32)
    x = np.clip(x * _bcast(bf, x), 0, 1)
    gray = _gray(x) if c == 3 else x.mean(axis=1, keepdims=True)
    mean = gray.reshape(n, -1).mean(axis=1)
    x = np.clip(_bcast(cf, x) * x + _bcast((1 - cf) * mean, x), 0, 1)
    if c == 3:
        x = np.clip(_bcast(sf, x) * x + (1 - _bcast(sf, x)) * _gray(x), 0, 1)
        h, s, v = _rgb_to_hsv(x)
        h = (h + _bcast(hf, h)) % 1.0
        x = _hsv_to_rgb(h, s, v).astype(np.float32)
    return x


def _gray(x):
    return np.tensordot(_LUMA, x, axes=([0], [1]))[:, None] if x.shape[1] == 3 else x


def random_grayscale(x: np.ndarray, rng: np.random.Generator, p: float) -> np.ndarray:
    if x.shape[1] != 3:
        return x
    pick = rng.random(x.shape[0]) < p
    if pick.any():
        x = x.copy()
        x[pick] = np.repeat(_gray(x[pick]), 3, axis=1)
    return x


def augment_classification(images: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    if not cfg.enabled:
        return images
    out = random_resized_crop(images, rng, cfg.crop_scale, cfg.crop_ratio)
    flip = rng.random(len(out)) < cfg.hflip_p
    out[flip] = out[flip][..., ::-1]
    return np.clip(out, 0, 1).astype(np.float32)


def augment_tokens(rows: np.ndarray, channels: int, patch_size: int, rng: np.random.Generator,
                   cfg: AugmentConfig) -> np.ndarray:
    """SSL path on ``(B, N, C*P*P)`` token rows: per-token resized crop, then per-image jitter and grayscale."""
    if not cfg.enabled:
        return rows
    b, n, _ = rows.shape
    p = patch_size
    x = random_resized_crop(rows.reshape(b * n, channels, p, p), rng, cfg.crop_scale, cfg.crop_ratio)
    x = x.reshape(b, n, channels, p, p).transpose(0, 2, 1, 3, 4)  # B, C, N, P, P
    x = color_jitter(x, rng, cfg)
    x = random_grayscale(x, rng, cfg.gray_p)
    x = np.clip(x, 0, 1).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(b, n, channels * p * p), dtype=np.float32)


def augment(image: np.ndarray, regime: str, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig(),
            patch_size: int | None = None) -> np.ndarray:
    """Augment one ``(C, H, W)`` image or a batch, per the regime's path.

    ``pretrain`` takes the SSL path (needs ``patch_size``); the other regimes
    take the classification path.
    """
    if not cfg.enabled:
        return image
    batch = image[None] if image.ndim == 3 else image
    if regime == "pretrain":
        if patch_size is None:
            raise ConfigurationError("the SSL augmentation path needs patch_size")
        from .patch_grid import PatchGrid, unpatchify

        _, c, h, w = batch.shape
        grid = PatchGrid(h, w, c, patch_size)
        out = unpatchify(augment_tokens(patchify(batch, grid), c, patch_size, rng, cfg), grid)
    else:
        out = augment_classification(batch, rng, cfg)
    return out[0] if image.ndim == 3 else out


# -- shuffling -------------------------------------------------------------

def shuffle_batch(rows: np.ndarray, targets: TargetSet, rng: np.random.Generator) -> tuple[np.ndarray, TargetSet, np.ndarray]:
    """Draw one uniform permutation per image; reorder rows and relabel targets.

    Returns ``(rows', targets', perms)`` with ``rows'[b, i] = rows[b, perms[b, i]]``.
    """
    b, n = rows.shape[:2]
    perms = rng.permuted(np.tile(np.arange(n), (b, 1)), axis=1)
    shuffled = np.take_along_axis(rows, perms[:, :, None], axis=1)
    if targets.rel.ndim == 2:
        targets = stack_targets(targets, b)
    return shuffled, permute_batch(targets, perms), perms


# -- plan ------------------------------------------------------------------

WARMUP_FRACTION = 0.1

_DEFAULT_TASKS = {
    "pretrain": "sp_rel,abs_pos",
    "finetune": "classification",
    "downstream_only": "sp_rel,abs_pos,classification",
}


@dataclass
class TrainPlan:
    regime: str
    tasks: TaskSet | None = None
    epochs: int = 100
    warmup_epochs: float = 10
    lr_max: float = 5e-4
    batch_size: int = 128
    seed: int = 0
    use_pos_embed: bool | None = None
    shuffle_patches: bool = False
    megapatch_M: int | None = None
    init_checkpoint: str | None = None
    out_dir: str | None = None
    model: ModelConfig | str = "tiny"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    eval_batch_size: int = 256
    # lifts the no-PE rule of pre-training, for the shortcut-learning ablation
    pe_ablation: bool = False

    def __post_init__(self):
        if self.regime == "downstream":
            self.regime = "downstream_only"
        if self.regime not in REGIMES:
            raise ConfigurationError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if isinstance(self.model, str):
            self.model = preset(self.model)
        if self.tasks is None:
            self.tasks = TaskSet.parse(_DEFAULT_TASKS[self.regime])
        elif isinstance(self.tasks, str):
            self.tasks = TaskSet.parse(self.tasks)
        t = self.tasks
        if self.regime == "pretrain":
            if t.classification:
                raise ConfigurationError("pre-training is SSL-only; drop the classification task")
            if self.use_pos_embed is None:
                self.use_pos_embed = False
            if self.use_pos_embed and not self.pe_ablation:
                raise ConfigurationError("positional embeddings are disabled in pre-training (set pe_ablation to override)")
        elif self.regime == "finetune":
            if t.active != ("classification",):
                raise ConfigurationError("fine-tuning trains classification only")
            if not self.init_checkpoint:
                raise ConfigurationError("fine-tuning needs init_checkpoint")
        else:
            if not t.classification or not t.ssl:
                raise ConfigurationError("downstream-only trains classification jointly with SSL tasks")
        if self.use_pos_embed is None:
            self.use_pos_embed = True
        if self.megapatch_M is not None:
            if self.regime != "pretrain":
                raise ConfigurationError("mega-patches are a pre-training option")
            if self.use_pos_embed:
                raise ConfigurationError("mega-patch lattices cannot use positional embeddings")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.epochs and self.warmup_epochs >= self.epochs:
            raise ConfigurationError("warmup_epochs must be shorter than epochs")

    @property
    def model_config(self) -> ModelConfig:
        return replace(self.model, use_pos_embed=self.use_pos_embed)


# -- trainer ---------------------------------------------------------------

@dataclass
class BatchStats:
    """Sums of per-batch means weighted by batch size."""

    sums: dict[str, float] = field(default_factory=dict)
    count: int = 0

    def add(self, metrics: Mapping[str, float], n: int) -> None:
        for k, v in metrics.items():
            self.sums[k] = self.sums.get(k, 0.0) + v * n
        self.count += n

    def means(self) -> dict[str, float]:
        return {k: v / max(self.count, 1) for k, v in self.sums.items()}


def _metrics(res, targets: TargetSet | None, tasks: TaskSet, labels) -> dict[str, float]:
    m = {"loss_total": float(res.total.data)}
    names = {"sp_rel": "loss_sp_rel", "abs_pos": "loss_abs_pos", "dist": "loss_dist", "angle": "loss_angle",
             "classification": "loss_cls"}
    for task, v in res.losses.items():
        m[names[task]] = v
    out = res.outputs
    if tasks.sp_rel:
        m["acc_sp_rel"] = float((out["sp_rel"].data.argmax(-1) == targets.rel).mean())
    if tasks.abs_pos:
        m["acc_abs_pos"] = float((out["abs_pos"].data.argmax(-1) == targets.abs_pos).mean())
    if tasks.classification:
        m["acc_cls"] = float((out["classification"].data.argmax(-1) == np.asarray(labels)).mean())
    if tasks.dist:
        m["mse_dist"] = res.losses["dist"]
    if tasks.angle:
        m["mse_angle"] = res.losses["angle"]
    return m


class Batcher:
    """Turns image batches into token rows and matching targets."""

    def __init__(self, config: ModelConfig, tasks: TaskSet, megapatch_M: int | None, shuffle: bool):
        self.config, self.tasks, self.megapatch_M, self.shuffle = config, tasks, megapatch_M, shuffle
        self.lattice = Lattice(megapatch_M, megapatch_M) if megapatch_M else config.grid.lattice
        self.base_targets = build_target_set(self.lattice) if tasks.ssl else None

    def __call__(self, images: np.ndarray, rng: np.random.Generator):
        cfg = self.config
        if self.megapatch_M:
            rows = np.stack([
                extract_megapatches(img, sample_megapatch_layout(cfg.grid, self.megapatch_M, rng), cfg.patch_size)[0]
                for img in images
            ]).astype(np.float32)
        else:
            rows = patchify(images, cfg.grid)
        targets = None
        if self.base_targets is not None:
            targets = stack_targets(self.base_targets, len(images))
        if self.shuffle:
            if targets is None:
                targets = stack_targets(build_target_set(self.lattice), len(images))
            rows, targets, _ = shuffle_batch(rows, targets, rng)
        return rows, targets


def evaluate_model(encoder: ViTEncoder, heads: SSLHeads | None, dataset: ImageSet, tasks: TaskSet, *,
                   shuffle: bool = False, megapatch_M: int | None = None, seed: int = 0,
                   batch_size: int = 256) -> dict[str, float]:
    """Per-task losses and accuracies over ``dataset`` without augmentation.

    Regression metrics are raw MSE (``mse_*``) plus a x100 variant (``mse_*_x100``).
    """
    rng = np.random.default_rng([seed, 3])
    batcher = Batcher(encoder.config, tasks, megapatch_M, shuffle)
    stats = BatchStats()
    dtype = encoder.params["cls_token"].dtype
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            images = dataset.images[start:start + batch_size].astype(dtype, copy=False)
            labels = dataset.labels[start:start + batch_size]
            rows, targets = batcher(images, rng)
            tokens, logits = forward(rows.astype(dtype, copy=False), encoder)
            res = total_loss(heads, tokens, logits, targets, tasks, labels)
            stats.add(_metrics(res, targets, tasks, labels), len(labels))
    m = stats.means()
    for k in ("mse_dist", "mse_angle"):
        if k in m:
            m[k + "_x100"] = 100.0 * m[k]
    return m


class Trainer:
    def __init__(self, plan: TrainPlan):
        self.plan = plan
        cfg = plan.model_config
        tasks = plan.tasks
        ckpt_tensors = None
        if plan.init_checkpoint:
            ck_cfg, ckpt_tensors = load_checkpoint(plan.init_checkpoint)
            if not config_shape_matches(ck_cfg, cfg):
                raise LoadError(f"checkpoint config {ck_cfg} does not match model {cfg}")
            self.encoder = encoder_from_tensors(cfg, ckpt_tensors)
        else:
            self.encoder = ViTEncoder(cfg, rng=[plan.seed, 0])
        self.batcher = Batcher(cfg, tasks, plan.megapatch_M, plan.shuffle_patches)
        self.heads = None
        if tasks.ssl:
            reuse = ckpt_tensors if ckpt_tensors and all(k in ckpt_tensors for k in _head_keys(tasks)) else None
            self.heads = SSLHeads(cfg.dim, self.batcher.lattice.N, tasks, rng=[plan.seed, 1], tensors=reuse)
        self.optimizer = AdamW(self.parameters(), plan.betas, plan.adam_eps, plan.weight_decay)
        self.rng = np.random.default_rng([plan.seed, 2])
        self.global_step = 0

    def parameters(self) -> dict[str, Tensor]:
        p = dict(self.encoder.params)
        if self.heads is not None:
            p.update(self.heads.parameters())
        return p

    def train_step(self, images: np.ndarray, labels: np.ndarray, lr: float) -> dict[str, float]:
        plan, cfg = self.plan, self.encoder.config
        aug = plan.augment
        if plan.regime != "pretrain":
            images = augment_classification(images, self.rng, aug)
        rows, targets = self.batcher(images, self.rng)
        if plan.regime == "pretrain":
            rows = augment_tokens(rows, cfg.channels, cfg.patch_size, self.rng, aug)
        tokens, logits = forward(rows.astype(np.float32, copy=False), self.encoder)
        try:
            res = total_loss(self.heads, tokens, logits, targets, plan.tasks, labels)
        except NumericError as e:
            raise NumericError(f"non-finite loss at step {self.global_step}: {e}") from e
        if not np.isfinite(res.total.data):
            raise NumericError(f"non-finite loss at step {self.global_step}: {res.losses}")
        self.optimizer.zero_grad()
        res.total.backward()
        self.optimizer.step(lr)
        self.global_step += 1
        return _metrics(res, targets, plan.tasks, labels)

    def evaluate(self, dataset: ImageSet) -> dict[str, float]:
        p = self.plan
        return evaluate_model(self.encoder, self.heads, dataset, p.tasks, shuffle=p.shuffle_patches,
                              megapatch_M=p.megapatch_M, seed=p.seed, batch_size=p.eval_batch_size)

    def checkpoint_tensors(self) -> dict[str, Tensor]:
        return self.parameters()

    def save(self, path) -> None:
        save_checkpoint(path, self.encoder.config, self.checkpoint_tensors())


def _head_keys(tasks: TaskSet) -> list[str]:
    keys = [f"ssl.{t}.W" for t in ("sp_rel", "dist", "angle") if getattr(tasks, t)]
    if tasks.abs_pos:
        keys += ["ssl.abs_pos.W", "ssl.abs_pos.b"]
    return keys


@dataclass
class RunReport:
    rows: list[dict]
    final_eval: dict[str, float]
    checkpoint_path: Path | None
    metrics_path: Path | None
    trainer: Trainer = field(repr=False)

    def metrics_csv(self) -> str:
        return format_metrics_csv(self.rows)


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def format_metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def run(plan: TrainPlan, train: ImageSet, eval_set: ImageSet | None = None) -> RunReport:
    """Execute ``plan``: evaluate at epoch 0, then train and evaluate once per epoch."""
    if len(train) == 0:
        raise ConfigurationError("training set is empty")
    eval_set = eval_set if eval_set is not None else train
    trainer = Trainer(plan)
    steps_per_epoch = math.ceil(len(train) / plan.batch_size)
    total = plan.epochs * steps_per_epoch
    warmup = int(round(plan.warmup_epochs * steps_per_epoch))
    rows = [{"epoch": 0, "split": "eval", "lr": 0.0, **trainer.evaluate(eval_set)}]
    log.info("epoch 0 eval %s", rows[-1])
    lr = 0.0
    for epoch in range(1, plan.epochs + 1):
        order = trainer.rng.permutation(len(train))
        stats = BatchStats()
        for s in range(steps_per_epoch):
            idx = np.sort(order[s * plan.batch_size:(s + 1) * plan.batch_size])
            lr = lr_at(trainer.global_step, total, warmup, plan.lr_max)
            m = trainer.train_step(train.images[idx], train.labels[idx], lr)
            stats.add(m, len(idx))
        rows.append({"epoch": epoch, "split": "train", "lr": lr, **stats.means()})
        rows.append({"epoch": epoch, "split": "eval", "lr": lr, **trainer.evaluate(eval_set)})
        log.info("epoch %d train %s eval %s", epoch, rows[-2], rows[-1])
    final_eval = {k: v for k, v in rows[-1].items() if k not in ("epoch", "split", "lr")}
    ckpt = metrics = None
    if plan.out_dir:
        out = Path(plan.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt, metrics = out / "checkpoint.rlvt", out / "metrics.csv"
        trainer.save(ckpt)
        metrics.write_text(format_metrics_csv(rows))
    return RunReport(rows, final_eval, ckpt, metrics, trainer)


def evaluate(checkpoint, dataset: ImageSet, tasks: TaskSet | str, *, shuffle: bool = False,
             megapatch_M: int | None = None, seed: int = 0, batch_size: int = 256) -> dict[str, float]:
    """Evaluate a saved checkpoint on ``dataset`` for ``tasks``."""
    tasks = TaskSet.parse(tasks) if isinstance(tasks, str) else tasks
    cfg, tensors = load_checkpoint(checkpoint)
    encoder = encoder_from_tensors(cfg, tensors)
    heads = None
    if tasks.ssl:
        missing = [k for k in _head_keys(tasks) if k not in tensors]
        if missing:
            raise LoadError(f"checkpoint has no heads for {missing}")
        lattice_n = megapatch_M**2 if megapatch_M else cfg.grid.N
        heads = SSLHeads(cfg.dim, lattice_n, tasks, tensors=tensors)
    return evaluate_model(encoder, heads, dataset, tasks, shuffle=shuffle, megapatch_M=megapatch_M,
                          seed=seed, batch_size=batch_size)


# -- config files ----------------------------------------------------------

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_PLAN_KEYS = {f.name for f in fields(TrainPlan)} - {"augment", "model"}
_AUG_KEYS = {"augment"} | {f"aug_{f.name}" for f in fields(AugmentConfig) if f.name != "enabled"}
CONFIG_KEYS = frozenset(_MODEL_KEYS | _PLAN_KEYS | _AUG_KEYS | {"model", "data", "subset", "eval_subset"})


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{source}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def _to_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {v!r}")


def _to_tuple(v: str) -> tuple[float, ...]:
    return tuple(float(s) for s in str(v).split(","))


def _convert(value, kind):
    if value is None or not isinstance(value, str):
        return value
    if value.lower() in ("none", ""):
        return None
    if kind is bool:
        return _to_bool(value)
    if kind is tuple:
        return _to_tuple(value)
    return kind(value)


_PLAN_TYPES = {"epochs": int, "warmup_epochs": float, "lr_max": float, "batch_size": int, "seed": int,
               "use_pos_embed": bool, "shuffle_patches": bool, "megapatch_M": int, "init_checkpoint": str,
               "out_dir": str, "betas": tuple, "adam_eps": float, "weight_decay": float,
               "eval_batch_size": int, "pe_ablation": bool}


def plan_from_mapping(regime: str, values: Mapping[str, object]) -> TrainPlan:
    """Build a TrainPlan from config/CLI values (strings are converted by field type)."""
    unknown = set(values) - CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)}")
    model_name = values.get("model", "tiny")
    model = model_name if isinstance(model_name, ModelConfig) else preset(str(model_name))
    overrides = {}
    for k in _MODEL_KEYS & set(values):
        kind = bool if k.startswith("use_") else int
        overrides[k] = _convert(values[k], kind)
    if overrides:
        model = replace(model, **overrides)
    kw = {}
    for k in _PLAN_KEYS & set(values):
        if k == "regime":
            continue
        if k == "tasks":
            kw[k] = values[k] if isinstance(values[k], TaskSet) else TaskSet.parse(str(values[k]))
        else:
            kw[k] = _convert(values[k], _PLAN_TYPES[k])
    if "epochs" in kw and "warmup_epochs" not in kw:
        # keep the default 10:100 warm-up ratio for shortened runs
        kw["warmup_epochs"] = kw["epochs"] * WARMUP_FRACTION
    aug = AugmentConfig()
    aug_kw = {}
    if "augment" in values:
        aug_kw["enabled"] = _convert(values["augment"], bool)
    for k in _AUG_KEYS - {"augment"}:
        if k in values:
            name = k[4:]
            default = getattr(aug, name)
            aug_kw[name] = _convert(values[k], tuple if isinstance(default, tuple) else float)
    return TrainPlan(regime=str(values.get("regime", regime)), model=model, augment=replace(aug, **aug_kw), **kw)


__all__ = [
    "AdamW", "AugmentConfig", "Batcher", "MODEL_PRESETS", "OptimizerState", "RunReport", "TrainPlan", "Trainer",
    "augment", "evaluate", "evaluate_model", "lr_at", "parse_config_file", "parse_config_text", "plan_from_mapping",
    "run", "shuffle_batch",
]
