"""ViT encoder: patch embedding, pre-norm transformer blocks, class-token classifier.

Each block is ``z' = z + MSA(LN(z))`` followed by ``z'' = z' + MLP(LN(z'))``,
where MLP is fc -> GELU -> fc with hidden width ``mlp_ratio * D``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DimensionError, LoadError
from .numerics import Tensor, concat, gelu, layernorm, softmax
from .patch_grid import PatchGrid, patchify


@dataclass(frozen=True)
class ModelConfig:
    img_h: int = 32
    img_w: int = 32
    patch_size: int = 4
    channels: int = 3
    depth: int = 4
    heads: int = 4
    dim: int = 96
    mlp_ratio: int = 4
    num_classes: int = 10
    use_pos_embed: bool = True
    use_class_token: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ConfigurationError(f"dim {self.dim} must be a positive multiple of heads {self.heads}")
        # depth 0 is accepted as a degenerate test configuration
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0")
        if self.mlp_ratio < 1 or self.num_classes < 1:
            raise ConfigurationError("mlp_ratio and num_classes must be >= 1")
        PatchGrid(self.img_h, self.img_w, self.channels, self.patch_size)

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.img_h, self.img_w, self.channels, self.patch_size)

    @property
    def num_tokens(self) -> int:
        return self.grid.N + (1 if self.use_class_token else 0)


MODEL_PRESETS: dict[str, ModelConfig] = {
    "tiny": ModelConfig(),
    # gradient-check scale: 2 x 2 grid
    "micro": ModelConfig(img_h=4, img_w=4, patch_size=2, depth=2, heads=2, dim=16, num_classes=3),
    "vit-s/4": ModelConfig(32, 32, 4, 3, 12, 6, 384, 4, 10),
    "vit-s/8": ModelConfig(64, 64, 8, 3, 12, 6, 384, 4, 200),
    "vit-s/32": ModelConfig(224, 224, 32, 3, 12, 6, 384, 4, 100),
    "vit-s/16": ModelConfig(224, 224, 16, 3, 12, 6, 384, 4, 100),
    "vit-s/14": ModelConfig(224, 224, 14, 3, 12, 6, 384, 4, 100),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = MODEL_PRESETS[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    d, hid = cfg.dim, cfg.mlp_ratio * cfg.dim
    grid = cfg.grid

    def w(*shape):
        return Tensor(trunc_normal(rng, shape, dtype=dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    p = {
        "patch_embed.weight": w(grid.patch_dim, d),
        "patch_embed.bias": zeros(d),
        "pos_embed": w(grid.N + 1, d),
        "cls_token": w(d),
    }
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        p[b + "ln1.gamma"], p[b + "ln1.beta"] = ones(d), zeros(d)
        p[b + "attn.qkv.weight"], p[b + "attn.qkv.bias"] = w(d, 3 * d), zeros(3 * d)
        p[b + "attn.proj.weight"], p[b + "attn.proj.bias"] = w(d, d), zeros(d)
        p[b + "ln2.gamma"], p[b + "ln2.beta"] = ones(d), zeros(d)
        p[b + "mlp.fc1.weight"], p[b + "mlp.fc1.bias"] = w(d, hid), zeros(hid)
        p[b + "mlp.fc2.weight"], p[b + "mlp.fc2.bias"] = w(hid, d), zeros(d)
    p["norm.gamma"], p["norm.beta"] = ones(d), zeros(d)
    p["head.weight"], p["head.bias"] = w(d, cfg.num_classes), zeros(cfg.num_classes)
    return p


class ViTEncoder:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | int | None = 0, dtype=np.float32,
                 params: Mapping[str, Tensor] | None = None):
        self.config = config
        if params is None:
            params = init_params(config, np.random.default_rng(rng), dtype)
        self.params: dict[str, Tensor] = dict(params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def block_params(self, i: int) -> dict[str, Tensor]:
        prefix = f"blocks.{i}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def with_pos_embed(self, enabled: bool) -> ViTEncoder:
        """Same weights, positional embedding toggled."""
        return ViTEncoder(replace(self.config, use_pos_embed=enabled), params=self.params)

    def __call__(self, x):
        return forward(x, self)


def embed(patch_rows, enc: ViTEncoder) -> Tensor:
    """Project patch rows, prepend the class token, add positional embeddings.

    ``patch_rows`` is ``(B, N, P*P*C)`` or ``(N, P*P*C)``. Without positional
    embeddings any token count is accepted (mega-patch lattices).
    """
    cfg, p = enc.config, enc.params
    rows = patch_rows if isinstance(patch_rows, Tensor) else Tensor(np.asarray(patch_rows, dtype=p["cls_token"].dtype))
    squeeze = rows.ndim == 2
    if squeeze:
        rows = rows.reshape(1, *rows.shape)
    if rows.ndim != 3 or rows.shape[-1] != p["patch_embed.weight"].shape[0]:
        raise DimensionError(f"patch rows {rows.shape} do not match embedding width {p['patch_embed.weight'].shape[0]}")
    b, n, _ = rows.shape
    z = rows @ p["patch_embed.weight"] + p["patch_embed.bias"]
    if cfg.use_class_token:
        cls = p["cls_token"].reshape(1, 1, cfg.dim) + Tensor(np.zeros((b, 1, cfg.dim), dtype=z.dtype))
        z = concat([cls, z], axis=1)
    if cfg.use_pos_embed:
        if n != cfg.grid.N:
            raise DimensionError(f"positional embeddings cover {cfg.grid.N} patches, got {n}")
        pos = p["pos_embed"] if cfg.use_class_token else p["pos_embed"][1:]
        z = z + pos
    return z[0] if squeeze else z


def attention(h: Tensor, p: Mapping[str, Tensor], heads: int, return_weights: bool = False):
    b, t, d = h.shape
    dh = d // heads
    qkv = (h @ p["attn.qkv.weight"] + p["attn.qkv.bias"]).reshape(b, t, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = softmax((q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh)), axis=-1)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    o = o @ p["attn.proj.weight"] + p["attn.proj.bias"]
    return (o, att) if return_weights else o


def encoder_block(z: Tensor, p: Mapping[str, Tensor], heads: int, return_attention: bool = False):
    squeeze = z.ndim == 2
    if squeeze:
        z = z.reshape(1, *z.shape)
    o, att = attention(layernorm(z, p["ln1.gamma"], p["ln1.beta"]), p, heads, return_weights=True)
    z = z + o
    h = layernorm(z, p["ln2.gamma"], p["ln2.beta"])
    z = z + gelu(h @ p["mlp.fc1.weight"] + p["mlp.fc1.bias"]) @ p["mlp.fc2.weight"] + p["mlp.fc2.bias"]
    if squeeze:
        z, att = z[0], att[0]
    return (z, att) if return_attention else z


def forward(x, enc: ViTEncoder) -> tuple[Tensor, Tensor]:
    """Run the encoder on images ``(B, C, H, W)`` or patch rows ``(B, N, P*P*C)``.

    Returns ``(patch_tokens, class_logits)``: final-LN patch tokens ``(B, N, D)``
    and logits ``(B, num_classes)`` read from the class token (mean of patch
    tokens when the class token is disabled). Unbatched input gives unbatched
    output.
    """
    cfg, p = enc.config, enc.params
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim in (3, 4) and data.shape[-3:] == (cfg.channels, cfg.img_h, cfg.img_w):
        x = patchify(data, cfg.grid)
    squeeze = (x.ndim if isinstance(x, Tensor) else np.ndim(x)) == 2
    z = embed(x, enc)
    if squeeze:
        z = z.reshape(1, *z.shape)
    for i in range(cfg.depth):
        z = encoder_block(z, enc.block_params(i), cfg.heads)
    z = layernorm(z, p["norm.gamma"], p["norm.beta"])
    if cfg.use_class_token:
        pooled, tokens = z[:, 0], z[:, 1:]
    else:
        tokens = z
        pooled = z.mean(axis=1)
    logits = pooled @ p["head.weight"] + p["head.bias"]
    if squeeze:
        return tokens[0], logits[0]
    return tokens, logits


def param_count(enc: ViTEncoder | Mapping[str, Tensor]) -> int:
    params = enc.params if isinstance(enc, ViTEncoder) else enc
    return int(sum(t.size for t in params.values()))


# -- checkpoint I/O --------------------------------------------------------

MAGIC = b"RLVT"
VERSION = 1
_INT_FIELDS = ("img_h", "img_w", "patch_size", "channels", "depth", "heads", "dim", "mlp_ratio", "num_classes")
_FLAG_FIELDS = ("use_pos_embed", "use_class_token")
_CONFIG_STRUCT = struct.Struct("<" + "I" * len(_INT_FIELDS) + "B" * len(_FLAG_FIELDS))


def save_checkpoint(path, config: ModelConfig, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write ``RLVT`` checkpoint.

    Layout (little-endian): magic, u16 version, config (u32 per integer field
    then u8 per flag, in ``ModelConfig`` field order), u32 tensor count, then
    per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims, float32 values.
    """
    cfg = asdict(config)
    parts = [MAGIC, struct.pack("<H", VERSION),
             _CONFIG_STRUCT.pack(*(cfg[k] for k in _INT_FIELDS), *(int(cfg[k]) for k in _FLAG_FIELDS)),
             struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from e
    if buf[:4] != MAGIC:
        raise LoadError(f"{path} is not an RLVT checkpoint")
    try:
        (version,) = struct.unpack_from("<H", buf, 4)
        if version != VERSION:
            raise LoadError(f"unsupported checkpoint version {version}")
        off = 6
        vals = _CONFIG_STRUCT.unpack_from(buf, off)
        off += _CONFIG_STRUCT.size
        kw = dict(zip(_INT_FIELDS, vals[: len(_INT_FIELDS)]))
        kw.update({k: bool(v) for k, v in zip(_FLAG_FIELDS, vals[len(_INT_FIELDS):])})
        config = ModelConfig(**kw)
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off: off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if off + 4 * n > len(buf):
                raise LoadError(f"checkpoint truncated in tensor {name!r}")
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float32)
            off += 4 * n
    except struct.error as e:
        raise LoadError(f"checkpoint {path} is truncated: {e}") from e
    return config, tensors


def encoder_from_tensors(config: ModelConfig, tensors: Mapping[str, np.ndarray], dtype=np.float32) -> ViTEncoder:
    """Build an encoder from checkpoint tensors; names and shapes must match ``config`` exactly."""
    expected = init_params(config, np.random.default_rng(0), dtype)
    params = {}
    for name, t in expected.items():
        if name not in tensors:
            raise LoadError(f"checkpoint lacks tensor {name!r}")
        if tensors[name].shape != t.shape:
            raise LoadError(f"tensor {name!r} has shape {tensors[name].shape}, expected {t.shape}")
        params[name] = Tensor(np.array(tensors[name], dtype=dtype), requires_grad=True)
    return ViTEncoder(config, params=params)


def config_shape_matches(a: ModelConfig, b: ModelConfig) -> bool:
    """True when weights of ``a`` can be loaded into ``b`` (flags may differ)."""
    return all(getattr(a, f.name) == getattr(b, f.name) for f in fields(ModelConfig) if f.name not in ("use_pos_embed",))
