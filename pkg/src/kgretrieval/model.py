"""Dual-encoder model: patch-transformer image trunk, text trunk with
optional per-layer cross-attention onto image tokens, knowledge fusion,
and the pair-matching head.

Parameters live in a flat ``dict[str, Tensor]``; a second dict with the
same keys (minus the matching head and temperature) holds the momentum
copies used to build soft contrastive targets. All forward functions
accept batched inputs; spec-level single-sample wrappers squeeze batch
dimension 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .text import PAD_ID, merge_token_streams

FUSION_CROSS_ATTENTION = "cross_attention"
FUSION_CONCAT_ONLY = "concat_only"
FUSION_NO_KNOWLEDGE = "no_knowledge"
FUSION_MODES = (FUSION_CROSS_ATTENTION, FUSION_CONCAT_ONLY, FUSION_NO_KNOWLEDGE)

TAU_INIT = 0.07
MOMENTUM_COEFFICIENT = 0.995


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_proj: int = 32
    image_size: int = 32
    image_channels: int = 3
    patch_size: int = 8
    max_text_len: int = 32
    ffn_mult: int = 4
    fusion_mode: str = FUSION_CROSS_ATTENTION
    text_pooling: str = "cls"  # or "mean"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.text_pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling {self.text_pooling!r}")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.image_channels

    @property
    def d_ffn(self) -> int:
        return self.ffn_mult * self.d_model

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                raw = d[f.name]
                kwargs[f.name] = str(raw) if f.name in ("fusion_mode", "text_pooling") else int(raw)
        return cls(**kwargs)

    def with_fusion(self, mode: str) -> "EncoderConfig":
        return replace(self, fusion_mode=mode)


# -- parameter construction ----------------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def _linear(params: dict, rng, name: str, d_in: int, d_out: int) -> None:
    params[f"{name}.w"] = _xavier(rng, d_in, d_out)
    params[f"{name}.b"] = np.zeros(d_out)


def _attention_block(params: dict, rng, name: str, d: int) -> None:
    for proj in ("q", "k", "v", "o"):
        _linear(params, rng, f"{name}.w{proj}", d, d)


def _layer_norm_params(params: dict, name: str, d: int) -> None:
    params[f"{name}.g"] = np.ones(d)
    params[f"{name}.b"] = np.zeros(d)


def _trunk(params: dict, rng, prefix: str, cfg: EncoderConfig, with_cross: bool) -> None:
    d = cfg.d_model
    for layer in range(cfg.n_layers):
        base = f"{prefix}.blocks.{layer}"
        _layer_norm_params(params, f"{base}.ln_attn", d)
        _attention_block(params, rng, f"{base}.attn", d)
        if with_cross:
            _layer_norm_params(params, f"{base}.ln_cross", d)
            _attention_block(params, rng, f"{base}.cross", d)
        _layer_norm_params(params, f"{base}.ln_ffn", d)
        _linear(params, rng, f"{base}.ffn.fc1", d, cfg.d_ffn)
        _linear(params, rng, f"{base}.ffn.fc2", cfg.d_ffn, d)
    _layer_norm_params(params, f"{prefix}.ln_out", d)


def init_params(cfg: EncoderConfig, vocab_size: int, seed: int = 0) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
    """Build (online, momentum) parameter dicts.

    The momentum dict starts as an exact copy of the online weights it
    mirrors: both trunks, both projections and the fusion block, but not
    the matching head or the temperature.
    """
    rng = np.random.default_rng(seed)
    raw: dict[str, np.ndarray] = {}
    d = cfg.d_model

    raw["img.patch.w"] = _xavier(rng, cfg.patch_dim, d)
    raw["img.patch.b"] = np.zeros(d)
    raw["img.cls"] = rng.normal(0.0, 0.02, size=(1, d))
    raw["img.pos"] = rng.normal(0.0, 0.02, size=(cfg.n_patches + 1, d))
    _trunk(raw, rng, "img", cfg, with_cross=False)

    raw["txt.emb"] = rng.normal(0.0, 0.02, size=(vocab_size, d))
    raw["txt.pos"] = rng.normal(0.0, 0.02, size=(cfg.max_text_len, d))
    _trunk(raw, rng, "txt", cfg, with_cross=True)

    raw["fusion.w1"] = _xavier(rng, d, d)
    raw["fusion.w2"] = _xavier(rng, d, d)
    _linear(raw, rng, "fusion.reduce", 2 * d, d)
    _linear(raw, rng, "fusion.fc_text", d, cfg.d_proj)
    _linear(raw, rng, "proj.img", d, cfg.d_proj)
    _linear(raw, rng, "match.fc", d, 1)
    raw["log_tau"] = np.array(math.log(TAU_INIT))

    online = {name: Tensor(arr, requires_grad=True) for name, arr in raw.items()}
    momentum = {
        name: Tensor(arr.copy())
        for name, arr in raw.items()
        if not name.startswith("match.") and name != "log_tau"
    }
    return online, momentum


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


# -- attention and trunks --------------------------------------------------------


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, l, d = x.shape
    x = ad.reshape(x, (b, l, n_heads, d // n_heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b, l, h * dh))


def _multi_head_attention(
    params: dict[str, Tensor],
    name: str,
    queries: Tensor,
    keys_values: Tensor,
    n_heads: int,
    key_mask: np.ndarray | None,
) -> Tensor:
    """Standard multi-head attention; `key_mask` zeroes padded key columns."""
    q = ad.add(ad.matmul(queries, params[f"{name}.wq.w"]), params[f"{name}.wq.b"])
    k = ad.add(ad.matmul(keys_values, params[f"{name}.wk.w"]), params[f"{name}.wk.b"])
    v = ad.add(ad.matmul(keys_values, params[f"{name}.wv.w"]), params[f"{name}.wv.b"])
    q, k, v = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale)
    if key_mask is not None:
        # (B, S) -> additive -1e9 on padded keys, broadcast over heads/queries
        bias = (key_mask[:, None, None, :] - 1.0) * 1e9
        scores = ad.add(scores, bias)
    attn = ad.softmax(scores, axis=-1)
    out = _merge_heads(ad.matmul(attn, v))
    return ad.add(ad.matmul(out, params[f"{name}.wo.w"]), params[f"{name}.wo.b"])


def _ffn(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    h = ad.add(ad.matmul(x, params[f"{name}.fc1.w"]), params[f"{name}.fc1.b"])
    h = ad.gelu(h)
    return ad.add(ad.matmul(h, params[f"{name}.fc2.w"]), params[f"{name}.fc2.b"])


def _run_trunk(
    params: dict[str, Tensor],
    prefix: str,
    x: Tensor,
    cfg: EncoderConfig,
    self_mask: np.ndarray | None = None,
    cross_tokens: Tensor | None = None,
) -> Tensor:
    ln = lambda name, t: ad.layer_norm(t, params[f"{name}.g"], params[f"{name}.b"])
    for layer in range(cfg.n_layers):
        base = f"{prefix}.blocks.{layer}"
        h = ln(f"{base}.ln_attn", x)
        x = ad.add(x, _multi_head_attention(params, f"{base}.attn", h, h, cfg.n_heads, self_mask))
        if cross_tokens is not None:
            h = ln(f"{base}.ln_cross", x)
            x = ad.add(x, _multi_head_attention(params, f"{base}.cross", h, cross_tokens, cfg.n_heads, None))
        h = ln(f"{base}.ln_ffn", x)
        x = ad.add(x, _ffn(params, f"{base}.ffn", h))
    return ln(f"{prefix}.ln_out", x)


# -- image encoder ---------------------------------------------------------------


def patchify(pixels: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """(B, H, W, C) float images -> (B, n_patches, patch_dim) rows."""
    b, h, w, c = pixels.shape
    if (h, w, c) != (cfg.image_size, cfg.image_size, cfg.image_channels):
        raise ShapeMismatch(f"expected {cfg.image_size}x{cfg.image_size}x{cfg.image_channels} images")
    p = cfg.patch_size
    grid = h // p
    x = pixels.reshape(b, grid, p, grid, p, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, grid * grid, p * p * c)


def encode_images(pixels: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Returns (f_img (B, d_proj) unit rows, tokens (B, n_patches+1, d_model))."""
    patches = Tensor(patchify(np.asarray(pixels, dtype=np.float64), cfg))
    b = patches.shape[0]
    x = ad.add(ad.matmul(patches, params["img.patch.w"]), params["img.patch.b"])
    cls = ad.reshape(params["img.cls"], (1, 1, cfg.d_model))
    cls = ad.index_select(cls, np.zeros(b, dtype=np.intp), axis=0)
    x = ad.concat([cls, x], axis=1)
    x = ad.add(x, params["img.pos"])
    tokens = _run_trunk(params, "img", x, cfg)
    pooled = ad.getitem(tokens, (slice(None), 0))
    f_img = ad.l2_normalize(ad.add(ad.matmul(pooled, params["proj.img.w"]), params["proj.img.b"]))
    return f_img, tokens


def encode_image(pixels: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Single-image wrapper: (H, W, C) -> (f_img (d_proj,), tokens (T, d_model))."""
    f, tok = encode_images(np.asarray(pixels)[None], params, cfg)
    return ad.getitem(f, 0), ad.getitem(tok, 0)


# -- text encoder -----------------------------------------------------------------


def encode_texts(
    ids: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    image_tokens: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Returns (pooled (B, d_model), tokens (B, L, d_model)).

    PAD positions are masked out of self-attention and zeroed in the token
    output; in multimodal mode every layer cross-attends onto image tokens.
    """
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 2:
        raise ShapeMismatch("ids must be (batch, length)")
    if ids.shape[1] > cfg.max_text_len:
        raise ShapeMismatch(f"sequence longer than max_text_len={cfg.max_text_len}")
    mask = (ids != PAD_ID).astype(np.float64)  # (B, L)
    x = ad.embedding(params["txt.emb"], ids)
    x = ad.add(x, ad.getitem(params["txt.pos"], slice(0, ids.shape[1])))
    tokens = _run_trunk(params, "txt", x, cfg, self_mask=mask, cross_tokens=image_tokens)
    tokens = ad.mul(tokens, mask[:, :, None])
    if cfg.text_pooling == "cls" or image_tokens is not None:
        pooled = ad.getitem(tokens, (slice(None), 0))
    else:
        counts = mask.sum(axis=1, keepdims=True)
        pooled = ad.mul(ad.tsum(tokens, axis=1), 1.0 / counts)
    return pooled, tokens


def encode_text(
    ids, params: dict[str, Tensor], cfg: EncoderConfig, image_tokens: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Single-sequence wrapper around encode_texts."""
    pooled, tokens = encode_texts(np.asarray(ids)[None], params, cfg, image_tokens)
    return ad.getitem(pooled, 0), ad.getitem(tokens, 0)


# -- knowledge fusion --------------------------------------------------------------


def cross_attention(f1: Tensor, f2: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Single-head cross-attention: softmax(f1 W1 (f2 W2)^T / sqrt(d)) f2 W2.

    Accepts (L, d) sequences or (B, L, d) batches; keys and values share
    the f2 W2 projection.
    """
    q = ad.matmul(f1, w1)
    k = ad.matmul(f2, w2)
    axes = (0, 2, 1) if q.ndim == 3 else (1, 0)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, axes)), 1.0 / math.sqrt(w1.shape[-1]))
    return ad.matmul(ad.softmax(scores, axis=-1), k)


def fuse_text_knowledge(
    f_cap: Tensor, f_kwl: Tensor, params: dict[str, Tensor], cfg: EncoderConfig
) -> Tensor:
    """Pooled caption + knowledge features -> unit text feature (B, d_proj).

    Cross-attention mode runs the two-row sequences in both argument
    orders, concatenates the attended rows, reduces back to d_model and
    projects; the no-knowledge mode projects the caption feature alone.
    """
    if cfg.fusion_mode == FUSION_NO_KNOWLEDGE:
        out = f_cap
    else:
        b, d = f_cap.shape
        cap = ad.reshape(f_cap, (b, 1, d))
        kwl = ad.reshape(f_kwl, (b, 1, d))
        seq_a = ad.concat([cap, kwl], axis=1)
        seq_b = ad.concat([kwl, cap], axis=1)
        attended = cross_attention(seq_a, seq_b, params["fusion.w1"], params["fusion.w2"])
        flat = ad.reshape(attended, (b, 2 * d))
        out = ad.add(ad.matmul(flat, params["fusion.reduce.w"]), params["fusion.reduce.b"])
    out = ad.add(ad.matmul(out, params["fusion.fc_text.w"]), params["fusion.fc_text.b"])
    return ad.l2_normalize(out)


def text_features(
    caption_ids: np.ndarray,
    knowledge_ids: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
) -> Tensor:
    """Batched caption/knowledge token ids -> unit text features (B, d_proj)."""
    if cfg.fusion_mode == FUSION_CONCAT_ONLY:
        merged = np.stack(
            [merge_token_streams(c, k, cfg.max_text_len) for c, k in zip(caption_ids, knowledge_ids)]
        )
        pooled, _ = encode_texts(merged, params, cfg)
        out = ad.add(ad.matmul(pooled, params["fusion.fc_text.w"]), params["fusion.fc_text.b"])
        return ad.l2_normalize(out)
    f_cap, _ = encode_texts(np.asarray(caption_ids), params, cfg)
    if cfg.fusion_mode == FUSION_NO_KNOWLEDGE:
        return fuse_text_knowledge(f_cap, f_cap, params, cfg)
    f_kwl, _ = encode_texts(np.asarray(knowledge_ids), params, cfg)
    return fuse_text_knowledge(f_cap, f_kwl, params, cfg)


# -- multimodal encoder and matching head --------------------------------------------


def encode_multimodal_batch(
    caption_ids: np.ndarray,
    knowledge_ids: np.ndarray,
    image_tokens: Tensor,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
) -> Tensor:
    """Joint text-image feature (B, d_model) from merged token streams."""
    merged = np.stack(
        [merge_token_streams(c, k, cfg.max_text_len) for c, k in zip(caption_ids, knowledge_ids)]
    )
    pooled, _ = encode_texts(merged, params, cfg, image_tokens=image_tokens)
    return pooled


def encode_multimodal(
    caption_ids, knowledge_ids, image_tokens: Tensor, params: dict[str, Tensor], cfg: EncoderConfig
) -> Tensor:
    """Single-sample wrapper: image_tokens is (T, d_model) from encode_image."""
    b_tokens = ad.reshape(image_tokens, (1,) + image_tokens.shape)
    out = encode_multimodal_batch(
        np.asarray(caption_ids)[None], np.asarray(knowledge_ids)[None], b_tokens, params, cfg
    )
    return ad.getitem(out, 0)


def match_head(f_multi: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Probability that the pair behind f_multi is aligned; (B,) or scalar."""
    single = f_multi.ndim == 1
    x = ad.reshape(f_multi, (1, -1)) if single else f_multi
    logits = ad.add(ad.matmul(x, params["match.fc.w"]), params["match.fc.b"])
    probs = ad.sigmoid(ad.reshape(logits, (-1,)))
    return ad.getitem(probs, 0) if single else probs


def tau(params: dict[str, Tensor]) -> Tensor:
    """Learnable temperature, always positive (stored as log tau)."""
    return ad.exp(params["log_tau"])


# -- momentum copies ---------------------------------------------------------------


def momentum_update(
    online: dict[str, Tensor], momentum: dict[str, Tensor], coefficient: float = MOMENTUM_COEFFICIENT
) -> None:
    """copy <- coefficient * copy + (1 - coefficient) * online, no gradients."""
    if not 0.0 <= coefficient <= 1.0:
        raise ValueError("coefficient must be in [0, 1]")
    for name, copy in momentum.items():
        src = online[name].data
        if src.shape != copy.data.shape:
            raise ShapeMismatch(f"momentum shape mismatch for {name!r}")
        copy.data *= coefficient
        copy.data += (1.0 - coefficient) * src
