"""Toy set-prediction detector: patch backbone, encoder, query decoder, heads.

Parameters live in a flat ``{name: float64 array}`` dict with a fixed
insertion order (serialization and the moving-average update rely on it).
Every forward helper accepts either plain arrays or autodiff nodes, so the
same code serves training and inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class DetectorConfig:
    """Architecture hyperparameters with toy-scale defaults."""

    image_size: int = 64
    patch: int = 8
    in_channels: int = 3
    channels: int = 32          # patch token width C
    dim: int = 32               # query width D
    num_queries: int = 16
    num_encoder_layers: int = 2
    num_decoder_layers: int = 6
    num_known: int = 3          # known classes 1..K; index K+1 is the unknown class
    num_collab: int = 3         # collaborative layers L, feeding decoders 2..L+1
    top_k: int = 50
    top_r: int = 5
    joint_softmax: bool = True  # cross-domain attention: one softmax over both halves

    def __post_init__(self):
        if self.image_size % self.patch != 0:
            raise ConfigError("image_size must be a multiple of patch")
        for field in ("image_size", "patch", "in_channels", "channels", "dim",
                      "num_queries", "num_encoder_layers", "num_decoder_layers",
                      "num_known", "top_k", "top_r"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive")
        if self.num_collab < 0:
            raise ConfigError("num_collab must be non-negative")
        if self.num_decoder_layers < self.num_collab + 1:
            raise ConfigError("need num_decoder_layers >= num_collab + 1 "
                              "(collaborative layers start after the first decoder)")
        if self.top_k > self.tokens:
            raise ConfigError("top_k cannot exceed the patch token count")
        if self.top_r > min(self.top_k, self.channels):
            raise ConfigError("top_r cannot exceed min(top_k, channels)")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    @property
    def num_classes(self) -> int:
        """Known classes plus the unknown slot; no background class."""
        return self.num_known + 1


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, normalized center format on the unit canvas."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class Proposal:
    """One decoded object hypothesis."""

    feature: np.ndarray   # D-vector
    logits: np.ndarray    # K+1 per-class scores, pre-sigmoid
    box: Box


COLLAB_PREFIXES = ("collab.", "tgt.")


def is_collab_tensor(name: str) -> bool:
    """Tensors used only by the collaborative decode path."""
    return name.startswith(COLLAB_PREFIXES)


def param_shapes(config: DetectorConfig, include_collab: bool = True,
                 ) -> dict[str, tuple[int, ...]]:
    """Canonical tensor schema; dict order is the serialization order."""
    c, d = config.channels, config.dim
    shapes: dict[str, tuple[int, ...]] = {
        "backbone.w": (config.patch * config.patch * config.in_channels, c),
        "backbone.b": (1, c),
    }
    for i in range(config.num_encoder_layers):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            shapes[f"enc.{i}.attn.{name}"] = (c, c)
        shapes[f"enc.{i}.mlp.w1"] = (c, 2 * c)
        shapes[f"enc.{i}.mlp.b1"] = (1, 2 * c)
        shapes[f"enc.{i}.mlp.w2"] = (2 * c, c)
        shapes[f"enc.{i}.mlp.b2"] = (1, c)
    shapes["queries"] = (config.num_queries, d)
    shapes["pool.w_q"] = (d, d)
    shapes["pool.w_k"] = (c, d)
    shapes["pool.w_v"] = (c, d)
    shapes["pool.w_o"] = (d, d)
    for i in range(config.num_decoder_layers):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            shapes[f"dec.{i}.self.{name}"] = (d, d)
        shapes[f"dec.{i}.cross.w_q"] = (d, d)
        shapes[f"dec.{i}.cross.w_k"] = (c, d)
        shapes[f"dec.{i}.cross.w_v"] = (c, d)
        shapes[f"dec.{i}.cross.w_o"] = (d, d)
        shapes[f"dec.{i}.mlp.w1"] = (d, 2 * d)
        shapes[f"dec.{i}.mlp.b1"] = (1, 2 * d)
        shapes[f"dec.{i}.mlp.w2"] = (2 * d, d)
        shapes[f"dec.{i}.mlp.b2"] = (1, d)
    for i in range(config.num_collab):
        for name in ("w_q", "w_k", "w_v"):
            shapes[f"collab.{i}.attn.{name}"] = (d, d)
        shapes[f"collab.{i}.mlp.w1"] = (d, d)
        shapes[f"collab.{i}.mlp.b1"] = (1, d)
        shapes[f"collab.{i}.mlp.w2"] = (d, d)
        shapes[f"collab.{i}.mlp.b2"] = (1, d)
    # auxiliary target encoder: attention over reconstructed rows, then MLP C->D->D
    shapes["tgt.w_q"] = (d, d)
    shapes["tgt.w_k"] = (c, d)
    shapes["tgt.w_v"] = (c, c)
    shapes["tgt.mlp.w1"] = (c, d)
    shapes["tgt.mlp.b1"] = (1, d)
    shapes["tgt.mlp.w2"] = (d, d)
    shapes["tgt.mlp.b2"] = (1, d)
    shapes["head.cls.w"] = (d, config.num_classes)
    shapes["head.cls.b"] = (1, config.num_classes)
    shapes["head.box.w"] = (d, 4)
    shapes["head.box.b"] = (1, 4)
    if not include_collab:
        shapes = {k: v for k, v in shapes.items() if not is_collab_tensor(k)}
    return shapes


def init_params(config: DetectorConfig, rng: np.random.Generator,
                include_collab: bool = True) -> dict[str, np.ndarray]:
    """Fan-in scaled gaussian weights, zero biases.

    Projections that feed residual sums are damped (the decoder stacks ~20
    residual branches, which would otherwise grow activations enough to
    saturate the sigmoid heads), and head weights start small so logits and
    box sigmoids begin in their linear regime.
    """
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config, include_collab).items():
        if name.endswith((".b", ".b1", ".b2")):
            params[name] = np.zeros(shape)
            continue
        tensor = rng.standard_normal(shape) / np.sqrt(shape[0])
        if name.endswith((".w_o", ".mlp.w2")):
            tensor *= 0.25
        elif name.startswith("head."):
            tensor *= 0.1
        params[name] = tensor
    return params


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: tensor.copy() for name, tensor in params.items()}


def positional_codes(config: DetectorConfig) -> np.ndarray:
    """Fixed sinusoidal grid codes, (tokens x channels), parameter-free.

    First half of the channels encodes the column, second half the row,
    each as interleaved sin/cos over a geometric frequency ladder.
    """
    g, c = config.grid, config.channels
    half = c // 2
    quarter = max(half // 2, 1)
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / quarter))
    rows, cols = np.divmod(np.arange(g * g), g)
    codes = np.zeros((g * g, c))
    codes[:, 0:2 * quarter:2] = np.sin(cols[:, None] * freqs)
    codes[:, 1:2 * quarter:2] = np.cos(cols[:, None] * freqs)
    codes[:, half:half + 2 * quarter:2] = np.sin(rows[:, None] * freqs)
    codes[:, half + 1:half + 2 * quarter:2] = np.cos(rows[:, None] * freqs)
    return codes


def mlp_block(x, params, prefix: str):
    hidden = ad.relu(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return hidden @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def attention_block(q_in, kv_in, params, prefix: str, scale: float):
    """Single-head scaled dot-product attention with output projection."""
    q = q_in @ params[f"{prefix}.w_q"]
    k = kv_in @ params[f"{prefix}.w_k"]
    v = kv_in @ params[f"{prefix}.w_v"]
    weights = ad.softmax_rows((q @ k.T) * scale)
    return (weights @ v) @ params[f"{prefix}.w_o"]


def backbone(image, params, config: DetectorConfig):
    """Non-overlapping patch flattening plus a learned projection.

    Returns a (tokens x channels) map; token order is row-major over the
    patch grid.
    """
    arr = np.asarray(image, dtype=np.float64)
    expected = (config.in_channels, config.image_size, config.image_size)
    if arr.shape != expected:
        raise ShapeError(f"image shape {arr.shape}, expected {expected}")
    g, p = config.grid, config.patch
    patches = (
        arr.reshape(config.in_channels, g, p, g, p)
        .transpose(1, 3, 0, 2, 4)
        .reshape(g * g, config.in_channels * p * p)
    )
    return patches @ params["backbone.w"] + params["backbone.b"]


def encode(feature_map, params, config: DetectorConfig, codes: np.ndarray | None = None):
    """Self-attention over patch tokens, then query pooling.

    Returns ``(tokens, seed)``: the encoded (tokens x C) map the decoder
    cross-attends to, and the (N_q x D) query seed.  ``codes`` defaults to
    the fixed sinusoidal grid; passing them explicitly lets callers permute
    tokens and codes together.
    """
    if codes is None:
        codes = positional_codes(config)
    x = feature_map + codes
    scale = 1.0 / np.sqrt(config.channels)
    for i in range(config.num_encoder_layers):
        x = x + attention_block(x, x, params, f"enc.{i}.attn", scale)
        x = x + mlp_block(x, params, f"enc.{i}.mlp")
    pool_scale = 1.0 / np.sqrt(config.dim)
    q = params["queries"] @ params["pool.w_q"]
    k = x @ params["pool.w_k"]
    v = x @ params["pool.w_v"]
    pooled = (ad.softmax_rows((q @ k.T) * pool_scale) @ v) @ params["pool.w_o"]
    seed = params["queries"] + pooled
    return x, seed


def decoder_layer(queries, tokens, params, config: DetectorConfig, index: int,
                  prefix_rows=None):
    """One decoder block: query self-attention, cross-attention, MLP.

    ``prefix_rows`` (if given) are injected as extra key/value rows in the
    self-attention; the query set is untouched so the output stays N_q x D.
    """
    scale = 1.0 / np.sqrt(config.dim)
    kv = queries if prefix_rows is None else ad.concat_rows(queries, prefix_rows)
    x = queries + attention_block(queries, kv, params, f"dec.{index}.self", scale)
    x = x + attention_block(x, tokens, params, f"dec.{index}.cross", scale)
    return x + mlp_block(x, params, f"dec.{index}.mlp")


def decode_plain(seed, tokens, params, config: DetectorConfig):
    """Run all decoder layers without collaborative prefixes."""
    x = seed
    for i in range(config.num_decoder_layers):
        x = decoder_layer(x, tokens, params, config, i)
    return x


def heads(features, params):
    """Per-query class logits and sigmoid-bounded (cx, cy, w, h) boxes."""
    logits = features @ params["head.cls.w"] + params["head.cls.b"]
    boxes = ad.sigmoid(features @ params["head.box.w"] + params["head.box.b"])
    return logits, boxes


def make_proposals(features, logits, boxes) -> list[Proposal]:
    """Bundle plain-array head outputs into per-query proposals."""
    features = ad.value_of(features)
    logits = ad.value_of(logits)
    boxes = ad.value_of(boxes)
    return [
        Proposal(
            feature=features[i].copy(),
            logits=logits[i].copy(),
            box=Box(*boxes[i]),
        )
        for i in range(features.shape[0])
    ]
