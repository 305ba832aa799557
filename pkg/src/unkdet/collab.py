"""Collaborative tuning: an auxiliary target-domain encoder plus cross-domain
attention layers threaded through the decoder.

The target encoder distills the patch map into target-flavored query features:
top-k rows by activation magnitude, rank-r reconstruction, cross-attention
against the object queries, and an MLP.  The reconstruction branch is held
constant under differentiation (the SVD has no recorded pullback); gradients
reach the attention and MLP weights.

Collaborative layers mix student and target features (one joint softmax over
both key halves by default) and feed the result into the next decoder layer
as extra self-attention key/value rows, leaving the query count unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import instrument
from .errors import ConfigError, ShapeError
from .linalg import topk_indices, truncated_reconstruct
from .model import (
    DetectorConfig,
    mlp_block,
    backbone,
    decode_plain,
    decoder_layer,
    encode,
    heads,
)


def activation_magnitude(feature_map) -> np.ndarray:
    """Per-position mean over channels; plain vector of length h*w."""
    values = np.asarray(ad.value_of(feature_map), dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"feature map must be 2-D, got {values.ndim}-D")
    return values.mean(axis=1)


def target_encode(feature_map, q_obj, params, top_k: int, top_r: int):
    """Target-domain query features (N_q x D) from a patch map (h*w x C).

    The selected rows and their rank-r reconstruction are computed on plain
    values and enter the attention as constants.
    """
    instrument.bump("collab.target_encode")
    values = np.asarray(ad.value_of(feature_map), dtype=np.float64)
    picked = values[topk_indices(activation_magnitude(values), top_k)]
    recon = truncated_reconstruct(picked, top_r)
    dim = ad.value_of(q_obj).shape[1]
    q = q_obj @ params["tgt.w_q"]
    k = recon @ params["tgt.w_k"]
    v = recon @ params["tgt.w_v"]
    context = ad.softmax_rows((q @ k.T) * (1.0 / np.sqrt(dim))) @ v
    return mlp_block(context, params, "tgt.mlp")


def cross_domain_attention(f_s, f_t, params, prefix: str, joint_softmax: bool = True):
    """Attend student queries over stacked student and target features.

    Queries come from ``f_s`` alone; keys and values from both halves.  With
    ``joint_softmax`` one distribution spans all 2*N_q keys; otherwise each
    half is normalized separately and the two attended values are averaged.
    Scores are plain dot products, no width scaling.
    """
    instrument.bump("collab.cross_domain_attention")
    sv, tv = ad.value_of(f_s), ad.value_of(f_t)
    if sv.shape != tv.shape:
        raise ShapeError(f"feature shapes differ: {sv.shape} vs {tv.shape}")
    w_q, w_k, w_v = (params[f"{prefix}.{n}"] for n in ("w_q", "w_k", "w_v"))
    q = f_s @ w_q.T
    if joint_softmax:
        both = ad.concat_rows(f_s, f_t)
        k = both @ w_k.T
        v = both @ w_v.T
        return ad.softmax_rows(q @ k.T) @ v
    out_s = ad.softmax_rows(q @ (f_s @ w_k.T).T) @ (f_s @ w_v.T)
    out_t = ad.softmax_rows(q @ (f_t @ w_k.T).T) @ (f_t @ w_v.T)
    return (out_s + out_t) * 0.5


def collab_layer(f_s, f_t_prev, params, config: DetectorConfig, index: int):
    """One propagation step: f_t^l = f_t^{l-1} + MLP(attend(f_s^l, f_t^{l-1}))."""
    attended = cross_domain_attention(
        f_s, f_t_prev, params, f"collab.{index}.attn", config.joint_softmax
    )
    return f_t_prev + mlp_block(attended, params, f"collab.{index}.mlp")


def decode_with_collab(seed, f_t0, tokens, params, config: DetectorConfig,
                       num_collab: int | None = None):
    """Decoder stack with collaborative prefixes on layers 2..L+1.

    The first layer always runs plain; for layers l = 1..L the target
    features are advanced by one collab layer and injected as extra
    key/value rows.  L = 0 reproduces the plain decode exactly.
    """
    L = config.num_collab if num_collab is None else num_collab
    if L >= config.num_decoder_layers:
        raise ConfigError("collab layer count must stay below decoder depth")
    instrument.bump("collab.decode")
    x = decoder_layer(seed, tokens, params, config, 0)
    f_t = f_t0
    for layer in range(1, config.num_decoder_layers):
        if layer <= L:
            f_t = collab_layer(x, f_t, params, config, layer - 1)
            x = decoder_layer(x, tokens, params, config, layer, prefix_rows=f_t)
        else:
            x = decoder_layer(x, tokens, params, config, layer)
    return x


@dataclass
class ForwardResult:
    """Arrays (or nodes, when taped) produced by one full pass."""

    tokens: object     # encoded patch map, h*w x C
    features: object   # decoded query features, N_q x D
    logits: object     # N_q x (K+1)
    boxes: object      # N_q x 4, all in (0,1)


def forward(image, params, config: DetectorConfig, use_collab: bool = True,
            codes: np.ndarray | None = None) -> ForwardResult:
    """Image to proposals, with or without the collaborative branch."""
    fmap = backbone(image, params, config)
    tokens, seed = encode(fmap, params, config, codes)
    if use_collab and config.num_collab > 0:
        f_t0 = target_encode(fmap, params["queries"], params, config.top_k, config.top_r)
        features = decode_with_collab(seed, f_t0, tokens, params, config)
    else:
        features = decode_plain(seed, tokens, params, config)
    logits, boxes = heads(features, params)
    return ForwardResult(tokens=tokens, features=features, logits=logits, boxes=boxes)
