"""Force-guided attention between the encoder and the decoder.

The two key frames' encoder outputs are squeezed into key/value features,
stacked into a two-slot memory, and scaled by the force-based weights. The
current frame's key feature queries the memory with dot-product attention;
the retrieved value is concatenated with the current frame's value feature
and handed to the decoder.

Attention normalization runs over the memory axis by default, which makes
retrieval a convex combination over memory positions. The alternative
(normalizing over current-frame positions) is selectable via
``softmax_axis="current"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .forcekeys import DynamicWeights
from .tensor import Tensor


@dataclass
class NeckConfig:
    c_in: int
    c_k: int = 0  # 0 picks c_in // 8
    c_v: int = 0  # 0 picks c_in // 2
    n_keyframes: int = 2
    softmax_axis: str = "memory"
    # init gain on the key encoding; larger values start the attention sharper
    # (scores grow with key magnitude), which speeds up retrieval learning
    key_init_gain: float = 3.0

    def __post_init__(self):
        if self.c_k == 0:
            self.c_k = max(1, self.c_in // 8)
        if self.c_v == 0:
            self.c_v = max(1, self.c_in // 2)
        if not self.c_k < self.c_in:
            raise ValueError("key channels must be smaller than input channels")
        if not self.c_v <= self.c_in:
            raise ValueError("value channels must not exceed input channels")
        if self.n_keyframes != 2:
            raise ValueError("memory holds exactly two key frames")
        if self.softmax_axis not in ("memory", "current"):
            raise ValueError("softmax_axis must be 'memory' or 'current'")

    @property
    def fused_channels(self) -> int:
        return 2 * self.c_v


def init_neck_params(cfg: NeckConfig, rng: np.random.Generator) -> dict:
    def kaiming(shape, fan_in):
        return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in),
                      requires_grad=True)

    key_w = kaiming((cfg.c_k, cfg.c_in, 1, 1), cfg.c_in)
    key_w.data *= cfg.key_init_gain
    return {
        "neck.key.weight": key_w,
        "neck.key.bias": Tensor(np.zeros(cfg.c_k), requires_grad=True),
        "neck.value.weight": kaiming((cfg.c_v, cfg.c_in, 3, 3), cfg.c_in * 9),
        "neck.value.bias": Tensor(np.zeros(cfg.c_v), requires_grad=True),
    }


def encode_kv(feature: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """Channel-reducing encoding layer: 1x1 conv for the key, 3x3 conv for
    the value. The same parameters serve key frames and the current frame."""
    key = T.conv2d(feature, params["neck.key.weight"], params["neck.key.bias"],
                   stride=1, padding=0)
    value = T.conv2d(feature, params["neck.value.weight"], params["neck.value.bias"],
                     stride=1, padding=1)
    return key, value


def apply_weights(d_v: Tensor, weights: DynamicWeights) -> Tensor:
    """Scale memory slot 0 (min-force frame) by w_min and slot 1 (max-force
    frame) by w_max."""
    if d_v.shape[0] != 2:
        raise T.ShapeError(f"memory value stack must have 2 slots, got {d_v.shape[0]}")
    return T.scale_slices(d_v, [weights.w_min, weights.w_max])


def attention_map(d_k: Tensor, e_k: Tensor, softmax_axis: str = "memory") -> Tensor:
    """Dot-product attention scores between memory keys and current keys.

    d_k is (N, C_K, H, W), e_k is (C_K, H, W). Returns S of shape (N*M, M)
    with M = H*W; entry (i, j) softmax-normalizes exp(D_K^i . E_K^j) over the
    chosen axis (memory rows by default, so columns sum to 1).
    """
    n, c_k, h, w = d_k.shape
    if e_k.shape != (c_k, h, w):
        raise T.ShapeError(f"key shapes disagree: {d_k.shape} vs {e_k.shape}")
    m = h * w
    d_flat = T.reshape(T.transpose(d_k, (1, 0, 2, 3)), (c_k, n * m))
    e_flat = T.reshape(e_k, (c_k, m))
    scores = T.matmul(T.transpose(d_flat, (1, 0)), e_flat)  # (N*M, M)
    axis = 0 if softmax_axis == "memory" else 1
    return T.softmax(scores, axis=axis)


def retrieve(s: Tensor, weighted_d_v: Tensor) -> Tensor:
    """Read the memory: multiply the flattened value stack (C_V, N*M) with the
    attention map (N*M, M) and fold back to (C_V, H, W)."""
    n, c_v, h, w = weighted_d_v.shape
    m = h * w
    if s.shape != (n * m, m):
        raise T.ShapeError(f"attention shape {s.shape} does not match memory {weighted_d_v.shape}")
    v_flat = T.reshape(T.transpose(weighted_d_v, (1, 0, 2, 3)), (c_v, n * m))
    read = T.matmul(v_flat, s)  # (C_V, M)
    return T.reshape(read, (c_v, h, w))


def fuse(d_tilde_v: Tensor, e_v: Tensor) -> Tensor:
    """Concatenate the retrieved feature with the current value feature along
    channels, retrieved first."""
    if d_tilde_v.shape != e_v.shape:
        raise T.ShapeError(f"fuse shapes disagree: {d_tilde_v.shape} vs {e_v.shape}")
    return T.concat_channels(d_tilde_v, e_v)


def neck_forward(current_feature: Tensor, key_min_feature: Tensor,
                 key_max_feature: Tensor, weights: DynamicWeights,
                 params: dict, cfg: NeckConfig) -> Tensor:
    """Full neck pass over (1, C_in, H, W) encoder outputs; returns the fused
    feature (1, 2*C_V, H, W)."""
    e_k4, e_v4 = encode_kv(current_feature, params)
    k_min, v_min = encode_kv(key_min_feature, params)
    k_max, v_max = encode_kv(key_max_feature, params)
    d_k = T.concat_n([k_min, k_max], axis=0)  # (2, C_K, H, W)
    d_v = T.concat_n([v_min, v_max], axis=0)  # (2, C_V, H, W)
    d_v_hat = apply_weights(d_v, weights)
    _, c_k, h, w = d_k.shape
    s = attention_map(d_k, T.reshape(e_k4, (c_k, h, w)), cfg.softmax_axis)
    d_tilde = retrieve(s, d_v_hat)
    e_v = T.reshape(e_v4, (cfg.c_v, h, w))
    fused = fuse(d_tilde, e_v)
    return T.reshape(fused, (1, cfg.fused_channels, h, w))
