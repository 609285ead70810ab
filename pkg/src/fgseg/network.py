"""Tiny U-shaped segmentation network with an optional force-guided neck.

One 3x3 conv + ReLU per encoder stage followed by 2x2 max pooling; a
bottleneck conv; a decoder of learned 2x upsampling, skip concatenation and a
3x3 conv per stage; a 1x1 classification head. A 1x1 adapter conv equalizes
the decoder's input width across the neck/no-neck variants so their decoders
are directly comparable.

All frames pass through the same encoder parameters. Skip connections feed
the decoder from the current frame's encoder stages only; key frames reach
the decoder exclusively through the neck.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .forcekeys import DynamicWeights
from .neck import NeckConfig, init_neck_params, neck_forward
from .tensor import Tensor


@dataclass
class UNetTinyConfig:
    in_channels: int = 1
    base_channels: int = 16
    depth: int = 3
    num_classes: int = 3
    image_size: int = 64

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.base_channels < 8:
            raise ValueError("base_channels must be >= 8")
        if self.image_size % (1 << self.depth) != 0:
            raise ValueError("image size must be divisible by 2**depth")

    @property
    def stage_channels(self) -> list[int]:
        return [self.base_channels << j for j in range(self.depth)]

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels << self.depth


def default_neck_config(cfg: UNetTinyConfig) -> NeckConfig:
    return NeckConfig(c_in=cfg.bottleneck_channels)


def init_params(cfg: UNetTinyConfig, neck_cfg: NeckConfig | None, seed) -> dict:
    """Initialize named parameters. The backbone, the adapter and the neck
    draw from separate seed-derived streams so that variants sharing a seed
    share every common tensor bitwise."""
    rng_backbone = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    rng_neck = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    rng_adapter = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))

    def kaiming(rng, shape, fan_in):
        return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in),
                      requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n), requires_grad=True)

    ch = cfg.stage_channels
    cb = cfg.bottleneck_channels
    params: dict[str, Tensor] = {}
    prev = cfg.in_channels
    for j in range(cfg.depth):
        params[f"enc{j}.weight"] = kaiming(rng_backbone, (ch[j], prev, 3, 3), prev * 9)
        params[f"enc{j}.bias"] = zeros(ch[j])
        prev = ch[j]
    params["bott.weight"] = kaiming(rng_backbone, (cb, ch[-1], 3, 3), ch[-1] * 9)
    params["bott.bias"] = zeros(cb)

    up_in = cb
    for j in reversed(range(cfg.depth)):
        params[f"up{j}.weight"] = kaiming(rng_backbone, (up_in, ch[j], 2, 2), up_in * 4)
        params[f"up{j}.bias"] = zeros(ch[j])
        params[f"dec{j}.weight"] = kaiming(rng_backbone, (ch[j], 2 * ch[j], 3, 3),
                                           2 * ch[j] * 9)
        params[f"dec{j}.bias"] = zeros(ch[j])
        up_in = ch[j]
    params["head.weight"] = kaiming(rng_backbone, (cfg.num_classes, ch[0], 1, 1), ch[0])
    params["head.bias"] = zeros(cfg.num_classes)

    dec_in = neck_cfg.fused_channels if neck_cfg is not None else cb
    params["adapter.weight"] = kaiming(rng_adapter, (cb, dec_in, 1, 1), dec_in)
    params["adapter.bias"] = zeros(cb)

    if neck_cfg is not None:
        params.update(init_neck_params(neck_cfg, rng_neck))
    return params


def count_params(params: dict) -> int:
    return sum(p.data.size for p in params.values())


def _to_float01(img: np.ndarray) -> np.ndarray:
    """uint8 grayscale scales to [0, 1]; float inputs pass through."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def image_to_tensor(img: np.ndarray) -> Tensor:
    """Grayscale (H, W) image or (T, H, W) stack to a float NCHW tensor."""
    arr = _to_float01(img)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return Tensor(arr)


def encoder_forward(x: Tensor, params: dict, cfg: UNetTinyConfig):
    """Returns (bottleneck, per-stage skip features). Each stage halves the
    spatial extent after its skip is recorded."""
    if x.shape[1] != cfg.in_channels:
        raise T.ShapeError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
    if x.shape[2] % (1 << cfg.depth) or x.shape[3] % (1 << cfg.depth):
        raise T.ShapeError(f"spatial extent {x.shape[2:]} not divisible by 2**depth")
    h = x
    skips = []
    for j in range(cfg.depth):
        h = T.relu(T.conv2d(h, params[f"enc{j}.weight"], params[f"enc{j}.bias"],
                            stride=1, padding=1))
        skips.append(h)
        h = T.maxpool2(h)
    bott = T.relu(T.conv2d(h, params["bott.weight"], params["bott.bias"],
                           stride=1, padding=1))
    return bott, skips


def decoder_forward(feat: Tensor, skips: list, params: dict, cfg: UNetTinyConfig) -> Tensor:
    """Adapter conv, then upsample / skip-concat / conv per stage, then the
    classification head."""
    h = T.relu(T.conv2d(feat, params["adapter.weight"], params["adapter.bias"],
                        stride=1, padding=0))
    for j in reversed(range(cfg.depth)):
        h = T.conv_transpose2d(h, params[f"up{j}.weight"], params[f"up{j}.bias"])
        h = T.concat_channels(h, skips[j])
        h = T.relu(T.conv2d(h, params[f"dec{j}.weight"], params[f"dec{j}.bias"],
                            stride=1, padding=1))
    return T.conv2d(h, params["head.weight"], params["head.bias"], stride=1, padding=0)


def forward_baseline(image: Tensor, params: dict, cfg: UNetTinyConfig) -> Tensor:
    """Plain encoder-decoder pass; (N, 1, H, W) in, (N, classes, H, W) out."""
    bott, skips = encoder_forward(image, params, cfg)
    return decoder_forward(bott, skips, params, cfg)


def forward_fg_batch(currents, keys_min, keys_max, weights, params: dict,
                     cfg: UNetTinyConfig, neck_cfg: NeckConfig,
                     neck_fn=None, neck_overrides=None) -> Tensor:
    """Force-guided forward over a batch.

    ``currents``/``keys_min``/``keys_max`` are (B, H, W) uint8 stacks (or
    float arrays in [0, 1]); ``weights`` is one DynamicWeights per sample.
    All 3B frames run through the shared encoder in a single pass; the neck
    runs per sample on the bottleneck slices; skips come from the current
    frames only. ``neck_fn`` replaces the real neck (testing hook);
    ``neck_overrides`` injects precomputed fused features.
    """
    from .neck import apply_weights, attention_map, encode_kv, fuse, retrieve

    b = len(weights)
    stack = np.empty((3 * b, currents.shape[-2], currents.shape[-1]), dtype=np.float64)
    for i, (c, kmin, kmax) in enumerate(zip(currents, keys_min, keys_max)):
        stack[3 * i + 0] = _to_float01(c)
        stack[3 * i + 1] = _to_float01(kmin)
        stack[3 * i + 2] = _to_float01(kmax)
    bott, skips = encoder_forward(Tensor(stack[:, None]), params, cfg)

    use_real_neck = neck_fn is None and (
        neck_overrides is None or any(o is None for o in neck_overrides))
    if use_real_neck:
        # one encoding pass over all 3B frames; attention stays per sample
        keys, values = encode_kv(bott, params)
    h_b, w_b = bott.shape[2], bott.shape[3]

    fused_parts = []
    for i in range(b):
        if neck_overrides is not None and neck_overrides[i] is not None:
            fused_parts.append(neck_overrides[i])
            continue
        if neck_fn is not None:
            cur = T.take_batch(bott, [3 * i])
            kmin = T.take_batch(bott, [3 * i + 1])
            kmax = T.take_batch(bott, [3 * i + 2])
            fused_parts.append(neck_fn(cur, kmin, kmax, weights[i]))
            continue
        d_k = T.take_batch(keys, [3 * i + 1, 3 * i + 2])
        d_v = T.take_batch(values, [3 * i + 1, 3 * i + 2])
        e_k = T.reshape(T.take_batch(keys, [3 * i]), (neck_cfg.c_k, h_b, w_b))
        e_v = T.reshape(T.take_batch(values, [3 * i]), (neck_cfg.c_v, h_b, w_b))
        d_v_hat = apply_weights(d_v, weights[i])
        s = attention_map(d_k, e_k, neck_cfg.softmax_axis)
        d_tilde = retrieve(s, d_v_hat)
        fused_parts.append(T.reshape(fuse(d_tilde, e_v),
                                     (1, neck_cfg.fused_channels, h_b, w_b)))
    fused = fused_parts[0] if b == 1 else T.concat_n(fused_parts, axis=0)
    cur_idx = [3 * i for i in range(b)]
    cur_skips = [T.take_batch(s, cur_idx) for s in skips]
    return decoder_forward(fused, cur_skips, params, cfg)


def forward_fg(sample, params: dict, cfg: UNetTinyConfig, neck_cfg: NeckConfig,
               weights: DynamicWeights | None = None, neck_fn=None,
               neck_override=None) -> Tensor:
    """Single-sample force-guided forward; returns (classes, H, W) logits.

    Weights default to the force-based dynamic pair computed from the
    sample's recorded magnitudes.
    """
    from .forcekeys import dynamic_weights

    if weights is None:
        weights = dynamic_weights(sample.f_cur, sample.f_min, sample.f_max)
    logits = forward_fg_batch(
        sample.current[None], sample.key_min[None], sample.key_max[None],
        [weights], params, cfg, neck_cfg, neck_fn=neck_fn,
        neck_overrides=None if neck_override is None else [neck_override],
    )
    return T.reshape(logits, logits.shape[1:])


def weighted_ce_loss(logits: Tensor, mask: np.ndarray, class_weights) -> Tensor:
    """Weighted cross-entropy: sum over pixels of w[y] * (-log softmax(z)[y]),
    normalized by the sum of the applied weights. Batched input averages the
    per-sample losses."""
    w = np.asarray(class_weights, dtype=np.float64)
    if logits.data.ndim == 3:
        lg = T.reshape(logits, (1,) + logits.shape)
        masks = np.asarray(mask)[None]
    elif logits.data.ndim == 4:
        lg = logits
        masks = np.asarray(mask)
        if masks.ndim == 2:
            masks = masks[None]
    else:
        raise T.ShapeError(f"logits must be CHW or NCHW, got {logits.shape}")
    n, c = lg.shape[0], lg.shape[1]
    if w.shape != (c,):
        raise ValueError(f"need {c} class weights, got {w.shape}")
    if masks.shape != (n,) + lg.shape[2:]:
        raise T.ShapeError(f"mask shape {masks.shape} does not match logits {lg.shape}")
    if masks.min() < 0 or masks.max() >= c:
        raise ValueError("mask contains labels outside [0, num_classes)")

    onehot = (masks[:, None] == np.arange(c).reshape(1, c, 1, 1))
    coeff = onehot * w.reshape(1, c, 1, 1)
    per_sample = coeff.sum(axis=(1, 2, 3), keepdims=True)  # sum of applied weights
    coeff = -coeff / (per_sample * n)
    return T.sum_all(T.mul(T.log_softmax(lg, axis=1), Tensor(coeff)))


def predict_mask(logits) -> np.ndarray:
    """Per-pixel argmax over classes; ties resolve to the lower class index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if arr.ndim == 3:
        return arr.argmax(axis=0).astype(np.uint8)
    if arr.ndim == 4:
        return arr.argmax(axis=1).astype(np.uint8)
    raise T.ShapeError(f"logits must be CHW or NCHW, got {arr.shape}")
