"""Loading, aligning, and augmenting paired force-trace and frame data.

On-disk layout of a dataset root:

    <root>/manifest.txt                key-value lines (see read_manifest)
    <root>/<video>/force.csv           one row per frame: fx,fy,fz,mx,my,mz
    <root>/<video>/frames/000000.png   8-bit grayscale frames
    <root>/<video>/masks/000000.png    labels {0 background, 1 artery, 2 vein}

Augmentation draws one set of random parameters per sample and applies it
identically to the current frame and both key frames; the mask receives the
geometric part only, resampled nearest-neighbor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


class ParseError(ValueError):
    """A data file could not be parsed; the message names the location."""


class AlignmentError(ValueError):
    def __init__(self, trace_len: int, frame_len: int):
        super().__init__(
            f"force trace has {trace_len} rows but sequence has {frame_len} frames"
        )
        self.trace_len = trace_len
        self.frame_len = frame_len


@dataclass(frozen=True)
class ForceRecord:
    """One frame's force/torque sample: forces in newtons, moments in N*m."""

    fx: float
    fy: float
    fz: float
    mx: float
    my: float
    mz: float

    def __post_init__(self):
        for name in ("fx", "fy", "fz", "mx", "my", "mz"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite force component {name}")


class ForceTrace:
    """Ordered per-frame force records."""

    def __init__(self, records):
        self.records = list(records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> ForceRecord:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def fz_magnitudes(self) -> np.ndarray:
        return np.array([abs(r.fz) for r in self.records])

    def subset(self, indices) -> "ForceTrace":
        return ForceTrace([self.records[i] for i in indices])


@dataclass
class FrameSequence:
    """Equal-size 8-bit grayscale frames with optional label masks."""

    frames: np.ndarray  # (T, H, W) uint8
    masks: np.ndarray | None = None  # (T, H, W) uint8 with values {0, 1, 2}

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3:
            raise ValueError("frames must be a (T, H, W) stack")
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=np.uint8)
            if self.masks.shape != self.frames.shape:
                raise ValueError("masks must match frame dimensions")
            if self.masks.max(initial=0) > 2:
                raise ValueError("mask values must lie in {0, 1, 2}")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class Video:
    """A frame sequence aligned with its force trace."""

    video_id: str
    sequence: FrameSequence
    trace: ForceTrace
    split: str = "train"

    @property
    def frames(self) -> np.ndarray:
        return self.sequence.frames

    @property
    def masks(self) -> np.ndarray | None:
        return self.sequence.masks

    def __len__(self) -> int:
        return len(self.sequence)


@dataclass
class Sample:
    """One training/evaluation unit: the frame to segment, its mask, the two
    key frames, and the three force magnitudes."""

    current: np.ndarray  # (H, W) uint8
    mask: np.ndarray | None  # (H, W) uint8
    key_min: np.ndarray  # (H, W) uint8
    key_max: np.ndarray  # (H, W) uint8
    f_cur: float
    f_min: float
    f_max: float
    video_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        if not (self.f_min <= self.f_cur <= self.f_max):
            raise ValueError("f_cur must lie within [f_min, f_max] after selection")


# ---------------------------------------------------------------------------
# force csv
# ---------------------------------------------------------------------------

_FORCE_FMT = "%.10g"


def load_force_csv(path) -> ForceTrace:
    """Read a 6-column comma-separated force file, one row per frame."""
    path = Path(path)
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 6:
                raise ParseError(
                    f"{path}:{lineno}: expected 6 fields, found {len(fields)}"
                )
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            try:
                records.append(ForceRecord(*values))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise ParseError(f"{path}: empty force file")
    return ForceTrace(records)


def save_force_csv(trace: ForceTrace, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for r in trace:
            fh.write(",".join(_FORCE_FMT % v
                              for v in (r.fx, r.fy, r.fz, r.mx, r.my, r.mz)) + "\n")


# ---------------------------------------------------------------------------
# alignment and downsampling
# ---------------------------------------------------------------------------

def align(trace: ForceTrace, sequence: FrameSequence,
          video_id: str = "", split: str = "train") -> Video:
    """Pair a trace with a sequence; lengths must match and be non-zero."""
    if len(trace) != len(sequence) or len(trace) == 0:
        raise AlignmentError(len(trace), len(sequence))
    return Video(video_id=video_id, sequence=sequence, trace=trace, split=split)


def downsample(video: Video, stride: int) -> Video:
    """Keep frames (and their force records) at indices 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    idx = list(range(0, len(video), stride))
    seq = FrameSequence(
        frames=video.frames[idx].copy(),
        masks=None if video.masks is None else video.masks[idx].copy(),
    )
    return Video(video_id=video.video_id, sequence=seq,
                 trace=video.trace.subset(idx), split=video.split)


# ---------------------------------------------------------------------------
# manifest and dataset loading
# ---------------------------------------------------------------------------

def write_manifest(entries, path) -> None:
    """entries: iterable of (video_id, frame_count, split)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("# fgseg dataset manifest v1\n")
        for video_id, count, split in entries:
            fh.write(f"video.{video_id}.frames = {count}\n")
            fh.write(f"video.{video_id}.split = {split}\n")


def read_manifest(path):
    """Returns a list of (video_id, frame_count, split) in file order."""
    path = Path(path)
    frames: dict[str, int] = {}
    splits: dict[str, str] = {}
    order: list[str] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            parts = key.split(".")
            if len(parts) != 3 or parts[0] != "video":
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            _, vid, attr = parts
            if vid not in frames and vid not in splits:
                order.append(vid)
            if attr == "frames":
                frames[vid] = int(value)
            elif attr == "split":
                if value not in ("train", "val"):
                    raise ParseError(f"{path}:{lineno}: bad split {value!r}")
                splits[vid] = value
            else:
                raise ParseError(f"{path}:{lineno}: unknown attribute {attr!r}")
    entries = []
    for vid in order:
        if vid not in frames or vid not in splits:
            raise ParseError(f"{path}: incomplete entry for video {vid!r}")
        entries.append((vid, frames[vid], splits[vid]))
    return entries


def _load_image_dir(dirpath: Path, count: int) -> np.ndarray:
    stack = []
    for i in range(count):
        p = dirpath / f"{i:06d}.png"
        with Image.open(p) as im:
            stack.append(np.asarray(im.convert("L"), dtype=np.uint8))
    return np.stack(stack)


def load_video(root, video_id: str, split: str = "train",
               frame_count: int | None = None) -> Video:
    root = Path(root)
    vdir = root / video_id
    trace = load_force_csv(vdir / "force.csv")
    count = frame_count if frame_count is not None else len(trace)
    frames = _load_image_dir(vdir / "frames", count)
    masks = None
    if (vdir / "masks").is_dir():
        masks = _load_image_dir(vdir / "masks", count)
    seq = FrameSequence(frames=frames, masks=masks)
    return align(trace, seq, video_id=video_id, split=split)


def load_dataset(root) -> list[Video]:
    """Load every video named in <root>/manifest.txt."""
    root = Path(root)
    entries = read_manifest(root / "manifest.txt")
    return [load_video(root, vid, split=split, frame_count=count)
            for vid, count, split in entries]


def save_video(video: Video, root) -> None:
    root = Path(root)
    vdir = root / video.video_id
    (vdir / "frames").mkdir(parents=True, exist_ok=True)
    save_force_csv(video.trace, vdir / "force.csv")
    for i in range(len(video)):
        Image.fromarray(video.frames[i], mode="L").save(vdir / "frames" / f"{i:06d}.png")
    if video.masks is not None:
        (vdir / "masks").mkdir(parents=True, exist_ok=True)
        for i in range(len(video)):
            Image.fromarray(video.masks[i], mode="L").save(vdir / "masks" / f"{i:06d}.png")


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Ranges for the per-sample random transforms. Setting a range to zero
    (or a probability to zero) disables that transform."""

    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    max_rotate_deg: float = 15.0
    max_translate_frac: float = 0.10
    gain_low: float = 0.8
    gain_high: float = 1.2
    max_offset: float = 10.0
    bias_coeff: float = 0.2
    noise_sigma_max: float = 5.0


@dataclass
class _AugmentDraw:
    flip_h: bool
    flip_v: bool
    angle_deg: float
    shift: tuple[float, float]  # (dy, dx) pixels
    gain: float
    offset: float
    bias: np.ndarray | None  # multiplicative field, same H x W
    noise: np.ndarray | None  # additive field, same H x W


def _draw_params(rng: np.random.Generator, cfg: AugmentConfig,
                 shape: tuple[int, int]) -> _AugmentDraw:
    h, w = shape
    flip_h = rng.random() < cfg.p_flip_h
    flip_v = rng.random() < cfg.p_flip_v
    angle = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg)
    shift = (rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac) * h,
             rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac) * w)
    gain = rng.uniform(cfg.gain_low, cfg.gain_high)
    offset = rng.uniform(-cfg.max_offset, cfg.max_offset)
    bias = None
    if cfg.bias_coeff > 0:
        c = rng.uniform(-cfg.bias_coeff, cfg.bias_coeff, size=5)
        ys = np.linspace(-1.0, 1.0, h)[:, None]
        xs = np.linspace(-1.0, 1.0, w)[None, :]
        bias = 1.0 + c[0] * xs + c[1] * ys + c[2] * xs * xs + c[3] * xs * ys + c[4] * ys * ys
    noise = None
    if cfg.noise_sigma_max > 0:
        sigma = rng.uniform(0.0, cfg.noise_sigma_max)
        noise = rng.normal(0.0, 1.0, size=shape) * sigma
    return _AugmentDraw(flip_h, flip_v, angle, shift, gain, offset, bias, noise)


def _geometric(img: np.ndarray, draw: _AugmentDraw, is_mask: bool) -> np.ndarray:
    out = img
    if draw.flip_h:
        out = out[:, ::-1]
    if draw.flip_v:
        out = out[::-1, :]
    if draw.angle_deg == 0.0 and draw.shift == (0.0, 0.0):
        return np.ascontiguousarray(out)
    h, w = out.shape
    theta = math.radians(draw.angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    # affine_transform maps output coords to input coords: p_in = M p_out + off
    m = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    off = center - m @ (center + np.array(draw.shift))
    if is_mask:
        return ndimage.affine_transform(out, m, offset=off, order=0,
                                        mode="constant", cval=0,
                                        output=np.uint8)
    warped = ndimage.affine_transform(out.astype(np.float64), m, offset=off,
                                      order=1, mode="nearest")
    return warped


def _photometric(img: np.ndarray, draw: _AugmentDraw) -> np.ndarray:
    out = np.asarray(img, dtype=np.float64) * draw.gain + draw.offset
    if draw.bias is not None:
        out = out * draw.bias
    if draw.noise is not None:
        out = out + draw.noise
    return out


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def augment(sample: Sample, seed, cfg: AugmentConfig | None = None) -> Sample:
    """Apply one random transform draw to the sample.

    The same geometric and photometric parameters hit the current frame and
    both key frames; the mask gets the geometric part only (nearest-neighbor).
    ``seed`` may be an int or a numpy SeedSequence.
    """
    if sample.mask is None:
        raise ValueError("augment requires a sample with a mask")
    if cfg is None:
        cfg = AugmentConfig()
    rng = np.random.default_rng(seed)
    draw = _draw_params(rng, cfg, sample.current.shape)

    def one(img: np.ndarray) -> np.ndarray:
        return _to_u8(_photometric(_geometric(img, draw, is_mask=False), draw))

    return replace(
        sample,
        current=one(sample.current),
        key_min=one(sample.key_min),
        key_max=one(sample.key_max),
        mask=np.ascontiguousarray(_geometric(sample.mask, draw, is_mask=True)),
    )
