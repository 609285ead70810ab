"""Synthetic force-coupled vessel sequences with ground-truth masks.

The physical picture: a compliant vein squashes vertically as probe force
grows while the stiff artery barely changes. Both vessels are circular at
rest and drawn from the same size range, so a single low-force frame carries
no reliable artery/vein cue; the deformation across the sequence does.

Geometry is linear-compliance with a collapse floor: the vein's vertical
semi-axis is ``b0 * max(1 - k_v * F, collapse_fraction)`` and the artery
radius is ``r0 * (1 - k_a * F)``. Images are a smooth two-level intensity
model under multiplicative speckle (Gaussian log-intensity); masks label the
exact ellipse/disk interiors (1 artery, 2 vein).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataio import ForceRecord, ForceTrace, FrameSequence, Video, align, save_video, write_manifest


class GeometryError(ValueError):
    """A vessel's geometry left the image or degenerated."""


@dataclass
class PhantomConfig:
    image_size: int = 64
    frames_per_sequence: int = 12
    peak_force: float = 5.0

    # concrete geometry used by render_frame (x, y in pixels)
    artery_center: tuple[float, float] = (20.0, 32.0)
    artery_radius: float = 7.0
    vein_center: tuple[float, float] = (44.0, 32.0)
    vein_semi_axes: tuple[float, float] = (7.0, 7.0)  # (horizontal a, vertical b)

    vein_compliance: float = 0.17  # fractional minor-axis loss per newton
    artery_compliance: float = 0.005
    collapse_fraction: float = 0.15

    background_intensity: float = 120.0
    vessel_intensity: float = 30.0
    edge_softness: float = 0.08
    speckle_sigma: float = 0.08  # fresh multiplicative noise per frame
    texture_sigma: float = 0.30  # static per-sequence tissue pattern
    texture_cells: int = 8  # low-res grid extent of the tissue pattern
    texture_seed: int = 0  # set per sequence by randomize_geometry

    force_jitter: float = 0.08  # newtons, added to the |fz| profile
    lateral_noise: float = 0.05  # sigma of fx, fy and the moments
    profile_exponent: int = 2  # |fz| ~ sin(pi t / T) ** (2 * exponent)

    # per-sequence randomization ranges used by generate_dataset
    radius_range: tuple[float, float] = (5.5, 8.5)
    center_x_slots: tuple[float, float] = (0.30, 0.70)  # fractions of width
    center_x_jitter: float = 0.05  # fraction of width
    center_y_range: tuple[float, float] = (0.40, 0.60)  # fractions of height

    def __post_init__(self):
        if not (self.vein_compliance > self.artery_compliance >= 0.0):
            raise ValueError("need vein_compliance > artery_compliance >= 0")
        if not (0.0 < self.collapse_fraction <= 1.0):
            raise ValueError("collapse_fraction must lie in (0, 1]")
        self._check_bounds()

    def _check_bounds(self):
        s = self.image_size
        ax, ay = self.artery_center
        vx, vy = self.vein_center
        r = self.artery_radius
        a, b = self.vein_semi_axes
        for lo, hi in ((ax - r, ax + r), (ay - r, ay + r),
                       (vx - a, vx + a), (vy - b, vy + b)):
            if lo < 0 or hi > s - 1:
                raise ValueError("vessel outside image bounds at zero force")


def vein_semi_axis(config: PhantomConfig, force: float) -> float:
    b0 = config.vein_semi_axes[1]
    return b0 * max(1.0 - config.vein_compliance * force, config.collapse_fraction)


def artery_radius(config: PhantomConfig, force: float) -> float:
    return config.artery_radius * (1.0 - config.artery_compliance * force)


def force_profile(length: int, peak: float, seed, exponent: int = 2) -> ForceTrace:
    """A compression ramp: |fz| rises from near zero to the peak and returns,
    with small seeded jitter. The stored fz is negative (probe pushes down);
    lateral forces and moments are low-level noise. ``exponent`` sharpens the
    ramp (the dwell near zero force grows with it) while the peak stays put."""
    if length < 3:
        raise ValueError(f"profile needs at least 3 frames, got {length}")
    if peak <= 0.0:
        raise ValueError(f"peak force must be positive, got {peak}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    mag = peak * np.sin(math.pi * t / (length - 1)) ** (2 * exponent)
    mag = np.clip(mag + rng.uniform(-0.08, 0.08, size=length) * min(peak, 1.0), 0.0, None)
    lateral = rng.normal(0.0, 0.05, size=(length, 5))
    records = [
        ForceRecord(fx=lateral[i, 0], fy=lateral[i, 1], fz=-mag[i],
                    mx=lateral[i, 2], my=lateral[i, 3], mz=lateral[i, 4])
        for i in range(length)
    ]
    return ForceTrace(records)


def _texture_field(config: PhantomConfig) -> np.ndarray:
    """Static multiplicative tissue pattern, identical for every frame of a
    sequence (the probe holds still; tissue speckle does not redraw itself).
    A low-resolution log-normal grid is bilinearly upsampled to image size."""
    rng = np.random.default_rng(config.texture_seed)
    cells = max(int(config.texture_cells), 2)
    coarse = rng.standard_normal((cells, cells))
    s = config.image_size
    pos = np.linspace(0, cells - 1, s)
    i0 = np.clip(pos.astype(int), 0, cells - 2)
    frac = pos - i0
    rows = coarse[i0][:, i0] * (1 - frac)[:, None] + coarse[i0 + 1][:, i0] * frac[:, None]
    fine = rows * (1 - frac)[None, :] + (
        coarse[i0][:, i0 + 1] * (1 - frac)[:, None]
        + coarse[i0 + 1][:, i0 + 1] * frac[:, None]) * frac[None, :]
    return np.exp(config.texture_sigma * fine)


def render_frame(config: PhantomConfig, force_z: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Render one frame and its label mask at the given |fz| in newtons."""
    if force_z < 0.0:
        raise ValueError("force_z is a magnitude and must be >= 0")
    s = config.image_size
    r = artery_radius(config, force_z)
    a = config.vein_semi_axes[0]
    b = vein_semi_axis(config, force_z)
    if r <= 0.0 or b <= 0.0:
        raise GeometryError("vessel radius degenerated under force")
    ax, ay = config.artery_center
    vx, vy = config.vein_center
    for lo, hi, name in ((ax - r, ax + r, "artery"), (ay - r, ay + r, "artery"),
                         (vx - a, vx + a, "vein"), (vy - b, vy + b, "vein")):
        if lo < 0 or hi > s - 1:
            raise GeometryError(f"{name} leaves the image under force {force_z}")

    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    q_art = ((xs - ax) ** 2 + (ys - ay) ** 2) / (r * r)
    q_vein = (xs - vx) ** 2 / (a * a) + (ys - vy) ** 2 / (b * b)

    mask = np.zeros((s, s), dtype=np.uint8)
    mask[q_art <= 1.0] = 1
    mask[q_vein <= 1.0] = 2

    def soft(q):
        z = np.clip((q - 1.0) / config.edge_softness, -60.0, 60.0)
        return 1.0 / (1.0 + np.exp(z))

    inside = np.maximum(soft(q_art), soft(q_vein))
    # textured tissue outside, near-anechoic lumen inside
    tissue = config.background_intensity * _texture_field(config)
    img = tissue * (1.0 - inside) + config.vessel_intensity * inside
    rng = np.random.default_rng(seed)
    img = img * np.exp(config.speckle_sigma * rng.standard_normal((s, s)))
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img, mask


def randomize_geometry(config: PhantomConfig, rng: np.random.Generator) -> PhantomConfig:
    """Draw per-sequence vessel geometry within the config ranges. Artery and
    vein radii come from the same range and the vessels land on the left/right
    slots in random order, so rest-state appearance carries no identity cue."""
    s = config.image_size
    lo, hi = config.radius_range
    r_art = rng.uniform(lo, hi)
    r_vein = rng.uniform(lo, hi)
    slot_x = [f * s + rng.uniform(-config.center_x_jitter, config.center_x_jitter) * s
              for f in config.center_x_slots]
    if rng.random() < 0.5:
        slot_x.reverse()
    y_lo, y_hi = config.center_y_range
    ys = [rng.uniform(y_lo * s, y_hi * s) for _ in range(2)]
    return replace(
        config,
        artery_center=(slot_x[0], ys[0]),
        artery_radius=r_art,
        vein_center=(slot_x[1], ys[1]),
        vein_semi_axes=(r_vein, r_vein),
        texture_seed=int(rng.integers(0, 2 ** 31)),
    )


def generate_sequence(config: PhantomConfig, seed) -> Video:
    """One fully rendered sequence with randomized geometry (id unset)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    geom_seed, profile_seed, *frame_seeds = ss.spawn(2 + config.frames_per_sequence)
    geom = randomize_geometry(config, np.random.default_rng(geom_seed))
    trace = force_profile(config.frames_per_sequence, config.peak_force,
                          profile_seed, exponent=config.profile_exponent)
    frames, masks = [], []
    for i, record in enumerate(trace):
        img, mask = render_frame(geom, abs(record.fz), frame_seeds[i])
        frames.append(img)
        masks.append(mask)
    seq = FrameSequence(frames=np.stack(frames), masks=np.stack(masks))
    return align(trace, seq, video_id="")


def generate_dataset(config: PhantomConfig, n_sequences: int, seed,
                     root, val_fraction: float = 0.25) -> list[tuple[str, int, str]]:
    """Write a dataio-conformant dataset under ``root`` and return the
    manifest entries. The trailing ``val_fraction`` of sequences form the
    validation split. Deterministic in (config, n_sequences, seed)."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_val = int(round(n_sequences * val_fraction))
    entries = []
    for idx in range(n_sequences):
        video = generate_sequence(config, np.random.SeedSequence([int(seed), idx]))
        video.video_id = f"phantom{idx:04d}"
        video.split = "val" if idx >= n_sequences - n_val else "train"
        save_video(video, root)
        entries.append((video.video_id, len(video), video.split))
    write_manifest(entries, root / "manifest.txt")
    return entries
