"""Key-frame selection from probe-force traces and force-based dynamic weights.

Force magnitude throughout means the absolute z-axis force ``|fz|``. The two
key frames of a sequence are the frames of minimal and maximal magnitude; the
weight pair scales each key frame's contribution by how dissimilar its force
is to the current frame's force.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class KeyFrameSelection:
    idx_min: int
    idx_max: int
    f_min: float
    f_max: float

    def __post_init__(self):
        if self.f_min > self.f_max:
            raise ValueError("f_min exceeds f_max")


@dataclass(frozen=True)
class DynamicWeights:
    w_min: float
    w_max: float

    def __post_init__(self):
        if not (0.0 <= self.w_min <= 1.0 and 0.0 <= self.w_max <= 1.0):
            raise ValueError("weights must lie in [0, 1]")


def select_key_frames(trace) -> KeyFrameSelection:
    """Pick the frames of minimal and maximal |fz|; ties go to the earliest
    index."""
    mags = trace.fz_magnitudes() if hasattr(trace, "fz_magnitudes") else [abs(v) for v in trace]
    if len(mags) == 0:
        raise ValueError("empty force trace")
    idx_min = 0
    idx_max = 0
    for i, m in enumerate(mags):
        if m < mags[idx_min]:
            idx_min = i
        if m > mags[idx_max]:
            idx_max = i
    return KeyFrameSelection(idx_min=idx_min, idx_max=idx_max,
                             f_min=float(mags[idx_min]), f_max=float(mags[idx_max]))


def select_preceding_frames(trace, current_index: int) -> tuple[int, int]:
    """The no-selection ablation: the two frames immediately before the
    current one, clamped at the sequence start (indices may coincide)."""
    if current_index < 0:
        raise ValueError("current_index must be non-negative")
    return max(current_index - 1, 0), max(current_index - 2, 0)


def dynamic_weights(f_cur: float, f_min: float, f_max: float) -> DynamicWeights:
    """Weights for the (min-force, max-force) key frames given the current
    frame's force magnitude.

    w_min grows as the current force moves away from the minimum, so the key
    frame most dissimilar to the current state dominates. f_cur is clamped
    into [f_min, f_max] first (a streaming frame may exceed the recorded
    extremes); equal extremes yield the symmetric (0.5, 0.5).
    """
    if f_min > f_max:
        raise ValueError(f"f_min {f_min} exceeds f_max {f_max}")
    if f_max == f_min:
        return DynamicWeights(0.5, 0.5)
    f_cur = min(max(f_cur, f_min), f_max)
    w_min = (f_cur - f_min) / (f_max - f_min)
    return DynamicWeights(w_min=w_min, w_max=1.0 - w_min)
