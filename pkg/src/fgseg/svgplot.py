"""Small hand-rolled SVG emitters (no plotting dependency, byte-deterministic)."""

from __future__ import annotations

from pathlib import Path

_HEADER = '<?xml version="1.0" encoding="UTF-8"?>\n'


def _svg(width: int, height: int, body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">')
    return _HEADER + head + "\n" + "\n".join(body) + "\n</svg>\n"


def force_curve_svg(magnitudes, idx_min: int, idx_max: int, path=None,
                    title: str = "force magnitude |fz|") -> str:
    """Polyline of per-frame |fz| with the two key frames marked."""
    mags = [float(m) for m in magnitudes]
    if not mags:
        raise ValueError("empty force trace")
    width, height = 480, 260
    left, right, top, bottom = 50, 20, 30, 40
    span_x = width - left - right
    span_y = height - top - bottom
    peak = max(max(mags), 1e-9)

    def px(i):
        return left + span_x * (i / max(len(mags) - 1, 1))

    def py(v):
        return top + span_y * (1.0 - v / peak)

    body = [
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="18" font-family="monospace" font-size="12">{title}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>',
        f'<text x="8" y="{top + 6}" font-family="monospace" font-size="10">{peak:.2f}N</text>',
        f'<text x="8" y="{height - bottom}" font-family="monospace" font-size="10">0</text>',
    ]
    points = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(mags))
    body.append(f'<polyline points="{points}" fill="none" stroke="black" stroke-width="1.5"/>')
    for i, v in enumerate(mags):
        body.append(f'<circle cx="{px(i):.2f}" cy="{py(v):.2f}" r="2.5" fill="gray"/>')
        body.append(f'<text x="{px(i):.2f}" y="{height - bottom + 14}" '
                    f'font-family="monospace" font-size="9" text-anchor="middle">{i}</text>')
    for idx, color, label in ((idx_min, "blue", "K_min"), (idx_max, "red", "K_max")):
        body.append(f'<circle cx="{px(idx):.2f}" cy="{py(mags[idx]):.2f}" r="5" '
                    f'fill="none" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{px(idx):.2f}" y="{py(mags[idx]) - 8:.2f}" fill="{color}" '
                    f'font-family="monospace" font-size="10" text-anchor="middle">{label}</text>')
    text = _svg(width, height, body)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def bar_chart_svg(labels, values, path=None, title: str = "validation mIoU",
                  y_max: float = 1.0) -> str:
    """Bar chart with a fixed [0, y_max] axis (mIoU convention)."""
    labels = list(labels)
    values = [float(v) for v in values]
    if not labels or len(labels) != len(values):
        raise ValueError("labels and values must be non-empty and equal length")
    width, height = 100 + 90 * len(labels), 280
    left, top, bottom = 50, 30, 50
    span_y = height - top - bottom

    def py(v):
        return top + span_y * (1.0 - v / y_max)

    body = [
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="18" font-family="monospace" font-size="12">{title}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - 20}" '
        f'y2="{height - bottom}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = tick * y_max
        body.append(f'<line x1="{left - 4}" y1="{py(v):.2f}" x2="{left}" '
                    f'y2="{py(v):.2f}" stroke="black"/>')
        body.append(f'<text x="{left - 8}" y="{py(v) + 3:.2f}" font-family="monospace" '
                    f'font-size="10" text-anchor="end">{v:.2f}</text>')
    bar_w = 60
    for i, (label, v) in enumerate(zip(labels, values)):
        x = left + 20 + i * 90
        body.append(f'<rect x="{x}" y="{py(v):.2f}" width="{bar_w}" '
                    f'height="{py(0) - py(v):.2f}" fill="steelblue"/>')
        body.append(f'<text x="{x + bar_w / 2:.2f}" y="{py(v) - 5:.2f}" font-family="monospace" '
                    f'font-size="10" text-anchor="middle">{v:.4f}</text>')
        body.append(f'<text x="{x + bar_w / 2:.2f}" y="{height - bottom + 16}" '
                    f'font-family="monospace" font-size="10" text-anchor="middle">{label}</text>')
    text = _svg(width, height, body)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
