"""Static SVG renderings of trajectories and per-frame motion arrows."""

from __future__ import annotations

PALETTE = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
    "#46f0f0", "#f032e6", "#bcf60c", "#008080", "#9a6324",
]


def _tracks(frames):
    """frame -> [(id, box)] into id -> [(frame, cx, cy)] sorted by frame."""
    tracks: dict = {}
    for frame in sorted(frames):
        for tid, box in frames[frame]:
            tracks.setdefault(tid, []).append((frame, float(box[0]), float(box[1])))
    return tracks


def _polyline(points, color, dasharray=None, width=1.2):
    coords = " ".join(f"{x:.2f},{y:.2f}" for _, x, y in points)
    dash = f' stroke-dasharray="{dasharray}"' if dasharray else ""
    return (
        f'<polyline points="{coords}" fill="none" stroke="{color}" '
        f'stroke-width="{width}"{dash}/>'
    )


def _arrow(x0, y0, x1, y1, color):
    return (
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
        f'stroke="{color}" stroke-width="1.0" marker-end="url(#tip)"/>'
    )


def _document(body, size):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">\n'
        '<defs><marker id="tip" markerWidth="6" markerHeight="6" refX="5" refY="3" '
        'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>\n'
        f'<rect width="{size}" height="{size}" fill="#101018"/>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def trajectory_svg(gt_frames, result_frames, image_size) -> str:
    """Ground-truth tracks as solid lines, tracker output dashed on top."""
    body = []
    for tid, points in sorted(_tracks(gt_frames).items()):
        color = PALETTE[(tid - 1) % len(PALETTE)]
        body.append(_polyline(points, color, width=1.6))
    for tid, points in sorted(_tracks(result_frames).items()):
        color = PALETTE[(tid - 1) % len(PALETTE)]
        body.append(_polyline(points, color, dasharray="3,2", width=1.0))
    return _document(body, image_size)


def arrows_svg(gt_frames, result_frames, image_size, every=8) -> str:
    """Per-frame motion arrows (position at t to t+1), ground truth in red
    and tracker output in yellow, sampled every ``every`` frames."""
    body = []
    for frames, color in ((gt_frames, "#e6194b"), (result_frames, "#ffe119")):
        for tid, points in sorted(_tracks(frames).items()):
            for (f0, x0, y0), (f1, x1, y1) in zip(points, points[1:]):
                if f1 != f0 + 1 or f0 % every:
                    continue
                body.append(_arrow(x0, y0, x1, y1, color))
    return _document(body, image_size)


def loss_curve_svg(rows, width=480, height=240) -> str:
    """Simple line plot of (step, name, value) loss rows, one line per name."""
    by_name: dict = {}
    for step, name, value in rows:
        by_name.setdefault(name, []).append((step, value))
    if not by_name:
        return _document(["<!-- no data -->"], width)
    all_vals = [v for series in by_name.values() for _, v in series]
    all_steps = [s for series in by_name.values() for s, _ in series]
    v_lo, v_hi = min(all_vals), max(all_vals)
    s_lo, s_hi = min(all_steps), max(all_steps)
    v_span = (v_hi - v_lo) or 1.0
    s_span = (s_hi - s_lo) or 1
    body = []
    for k, (name, series) in enumerate(sorted(by_name.items())):
        pts = [
            (
                0,
                10 + (s - s_lo) / s_span * (width - 20),
                height - 10 - (v - v_lo) / v_span * (height - 20),
            )
            for s, v in series
        ]
        body.append(_polyline(pts, PALETTE[k % len(PALETTE)], width=1.0))
        body.append(
            f'<text x="12" y="{14 + 12 * k}" fill="{PALETTE[k % len(PALETTE)]}" '
            f'font-size="10">{name}</text>'
        )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )
