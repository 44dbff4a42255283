"""MOTChallenge text rows: strict writer, reader, and grammar check.

Row format: ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1``
with integer frame/id fields and decimal floats carrying at least one
fractional digit (``10 -> "10.0"``), period separator, newline-terminated.
Boxes convert between the package-internal center format ``(cx, cy, w, h)``
and the file's left-top format on the way through.
"""

from __future__ import annotations

import re

import numpy as np

_FLOAT = r"-?\d+\.\d+"
ROW_PATTERN = re.compile(
    rf"^\d+,(?:-1|\d+),{_FLOAT},{_FLOAT},{_FLOAT},{_FLOAT},{_FLOAT},-1,-1,-1$"
)


class MotFormatError(ValueError):
    pass


def format_float(value: float) -> str:
    """Fixed-point with trailing zeros stripped but at least one decimal."""
    text = f"{value:.6f}".rstrip("0")
    if text.endswith("."):
        text += "0"
    return text


def format_row(frame: int, track_id: int, box_center, conf: float) -> str:
    cx, cy, w, h = (float(v) for v in box_center)
    left = cx - 0.5 * w
    top = cy - 0.5 * h
    fields = [str(int(frame)), str(int(track_id))]
    fields += [format_float(v) for v in (left, top, w, h, conf)]
    fields += ["-1", "-1", "-1"]
    return ",".join(fields)


def write_mot_file(path, rows):
    """``rows`` iterates (frame, id, center_box, conf); writes sorted by
    (frame, id) for byte-stable output."""
    ordered = sorted(rows, key=lambda r: (int(r[0]), int(r[1])))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame, track_id, box, conf in ordered:
            fh.write(format_row(frame, track_id, box, conf) + "\n")


def read_mot_file(path):
    """Read rows into a dict: frame -> list of (id, center_box, conf)."""
    frames: dict[int, list] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise MotFormatError(f"{path}:{line_no}: too few fields")
            frame = int(parts[0])
            track_id = int(parts[1])
            left, top, w, h, conf = (float(v) for v in parts[2:7])
            box = np.array([left + 0.5 * w, top + 0.5 * h, w, h])
            frames.setdefault(frame, []).append((track_id, box, conf))
    return frames


def check_mot_grammar(path):
    """Validate every line against the strict row grammar.

    Returns the number of valid rows; raises :class:`MotFormatError` on the
    first offending line.
    """
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        content = fh.read()
    if content and not content.endswith("\n"):
        raise MotFormatError(f"{path}: missing trailing newline")
    for line_no, line in enumerate(content.splitlines(), 1):
        if not ROW_PATTERN.match(line):
            raise MotFormatError(f"{path}:{line_no}: bad row {line!r}")
        count += 1
    return count
