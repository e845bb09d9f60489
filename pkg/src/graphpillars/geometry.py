"""Oriented box footprints: convex clipping, rotated IoU and greedy NMS."""

from __future__ import annotations

import numpy as np


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: the part of ``subject`` inside the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def rotated_iou(a, b) -> float:
    """BEV IoU of two boxes exposing ``corners()`` (or two CCW (4, 2) corner arrays)."""
    ca = a.corners() if hasattr(a, "corners") else np.asarray(a, dtype=np.float64)
    cb = b.corners() if hasattr(b, "corners") else np.asarray(b, dtype=np.float64)
    area_a, area_b = polygon_area(ca), polygon_area(cb)
    # cheap reject on bounding circles
    ra = np.max(np.linalg.norm(ca - ca.mean(axis=0), axis=1))
    rb = np.max(np.linalg.norm(cb - cb.mean(axis=0), axis=1))
    if np.linalg.norm(ca.mean(axis=0) - cb.mean(axis=0)) > ra + rb:
        return 0.0
    inter = polygon_area(clip_polygon(ca, cb))
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


def nms(detections: list, iou_threshold: float = 0.3) -> list:
    """Greedy class-agnostic suppression, highest score first (ties by input order)."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept = []
    for i in order:
        det = detections[i]
        if all(rotated_iou(det, k) <= iou_threshold for k in kept):
            kept.append(det)
    return kept
