"""Radar scenes: data model, synthetic generation, augmentation and file I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import GenerationError, SceneFormatError, SchemaError

CLASSES = ("car", "truck_bus", "pedestrian", "bicycle")
SCENE_FORMAT = "pg-scenes"
DETECTION_FORMAT = "pg-detections"
FORMAT_VERSION = 1


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped <= -math.pi else wrapped


class RadarPoint(NamedTuple):
    x: float
    y: float
    v_r: float
    rcs: float


@dataclass(frozen=True)
class ObbLabel:
    cx: float
    cy: float
    length: float
    width: float
    yaw: float
    class_name: str

    def __post_init__(self):
        if self.class_name not in CLASSES:
            raise SchemaError(f"unknown class {self.class_name!r}")
        if not (self.length >= self.width > 0):
            raise ValueError(f"box needs length >= width > 0, got {self.length} x {self.width}")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        return box_corners(self.cx, self.cy, self.length, self.width, self.yaw)


@dataclass(frozen=True)
class Detection:
    cx: float
    cy: float
    length: float
    width: float
    yaw: float
    class_name: str
    score: float

    def __post_init__(self):
        if self.class_name not in CLASSES:
            raise SchemaError(f"unknown class {self.class_name!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def corners(self) -> np.ndarray:
        return box_corners(self.cx, self.cy, self.length, self.width, self.yaw)


def box_corners(cx, cy, length, width, yaw) -> np.ndarray:
    """Counter-clockwise corners of an oriented box, shape (4, 2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    half = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64) * [length / 2, width / 2]
    rot = np.array([[c, -s], [s, c]])
    return half @ rot.T + [cx, cy]


@dataclass(frozen=True, eq=False)
class Scene:
    """One radar snapshot: points as an (N, 4) array of x, y, v_r, rcs."""

    scene_id: int
    points: np.ndarray
    labels: tuple[ObbLabel, ...] = ()

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 4)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.scene_id == other.scene_id and self.labels == other.labels
                and self.points.shape == other.points.shape
                and bool(np.array_equal(self.points, other.points)))

    __hash__ = None

    def radar_points(self) -> list[RadarPoint]:
        return [RadarPoint(*map(float, row)) for row in self.points]

    @property
    def num_points(self) -> int:
        return self.points.shape[0]


# -- generation -------------------------------------------------------------

@dataclass(frozen=True)
class ClassPrior:
    length: float
    width: float
    count: tuple[int, int]
    speed: tuple[float, float]
    moving_prob: float
    rcs_mean: float


DEFAULT_PRIORS = {
    "car": ClassPrior(4.5, 1.8, (2, 6), (2.0, 15.0), 0.6, 10.0),
    "truck_bus": ClassPrior(10.0, 2.8, (0, 2), (2.0, 12.0), 0.5, 18.0),
    "pedestrian": ClassPrior(0.6, 0.6, (0, 4), (0.5, 2.0), 0.7, -5.0),
    "bicycle": ClassPrior(1.8, 0.6, (0, 2), (2.0, 7.0), 0.8, 0.0),
}


@dataclass(frozen=True)
class GeneratorConfig:
    extent: float = 48.0
    counts: dict = field(default_factory=lambda: {k: v.count for k, v in DEFAULT_PRIORS.items()})
    size_jitter: float = 0.08
    point_density: float = 1.5
    clutter_density: float = 0.02
    sigma_v: float = 0.3
    sigma_xy: float = 0.15
    rcs_sigma: float = 3.0
    min_range: float = 3.0
    max_retries: int = 200


def radial_velocity(x, y, vx, vy):
    """Projection of the velocity (vx, vy) onto the sensor-to-point direction."""
    r = np.hypot(x, y)
    return np.where(r > 0, (np.asarray(vx) * x + np.asarray(vy) * y) / np.where(r > 0, r, 1.0), 0.0)


def _truncated_normal(rng, sigma: float, size, bound: float = 3.0) -> np.ndarray:
    return np.clip(rng.normal(0.0, sigma, size), -bound * sigma, bound * sigma)


def visible_edges(corners: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Box edges whose outward normal faces the sensor at the origin."""
    edges = []
    center = corners.mean(axis=0)
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        mid = (a + b) / 2
        normal = mid - center
        if float(normal @ mid) < 0:
            edges.append((a, b))
    return edges


def sample_object_points(label: ObbLabel, velocity: np.ndarray, rng: np.random.Generator,
                         cfg: GeneratorConfig, rcs_mean: float) -> np.ndarray:
    edges = visible_edges(label.corners())
    if not edges:
        # sensor inside the box footprint; fall back to the full outline
        c = label.corners()
        edges = [(c[i], c[(i + 1) % 4]) for i in range(4)]
    lengths = np.array([np.linalg.norm(b - a) for a, b in edges])
    count = max(1, int(rng.poisson(cfg.point_density * lengths.sum())))
    which = rng.choice(len(edges), size=count, p=lengths / lengths.sum())
    t = rng.uniform(0.0, 1.0, count)
    starts = np.array([edges[i][0] for i in which])
    ends = np.array([edges[i][1] for i in which])
    xy = starts + (ends - starts) * t[:, None] + rng.normal(0.0, cfg.sigma_xy, (count, 2))
    v_r = radial_velocity(xy[:, 0], xy[:, 1], velocity[0], velocity[1])
    v_r = v_r + _truncated_normal(rng, cfg.sigma_v, count)
    rcs = rcs_mean + rng.normal(0.0, cfg.rcs_sigma, count)
    return np.column_stack([xy, v_r, rcs])


def generate_scene(rng_seed: int, cfg: GeneratorConfig | None = None, scene_id: int = 0,
                   return_velocities: bool = False):
    """Sample non-overlapping boxes with perimeter reflections and clutter."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng(int(rng_seed))
    half = cfg.extent / 2
    placed: list[tuple[ObbLabel, np.ndarray]] = []
    for name in CLASSES:
        prior = DEFAULT_PRIORS[name]
        lo, hi = cfg.counts.get(name, (0, 0))
        for _ in range(int(rng.integers(lo, hi + 1))):
            for _attempt in range(cfg.max_retries):
                length = prior.length * (1 + cfg.size_jitter * rng.standard_normal())
                width = prior.width * (1 + cfg.size_jitter * rng.standard_normal())
                length, width = max(length, width), min(length, width)
                yaw = rng.uniform(-math.pi, math.pi)
                margin = length / 2
                cx, cy = rng.uniform(-half + margin, half - margin, 2)
                if math.hypot(cx, cy) < cfg.min_range + margin:
                    continue
                radius = math.hypot(length, width) / 2
                if all(math.hypot(cx - o.cx, cy - o.cy) > radius + math.hypot(o.length, o.width) / 2
                       for o, _ in placed):
                    break
            else:
                raise GenerationError(
                    f"could not place a {name} after {cfg.max_retries} attempts (extent {cfg.extent} m)")
            speed = rng.uniform(*prior.speed) if rng.uniform() < prior.moving_prob else 0.0
            velocity = speed * np.array([math.cos(yaw), math.sin(yaw)])
            placed.append((ObbLabel(cx, cy, length, width, yaw, name), velocity))

    chunks = [sample_object_points(label, v, rng, cfg, DEFAULT_PRIORS[label.class_name].rcs_mean)
              for label, v in placed]
    n_clutter = int(rng.poisson(cfg.clutter_density * cfg.extent ** 2))
    clutter_xy = rng.uniform(-half, half, (n_clutter, 2))
    clutter = np.column_stack([clutter_xy, _truncated_normal(rng, cfg.sigma_v, n_clutter),
                               rng.normal(-5.0, 5.0, n_clutter)])
    points = np.concatenate(chunks + [clutter]) if chunks else clutter
    inside = np.all(np.abs(points[:, :2]) <= half, axis=1)
    scene = Scene(scene_id, points[inside], tuple(label for label, _ in placed))
    if return_velocities:
        return scene, [v for _, v in placed], [c[np.all(np.abs(c[:, :2]) <= half, axis=1)] for c in chunks]
    return scene


def scene_seed(seed: int, scene_id: int) -> int:
    return int(seed) ^ int(scene_id)


def generate_scenes(count: int, seed: int, cfg: GeneratorConfig | None = None,
                    first_id: int = 0, executor=None) -> list[Scene]:
    ids = range(first_id, first_id + count)
    work = lambda i: generate_scene(scene_seed(seed, i), cfg, scene_id=i)  # noqa: E731
    if executor is None:
        return [work(i) for i in ids]
    return list(executor.map(work, ids))


# -- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    rotation: float = 0.1
    shift: float = 1.0
    flip_prob: float = 0.5
    extent: float = 48.0


def transform_scene(scene: Scene, angle: float = 0.0, shift=(0.0, 0.0), flip: bool = False,
                    extent: float | None = None) -> Scene:
    """Rotate about the sensor, optionally mirror y, then translate.

    Radial velocities are carried over unchanged. With ``extent`` given,
    labels whose centers leave it are dropped along with the points inside
    them, and so are stray points outside the extent.
    """
    c, s = math.cos(angle), math.sin(angle)
    pts = scene.points.copy()
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    pts[:, 0], pts[:, 1] = c * x - s * y, s * x + c * y
    if flip:
        pts[:, 1] = -pts[:, 1]
    pts[:, 0] += shift[0]
    pts[:, 1] += shift[1]

    labels = []
    for lab in scene.labels:
        cx, cy = c * lab.cx - s * lab.cy, s * lab.cx + c * lab.cy
        yaw = lab.yaw + angle
        if flip:
            cy, yaw = -cy, -yaw
        labels.append(replace(lab, cx=cx + shift[0], cy=cy + shift[1], yaw=yaw))

    if extent is not None:
        half = extent / 2
        keep_pts = np.all(np.abs(pts[:, :2]) <= half, axis=1)
        kept = []
        for lab in labels:
            if abs(lab.cx) <= half and abs(lab.cy) <= half:
                kept.append(lab)
            else:
                keep_pts &= ~points_in_box(pts[:, :2], lab)
        pts, labels = pts[keep_pts], kept
    return Scene(scene.scene_id, pts, tuple(labels))


def points_in_box(xy: np.ndarray, box, margin: float = 0.0) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = xy[:, 0] - box.cx, xy[:, 1] - box.cy
    along = c * dx + s * dy
    across = -s * dx + c * dy
    return (np.abs(along) <= box.length / 2 + margin) & (np.abs(across) <= box.width / 2 + margin)


def augment(scene: Scene, rng: np.random.Generator, cfg: AugmentConfig | None = None) -> Scene:
    cfg = cfg or AugmentConfig()
    angle = rng.uniform(-cfg.rotation, cfg.rotation) if cfg.rotation > 0 else 0.0
    shift = rng.uniform(-cfg.shift, cfg.shift, 2) if cfg.shift > 0 else (0.0, 0.0)
    flip = bool(cfg.flip_prob > 0 and rng.uniform() < cfg.flip_prob)
    return transform_scene(scene, angle, tuple(shift), flip, cfg.extent)


# -- file I/O -------------------------------------------------------------------

def _label_record(box) -> dict:
    rec = {"cx": box.cx, "cy": box.cy, "length": box.length, "width": box.width,
           "yaw": box.yaw, "class": box.class_name}
    if isinstance(box, Detection):
        rec["score"] = box.score
    return rec


def _parse_box(rec, line: int, with_score: bool):
    try:
        name = rec["class"]
        if name not in CLASSES:
            raise SchemaError(f"unknown class {name!r}", line)
        fields = dict(cx=float(rec["cx"]), cy=float(rec["cy"]), length=float(rec["length"]),
                      width=float(rec["width"]), yaw=float(rec["yaw"]), class_name=name)
        if with_score:
            return Detection(score=float(rec["score"]), **fields)
        return ObbLabel(**fields)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad box record: {exc}", line) from exc


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_scenes(scenes: Iterable[Scene], path) -> None:
    lines = [_dumps({"format": SCENE_FORMAT, "version": FORMAT_VERSION})]
    for sc in scenes:
        lines.append(_dumps({
            "scene_id": int(sc.scene_id),
            "points": [[float(v) for v in row] for row in sc.points],
            "labels": [_label_record(lab) for lab in sc.labels],
        }))
    Path(path).write_text("\n".join(lines) + "\n")


def save_detections(detections: dict[int, list[Detection]], path, config: dict | None = None) -> None:
    header = {"format": DETECTION_FORMAT, "version": FORMAT_VERSION}
    if config is not None:
        header["config"] = config
    lines = [_dumps(header)]
    for scene_id in sorted(detections):
        lines.append(_dumps({"scene_id": int(scene_id),
                             "detections": [_label_record(d) for d in detections[scene_id]]}))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_records(path, expected_format: str):
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise SceneFormatError("missing header line", 1)
    for number, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"malformed JSON ({exc.msg})", number) from exc
        if not isinstance(rec, dict):
            raise SceneFormatError("expected a JSON object", number)
        if number == 1:
            if rec.get("format") != expected_format or rec.get("version") != FORMAT_VERSION:
                raise SchemaError(f"expected header format {expected_format!r} v{FORMAT_VERSION}", 1)
            continue
        yield number, rec


def load_scenes(path, extent: float | None = None) -> list[Scene]:
    """Read a scene file; with ``extent`` set, out-of-extent points are dropped."""
    scenes = []
    for number, rec in _read_records(path, SCENE_FORMAT):
        try:
            scene_id = int(rec["scene_id"])
            pts = np.array(rec["points"], dtype=np.float64).reshape(-1, 4)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad scene record: {exc}", number) from exc
        labels = tuple(_parse_box(lab, number, False) for lab in rec.get("labels", []))
        if not np.all(np.isfinite(pts[:, :2])):
            raise SchemaError("non-finite point coordinates", number)
        if extent is not None:
            pts = pts[np.all(np.abs(pts[:, :2]) <= extent / 2, axis=1)]
        scenes.append(Scene(scene_id, pts, labels))
    return scenes


def load_detections(path) -> tuple[dict[int, list[Detection]], dict]:
    header = json.loads(Path(path).read_text().splitlines()[0])
    out: dict[int, list[Detection]] = {}
    for number, rec in _read_records(path, DETECTION_FORMAT):
        try:
            scene_id = int(rec["scene_id"])
            dets = rec["detections"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad detection record: {exc}", number) from exc
        out[scene_id] = [_parse_box(d, number, True) for d in dets]
    return out, header.get("config", {})
