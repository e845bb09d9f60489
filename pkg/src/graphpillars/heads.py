"""Dense per-class-group detection heads: targets, loss and box decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Conv2d, Module, Tensor, functional as F
from .errors import ConfigError
from .render import GridSpec, cell_indices
from .scene import Detection, ObbLabel, normalize_angle

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PRIOR_PROB = 0.01
REG_DIM = 6


@dataclass(frozen=True)
class HeadGroup:
    name: str
    classes: tuple[str, ...]
    stride: int

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def background(self) -> int:
        return len(self.classes)


HEAD_GROUPS = (
    HeadGroup("vru", ("pedestrian", "bicycle"), 2),
    HeadGroup("car_like", ("car",), 4),
    HeadGroup("vehicle", ("truck_bus",), 4),
)

DEFAULT_CLASS_WEIGHTS = {"car": 10.0, "truck_bus": 10.0, "pedestrian": 200.0, "bicycle": 200.0}


def group_of(class_name: str) -> HeadGroup:
    for group in HEAD_GROUPS:
        if class_name in group.classes:
            return group
    raise KeyError(class_name)


@dataclass
class HeadOutput:
    logits: Tensor      # (B, classes + 1, h, w); background is the last channel
    regression: Tensor  # (B, 6, h, w): dx, dy, log l, log w, sin yaw, cos yaw


class DetectionHead(Module):
    """Two 3x3 conv + ReLU layers, then parallel 1x1 classification and regression convs."""

    def __init__(self, group: HeadGroup, in_channels: int, width: int, rng: np.random.Generator):
        self.group = group
        self.conv1 = Conv2d(in_channels, width, 3, rng)
        self.conv2 = Conv2d(width, width, 3, rng)
        self.cls = Conv2d(width, group.num_classes + 1, 1, rng)
        self.reg = Conv2d(width, REG_DIM, 1, rng)
        self.cls.weight.data[:] = 0.0
        self.reg.weight.data[:] = 0.0
        prior = math.log(PRIOR_PROB / (1 - PRIOR_PROB))
        self.cls.bias.data[:] = prior
        self.cls.bias.data[group.background] = -prior

    def __call__(self, features: Tensor, stride: int) -> HeadOutput:
        if stride != self.group.stride:
            raise ConfigError(f"head {self.group.name!r} attaches at stride {self.group.stride}, got {stride}")
        h = F.relu(self.conv1(features))
        h = F.relu(self.conv2(h))
        return HeadOutput(self.cls(h), self.reg(h))


def head_forward(feature_map: Tensor, head: DetectionHead, stride: int) -> HeadOutput:
    return head(feature_map, stride)


# -- targets ----------------------------------------------------------------

@dataclass
class DenseTarget:
    classes: np.ndarray     # (h, w) int, background index where no object
    regression: np.ndarray  # (6, h, w), NaN outside positives
    mask: np.ndarray        # (h, w) bool

    def one_hot(self, num_channels: int) -> np.ndarray:
        return np.moveaxis(np.eye(num_channels)[self.classes], -1, 0)


def encode_box(label: ObbLabel, cell_cx: float, cell_cy: float) -> np.ndarray:
    return np.array([label.cx - cell_cx, label.cy - cell_cy, math.log(label.length),
                     math.log(label.width), math.sin(label.yaw), math.cos(label.yaw)])


def assign_targets(labels, group: HeadGroup, spec: GridSpec) -> DenseTarget:
    """Mark the cell under each box center positive; on collision the larger box wins.

    ``spec`` is the grid of the head's feature map (cell size already scaled
    by the head stride).
    """
    n = spec.size
    classes = np.full((n, n), group.background, dtype=np.int64)
    regression = np.full((REG_DIM, n, n), np.nan)
    mask = np.zeros((n, n), dtype=bool)
    area = np.zeros((n, n))
    for label in labels:
        if label.class_name not in group.classes:
            continue
        rows, cols, inside = cell_indices(np.array([[label.cx, label.cy]]), spec)
        if not inside[0]:
            continue
        r, c = int(rows[0]), int(cols[0])
        if mask[r, c] and area[r, c] >= label.area:
            continue
        cx, cy = spec.cell_center(r, c)
        classes[r, c] = group.classes.index(label.class_name)
        regression[:, r, c] = encode_box(label, float(cx), float(cy))
        mask[r, c] = True
        area[r, c] = label.area
    return DenseTarget(classes, regression, mask)


# -- loss -------------------------------------------------------------------

def sigmoid_focal_loss(logits: Tensor, targets: np.ndarray, channel_weights: np.ndarray,
                       alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> Tensor:
    """Sum over entries of ``-w * alpha_t * (1 - p_t)^gamma * log p_t`` with sigmoid scores.

    ``targets`` is a 0/1 array shaped like ``logits``; ``channel_weights`` has
    one factor per channel (axis 1).
    """
    sign = 2.0 * targets - 1.0
    log_pt = F.log_sigmoid(logits * Tensor(sign))
    pt = F.exp(log_pt)
    modulator = (1.0 - pt) ** gamma
    alpha_t = np.where(targets > 0, alpha, 1.0 - alpha)
    shape = (1, -1) + (1,) * (logits.ndim - 2)
    weight = alpha_t * np.asarray(channel_weights, dtype=np.float64).reshape(shape)
    return -(modulator * log_pt * Tensor(weight)).sum()


@dataclass
class LossTerms:
    total: Tensor
    terms: dict[str, Tensor]


def head_channel_weights(group: HeadGroup, class_weights: dict[str, float]) -> np.ndarray:
    w = [float(class_weights[c]) for c in group.classes]
    return np.array(w + [float(np.mean(w))])


def detection_loss(outputs: dict[str, HeadOutput], targets: dict[str, list[DenseTarget]],
                   class_weights: dict[str, float] | None = None) -> LossTerms:
    """Weighted focal classification plus L1 regression, summed over heads.

    Focal terms are normalized by the number of positive cells (at least one);
    the L1 term is the mean over positive cells of the summed absolute error,
    zero when a head has no positives.
    """
    class_weights = class_weights or DEFAULT_CLASS_WEIGHTS
    total = None
    terms: dict[str, Tensor] = {}
    for group in HEAD_GROUPS:
        if group.name not in outputs:
            continue
        out = outputs[group.name]
        tgts = targets[group.name]
        channels = group.num_classes + 1
        onehot = np.stack([t.one_hot(channels) for t in tgts])
        mask = np.stack([t.mask for t in tgts])
        num_pos = int(mask.sum())
        focal = sigmoid_focal_loss(out.logits, onehot, head_channel_weights(group, class_weights))
        focal = focal * (1.0 / max(1, num_pos))
        terms[f"{group.name}/focal"] = focal
        if num_pos:
            reg_target = np.stack([np.nan_to_num(t.regression) for t in tgts])
            diff = F.abs(out.regression - Tensor(reg_target))
            weight = np.broadcast_to(mask[:, None], diff.shape).astype(np.float64) / num_pos
            l1 = (diff * Tensor(weight)).sum()
        else:
            l1 = Tensor(0.0)
        terms[f"{group.name}/l1"] = l1
        head_total = focal + l1
        total = head_total if total is None else total + head_total
    return LossTerms(total if total is not None else Tensor(0.0), terms)


# -- decoding ---------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def decode_arrays(logits: np.ndarray, regression: np.ndarray, group: HeadGroup, spec: GridSpec,
                  score_threshold: float) -> list[Detection]:
    """Decode one scene's (C+1, h, w) logits and (6, h, w) regression into boxes."""
    scores = _sigmoid(logits[:group.num_classes])
    best = scores.argmax(axis=0)
    best_score = scores.max(axis=0)
    rows, cols = np.nonzero(best_score >= score_threshold)
    dets = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        dx, dy, log_l, log_w, s, co = regression[:, r, c]
        cx, cy = spec.cell_center(r, c)
        dets.append(Detection(
            cx=float(cx) + float(dx), cy=float(cy) + float(dy),
            length=math.exp(log_l), width=math.exp(log_w),
            yaw=normalize_angle(math.atan2(s, co)),
            class_name=group.classes[int(best[r, c])], score=float(best_score[r, c])))
    return dets


def decode(outputs: HeadOutput, group: HeadGroup, spec: GridSpec, score_threshold: float = 0.3,
           batch_item: int = 0) -> list[Detection]:
    logits = outputs.logits.data
    regression = outputs.regression.data
    if logits.ndim == 4:
        logits, regression = logits[batch_item], regression[batch_item]
    return decode_arrays(logits, regression, group, spec, score_threshold)
