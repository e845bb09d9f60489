"""Finite-difference suite over every differentiable op and each model variant."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Iterator

import numpy as np

from .autodiff import ChannelAffine, Tensor, functional as F, gradcheck
from .autodiff.gradcheck import GradcheckResult, weighted_sum
from .config import VARIANTS, ModelSection
from .extractors import KernelLayout, KPConvLayer, MessagePassingLayer, kpconv, message_pass
from .heads import HEAD_GROUPS, DenseTarget, HeadOutput, detection_loss, sigmoid_focal_loss
from .model import Detector
from .neighbors import build_graph, edge_features
from .render import GridSpec, PillarEncoder, render_pillars
from .scene import ObbLabel, Scene

MICRO_MODEL = ModelSection(extent=8.0, cell=0.5, point_width=8, point_layers=3, graph_radius=2.0,
                           max_neighbors=6, kp_sigma=1.0, pillar_width=8, stem_channels=8,
                           stage_channels=(8, 8, 8, 8), stage_blocks=(2, 2, 2, 2), fpn_channels=8,
                           head_width=8, init_seed=3)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _leaf(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _check(name, out_fn: Callable[[], Tensor], inputs, rng) -> GradcheckResult:
    probe = out_fn()
    weights = rng.normal(size=probe.shape)
    return gradcheck(lambda: weighted_sum(out_fn(), weights), inputs, name=name)


def op_checks(seed: int = 0) -> Iterator[GradcheckResult]:
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=(3, 4)))
    row = _leaf(rng.normal(size=(4,)))
    pos = _leaf(rng.uniform(0.5, 2.0, (3, 4)))
    yield _check("add (broadcast)", lambda: a + row, [a, row], rng)
    yield _check("sub", lambda: a - b, [a, b], rng)
    yield _check("mul (broadcast)", lambda: a * row, [a, row], rng)
    yield _check("div", lambda: a / pos, [a, pos], rng)
    yield _check("neg", lambda: -a, [a], rng)
    yield _check("power", lambda: pos ** 2.5, [pos], rng)
    m = _leaf(rng.normal(size=(4, 5)))
    yield _check("matmul", lambda: a @ m, [a, m], rng)
    bias = _leaf(rng.normal(size=(5,)))
    yield _check("linear", lambda: F.linear(a, m, bias), [a, m, bias], rng)
    yield _check("reshape", lambda: F.reshape(a, (2, 6)), [a], rng)
    yield _check("transpose", lambda: F.transpose(a), [a], rng)
    yield _check("concat", lambda: F.concat([a, b], axis=1), [a, b], rng)
    idx = np.array([2, 0, 2, 1])
    yield _check("take_rows", lambda: F.take_rows(a, idx), [a], rng)
    yield _check("slice_channels", lambda: F.slice_channels(a, 1, 3), [a], rng)
    yield _check("sum (axis)", lambda: F.sum(a, axis=0), [a], rng)
    yield _check("mean", lambda: F.mean(a, axis=1, keepdims=True), [a], rng)
    kinked = _leaf(_away_from_zero(rng, (3, 4)))
    yield _check("relu", lambda: F.relu(kinked), [kinked], rng)
    yield _check("abs", lambda: F.abs(kinked), [kinked], rng)
    yield _check("sigmoid", lambda: F.sigmoid(a * 3.0), [a], rng)
    yield _check("log_sigmoid", lambda: F.log_sigmoid(a * 3.0), [a], rng)
    yield _check("exp", lambda: F.exp(a), [a], rng)
    yield _check("log", lambda: F.log(pos), [pos], rng)

    x = _leaf(rng.normal(size=(7, 3)))
    bucket = np.array([0, 2, 2, 0, 3, 2, 0])
    yield _check("scatter_sum", lambda: F.scatter_sum(x, bucket, 5), [x], rng)
    yield _check("scatter_mean", lambda: F.scatter_mean(x, bucket, 5), [x], rng)
    yield _check("segment_max", lambda: F.segment_max(x, bucket, 5), [x], rng)
    yield _check("segment_sum_sorted", lambda: F.segment_sum_sorted(x, np.sort(bucket), 5), [x], rng)
    yield _check("max_pool_rows", lambda: F.max_pool_rows(x), [x], rng)
    yield _check("mean_pool_rows", lambda: F.mean_pool_rows(x), [x], rng)

    img = _leaf(rng.normal(size=(2, 3, 6, 6)))
    w3 = _leaf(rng.normal(size=(4, 3, 3, 3)))
    w1 = _leaf(rng.normal(size=(4, 3, 1, 1)))
    cb = _leaf(rng.normal(size=(4,)))
    yield _check("conv2d 3x3", lambda: F.conv2d(img, w3, cb, padding=1), [img, w3, cb], rng)
    yield _check("conv2d 3x3 stride 2", lambda: F.conv2d(img, w3, None, stride=2, padding=1), [img, w3], rng)
    yield _check("conv2d 1x1 stride 2", lambda: F.conv2d(img, w1, cb, stride=2), [img, w1, cb], rng)
    yield _check("conv2d valid", lambda: F.conv2d(img, w3, cb), [img, w3, cb], rng)
    yield _check("upsample2x_nearest", lambda: F.upsample2x_nearest(img), [img], rng)
    affine = ChannelAffine(3, 0.7)
    affine.scale.data = rng.normal(size=3)
    yield _check("channel_affine", lambda: affine(img), [img, affine.scale, affine.shift], rng)

    yield from layer_checks(rng)


def layer_checks(rng: np.random.Generator) -> Iterator[GradcheckResult]:
    pts = np.column_stack([rng.uniform(-2, 2, (8, 2)), rng.normal(size=8), rng.normal(size=8)])
    graph = build_graph(pts[:, :2], 1.5, 6)
    efeats = edge_features(pts, graph)
    feats = _leaf(rng.normal(size=(8, 4)))
    layer = MessagePassingLayer(4, 4, rng)
    params = layer.parameters()
    yield _check("message_pass", lambda: message_pass(feats, graph, efeats, layer), [feats] + params, rng)

    sgraph = build_graph(pts[:, :2], 2.0, 6, include_self=True)
    kp = KPConvLayer(4, 3, KernelLayout.ring(1.0), rng)
    yield _check("kpconv", lambda: kpconv(pts[:, :2], feats, kp, sgraph), [feats, kp.weights], rng)

    spec = GridSpec(4.0, 1.0)
    pillar = PillarEncoder(4, 5, rng)
    yield _check("render_pillars", lambda: render_pillars(pts[:, :2], feats, spec, pillar),
                 [feats] + pillar.parameters(), rng)

    logits = _leaf(rng.normal(size=(2, 3, 4, 4)))
    targets = (rng.uniform(size=(2, 3, 4, 4)) < 0.2).astype(np.float64)
    yield gradcheck(lambda: sigmoid_focal_loss(logits, targets, np.array([2.0, 1.0, 1.5])),
                    [logits], name="sigmoid_focal_loss")

    group = HEAD_GROUPS[1]
    reg = _leaf(rng.normal(size=(1, 6, 4, 4)))
    cls_logits = _leaf(rng.normal(size=(1, 2, 4, 4)))
    classes = np.full((4, 4), group.background)
    classes[1, 2] = 0
    mask = classes != group.background
    regression = np.where(mask, rng.normal(size=(6, 4, 4)), np.nan)
    target = {group.name: [DenseTarget(classes, regression, mask)]}
    yield gradcheck(lambda: detection_loss({group.name: HeadOutput(cls_logits, reg)}, target).total,
                    [cls_logits, reg], name="detection_loss")


def micro_scene(seed: int = 0, num_points: int = 8) -> Scene:
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-3.5, 3.5, (num_points, 2))
    pts = np.column_stack([xy, rng.normal(size=num_points), rng.normal(0, 3, num_points)])
    labels = (ObbLabel(1.2, -0.7, 2.0, 1.0, 0.4, "car"), ObbLabel(-1.6, 1.3, 0.6, 0.5, -1.0, "pedestrian"))
    return Scene(0, pts, labels)


def randomize_for_check(model: Detector, seed: int = 0) -> Detector:
    """Replace zero-initialized parameters so that every parameter gets gradient.

    All-zero biases and shifts would leave pre-activations of empty grid
    cells exactly on the ReLU kink, where finite differences are one-sided.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        if name.endswith("affine.scale") and not np.any(p.data):
            p.data = rng.uniform(0.5, 1.0, p.shape)
        elif not np.any(p.data):
            p.data = rng.normal(0.0, 0.1, p.shape)
    return model


def model_checks(variants=VARIANTS, max_entries: int = 4, seed: int = 0) -> Iterator[GradcheckResult]:
    scene = micro_scene(seed)
    for variant in variants:
        model = randomize_for_check(Detector(replace(MICRO_MODEL, variant=variant)), seed)
        params = model.parameters()
        scale = 1.0 / abs(model.loss([scene]).total.item())
        yield gradcheck(lambda: model.loss([scene]).total * scale, params, name=f"model {variant}",
                        max_entries=max_entries, rng=np.random.default_rng(seed))


def run_suite(seed: int = 0, variants=VARIANTS) -> list[GradcheckResult]:
    return list(op_checks(seed)) + list(model_checks(variants, seed=seed))
