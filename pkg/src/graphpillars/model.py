"""Detector assembly for the four model variants, plus batched forward and inference."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .autodiff import Module, Tensor, load_tensors, no_grad, save_tensors
from .backbone import Backbone, BackboneConfig
from .config import ModelSection, RunConfig
from .errors import ConfigError
from .extractors import KernelLayout, KPConvBlock, MessagePassingLayer, PointFeaturizer, message_pass
from .geometry import nms
from .heads import HEAD_GROUPS, DetectionHead, HeadOutput, LossTerms, assign_targets, decode, detection_loss
from .neighbors import batch_graphs, build_graph, edge_features
from .render import GridSpec, PillarEncoder, render_handcrafted, render_pillars
from .scene import Detection, Scene


class ModelVariant(str, enum.Enum):
    BEV_RENDERING = "bev_rendering"
    POINTPILLARS_LIKE = "pointpillars_like"
    GRAPH_PILLARS = "graph_pillars"
    KPCONV_PILLARS = "kpconv_pillars"

    @property
    def learned_rendering(self) -> bool:
        return self is not ModelVariant.BEV_RENDERING

    @property
    def hybrid(self) -> bool:
        return self in (ModelVariant.GRAPH_PILLARS, ModelVariant.KPCONV_PILLARS)


# each component draws from its own stream so that variants share downstream weights
_STREAMS = {"featurize": 1, "extractor": 2, "pillar": 3, "backbone": 4, "heads": 5}


class Detector(Module):
    """Point featurization, optional point extractor, grid rendering, backbone and heads."""

    def __init__(self, cfg: ModelSection | None = None):
        cfg = cfg or ModelSection()
        self.cfg = cfg
        self.variant = ModelVariant(cfg.variant)
        self.spec = GridSpec(cfg.extent, cfg.cell)
        if self.spec.size % 16:
            raise ConfigError(f"grid size {self.spec.size} must be divisible by 16")
        rng = {name: np.random.default_rng([cfg.init_seed, k]) for name, k in _STREAMS.items()}

        self.featurize = None
        self.pillar = None
        self.extractor = []
        in_channels = 3
        if self.variant.learned_rendering:
            self.featurize = PointFeaturizer(cfg.point_width, rng["featurize"])
            self.pillar = PillarEncoder(cfg.point_width, cfg.pillar_width, rng["pillar"])
            in_channels = cfg.pillar_width
        if self.variant is ModelVariant.GRAPH_PILLARS:
            edge_dim = 4 if cfg.edge_distance else 3
            self.extractor = [MessagePassingLayer(cfg.point_width, edge_dim, rng["extractor"])
                              for _ in range(cfg.point_layers)]
        elif self.variant is ModelVariant.KPCONV_PILLARS:
            self.layout = KernelLayout.ring(cfg.kp_sigma, cfg.kp_kernels)
            self.extractor = [KPConvBlock(cfg.point_width, cfg.point_width, self.layout, rng["extractor"])
                              for _ in range(cfg.point_layers)]

        bcfg = BackboneConfig(in_channels, cfg.stem_channels, tuple(cfg.stage_channels),
                              tuple(cfg.stage_blocks), cfg.fpn_channels)
        self.backbone = Backbone(bcfg, rng["backbone"])
        self.heads = [DetectionHead(g, cfg.fpn_channels, cfg.head_width, rng["heads"]) for g in HEAD_GROUPS]

    def extractor_parameters(self) -> list[Tensor]:
        return [p for name, p in self.named_parameters() if name.startswith("extractor.")]

    def render(self, scenes: list[Scene]) -> Tensor:
        """Batched (B, C, H, W) grid for a list of scenes."""
        batch = len(scenes)
        sizes = [s.num_points for s in scenes]
        points = np.concatenate([s.points for s in scenes]) if scenes else np.zeros((0, 4))
        batch_index = np.repeat(np.arange(batch), sizes)
        if not self.variant.learned_rendering:
            return Tensor(render_handcrafted(points, self.spec, batch_index, batch))
        feats = self.featurize(points)
        cfg = self.cfg
        if self.variant is ModelVariant.GRAPH_PILLARS:
            graph = batch_graphs([build_graph(s.points[:, :2], cfg.graph_radius, cfg.max_neighbors)
                                  for s in scenes])
            efeats = edge_features(points, graph, cfg.edge_distance)
            for layer in self.extractor:
                feats = message_pass(feats, graph, efeats, layer)
        elif self.variant is ModelVariant.KPCONV_PILLARS:
            radius = 2.0 * cfg.kp_sigma
            graph = batch_graphs([build_graph(s.points[:, :2], radius, cfg.max_neighbors, include_self=True)
                                  for s in scenes])
            for block in self.extractor:
                feats = block(points[:, :2], feats, graph)
        return render_pillars(points[:, :2], feats, self.spec, self.pillar, batch_index, batch)

    def __call__(self, scenes: list[Scene]) -> dict[str, HeadOutput]:
        grid = self.render(scenes)
        pyramid = self.backbone(grid)
        return {g.name: head(pyramid.level(g.stride), g.stride) for g, head in zip(HEAD_GROUPS, self.heads)}

    def loss(self, scenes: list[Scene], class_weights: dict[str, float] | None = None) -> LossTerms:
        outputs = self(scenes)
        targets = {g.name: [assign_targets(s.labels, g, self.spec.coarsen(g.stride)) for s in scenes]
                   for g in HEAD_GROUPS}
        return detection_loss(outputs, targets, class_weights)

    def detect(self, scenes: list[Scene], score_threshold: float = 0.3) -> list[list[Detection]]:
        """Pre-NMS detections of every head for each scene."""
        if not scenes:
            return []
        with no_grad():
            outputs = self(scenes)
        results = []
        for b in range(len(scenes)):
            dets = []
            for g in HEAD_GROUPS:
                dets.extend(decode(outputs[g.name], g, self.spec.coarsen(g.stride), score_threshold, b))
            results.append(dets)
        return results


def build_model(cfg: ModelSection | RunConfig | None = None, variant: str | None = None) -> Detector:
    if isinstance(cfg, RunConfig):
        cfg = cfg.model
    cfg = cfg or ModelSection()
    if variant is not None:
        cfg = replace(cfg, variant=variant)
    return Detector(cfg)


def forward(model: Detector, scene: Scene, score_threshold: float = 0.3) -> list[Detection]:
    return model.detect([scene], score_threshold)[0]


def infer(model: Detector, scenes: list[Scene], score_threshold: float = 0.3, nms_iou: float = 0.3,
          batch_size: int = 8) -> dict[int, list[Detection]]:
    """Post-NMS detections keyed by scene id."""
    out = {}
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        for scene, dets in zip(chunk, model.detect(chunk, score_threshold)):
            out[scene.scene_id] = nms(dets, nms_iou)
    return out


# -- checkpoints ----------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(model: Detector, path, epoch: int, config_hash: str) -> None:
    save_tensors(path, model.state_dict())
    meta = {"variant": model.variant.value, "config_hash": config_hash, "epoch": int(epoch),
            "model": asdict(model.cfg)}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[Detector, dict]:
    meta_file = sidecar_path(path)
    try:
        meta = json.loads(meta_file.read_text())
        section = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["model"].items()}
        cfg = ModelSection(**section)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint sidecar {meta_file}: {exc}") from exc
    model = Detector(cfg)
    model.load_state_dict(load_tensors(path))
    return model, meta
