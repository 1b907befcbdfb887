"""End-to-end generator pipeline: graph features -> layout -> progressive decode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .encoders import ImageFeatureConv, VisualEncoder
from .generator import Decoder, GeneratorOutput, square_window_box
from .graph import SceneGraph, bbox_to_pixels
from .layout import compose_layout, fuse_conditioning
from .masking import (
    MaskPlan,
    ProgressiveSchedule,
    apply_pixel_mask,
    pass_noise_mask,
    progressive_update,
)
from .sgn import BoxHead, GraphFeaturizer, SceneGraphNet, SegmapHead, order_box_coords


def apply_plan(graph: SceneGraph, plan: MaskPlan) -> SceneGraph:
    """Copy of the graph with the plan's mask flags set on its nodes."""
    out = graph.copy()
    for idx in plan.visual_masked:
        out.nodes[idx].mask_visual = True
    for idx in plan.bbox_masked:
        out.nodes[idx].mask_bbox = True
    return out


@dataclass
class GraphForward:
    feature_graph: "object"
    pred_boxes_raw: torch.Tensor  # (N, 4) sigmoid output, unordered
    pred_boxes: torch.Tensor  # (N, 4) ordered
    segmaps: torch.Tensor  # (N, m, m)
    layout_boxes: torch.Tensor  # (N, 4) ground truth unless box-masked
    layout: torch.Tensor  # (node_dim, H, W)


class GeneratorBundle(nn.Module):
    """All generator-side parameters behind one module."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = VisualEncoder(cfg.visual_dim)
        self.featurizer = GraphFeaturizer(cfg, self.encoder)
        self.sgn = SceneGraphNet(cfg)
        self.box_head = BoxHead(cfg)
        self.segmap_head = SegmapHead(cfg)
        self.image_conv = ImageFeatureConv(cfg.image_feat_channels)
        self.decoder = Decoder(cfg)

    def graph_forward(self, graph: SceneGraph, image: torch.Tensor) -> GraphForward:
        """Runs featurization, message passing, heads and layout composition."""
        cfg = self.cfg
        fg = self.sgn(self.featurizer.build_features(graph, image))
        raw = self.box_head(fg.node_states)
        pred = order_box_coords(raw)
        segmaps = self.segmap_head(fg.node_states)
        rows = []
        for idx, node in enumerate(graph.nodes):
            if node.mask_bbox:
                rows.append(pred[idx])
            else:
                rows.append(torch.tensor(node.bbox, dtype=pred.dtype, device=pred.device))
        layout_boxes = (
            torch.stack(rows) if rows else torch.zeros(0, 4, dtype=pred.dtype, device=pred.device)
        )
        layout = compose_layout(
            fg.node_states,
            layout_boxes,
            segmaps,
            cfg.image_size,
            cfg.image_size,
            overlap=cfg.layout_overlap,
        )
        return GraphForward(
            feature_graph=fg,
            pred_boxes_raw=raw,
            pred_boxes=pred,
            segmaps=segmaps,
            layout_boxes=layout_boxes,
            layout=layout,
        )

    def decode_pass(
        self,
        layouts: torch.Tensor,  # (B, node_dim, H, W)
        masked_images: torch.Tensor,  # (B, 3, H, W)
        noise_masks: torch.Tensor,  # (B, H, W) bool
        noise: torch.Tensor,  # (B, noise_channels, 4, 4)
        window_boxes: Optional[list[tuple[int, int, int, int]]] = None,
    ) -> GeneratorOutput:
        img_feats = self.image_conv(masked_images, noise_masks)
        cond = fuse_conditioning(layouts, img_feats)
        return self.decoder(cond, noise, masked_images, window_boxes)

    def sample_noise(self, batch: int, rng: np.random.Generator, dtype=None, device=None) -> torch.Tensor:
        cfg = self.cfg
        arr = rng.standard_normal((batch, cfg.noise_channels, cfg.noise_size, cfg.noise_size))
        t = torch.from_numpy(arr)
        p = next(self.parameters())
        return t.to(dtype=dtype or p.dtype, device=device or p.device)


@dataclass
class ReconstructionResult:
    image: torch.Tensor  # (3, H, W) final pass, full-image head
    object_patch: Optional[torch.Tensor]  # (3, H, W) magnified window head
    pass_images: list[torch.Tensor] = field(default_factory=list)
    masked_inputs: list[torch.Tensor] = field(default_factory=list)
    window_box: Optional[tuple[int, int, int, int]] = None
    pred_boxes: Optional[torch.Tensor] = None
    plan: Optional[MaskPlan] = None


class Reconstructor(Protocol):
    def reconstruct(
        self,
        image: torch.Tensor,
        graph: SceneGraph,
        plan: MaskPlan,
        rng: np.random.Generator,
        target_node: Optional[int] = None,
    ) -> ReconstructionResult: ...

    def predicted_boxes(
        self, image: torch.Tensor, graph: SceneGraph
    ) -> Optional[torch.Tensor]: ...


def default_target_node(graph: SceneGraph, plan: MaskPlan) -> Optional[int]:
    if plan.visual_masked:
        return min(plan.visual_masked)
    return 0 if graph.nodes else None


class BundleReconstructor:
    """Inference wrapper: progressive multi-pass reconstruction, no gradients."""

    def __init__(self, bundle: GeneratorBundle):
        self.bundle = bundle
        cfg = bundle.cfg
        self.schedule = ProgressiveSchedule(
            passes=cfg.passes,
            keep_fraction=cfg.keep_fraction,
            literal_corner_mode=cfg.literal_corner_mode,
        )

    @torch.no_grad()
    def predicted_boxes(self, image: torch.Tensor, graph: SceneGraph) -> torch.Tensor:
        self.bundle.eval()
        return self.bundle.graph_forward(graph, image).pred_boxes

    @torch.no_grad()
    def reconstruct(
        self,
        image: torch.Tensor,
        graph: SceneGraph,
        plan: MaskPlan,
        rng: np.random.Generator,
        target_node: Optional[int] = None,
    ) -> ReconstructionResult:
        bundle = self.bundle
        bundle.eval()
        cfg = bundle.cfg
        size = cfg.image_size
        graph = apply_plan(graph, plan)
        gf = bundle.graph_forward(graph, image)

        if target_node is None:
            target_node = default_target_node(graph, plan)
        window = None
        if target_node is not None:
            node = graph.nodes[target_node]
            box = gf.layout_boxes[target_node].tolist() if node.mask_bbox else node.bbox
            px = bbox_to_pixels(box, size, size)
            if px[2] > px[0] and px[3] > px[1]:
                window = square_window_box(px, size, size, cfg.window_factor)

        layouts = gf.layout.unsqueeze(0)
        current = apply_pixel_mask(image, plan, rng)
        pass_images: list[torch.Tensor] = []
        masked_inputs: list[torch.Tensor] = []
        out = None
        for k in range(1, self.schedule.passes + 1):
            noise_mask = pass_noise_mask(plan, self.schedule, k, size, size).unsqueeze(0)
            noise = bundle.sample_noise(1, rng, dtype=image.dtype, device=image.device)
            masked_inputs.append(current.clone())
            out = bundle.decode_pass(
                layouts,
                current.unsqueeze(0),
                noise_mask,
                noise,
                [window] if window else None,
            )
            pass_images.append(out.image[0])
            if k < self.schedule.passes:
                current = progressive_update(
                    current, out.image[0], plan, k, self.schedule, rng
                )
        return ReconstructionResult(
            image=pass_images[-1],
            object_patch=out.object_patch[0] if out is not None else None,
            pass_images=pass_images,
            masked_inputs=masked_inputs,
            window_box=window,
            pred_boxes=gf.pred_boxes,
            plan=plan,
        )


class IdentityReconstructor:
    """Oracle stub: returns the source image untouched. Used by contract tests
    and as a fast stand-in when no checkpoint is loaded."""

    def predicted_boxes(self, image: torch.Tensor, graph: SceneGraph) -> None:
        return None

    def reconstruct(
        self,
        image: torch.Tensor,
        graph: SceneGraph,
        plan: MaskPlan,
        rng: np.random.Generator,
        target_node: Optional[int] = None,
    ) -> ReconstructionResult:
        size = image.shape[-1]
        window = None
        if target_node is None:
            target_node = default_target_node(graph, plan)
        if target_node is not None and graph.nodes:
            px = bbox_to_pixels(graph.nodes[target_node].bbox, size, size)
            if px[2] > px[0] and px[3] > px[1]:
                window = square_window_box(px, size, size, 1.0)
        patch = image
        if window is not None:
            from .generator import crop_object_window

            patch, window = crop_object_window(image, window, 1.0, size)
        return ReconstructionResult(
            image=image.clone(),
            object_patch=patch.clone(),
            pass_images=[image.clone()],
            masked_inputs=[apply_pixel_mask(image, plan, rng)],
            window_box=window,
            pred_boxes=None,
            plan=plan,
        )
