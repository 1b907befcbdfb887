"""Mask sampling, Gaussian pixel masking and the two-pass unmasking schedule.

All randomness flows through an explicit numpy generator, so the whole
masking pipeline is a deterministic function of (image, graph, seed, config).
Regions are processed in plan order; where regions overlap, the later write
wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .graph import SceneGraph, bbox_to_pixels

PixelBox = tuple[int, int, int, int]


@dataclass
class MaskPlan:
    visual_masked: set[int] = field(default_factory=set)
    bbox_masked: set[int] = field(default_factory=set)
    pixel_regions: list[PixelBox] = field(default_factory=list)
    sigma: float = 1.0

    def validate(self, height: int, width: int) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        for box in self.pixel_regions:
            x0, y0, x1, y1 = box
            if not (0 <= x0 <= x1 <= width and 0 <= y0 <= y1 <= height):
                raise ValueError(f"pixel region {box} outside {width}x{height} bounds")


@dataclass
class ProgressiveSchedule:
    """Two passes by default: reveal the border ring, re-noise the core."""

    passes: int = 2
    keep_fraction: float = 0.75
    literal_corner_mode: bool = False

    def core_box(self, region: PixelBox) -> PixelBox:
        """Centered noise core; side lengths floor(f * extent), so the core is
        strictly smaller than any non-empty region whenever f < 1."""
        x0, y0, x1, y1 = region
        w, h = x1 - x0, y1 - y0
        cw = int(np.floor(self.keep_fraction * w))
        ch = int(np.floor(self.keep_fraction * h))
        ox, oy = (w - cw) // 2, (h - ch) // 2
        return (x0 + ox, y0 + oy, x0 + ox + cw, y0 + oy + ch)

    def corner_boxes(self, region: PixelBox) -> tuple[PixelBox, PixelBox]:
        """The literal variant's (revealed, re-noised) corner sub-boxes."""
        x0, y0, x1, y1 = region
        w, h = x1 - x0, y1 - y0
        sx = x0 + int(np.floor(self.keep_fraction * w))
        sy = y0 + int(np.floor(self.keep_fraction * h))
        return (sx, sy, x1, y1), (x0, y0, sx, sy)


def sample_mask_plan(
    graph: SceneGraph,
    p_rho: float,
    p_b: float,
    rng: np.random.Generator,
    image_size: int,
    sigma: float = 1.0,
) -> MaskPlan:
    """Independent per-node draws: visual masking first, then box masking."""
    if not (0.0 <= p_rho <= 1.0 and 0.0 <= p_b <= 1.0):
        raise ValueError("masking probabilities must lie in [0, 1]")
    plan = MaskPlan(sigma=sigma)
    for idx, node in enumerate(graph.nodes):
        if rng.random() < p_rho:
            plan.visual_masked.add(idx)
        if rng.random() < p_b:
            plan.bbox_masked.add(idx)
    for idx in sorted(plan.visual_masked):
        plan.pixel_regions.append(
            bbox_to_pixels(graph.nodes[idx].bbox, image_size, image_size)
        )
    return plan


def _noise(rng: np.random.Generator, sigma: float, shape, like: torch.Tensor) -> torch.Tensor:
    arr = rng.normal(0.0, sigma, size=shape)
    return torch.from_numpy(arr).to(dtype=like.dtype, device=like.device)


def apply_pixel_mask(
    image: torch.Tensor, plan: MaskPlan, rng: np.random.Generator
) -> torch.Tensor:
    """Replace plan regions of a (C, H, W) image with N(0, sigma^2) samples."""
    h, w = image.shape[-2:]
    plan.validate(h, w)
    out = image.clone()
    for x0, y0, x1, y1 in plan.pixel_regions:
        if x1 <= x0 or y1 <= y0:
            continue
        out[..., y0:y1, x0:x1] = _noise(rng, plan.sigma, (image.shape[0], y1 - y0, x1 - x0), image)
    return out


def regions_mask(regions: list[PixelBox], height: int, width: int) -> torch.Tensor:
    mask = torch.zeros(height, width, dtype=torch.bool)
    for x0, y0, x1, y1 in regions:
        mask[y0:y1, x0:x1] = True
    return mask


def pass_noise_mask(
    plan: MaskPlan, schedule: ProgressiveSchedule, pass_index: int, height: int, width: int
) -> torch.Tensor:
    """Boolean map of pixels that are noise at the input of the given pass."""
    if pass_index < 1 or pass_index > schedule.passes:
        raise ValueError(f"pass_index {pass_index} outside 1..{schedule.passes}")
    if pass_index == 1:
        return regions_mask(plan.pixel_regions, height, width)
    mask = torch.zeros(height, width, dtype=torch.bool)
    for region in plan.pixel_regions:
        if schedule.literal_corner_mode:
            x0, y0, x1, y1 = region
            mask[y0:y1, x0:x1] = True
            rx0, ry0, rx1, ry1 = schedule.corner_boxes(region)[0]
            mask[ry0:ry1, rx0:rx1] = False
        else:
            cx0, cy0, cx1, cy1 = schedule.core_box(region)
            mask[cy0:cy1, cx0:cx1] = True
    return mask


def progressive_update(
    current_input: torch.Tensor,
    generated: torch.Tensor,
    plan: MaskPlan,
    pass_index: int,
    schedule: ProgressiveSchedule,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Build the next pass input from the previous pass's output.

    Default mode reveals the border ring of every masked box from the
    generated image and re-noises the centered core. Pixels outside all
    masked boxes are carried over from the current input, which holds the
    source values there.
    """
    if pass_index >= schedule.passes:
        raise ValueError(f"pass {pass_index} is the last pass of {schedule.passes}")
    out = current_input.clone()
    c = current_input.shape[0]
    for region in plan.pixel_regions:
        x0, y0, x1, y1 = region
        if x1 <= x0 or y1 <= y0:
            continue
        if schedule.literal_corner_mode:
            (rx0, ry0, rx1, ry1), (nx0, ny0, nx1, ny1) = schedule.corner_boxes(region)
            out[..., ry0:ry1, rx0:rx1] = generated[..., ry0:ry1, rx0:rx1]
            if nx1 > nx0 and ny1 > ny0:
                out[..., ny0:ny1, nx0:nx1] = _noise(
                    rng, plan.sigma, (c, ny1 - ny0, nx1 - nx0), current_input
                )
        else:
            out[..., y0:y1, x0:x1] = generated[..., y0:y1, x0:x1]
            cx0, cy0, cx1, cy1 = schedule.core_box(region)
            if cx1 > cx0 and cy1 > cy0:
                out[..., cy0:cy1, cx0:cx1] = _noise(
                    rng, plan.sigma, (c, cy1 - cy0, cx1 - cx0), current_input
                )
    return out


def head2_schedule(
    window_shape: tuple[int, int], pass_index: int, schedule: ProgressiveSchedule
) -> torch.Tensor:
    """Supervision mask over the object window for the given pass.

    Pass 1 covers the border ring (everything outside the centered
    keep_fraction-scaled sub-box); the final pass covers the whole window.
    The two pass-1 parts partition the window exactly.
    """
    if pass_index < 1 or pass_index > schedule.passes:
        raise ValueError(f"pass_index {pass_index} outside 1..{schedule.passes}")
    h, w = window_shape
    if pass_index == schedule.passes:
        return torch.ones(h, w, dtype=torch.bool)
    if schedule.literal_corner_mode:
        mask = torch.zeros(h, w, dtype=torch.bool)
        (rx0, ry0, rx1, ry1), _ = schedule.corner_boxes((0, 0, w, h))
        mask[ry0:ry1, rx0:rx1] = True
        return mask
    mask = torch.ones(h, w, dtype=torch.bool)
    cx0, cy0, cx1, cy1 = schedule.core_box((0, 0, w, h))
    mask[cy0:cy1, cx0:cx1] = False
    return mask
