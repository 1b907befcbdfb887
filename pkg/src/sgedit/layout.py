"""2D layout: paint node feature vectors into their boxes, weighted by segmaps."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .graph import bbox_to_pixels


def resize_segmap(segmap: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Bilinear resize to the box extent; nearest when either side is < 2 px.

    A map already at the target resolution passes through unchanged.
    """
    if segmap.shape == (height, width):
        return segmap
    mode = "nearest" if min(height, width) < 2 or min(segmap.shape) < 2 else "bilinear"
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    return F.interpolate(segmap[None, None], size=(height, width), mode=mode, **kwargs)[0, 0]


def compose_layout(
    node_states: torch.Tensor,
    boxes: torch.Tensor,
    segmaps: torch.Tensor,
    height: int,
    width: int,
    overlap: str = "sum",
) -> torch.Tensor:
    """Returns the (node_dim, height, width) feature canvas.

    Each node's segmap is resized to its pixel box and the outer product with
    its state vector is written there. Overlaps either sum (default, linear in
    the states) or take the channel-wise max. A box that rounds to zero area
    contributes a single pixel at its origin.
    """
    if node_states.shape[0] != boxes.shape[0] or boxes.shape[0] != segmaps.shape[0]:
        raise ValueError("node_states, boxes and segmaps must align")
    d = node_states.shape[1] if node_states.ndim == 2 else 0
    canvas = torch.zeros(d, height, width, dtype=node_states.dtype, device=node_states.device)
    for state, box, segmap in zip(node_states, boxes, segmaps):
        x0, y0, x1, y1 = bbox_to_pixels(box.detach().cpu().tolist(), height, width)
        if x1 <= x0 or y1 <= y0:
            x0 = min(x0, width - 1)
            y0 = min(y0, height - 1)
            x1, y1 = x0 + 1, y0 + 1
        local = resize_segmap(segmap, y1 - y0, x1 - x0)
        patch = state[:, None, None] * local[None]
        if overlap == "max":
            canvas[:, y0:y1, x0:x1] = torch.maximum(canvas[:, y0:y1, x0:x1], patch)
        else:
            canvas[:, y0:y1, x0:x1] = canvas[:, y0:y1, x0:x1] + patch
    return canvas


def fuse_conditioning(layout: torch.Tensor, img_feats: torch.Tensor) -> torch.Tensor:
    """Channel-wise concat; the decoder splits it back at the layout width."""
    if layout.shape[-2:] != img_feats.shape[-2:]:
        raise ValueError(
            f"spatial mismatch: layout {tuple(layout.shape[-2:])} vs "
            f"image features {tuple(img_feats.shape[-2:])}"
        )
    return torch.cat([layout, img_feats], dim=-3)
