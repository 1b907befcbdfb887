"""SPADE-style decoder with a full-image head and a magnified object head.

The block stack runs at 4, 8, 16, 32, 64 px. Each residual block normalizes
per channel over the spatial dims, modulates with scale/shift maps convolved
from the layout channels of the conditioning, and concatenates the image
feature channels into its first convolution (the skip path stays image-free).
Head 2 reads the trunk features cropped to a square object window plus the
matching crop of the masked input image; with the residual connection on, its
penultimate features are concatenated into head 1's output convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


class SpadeNorm(nn.Module):
    """Parameter-free spatial normalization with conditioning-driven affine maps.

    Initialized so scale == 1 and shift == 0: the fresh module is plain
    normalization.
    """

    def __init__(self, channels: int, cond_channels: int, hidden: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.scale = nn.Conv2d(hidden, channels, 3, padding=1)
        self.shift = nn.Conv2d(hidden, channels, 3, padding=1)
        nn.init.zeros_(self.scale.weight)
        nn.init.ones_(self.scale.bias)
        nn.init.zeros_(self.shift.weight)
        nn.init.zeros_(self.shift.bias)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(-1, -2), keepdim=True)
        var = x.var(dim=(-1, -2), keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + self.eps)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.shared(cond), 0.2)
        return self.normalize(x) * self.scale(h) + self.shift(h)


class SpadeResBlock(nn.Module):
    """Residual block; middle width is min(in, out) as in the reference table."""

    def __init__(self, fin: int, fout: int, layout_channels: int, img_channels: int, hidden: int):
        super().__init__()
        self.layout_channels = layout_channels
        fmid = min(fin, fout)
        self.norm_0 = SpadeNorm(fin, layout_channels, hidden)
        self.conv_0 = nn.Conv2d(fin + img_channels, fmid, 3, padding=1)
        self.norm_1 = SpadeNorm(fmid, layout_channels, hidden)
        self.conv_1 = nn.Conv2d(fmid, fout, 3, padding=1)
        self.norm_s = SpadeNorm(fin, layout_channels, hidden)
        self.conv_s = nn.Conv2d(fin, fout, 1, bias=False)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-2:] != x.shape[-2:]:
            raise ValueError("conditioning must be resized to the block input")
        layout = cond[:, : self.layout_channels]
        img = cond[:, self.layout_channels :]
        dx = self.conv_0(torch.cat([F.leaky_relu(self.norm_0(x, layout), 0.2), img], dim=1))
        dx = self.conv_1(F.leaky_relu(self.norm_1(dx, layout), 0.2))
        sx = self.conv_s(self.norm_s(x, layout))
        return dx + sx


@dataclass
class GeneratorOutput:
    image: torch.Tensor  # (B, 3, H, W) full reconstruction
    object_patch: torch.Tensor  # (B, 3, H, W) magnified window reconstruction
    object_features: torch.Tensor  # head-2 penultimate features
    window_boxes: list[tuple[int, int, int, int]]


def square_window_box(
    bbox_px: Sequence[float], height: int, width: int, factor: float
) -> tuple[int, int, int, int]:
    """Square window of side factor * max(w, h) centered on the box.

    A scaled window that crosses the image border falls back to factor 1.0;
    if the unit-factor window still crosses, it is translated inside. The
    result always lies fully inside the image.
    """
    x0, y0, x1, y1 = bbox_px
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise ValueError(f"zero-area bbox {tuple(bbox_px)}")

    def place(fac: float) -> tuple[int, int, int, int, int]:
        side = int(round(fac * max(w, h)))
        side = max(1, min(side, width, height))
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        wx0 = int(round(cx - side / 2.0))
        wy0 = int(round(cy - side / 2.0))
        return wx0, wy0, wx0 + side, wy0 + side, side

    wx0, wy0, wx1, wy1, side = place(factor)
    if factor > 1.0 and (wx0 < 0 or wy0 < 0 or wx1 > width or wy1 > height):
        wx0, wy0, wx1, wy1, side = place(1.0)
    wx0 = min(max(wx0, 0), width - side)
    wy0 = min(max(wy0, 0), height - side)
    return wx0, wy0, wx0 + side, wy0 + side


def crop_object_window(
    image: torch.Tensor,
    bbox_px: Sequence[float],
    factor: float,
    out_size: Optional[int] = None,
) -> tuple[torch.Tensor, tuple[int, int, int, int]]:
    """Crop the square window around a box and magnify it to out_size."""
    h, w = image.shape[-2:]
    box = square_window_box(bbox_px, h, w, factor)
    x0, y0, x1, y1 = box
    crop = image[..., y0:y1, x0:x1]
    out_size = out_size or h
    squeeze = crop.dim() == 3
    if squeeze:
        crop = crop.unsqueeze(0)
    crop = F.interpolate(crop, size=(out_size, out_size), mode="bilinear", align_corners=False)
    if squeeze:
        crop = crop.squeeze(0)
    return crop, box


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.decoder_channels()
        cond_ch = cfg.node_dim + cfg.image_feat_channels
        fins = (cfg.noise_channels,) + chans[:-1]
        self.blocks = nn.ModuleList(
            SpadeResBlock(fin, fout, cfg.node_dim, cfg.image_feat_channels, cfg.spade_hidden)
            for fin, fout in zip(fins, chans)
        )
        self.cond_channels = cond_ch
        top = chans[-1]
        head1_in = top + (top if cfg.residual_connection else 0)
        self.out_conv_a = nn.Conv2d(head1_in, top, 3, padding=1)
        self.out_conv_b = nn.Conv2d(top, 3, 1)
        self.out_conv2_a = nn.Conv2d(top + 3, top, 3, padding=1)
        self.out_conv2_b = nn.Conv2d(top, 3, 1)

    def _out_act(self, x: torch.Tensor) -> torch.Tensor:
        return self.cfg.out_scale * torch.tanh(x)

    def forward(
        self,
        cond: torch.Tensor,
        noise: torch.Tensor,
        masked_image: torch.Tensor,
        window_boxes: Optional[list[tuple[int, int, int, int]]] = None,
    ) -> GeneratorOutput:
        if cond.shape[1] != self.cond_channels:
            raise ValueError(
                f"conditioning has {cond.shape[1]} channels, expected {self.cond_channels}"
            )
        b = cond.shape[0]
        h, w = cond.shape[-2:]
        if window_boxes is None:
            window_boxes = [(0, 0, w, h)] * b
        x = noise
        for i, block in enumerate(self.blocks):
            if i > 0:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            cond_i = cond
            if cond_i.shape[-2:] != x.shape[-2:]:
                cond_i = F.interpolate(cond, size=x.shape[-2:], mode="area")
            x = block(x, cond_i)
        trunk = x

        win_feats = []
        win_rgb = []
        for k, (x0, y0, x1, y1) in enumerate(window_boxes):
            f = trunk[k : k + 1, :, y0:y1, x0:x1]
            win_feats.append(F.interpolate(f, size=(h, w), mode="bilinear", align_corners=False))
            r = masked_image[k : k + 1, :, y0:y1, x0:x1]
            win_rgb.append(F.interpolate(r, size=(h, w), mode="bilinear", align_corners=False))
        obj_in = torch.cat([torch.cat(win_feats, dim=0), torch.cat(win_rgb, dim=0)], dim=1)
        obj_feats = F.leaky_relu(self.out_conv2_a(obj_in), 0.2)
        object_patch = self._out_act(self.out_conv2_b(obj_feats))

        if self.cfg.residual_connection:
            head1_in = torch.cat([trunk, obj_feats], dim=1)
        else:
            head1_in = trunk
        h1 = F.leaky_relu(self.out_conv_a(head1_in), 0.2)
        image = self._out_act(self.out_conv_b(h1))
        return GeneratorOutput(
            image=image,
            object_patch=object_patch,
            object_features=obj_feats,
            window_boxes=list(window_boxes),
        )


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int, base: int = 32):
        super().__init__()
        c = base
        self.layers = nn.ModuleList(
            [
                nn.Conv2d(in_channels, c, 4, stride=2, padding=1),
                nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
                nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
                nn.Conv2d(4 * c, 4 * c, 3, stride=1, padding=1),
            ]
        )
        self.head = nn.Conv2d(4 * c, 1, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        h = x
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.2)
            feats.append(h)
        return self.head(h), feats


class MultiScaleImageDiscriminator(nn.Module):
    """Two patch discriminators: full resolution and 2x downsampled."""

    def __init__(self, cfg: ModelConfig, base: int = 32):
        super().__init__()
        in_ch = 3 + cfg.node_dim
        self.scales = nn.ModuleList([PatchDiscriminator(in_ch, base), PatchDiscriminator(in_ch, base)])

    def forward(
        self, image: torch.Tensor, layout: torch.Tensor
    ) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        x = torch.cat([image, layout], dim=1)
        logits = []
        feats: list[torch.Tensor] = []
        for i, disc in enumerate(self.scales):
            inp = x if i == 0 else F.avg_pool2d(x, 2)
            lg, fs = disc(inp)
            logits.append(lg)
            feats.extend(fs)
        return logits, feats


class ObjectDiscriminator(nn.Module):
    """Patch-level adversarial score with class projection plus an aux classifier."""

    def __init__(self, num_classes: int, base: int = 32):
        super().__init__()
        c = base
        self.body = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 4 * c, 3, stride=1, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.adv = nn.Linear(4 * c, 1)
        self.embed = nn.Embedding(num_classes, 4 * c)
        self.classifier = nn.Linear(4 * c, num_classes)

    def forward(
        self, patch: torch.Tensor, class_ids: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        feat = F.adaptive_avg_pool2d(self.body(patch), 1).flatten(1)
        adv = self.adv(feat).squeeze(-1) + (self.embed(class_ids) * feat).sum(-1)
        return adv, self.classifier(feat)
