"""Small convolutional encoders: object crops, masked-image features, perceptual."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class VisualEncoder(nn.Module):
    """3-layer conv encoder for object crops, trained jointly with the rest."""

    def __init__(self, out_dim: int = 64, crop_size: int = 16):
        super().__init__()
        self.out_dim = out_dim
        self.crop_size = crop_size
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, out_dim, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        if crops.shape[-2:] != (self.crop_size, self.crop_size):
            crops = F.interpolate(
                crops, size=(self.crop_size, self.crop_size), mode="bilinear", align_corners=False
            )
        h = self.net(crops)
        return F.adaptive_avg_pool2d(h, 1).flatten(1)


class ImageFeatureConv(nn.Module):
    """Shallow one-layer conv over the masked image plus a mask-indicator channel."""

    def __init__(self, out_channels: int = 32):
        super().__init__()
        self.out_channels = out_channels
        self.conv = nn.Conv2d(4, out_channels, 3, stride=1, padding=1)

    def forward(self, masked_image: torch.Tensor, noise_mask: torch.Tensor) -> torch.Tensor:
        if noise_mask.dim() == masked_image.dim() - 1:
            noise_mask = noise_mask.unsqueeze(1)
        return self.conv(torch.cat([masked_image, noise_mask.to(masked_image.dtype)], dim=1))


class PerceptualEncoder(nn.Module):
    """Frozen random-weight feature stack used by the perceptual loss.

    Weights are drawn from a fixed seed so the loss is a stable function of
    its inputs across runs and checkpoints.
    """

    def __init__(self, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(3, 8, 3, stride=2, padding=1),
                nn.Conv2d(8, 16, 3, stride=2, padding=1),
                nn.Conv2d(16, 32, 3, stride=2, padding=1),
            ]
        )
        for conv in self.convs:
            nn.init.kaiming_uniform_(conv.weight, a=0.2, generator=gen)
            nn.init.zeros_(conv.bias)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        return feats
