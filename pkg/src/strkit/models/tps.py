"""Thin-plate-spline rectification of curved or perspective text.

A localization network predicts F fiducial points in normalized image
coordinates; the warper solves the spline that moves the canonical
fiducials onto the predicted ones and bilinearly resamples the input
onto a fixed 32x100 output grid. When the predicted fiducials collapse
onto a line the spline system is meaningless, so the warper falls back
to the identity warp for that sample and counts the event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbones import he_init_convs


@dataclass(frozen=True)
class TpsConfig:
    fiducial_count: int = 20
    out_h: int = 32
    out_w: int = 100

    def __post_init__(self):
        if self.fiducial_count < 4 or self.fiducial_count % 2:
            raise ValueError("fiducial_count must be an even number >= 4")


def base_fiducials(count: int) -> np.ndarray:
    """Canonical fiducials: count/2 along the top edge, count/2 along
    the bottom, x spread evenly over [-1, 1]."""
    half = count // 2
    x = np.linspace(-1.0, 1.0, half)
    top = np.stack([x, -np.ones(half)], axis=1)
    bottom = np.stack([x, np.ones(half)], axis=1)
    return np.concatenate([top, bottom], axis=0)


def _radial_basis(r: np.ndarray) -> np.ndarray:
    return np.square(r) * np.log(r + 1e-6)


class TpsWarper(nn.Module):
    """Differentiable TPS warp for a fixed output raster size."""

    def __init__(self, config: TpsConfig):
        super().__init__()
        self.config = config
        F_count = config.fiducial_count
        C = base_fiducials(F_count)

        # delta_C: the (F+3) x (F+3) spline system for the base fiducials.
        dist = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
        hat_C = _radial_basis(dist)
        np.fill_diagonal(hat_C, 0.0)
        delta_C = np.concatenate(
            [
                np.concatenate([np.ones((F_count, 1)), C, hat_C], axis=1),
                np.concatenate([np.zeros((2, 3)), C.T], axis=1),
                np.concatenate([np.zeros((1, 3)), np.ones((1, F_count))], axis=1),
            ],
            axis=0,
        )
        inv_delta_C = np.linalg.inv(delta_C)

        # P_hat: output grid coordinates through the spline basis.
        ys = np.linspace(-1.0, 1.0, config.out_h)
        xs = np.linspace(-1.0, 1.0, config.out_w)
        grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
        P = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)  # (HW, 2)
        r = np.linalg.norm(P[:, None, :] - C[None, :, :], axis=2)
        P_hat = np.concatenate([np.ones((P.shape[0], 1)), P, _radial_basis(r)], axis=1)

        self.register_buffer("inv_delta_C", torch.from_numpy(inv_delta_C), persistent=False)
        self.register_buffer("P_hat", torch.from_numpy(P_hat), persistent=False)
        self.register_buffer("identity_grid", torch.from_numpy(P), persistent=False)
        self.degenerate_count = 0

    def _degenerate(self, fiducials: torch.Tensor) -> torch.Tensor:
        """Per-sample flag: fiducials nearly collinear (rank < 2)."""
        centered = fiducials - fiducials.mean(dim=1, keepdim=True)
        sv = torch.linalg.svdvals(centered.detach())
        return sv[:, 1] < 1e-6

    def forward(self, images: torch.Tensor, fiducials: torch.Tensor) -> torch.Tensor:
        """Warp ``images`` (B, C, H, W) by per-sample fiducials (B, F, 2)."""
        B = images.shape[0]
        if fiducials.shape != (B, self.config.fiducial_count, 2):
            raise ValueError(
                f"expected fiducials of shape ({B}, {self.config.fiducial_count}, 2), "
                f"got {tuple(fiducials.shape)}"
            )
        dtype = images.dtype
        inv_delta = self.inv_delta_C.to(dtype)
        p_hat = self.P_hat.to(dtype)
        zeros = torch.zeros(B, 3, 2, dtype=dtype, device=images.device)
        T = inv_delta @ torch.cat([fiducials.to(dtype), zeros], dim=1)  # (B, F+3, 2)
        grid = (p_hat @ T).view(B, self.config.out_h, self.config.out_w, 2)

        bad = self._degenerate(fiducials)
        if bool(bad.any()):
            self.degenerate_count += int(bad.sum())
            identity = self.identity_grid.to(dtype).view(
                1, self.config.out_h, self.config.out_w, 2
            )
            grid = torch.where(bad.view(B, 1, 1, 1), identity, grid)
        return F.grid_sample(
            images, grid, mode="bilinear", padding_mode="border", align_corners=True
        )


class LocalizationNetwork(nn.Module):
    """4 conv layers pooling down to a fiducial regression.

    The final layer starts at zero so the initial prediction is exactly
    the canonical fiducials (identity warp); predictions are clamped to
    the normalized square [-1, 1]^2.
    """

    def __init__(self, config: TpsConfig):
        super().__init__()
        self.config = config
        self.conv = nn.Sequential(
            nn.Conv2d(1, 32, 3, 1, 1, bias=False), nn.BatchNorm2d(32), nn.ReLU(True),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(32, 64, 3, 1, 1, bias=False), nn.BatchNorm2d(64), nn.ReLU(True),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(64, 128, 3, 1, 1, bias=False), nn.BatchNorm2d(128), nn.ReLU(True),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(128, 256, 3, 1, 1, bias=False), nn.BatchNorm2d(256), nn.ReLU(True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc1 = nn.Linear(256, 256)
        self.fc2 = nn.Linear(256, config.fiducial_count * 2)
        he_init_convs(self.conv)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)
        base = torch.from_numpy(base_fiducials(config.fiducial_count)).float()
        self.register_buffer("base", base)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.conv(images).flatten(1)
        delta = self.fc2(F.relu(self.fc1(x)))
        fiducials = self.base.unsqueeze(0) + delta.view(
            -1, self.config.fiducial_count, 2
        )
        return fiducials.clamp(-1.0, 1.0)


class TpsTransform(nn.Module):
    """Localization network plus warper; input and output are 32x100."""

    def __init__(self, config: TpsConfig | None = None):
        super().__init__()
        self.config = config or TpsConfig()
        self.localization = LocalizationNetwork(self.config)
        self.warper = TpsWarper(self.config)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        fiducials = self.localization(images)
        return self.warper(images, fiducials.to(images.dtype))
