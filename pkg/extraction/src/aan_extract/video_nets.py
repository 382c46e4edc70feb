"""Appearance and motion backbones.

* ResNet-50 without its classification layer: one 2048-vector per frame,
  element-wise averaged over frames.
* RGB I3D (Inception-v1 inflated to 3-D) truncated after mixed_5c: the
  1024 x T/8 x H/32 x W/32 map is average-pooled over its full extent.
* FlowNetS contracting part: each consecutive frame pair yields a 1024-vector
  (global average over the deepest map), averaged over all pairs.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torchvision

from .weights import load_or_seed

_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


# ---------------------------------------------------------------------------
# ResNet-50
# ---------------------------------------------------------------------------


class ResNet50Features:
    def __init__(self, weights_dir=None, seed: int = 101):
        net = torchvision.models.resnet50(weights=None)
        self.pretrained = load_or_seed(net, "resnet50", weights_dir, seed)
        net.fc = nn.Identity()
        self.net = net.eval()

    @torch.no_grad()
    def __call__(self, frames: np.ndarray) -> np.ndarray:
        """frames [T, H, W, 3] uint8 -> averaged 2048-vector."""
        x = frames.astype(np.float32) / 255.0
        x = (x - _IMAGENET_MEAN) / _IMAGENET_STD
        batch = torch.from_numpy(x).permute(0, 3, 1, 2)
        outs = []
        for chunk in torch.split(batch, 16):
            outs.append(self.net(chunk))
        return torch.cat(outs).mean(dim=0).numpy().astype(np.float64)


def resnet50_features(frames: np.ndarray, weights_dir=None) -> np.ndarray:
    return ResNet50Features(weights_dir)(frames)


# ---------------------------------------------------------------------------
# I3D (Inception-v1, RGB stream) up to mixed_5c
# ---------------------------------------------------------------------------


class Unit3D(nn.Module):
    def __init__(self, cin, cout, kernel, stride=(1, 1, 1)):
        super().__init__()
        padding = tuple(k // 2 for k in kernel)
        self.conv = nn.Conv3d(cin, cout, kernel, stride=stride, padding=padding, bias=False)
        self.bn = nn.BatchNorm3d(cout, eps=0.001)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class InceptionBlock3D(nn.Module):
    def __init__(self, cin, c0, c1a, c1b, c2a, c2b, c3):
        super().__init__()
        self.b0 = Unit3D(cin, c0, (1, 1, 1))
        self.b1 = nn.Sequential(Unit3D(cin, c1a, (1, 1, 1)), Unit3D(c1a, c1b, (3, 3, 3)))
        self.b2 = nn.Sequential(Unit3D(cin, c2a, (1, 1, 1)), Unit3D(c2a, c2b, (3, 3, 3)))
        self.b3 = nn.Sequential(
            nn.MaxPool3d((3, 3, 3), stride=(1, 1, 1), padding=(1, 1, 1)),
            Unit3D(cin, c3, (1, 1, 1)),
        )

    def forward(self, x):
        return torch.cat([self.b0(x), self.b1(x), self.b2(x), self.b3(x)], dim=1)


class I3DBackbone(nn.Module):
    """Stem plus inception stages 3b..5c; output has 1024 channels."""

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            Unit3D(3, 64, (7, 7, 7), stride=(2, 2, 2)),
            nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
            Unit3D(64, 64, (1, 1, 1)),
            Unit3D(64, 192, (3, 3, 3)),
            nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
            InceptionBlock3D(192, 64, 96, 128, 16, 32, 32),     # 3b -> 256
            InceptionBlock3D(256, 128, 128, 192, 32, 96, 64),   # 3c -> 480
            nn.MaxPool3d((3, 3, 3), stride=(2, 2, 2), padding=(1, 1, 1)),
            InceptionBlock3D(480, 192, 96, 208, 16, 48, 64),    # 4b -> 512
            InceptionBlock3D(512, 160, 112, 224, 24, 64, 64),   # 4c -> 512
            InceptionBlock3D(512, 128, 128, 256, 24, 64, 64),   # 4d -> 512
            InceptionBlock3D(512, 112, 144, 288, 32, 64, 64),   # 4e -> 528
            InceptionBlock3D(528, 256, 160, 320, 32, 128, 128), # 4f -> 832
            nn.MaxPool3d((2, 2, 2), stride=(2, 2, 2)),
            InceptionBlock3D(832, 256, 160, 320, 32, 128, 128), # 5b -> 832
            InceptionBlock3D(832, 384, 192, 384, 48, 128, 128), # 5c -> 1024
        )

    def forward(self, x):
        return self.features(x)


class I3DFeatures:
    def __init__(self, weights_dir=None, seed: int = 102):
        net = I3DBackbone()
        self.pretrained = load_or_seed(net, "i3d_rgb", weights_dir, seed)
        self.net = net.eval()

    @torch.no_grad()
    def feature_map(self, frames: np.ndarray) -> torch.Tensor:
        """frames [T, H, W, 3] uint8 -> mixed_5c map [1024, T', H', W']."""
        x = frames.astype(np.float32) / 255.0 * 2.0 - 1.0  # [-1, 1]
        clip = torch.from_numpy(x).permute(3, 0, 1, 2).unsqueeze(0)  # [1, C, T, H, W]
        return self.net(clip)[0]

    @torch.no_grad()
    def __call__(self, frames: np.ndarray) -> np.ndarray:
        fmap = self.feature_map(frames)
        # the pooling kernel spans the whole residual map
        return fmap.mean(dim=(1, 2, 3)).numpy().astype(np.float64)


def i3d_features(frames: np.ndarray, weights_dir=None) -> np.ndarray:
    return I3DFeatures(weights_dir)(frames)


# ---------------------------------------------------------------------------
# FlowNetS contracting part
# ---------------------------------------------------------------------------


def _conv(cin, cout, k, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=True),
        nn.LeakyReLU(0.1, inplace=True),
    )


class FlowNetSEncoder(nn.Module):
    """conv1..conv6 of FlowNetS; input is a stacked frame pair (6 channels)."""

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            _conv(6, 64, 7, 2),
            _conv(64, 128, 5, 2),
            _conv(128, 256, 5, 2),
            _conv(256, 256, 3, 1),   # conv3_1
            _conv(256, 512, 3, 2),
            _conv(512, 512, 3, 1),   # conv4_1
            _conv(512, 512, 3, 2),
            _conv(512, 512, 3, 1),   # conv5_1
            _conv(512, 1024, 3, 2),  # conv6
        )

    def forward(self, x):
        return self.features(x)


class FlowNetSFeatures:
    def __init__(self, weights_dir=None, seed: int = 103):
        net = FlowNetSEncoder()
        self.pretrained = load_or_seed(net, "flownets", weights_dir, seed)
        self.net = net.eval()

    @torch.no_grad()
    def __call__(self, frames: np.ndarray) -> np.ndarray:
        """frames [T, H, W, 3] uint8, T >= 2 -> averaged 1024-vector over pairs."""
        if frames.shape[0] < 2:
            raise ValueError(f"need at least two frames for pairs, got {frames.shape[0]}")
        x = frames.astype(np.float32) / 255.0 - 0.5
        clip = torch.from_numpy(x).permute(0, 3, 1, 2)  # [T, 3, H, W]
        pairs = torch.cat([clip[:-1], clip[1:]], dim=1)  # [T-1, 6, H, W]
        outs = []
        for chunk in torch.split(pairs, 8):
            fmap = self.net(chunk)
            outs.append(fmap.mean(dim=(2, 3)))
        return torch.cat(outs).mean(dim=0).numpy().astype(np.float64)


def flownets_features(frames: np.ndarray, weights_dir=None) -> np.ndarray:
    return FlowNetSFeatures(weights_dir)(frames)
