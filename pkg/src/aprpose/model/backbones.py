"""Feature extractors for map-like inputs (image, BEV) and sampled points."""
from __future__ import annotations

import torch
from torch import nn

from .. import diffcore as dc
from ..errors import ContractError
from .layers import Conv2d, SharedMLP, Stage


class ConvStage(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.down = Conv2d(c_in, c_out, 3, stride=stride, padding=1, relu=True)
        self.conv = Conv2d(c_out, c_out, 3, padding=1, relu=True)

    def forward(self, x):
        return dc.relu(self.conv(dc.relu(self.down(x))))


class CnnBackbone(nn.Module):
    """Stride-2 stem plus four stages.

    The orientation endpoint is taken after stage 2 (reduction 8) and the
    position endpoint after stage 4 (reduction 16). With the default
    channels (16, 24, 40, 80, 112) and a 256 input these are 40 x 32 x 32
    and 112 x 16 x 16.
    """

    def __init__(self, in_channels: int, channels: tuple[int, int, int, int, int], input_size: int = 256):
        super().__init__()
        c0, c1, c2, c3, c4 = channels
        self.in_channels = in_channels
        self.input_size = input_size
        self.stem = Conv2d(in_channels, c0, 3, stride=2, padding=1, relu=True)
        self.stage1 = ConvStage(c0, c1, 2)
        self.stage2 = ConvStage(c1, c2, 2)
        self.stage3 = ConvStage(c2, c3, 2)
        self.stage4 = ConvStage(c3, c4, 1)

    def check_input(self, x):
        s = self.input_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.in_channels, s, s):
            raise ContractError(
                f"cnn backbone expects [N, {self.in_channels}, {s}, {s}], got {tuple(x.shape)}")

    def stages(self) -> list[Stage]:
        def stem(x):
            self.check_input(x)
            return (dc.relu(self.stem(x)),)

        return [
            Stage("backbone.stem", self.stem, ("input",), ("bb.h0",), stem),
            Stage("backbone.stage1", self.stage1, ("bb.h0",), ("bb.h1",), lambda h: (self.stage1(h),)),
            Stage("backbone.stage2", self.stage2, ("bb.h1",), ("feat_q",), lambda h: (self.stage2(h),)),
            Stage("backbone.stage3", self.stage3, ("feat_q",), ("bb.h3",), lambda h: (self.stage3(h),)),
            Stage("backbone.stage4", self.stage4, ("bb.h3",), ("feat_x",), lambda h: (self.stage4(h),)),
        ]

    def forward(self, x):
        """Returns (F_x, F_q)."""
        self.check_input(x)
        h = self.stage1(dc.relu(self.stem(x)))
        fq = self.stage2(h)
        fx = self.stage4(self.stage3(fq))
        return fx, fq


@torch.no_grad()
def farthest_points(xyz: torch.Tensor, npoint: int) -> torch.Tensor:
    """Batched greedy FPS on [B, N, 3]; returns [B, npoint] indices.

    Starts from the point farthest from the cloud mean so the selection is
    keyed on coordinates rather than row order. Ties go to the lowest index.
    """
    b, n, _ = xyz.shape
    ar = torch.arange(b)
    center = xyz.mean(dim=1, keepdim=True)
    far = ((xyz - center) ** 2).sum(-1).argmax(-1)
    mind = torch.full((b, n), float("inf"), dtype=xyz.dtype)
    out = torch.empty(b, npoint, dtype=torch.long)
    for i in range(npoint):
        out[:, i] = far
        d = ((xyz - xyz[ar, far].unsqueeze(1)) ** 2).sum(-1)
        mind = torch.minimum(mind, d)
        mind[ar, far] = -1.0
        far = mind.argmax(-1)
    return out


def gather_rows(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """x [B, N, C], idx [B, ...] -> [B, ..., C]."""
    b = x.shape[0]
    flat = idx.reshape(b, -1)
    out = torch.gather(x, 1, flat.unsqueeze(-1).expand(-1, -1, x.shape[-1]))
    return out.reshape(*idx.shape, x.shape[-1])


@torch.no_grad()
def ball_neighbors(centers: torch.Tensor, xyz: torch.Tensor, k: int, radius: float) -> torch.Tensor:
    """k nearest points per center; neighbors beyond ``radius`` are replaced by the nearest one."""
    d = torch.cdist(centers, xyz)
    k = min(k, xyz.shape[1])
    dist, idx = d.topk(k, dim=-1, largest=False, sorted=True)
    return torch.where(dist <= radius, idx, idx[..., :1].expand_as(idx))


class SetAbstraction(nn.Module):
    def __init__(self, npoint: int, nsample: int, radius: float, d_in: int, widths: tuple[int, ...]):
        super().__init__()
        self.npoint = npoint
        self.nsample = nsample
        self.radius = radius
        self.mlp = SharedMLP(d_in + 3, widths)

    @torch.no_grad()
    def group(self, xyz):
        centers_idx = farthest_points(xyz, self.npoint)
        centers = gather_rows(xyz, centers_idx)
        neighbors = ball_neighbors(centers, xyz, self.nsample, self.radius)
        return centers, neighbors

    def forward(self, xyz, features, centers, neighbors):
        local = (gather_rows(xyz, neighbors) - centers.unsqueeze(2)) / self.radius
        grouped = dc.concat([local, gather_rows(features, neighbors)], axis=-1)
        return dc.reduce_max(self.mlp(grouped), axis=2)


class FeaturePropagation(nn.Module):
    """Fuses inverse-distance-interpolated fine features with coarse features."""

    def __init__(self, d_fine: int, d_coarse: int, widths: tuple[int, ...]):
        super().__init__()
        self.mlp = SharedMLP(d_fine + d_coarse, widths)

    @staticmethod
    @torch.no_grad()
    def weights(targets, sources, k: int = 3):
        d = torch.cdist(targets, sources)
        dist, idx = d.topk(min(k, sources.shape[1]), dim=-1, largest=False)
        w = 1.0 / (dist + 1e-8)
        return idx, w / w.sum(-1, keepdim=True)

    def forward(self, fine_features, coarse_features, idx, w):
        interp = (gather_rows(fine_features, idx) * w.unsqueeze(-1)).sum(2)
        return self.mlp(dc.concat([interp, coarse_features], axis=-1))


class PointBackbone(nn.Module):
    """Two set-abstraction stages (4096 -> 512 -> 128) and one propagation stage.

    Emits 128 feature vectors of width ``d_feat`` with their centroid
    coordinates; the same vectors feed both branches.
    """

    def __init__(self, d_feat: int = 128, sa1_widths=(32, 32, 64), sa2_widths=(64, 64, 128),
                 num_points: int = 4096, radii=(0.1, 0.25), nsample: int = 32):
        super().__init__()
        self.num_points = num_points
        self.sa1 = SetAbstraction(512, nsample, radii[0], 6, tuple(sa1_widths))
        self.sa2 = SetAbstraction(128, nsample, radii[1], sa1_widths[-1], tuple(sa2_widths))
        self.fp = FeaturePropagation(sa1_widths[-1], sa2_widths[-1], (d_feat, d_feat))

    def check_input(self, x):
        if x.dim() != 3 or tuple(x.shape[1:]) != (self.num_points, 6):
            raise ContractError(f"point backbone expects [N, {self.num_points}, 6], got {tuple(x.shape)}")

    @torch.no_grad()
    def group(self, x):
        self.check_input(x)
        xyz = x[..., :3].detach()
        c1, n1 = self.sa1.group(xyz)
        c2, n2 = self.sa2.group(c1)
        fidx, fw = FeaturePropagation.weights(c2, c1)
        return xyz, c1, n1, c2, n2, fidx, fw

    def stages(self) -> list[Stage]:
        return [
            Stage("backbone.group", None, ("input",),
                  ("bb.xyz", "bb.c1", "bb.n1", "centroids", "bb.n2", "bb.fidx", "bb.fw"), self.group),
            Stage("backbone.sa1", self.sa1, ("bb.xyz", "input", "bb.c1", "bb.n1"), ("bb.f1",),
                  lambda xyz, f, c, n: (self.sa1(xyz, f, c, n),)),
            Stage("backbone.sa2", self.sa2, ("bb.c1", "bb.f1", "centroids", "bb.n2"), ("bb.f2",),
                  lambda xyz, f, c, n: (self.sa2(xyz, f, c, n),)),
            Stage("backbone.fp", self.fp, ("bb.f1", "bb.f2", "bb.fidx", "bb.fw"), ("feat",),
                  lambda f1, f2, i, w: (self.fp(f1, f2, i, w),)),
        ]

    def forward(self, x):
        """Returns (vectors [B, 128, d_feat], centroids [B, 128, 3])."""
        xyz, c1, n1, c2, n2, fidx, fw = self.group(x)
        f1 = self.sa1(xyz, x, c1, n1)
        f2 = self.sa2(c1, f1, c2, n2)
        return self.fp(f1, f2, fidx, fw), c2
