"""Turning backbone features into transformer tokens with learned encodings."""
from __future__ import annotations

import torch
from torch import nn

from .. import diffcore as dc
from ..errors import ContractError
from .layers import Embedding, Linear


class MapTokens(nn.Module):
    """C x H x W map -> H*W tokens (row-major) with learned row/column encodings.

    The first half of each encoding comes from the row table, the second
    half from the column table.
    """

    def __init__(self, channels: int, d_model: int, height: int, width: int):
        super().__init__()
        if d_model % 2:
            raise ContractError(f"d_model must be even for map encodings, got {d_model}")
        self.proj = Linear(channels, d_model)  # 1x1 convolution
        self.row_embed = Embedding(height, d_model // 2)
        self.col_embed = Embedding(width, d_model // 2)
        self.height = height
        self.width = width

    def encodings(self) -> torch.Tensor:
        rows = self.row_embed(torch.arange(self.height))
        cols = self.col_embed(torch.arange(self.width))
        h, w = self.height, self.width
        grid = dc.concat([rows[:, None, :].expand(h, w, -1), cols[None, :, :].expand(h, w, -1)], axis=-1)
        return grid.reshape(h * w, -1)

    def forward(self, fmap):
        b, c, h, w = fmap.shape
        if (h, w) != (self.height, self.width):
            raise ContractError(f"map tokens expect {self.height}x{self.width} maps, got {tuple(fmap.shape)}")
        flat = dc.transpose(dc.reshape(fmap, (b, c, h * w)), 1, 2)
        return dc.add(self.proj(flat), self.encodings())


def grid_order(centroids: torch.Tensor, groups: int = 8, cols: int = 4) -> torch.Tensor:
    """Permutation [B, 128] arranging points by z-group, then x-column, then y.

    Points are sorted by z and cut into ``groups`` groups; inside a group,
    sorted by x into ``cols`` columns; inside a column, sorted by y. Every
    sort is stable over original indices, so ties keep index order.
    """
    b, n, _ = centroids.shape
    per_group = n // groups
    per_col = per_group // cols
    if groups * per_group != n or cols * per_col != per_group:
        raise ContractError(f"cannot arrange {n} points into {groups} groups of {cols} columns")

    def stable_sort(idx, key_axis):
        # idx [..., m] holds point indices; sort by original index, then stably by the key.
        idx = idx.sort(dim=-1).values
        keys = torch.gather(centroids[..., key_axis], 1, idx.reshape(b, -1)).reshape(idx.shape)
        return torch.gather(idx, -1, keys.argsort(dim=-1, stable=True))

    idx = torch.arange(n).expand(b, n)
    idx = stable_sort(idx, 2).reshape(b, groups, per_group)
    idx = stable_sort(idx, 0).reshape(b, groups, cols, per_col)
    idx = stable_sort(idx, 1)
    return idx.reshape(b, n)


class GridTokens(nn.Module):
    """128 point vectors -> 128 tokens with z-group / x-slot / y-slot encodings.

    Encoding widths are d_model/2 (z), d_model/4 (x) and d_model/4 (y).
    """

    def __init__(self, d_feat: int, d_model: int, groups: int = 8, cols: int = 4):
        super().__init__()
        if d_model % 4:
            raise ContractError(f"d_model must be divisible by 4 for point encodings, got {d_model}")
        self.groups = groups
        self.cols = cols
        self.proj = Linear(d_feat, d_model)
        self.z_embed = Embedding(groups, d_model // 2)
        self.x_embed = Embedding(cols, d_model // 4)
        self.y_embed = Embedding(cols, d_model // 4)

    def encodings(self) -> torch.Tensor:
        g, c = self.groups, self.cols
        zi = torch.arange(g).repeat_interleave(c * c)
        xi = torch.arange(c).repeat_interleave(c).repeat(g)
        yi = torch.arange(c).repeat(g * c)
        return dc.concat([self.z_embed(zi), self.x_embed(xi), self.y_embed(yi)], axis=-1)

    def forward(self, vectors, centroids):
        n = self.groups * self.cols * self.cols
        if vectors.shape[1] != n or centroids.shape[:2] != vectors.shape[:2]:
            raise ContractError(f"grid tokens expect {n} vectors with centroids, got "
                                f"{tuple(vectors.shape)} and {tuple(centroids.shape)}")
        order = grid_order(centroids.detach(), self.groups, self.cols)
        arranged = torch.gather(vectors, 1, order.unsqueeze(-1).expand(-1, -1, vectors.shape[-1]))
        return dc.add(self.proj(arranged), self.encodings())
