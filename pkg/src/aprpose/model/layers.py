"""Parameterized layers built on the ``diffcore`` primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn

from .. import diffcore as dc


def _init(weight: torch.Tensor, bias: torch.Tensor | None, fan_in: int, relu: bool) -> None:
    # He-normal ahead of a ReLU keeps activation scale through unnormalized stacks.
    # Biases stay small and random: zero biases put all-zero rows exactly on the ReLU kink.
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        if relu:
            nn.init.kaiming_normal_(weight, nonlinearity="relu")
        else:
            weight.uniform_(-bound, bound)
        if bias is not None:
            bias.uniform_(-bound, bound)


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, relu: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.empty(d_out)) if bias else None
        _init(self.weight, self.bias, d_in, relu)

    def forward(self, x):
        return dc.linear(x, self.weight, self.bias)


class Conv2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0,
                 relu: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel, kernel))
        self.bias = nn.Parameter(torch.empty(c_out))
        _init(self.weight, self.bias, c_in * kernel * kernel, relu)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return dc.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        return dc.layer_norm(x, self.weight, self.bias)


class Embedding(nn.Module):
    def __init__(self, rows: int, width: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(rows, width) * 0.02)

    def forward(self, index):
        return dc.embedding_lookup(self.weight, index)


class SharedMLP(nn.Module):
    """Per-row linear + ReLU stack applied along the last axis."""

    def __init__(self, d_in: int, widths: tuple[int, ...]):
        super().__init__()
        dims = (d_in,) + tuple(widths)
        self.layers = nn.ModuleList(Linear(a, b, relu=True) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for layer in self.layers:
            x = dc.relu(layer(x))
        return x


@dataclass
class Stage:
    """One step of a model's forward pipeline.

    ``fn`` maps the values stored under ``reads`` to new values stored under
    ``writes``. ``module`` owns every parameter the step touches, or is None
    for parameter-free steps.
    """
    name: str
    module: nn.Module | None
    reads: tuple[str, ...]
    writes: tuple[str, ...]
    fn: Callable[..., tuple]


def run_stages(stages: list[Stage], state: dict) -> dict:
    for st in stages:
        out = st.fn(*(state[k] for k in st.reads))
        state.update(zip(st.writes, out))
    return state
