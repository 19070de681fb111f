"""Two-branch pose regressor: backbone -> (position, orientation) transformers -> heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..errors import ContractError
from .backbones import CnnBackbone, PointBackbone
from .layers import Stage, run_stages
from .tokens import GridTokens, MapTokens
from .transformer import MlpHead, TransformerBranch

MODALITIES = ("image", "bev", "points")


@dataclass
class AprConfig:
    modality: str = "image"
    d_model: int = 128
    heads: int = 4
    layers: int = 6
    ffn: int = 256
    dropout: float = 0.1
    input_size: int = 256
    backbone_channels: tuple = (16, 24, 40, 80, 112)
    d_feat: int = 128
    sa1_widths: tuple = (32, 32, 64)
    sa2_widths: tuple = (64, 64, 128)
    point_radii: tuple = (0.1, 0.25)
    nsample: int = 32

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        self.sa1_widths = tuple(self.sa1_widths)
        self.sa2_widths = tuple(self.sa2_widths)
        self.point_radii = tuple(self.point_radii)
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")
        if self.d_model % self.heads:
            raise ContractError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.d_model % (4 if self.modality == "points" else 2):
            raise ContractError(f"d_model {self.d_model} cannot be split into positional encodings")
        if self.layers < 1:
            raise ContractError("need at least one transformer layer")
        if len(self.backbone_channels) != 5:
            raise ContractError("backbone_channels lists stem + 4 stage widths")
        if self.input_size % 16:
            raise ContractError(f"input_size must be a multiple of 16, got {self.input_size}")

    @property
    def in_channels(self) -> int:
        return 3 if self.modality == "image" else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def desk_config(modality: str = "image") -> AprConfig:
    return AprConfig(modality=modality)


def reduced_config(modality: str) -> AprConfig:
    """Small double-precision-friendly config used by the gradient checks."""
    return AprConfig(modality=modality, d_model=16, heads=2, layers=2, ffn=32, dropout=0.0,
                     input_size=64, backbone_channels=(4, 4, 6, 6, 8), d_feat=16,
                     sa1_widths=(8, 8), sa2_widths=(16, 16), nsample=8)


class AprModel(nn.Module):
    """Position branch reads F_x, orientation branch reads F_q.

    ``forward`` returns (normalized position [B, 3], raw quaternion [B, 4]).
    """

    def __init__(self, cfg: AprConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        if cfg.modality == "points":
            self.backbone = PointBackbone(cfg.d_feat, cfg.sa1_widths, cfg.sa2_widths,
                                          radii=cfg.point_radii, nsample=cfg.nsample)
            self.position_tokens = GridTokens(cfg.d_feat, d)
            self.orientation_tokens = GridTokens(cfg.d_feat, d)
        else:
            self.backbone = CnnBackbone(cfg.in_channels, cfg.backbone_channels, cfg.input_size)
            c_q, c_x = cfg.backbone_channels[2], cfg.backbone_channels[4]
            s = cfg.input_size
            self.position_tokens = MapTokens(c_x, d, s // 16, s // 16)
            self.orientation_tokens = MapTokens(c_q, d, s // 8, s // 8)
        branch = (d, cfg.heads, cfg.layers, cfg.ffn, cfg.dropout)
        self.position_branch = TransformerBranch(*branch)
        self.orientation_branch = TransformerBranch(*branch)
        self.position_head = MlpHead(d, 3)
        self.orientation_head = MlpHead(d, 4)
        with torch.no_grad():
            self.orientation_head.out.bias.copy_(torch.tensor([1.0, 0.0, 0.0, 0.0]))

    def stages(self) -> list[Stage]:
        st = list(self.backbone.stages())
        if self.cfg.modality == "points":
            st += [
                Stage("position.tokens", self.position_tokens, ("feat", "centroids"), ("position.tokens",),
                      lambda f, c: (self.position_tokens(f, c),)),
                Stage("orientation.tokens", self.orientation_tokens, ("feat", "centroids"),
                      ("orientation.tokens",), lambda f, c: (self.orientation_tokens(f, c),)),
            ]
        else:
            st += [
                Stage("position.tokens", self.position_tokens, ("feat_x",), ("position.tokens",),
                      lambda f: (self.position_tokens(f),)),
                Stage("orientation.tokens", self.orientation_tokens, ("feat_q",), ("orientation.tokens",),
                      lambda f: (self.orientation_tokens(f),)),
            ]
        st += self.position_branch.stages("position", "position.tokens", "position.latent")
        st += self.orientation_branch.stages("orientation", "orientation.tokens", "orientation.latent")
        st += [
            Stage("position.head", self.position_head, ("position.latent",), ("position",),
                  lambda z: (self.position_head(z),)),
            Stage("orientation.head", self.orientation_head, ("orientation.latent",), ("quaternion",),
                  lambda z: (self.orientation_head(z),)),
        ]
        return st

    def forward(self, x, cache: dict | None = None):
        """``cache`` may hold precomputed outputs of parameter-free stages (see ``precompute``)."""
        stages = self.stages()
        state = {"input": x}
        if cache:
            state.update(cache)
            stages = [s for s in stages if not (s.module is None and all(k in cache for k in s.writes))]
        state = run_stages(stages, state)
        return state["position"], state["quaternion"]

    @torch.no_grad()
    def precompute(self, x) -> dict:
        """Outputs of the parameter-free stages for ``x``; they depend on the input only."""
        state = {"input": x}
        for s in self.stages():
            if s.module is None:
                state.update(zip(s.writes, s.fn(*(state[k] for k in s.reads))))
        state.pop("input")
        return state

    def branch_parameters(self, branch: str) -> dict[str, torch.Tensor]:
        """Parameters used only by the given branch ("position" or "orientation")."""
        prefixes = (f"{branch}_tokens.", f"{branch}_branch.", f"{branch}_head.")
        return {n: p for n, p in self.named_parameters() if n.startswith(prefixes)}
