from .apr import MODALITIES, AprConfig, AprModel, desk_config, reduced_config
from .backbones import CnnBackbone, PointBackbone, farthest_points
from .layers import Stage, run_stages
from .tokens import GridTokens, MapTokens, grid_order
from .transformer import MlpHead, TransformerBranch

__all__ = [
    "MODALITIES", "AprConfig", "AprModel", "desk_config", "reduced_config",
    "CnnBackbone", "PointBackbone", "farthest_points", "Stage", "run_stages",
    "GridTokens", "MapTokens", "grid_order", "MlpHead", "TransformerBranch",
]
