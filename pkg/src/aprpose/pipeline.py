"""Manifest-level glue: build training sets, train, evaluate checkpoints."""
from __future__ import annotations

import logging
import os

import numpy as np
import torch

from .checkpoint import save_model
from .config import RunConfig
from .data import DatasetManifest
from .errors import DomainError
from .evaluation import EvalReport, estimator_predictor, evaluate
from .geometry import NormalizationStats, minmax_apply, minmax_fit
from .inference import PoseEstimator, prepare_input, read_payload
from .model import AprModel
from .training import LossParams, PoseDataset, fit

log = logging.getLogger(__name__)


def build_dataset(manifest: DatasetManifest, cfg: RunConfig, stats: NormalizationStats | None = None):
    """Load and preprocess every payload of the configured modality.

    Min-Max statistics are fitted on this manifest unless given.
    Returns (dataset, stats).
    """
    modality = cfg.modality
    if not manifest.records:
        raise DomainError("manifest has no records")
    stats = stats or minmax_fit(manifest.positions())
    if np.any(stats.degenerate):
        log.warning("degenerate Min-Max dimensions %s map to 0", np.flatnonzero(stats.degenerate).tolist())
    size = cfg.model.input_size
    bev = cfg.bev_config()
    augment = cfg.augment_config() if (modality == "image" and cfg.augment.enabled) else None
    frames, inputs, raws = [], [], []
    for rec in manifest.records:
        path = manifest.payload_path(rec, modality)
        if path is None:
            raise DomainError(f"frame {rec.frame} has no {modality} payload")
        raw = read_payload(modality, path)
        frames.append(rec.frame)
        raws.append(raw)
        inputs.append(prepare_input(modality, raw, size, cfg.seed, bev, cfg.lidar.crop_radius))

    def jitter(i, x, epoch):
        return prepare_input(modality, raws[i], size, (cfg.seed, epoch, i), augment=augment)

    transform = jitter if augment is not None else None
    positions = [minmax_apply(stats, r.pose.position) for r in manifest.records]
    quats = [r.pose.orientation for r in manifest.records]
    return PoseDataset(frames, inputs, positions, quats, transform), stats


def train(manifest: DatasetManifest, cfg: RunConfig, out_dir: str | None = None, on_epoch=None):
    """Returns (model, loss params, stats, epoch logs)."""
    dataset, stats = build_dataset(manifest, cfg)
    torch.manual_seed(cfg.seed)
    model = AprModel(cfg.apr_config())
    tc = cfg.train_config()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    loss_params = LossParams(tc.s_x_init, tc.s_q_init)

    def save(path):
        save_model(path, model, loss_params, stats, tc.to_dict())

    loss_params, logs, _ = fit(model, dataset, tc, out_dir, save if out_dir else None,
                               loss_params=loss_params, on_epoch=on_epoch)
    return model, loss_params, stats, logs


def estimator_for(model, stats, cfg: RunConfig) -> PoseEstimator:
    return PoseEstimator(model, stats, seed=cfg.seed, bev=cfg.bev_config(), crop_radius=cfg.lidar.crop_radius)


def evaluate_estimator(estimator: PoseEstimator, manifest: DatasetManifest) -> EvalReport:
    return evaluate(estimator_predictor(estimator, manifest), manifest)
