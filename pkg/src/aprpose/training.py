"""Pose losses with learned balance, Adam, step schedule and the training loop."""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from . import diffcore as dc
from .errors import DomainError, TrainingDiverged

log = logging.getLogger(__name__)

BALANCE_PARAMS = ("loss.s_x", "loss.s_q")


def position_loss(x_pred, x_true):
    """L1 over the 3 position components; batched inputs give per-sample values."""
    return dc.reduce_sum((torch.as_tensor(x_pred) - torch.as_tensor(x_true)).abs(), axis=-1)


def orientation_loss(q_pred, q_true):
    """L1 over the 4 raw quaternion components."""
    return dc.reduce_sum((torch.as_tensor(q_pred) - torch.as_tensor(q_true)).abs(), axis=-1)


class LossParams(nn.Module):
    def __init__(self, s_x: float = 0.0, s_q: float = -3.0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.s_x = nn.Parameter(torch.tensor(float(s_x), dtype=dtype))
        self.s_q = nn.Parameter(torch.tensor(float(s_q), dtype=dtype))


def combined_loss(l_p, l_o, params: LossParams):
    """L_p * exp(-s_x) + s_x + L_o * exp(-s_q) + s_q."""
    s_x, s_q = params.s_x, params.s_q
    return l_p * torch.exp(-s_x) + s_x + l_o * torch.exp(-s_q) + s_q


def pose_loss(pred_pos, pred_quat, true_pos, true_quat, params: LossParams):
    """Batch-mean L_p and L_o combined with the learned balance. Returns (L_pose, L_p, L_o)."""
    l_p = dc.reduce_mean(position_loss(pred_pos, true_pos))
    l_o = dc.reduce_mean(orientation_loss(pred_quat, true_quat))
    return combined_loss(l_p, l_o, params), l_p, l_o


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 300
    lr_period: int = 50
    lr_factor: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0
    s_x_init: float = 0.0
    s_q_init: float = -3.0

    def __post_init__(self):
        for name in ("batch_size", "lr", "epochs", "lr_period"):
            if not getattr(self, name) > 0:
                raise DomainError(f"train.{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise DomainError(f"train.weight_decay must be non-negative, got {self.weight_decay}")
        if not 0 < self.lr_factor <= 1:
            raise DomainError(f"train.lr_factor must lie in (0, 1], got {self.lr_factor}")

    def to_dict(self) -> dict:
        return asdict(self)


def step_lr(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise DomainError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr * cfg.lr_factor ** (epoch // cfg.lr_period)


class Adam:
    """Adam with L2 weight decay folded into the gradient before the moments.

    Parameters named in ``no_decay`` (the loss balance scalars by default)
    skip the decay term.
    """

    def __init__(self, registry: dc.ParamRegistry, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, no_decay=BALANCE_PARAMS):
        self.registry = registry
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.t = 0
        self.m = {n: torch.zeros_like(p) for n, p in registry.items()}
        self.v = {n: torch.zeros_like(p) for n, p in registry.items()}

    @torch.no_grad()
    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.registry.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            if self.weight_decay and name not in self.no_decay:
                g = g + self.weight_decay * p
            m, v = self.m[name], self.v[name]
            m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + self.eps))


def adam_step(optimizer: Adam, lr: float) -> None:
    optimizer.step(lr)


def trainable_registry(model: nn.Module, loss_params: LossParams) -> dc.ParamRegistry:
    return dc.ParamRegistry.from_modules(model=model, loss=loss_params)


def first_nonfinite(named: dict[str, torch.Tensor]) -> str | None:
    for name, t in named.items():
        if t is not None and not torch.isfinite(t).all():
            return name
    return None


@dataclass
class EpochLog:
    epoch: int
    lr: float
    L_p: float
    L_o: float
    L_pose: float
    s_x: float
    s_q: float


class PoseDataset:
    """In-memory training samples: model inputs plus normalized targets.

    ``inputs`` is a list of per-sample tensors (without batch axis);
    ``positions`` are Min-Max normalized, ``quaternions`` canonical unit.
    ``transform`` (optional) maps (index, input, epoch) to an augmented input.
    """

    def __init__(self, frames, inputs, positions, quaternions, transform: Callable | None = None):
        if not len(inputs):
            raise DomainError("training dataset is empty")
        self.frames = list(frames)
        self.inputs = list(inputs)
        self.positions = torch.as_tensor(np.asarray(positions), dtype=torch.float32)
        self.quaternions = torch.as_tensor(np.asarray(quaternions), dtype=torch.float32)
        self.transform = transform
        self.cache: list[dict] | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    def prepare_cache(self, model) -> None:
        """Precompute parameter-free backbone work when inputs are not augmented."""
        if self.transform is not None:
            return
        self.cache = [model.precompute(x.unsqueeze(0)) for x in self.inputs]

    def batch(self, idx, epoch: int = 0):
        xs = [self.inputs[i] if self.transform is None else self.transform(i, self.inputs[i], epoch)
              for i in idx]
        cache = None
        if self.cache is not None:
            cache = {k: torch.cat([self.cache[i][k] for i in idx]) for k in self.cache[idx[0]]}
        return torch.stack(xs), cache, self.positions[idx], self.quaternions[idx]


def fit(model: nn.Module, dataset: PoseDataset, cfg: TrainConfig, out_dir: str | None = None,
        save: Callable[[str], None] | None = None, loss_params: LossParams | None = None,
        max_steps: int | None = None, on_epoch: Callable[[EpochLog], None] | None = None):
    """Train ``model`` in place. Returns (loss_params, epoch logs, per-step losses).

    ``save(path)`` is called at the configured cadence and once at the end
    when ``out_dir`` is given.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if loss_params is None:
        loss_params = LossParams(cfg.s_x_init, cfg.s_q_init)
    loss_params.to(next(model.parameters()).dtype)
    registry = trainable_registry(model, loss_params)
    opt = Adam(registry, weight_decay=cfg.weight_decay)
    dataset.prepare_cache(model)

    logs: list[EpochLog] = []
    step_losses: list[float] = []
    n = len(dataset)
    steps = 0
    for epoch in range(cfg.epochs):
        model.train()
        lr = step_lr(epoch, cfg)
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size].tolist()
            x, cache, pos_t, quat_t = dataset.batch(idx, epoch)
            x = x.to(registry["loss.s_x"].dtype)
            pos, quat = model(x, cache)
            loss, l_p, l_o = pose_loss(pos, quat, pos_t.to(pos.dtype), quat_t.to(quat.dtype), loss_params)
            if not torch.isfinite(loss):
                bad = first_nonfinite({"position_output": pos, "quaternion_output": quat,
                                       "L_p": l_p, "L_o": l_o, **dict(registry.items())})
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}; first non-finite tensor: {bad}")
            registry.zero_grad()
            dc.backward(loss)
            bad = first_nonfinite({n_: p.grad for n_, p in registry.items()})
            if bad is not None:
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch} in {bad}")
            opt.step(lr)
            w = len(idx) / n
            values = [float(t.detach()) for t in (l_p, l_o, loss)]
            sums += w * np.array(values)
            step_losses.append(values[2])
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        entry = EpochLog(epoch, lr, *sums.tolist(), loss_params.s_x.item(), loss_params.s_q.item())
        logs.append(entry)
        log.info("epoch %d lr %.3g L_p %.4f L_o %.4f L_pose %.4f s_x %.3f s_q %.3f",
                 epoch, lr, entry.L_p, entry.L_o, entry.L_pose, entry.s_x, entry.s_q)
        if on_epoch is not None:
            on_epoch(entry)
        if max_steps is not None and steps >= max_steps:
            break
        if (out_dir and save and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs):
            save(os.path.join(out_dir, f"checkpoint_epoch{epoch + 1:04d}.bin"))
    if out_dir and save:
        save(os.path.join(out_dir, "checkpoint.bin"))
    model.eval()
    return loss_params, logs, step_losses
