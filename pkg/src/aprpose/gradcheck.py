"""End-to-end central-difference check of model + loss gradients.

Every coordinate of every parameter (model weights plus s_x, s_q) is
perturbed by +/- epsilon and the loss re-evaluated. The forward pipeline is
a list of stages, so a perturbed evaluation replays only the stages
downstream of the one owning the parameter; upstream activations are reused
from the unperturbed pass. The replayed value is the full loss, bit for bit
what a from-scratch forward would compute.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import diffcore as dc
from .geometry import quat_canonicalize, quat_normalize
from .model import AprModel, Stage, reduced_config
from .training import LossParams, pose_loss

log = logging.getLogger(__name__)


@dataclass
class GradcheckReport:
    modality: str
    max_relative_error: float
    parameters: int
    coordinates: int
    seconds: float
    worst: str
    per_parameter: dict[str, float] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {"modality": self.modality, "max_relative_error": self.max_relative_error,
                "parameters": self.parameters, "coordinates": self.coordinates,
                "seconds": round(self.seconds, 2), "worst": self.worst}


def random_inputs(model: AprModel, batch: int, gen: torch.Generator) -> torch.Tensor:
    cfg = model.cfg
    dt = torch.float64
    if cfg.modality == "points":
        return torch.rand(batch, 4096, 6, generator=gen, dtype=dt) * 2 - 1
    s = cfg.input_size
    if cfg.modality == "bev":
        return torch.rand(batch, 2, s, s, generator=gen, dtype=dt)
    return torch.randn(batch, 3, s, s, generator=gen, dtype=dt)


def nearby_targets(model: AprModel, x, rng: np.random.Generator, lo: float = 0.02, hi: float = 0.1):
    """Targets a random 0.02-0.1 per-component step away from the model's own prediction.

    Keeps the loss O(1) so float64 roundoff in the central differences stays
    near 1e-12, while every L1 term sits at least ``lo`` from its kink.
    Quaternion targets are unit and canonical.
    """
    with torch.no_grad():
        pos, quat = model(x)

    def step(shape):
        return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)

    pos_t = pos.numpy() + step(pos.shape)
    quats = []
    for q in quat.numpy():
        while True:
            t = quat_canonicalize(quat_normalize(q + step(4)))
            if np.abs(t - q).min() >= lo / 2:
                break
        quats.append(t)
    return torch.from_numpy(pos_t), torch.from_numpy(np.stack(quats))


def loss_stage(loss_params: LossParams, pos_t, quat_t) -> Stage:
    return Stage("loss", loss_params, ("position", "quaternion"), ("loss",),
                 lambda p, q: (pose_loss(p, q, pos_t, quat_t, loss_params)[0],))


def replay(stages: list[Stage], start: int, base: dict) -> torch.Tensor:
    state = dict(base)
    dirty: set[str] = set()
    for j in range(start, len(stages)):
        st = stages[j]
        if j != start and not dirty.intersection(st.reads):
            continue
        out = st.fn(*(state[k] for k in st.reads))
        state.update(zip(st.writes, out))
        dirty.update(st.writes)
    return state["loss"]


def staged_gradcheck(model: AprModel, loss_params: LossParams, x, pos_t, quat_t,
                     epsilon: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error; the model must be in float64 and eval mode."""
    stages = model.stages() + [loss_stage(loss_params, pos_t, quat_t)]
    registry = dc.ParamRegistry.from_modules(model=model, loss=loss_params)

    owner: dict[int, int] = {}
    for k, st in enumerate(stages):
        if st.module is None:
            continue
        for p in st.module.parameters():
            if id(p) in owner:
                raise AssertionError(f"parameter owned by two stages ({stages[owner[id(p)]].name}, {st.name})")
            owner[id(p)] = k
    missing = [n for n, p in registry.items() if id(p) not in owner]
    if missing:
        raise AssertionError(f"parameters not owned by any stage: {missing}")

    registry.zero_grad()
    state = {"input": x}
    for st in stages:
        state.update(zip(st.writes, st.fn(*(state[k] for k in st.reads))))
    dc.backward(state["loss"])
    analytic = {n: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for n, p in registry.items()}
    registry.zero_grad()
    base = {k: (v.detach() if torch.is_tensor(v) else v) for k, v in state.items()}

    errors = {}
    with torch.no_grad():
        for name, p in registry.items():
            k = owner[id(p)]
            flat = p.view(-1)
            numeric = torch.empty(flat.numel(), dtype=torch.float64)
            for i in range(flat.numel()):
                v = flat[i].item()
                flat[i] = v + epsilon
                fp = replay(stages, k, base).item()
                flat[i] = v - epsilon
                fm = replay(stages, k, base).item()
                flat[i] = v
                numeric[i] = (fp - fm) / (2 * epsilon)
            a = analytic[name].reshape(-1).to(torch.float64)
            errors[name] = float(dc.relative_error(a, numeric).max())
    return errors


def run_gradcheck(modality: str, seed: int = 0, batch: int = 2, epsilon: float = 1e-5) -> GradcheckReport:
    """Reduced config (d_model 16, L 2), 2-sample batch, double precision."""
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = AprModel(reduced_config(modality)).double().eval()
    # small s keeps every partial sum of the loss below 0.5, halving its rounding step
    loss_params = LossParams(float(rng.uniform(-0.25, 0.25)), float(rng.uniform(-0.25, 0.25))).double()
    x = random_inputs(model, batch, gen)
    pos_t, quat_t = nearby_targets(model, x, rng)
    errors = staged_gradcheck(model, loss_params, x, pos_t, quat_t, epsilon)
    worst = max(errors, key=errors.get)
    coords = sum(p.numel() for p in model.parameters()) + 2
    report = GradcheckReport(modality, errors[worst], len(errors), coords,
                             time.perf_counter() - t0, worst, errors)
    log.info("gradcheck %s: max rel err %.3g (%s) over %d coordinates in %.1fs",
             modality, report.max_relative_error, worst, coords, report.seconds)
    return report
