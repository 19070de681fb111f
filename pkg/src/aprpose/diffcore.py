"""Differentiable primitives, parameter registry and finite-difference checks.

Tensors and reverse-mode gradients come from torch; this module pins the
operator set the model is built from, enforces shape contracts with
readable messages, and provides the central-difference oracle used to
verify every gradient.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Mapping

import torch
import torch.nn.functional as F

from .errors import ContractError

Tensor = torch.Tensor

LAYER_NORM_EPS = 1e-5


def _shape(t: Tensor) -> tuple:
    return tuple(t.shape)


def _fail(op: str, *tensors: Tensor, detail: str = "") -> None:
    shapes = ", ".join(str(_shape(t)) for t in tensors)
    raise ContractError(f"{op}: incompatible shapes {shapes}{'; ' + detail if detail else ''}")


def _broadcastable(a: Tensor, b: Tensor) -> bool:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        return False
    return True


class ParamRegistry(Mapping[str, Tensor]):
    """Ordered, uniquely named parameter tensors."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, p in items:
            self.add(name, p)

    @classmethod
    def from_modules(cls, **modules: torch.nn.Module) -> "ParamRegistry":
        reg = cls()
        for prefix, module in modules.items():
            for name, p in module.named_parameters():
                reg.add(f"{prefix}.{name}", p)
        return reg

    def add(self, name: str, p: Tensor) -> None:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        self._params[name] = p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def gradients(self) -> dict[str, Tensor]:
        return {n: (p.grad if p.grad is not None else torch.zeros_like(p))
                for n, p in self._params.items()}

    def numel(self) -> int:
        return sum(p.numel() for p in self._params.values())


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        _fail("matmul", a, b)
    return a @ b


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if weight.dim() != 2 or x.shape[-1] != weight.shape[1]:
        _fail("linear", x, weight, detail="expected x[..., in] and weight[out, in]")
    if bias is not None and _shape(bias) != (weight.shape[0],):
        _fail("linear", weight, bias, detail="bias must be [out]")
    return F.linear(x, weight, bias)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    if x.dim() != 4 or weight.dim() != 4 or x.shape[1] != weight.shape[1]:
        _fail("conv2d", x, weight, detail="expected x[N, C, H, W] and weight[O, C, kh, kw]")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return torch.softmax(x, dim=axis)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    for t in (weight, bias):
        if t is not None and _shape(t) != (d,):
            _fail("layer_norm", x, t, detail="affine parameters must match the last axis")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def dropout(x: Tensor, rate: float, train: bool) -> Tensor:
    if not train or rate == 0.0:
        return x
    return F.dropout(x, rate, training=True)


def embedding_lookup(table: Tensor, index: Tensor) -> Tensor:
    if table.dim() != 2:
        _fail("embedding_lookup", table, index, detail="table must be [rows, width]")
    return table[index]


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a, b):
        _fail("add", a, b)
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a, b):
        _fail("sub", a, b)
    return a - b


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a, b):
        _fail("mul", a, b)
    return a * b


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    return x.sum() if axis is None else x.sum(dim=axis)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    return x.mean() if axis is None else x.mean(dim=axis)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    return x.amax(dim=axis)


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    ref = xs[0]
    ax = axis % ref.dim()
    for t in xs[1:]:
        if t.dim() != ref.dim() or any(t.shape[i] != ref.shape[i] for i in range(ref.dim()) if i != ax):
            _fail("concat", ref, t, detail=f"axis {axis}")
    return torch.cat(xs, dim=axis)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        return x.reshape(shape)
    except RuntimeError:
        raise ContractError(f"reshape: cannot view {tuple(x.shape)} as {tuple(shape)}") from None


def transpose(x: Tensor, a: int, b: int) -> Tensor:
    return x.transpose(a, b)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head attention core: [B, Lq, D] x [B, Lk, D] x [B, Lk, D] -> [B, Lq, D].

    Heads split D evenly; no masking.
    """
    if q.dim() != 3 or k.shape != v.shape or q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        _fail("scaled_dot_product_attention", q, k, v)
    b, lq, d = q.shape
    lk = k.shape[1]
    if d % heads:
        raise ContractError(f"scaled_dot_product_attention: width {d} not divisible by {heads} heads")
    dh = d // heads
    qh = q.reshape(b, lq, heads, dh).transpose(1, 2)
    kh = k.reshape(b, lk, heads, dh).transpose(1, 2)
    vh = v.reshape(b, lk, heads, dh).transpose(1, 2)
    scores = (qh @ kh.transpose(-2, -1)) / math.sqrt(dh)
    out = torch.softmax(scores, dim=-1) @ vh
    return out.transpose(1, 2).reshape(b, lq, d)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every tracked parameter's ``.grad``."""
    if loss.numel() != 1 or loss.dim() != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def relative_error(analytic: Tensor, numeric: Tensor) -> Tensor:
    return (analytic - numeric).abs() / torch.clamp(analytic.abs() + numeric.abs(), min=1e-8)


def finite_difference_errors(f: Callable[[], Tensor], registry: ParamRegistry,
                             epsilon: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error between autograd and central differences."""
    registry.zero_grad()
    backward(f())
    analytic = {n: g.detach().clone() for n, g in registry.gradients().items()}
    registry.zero_grad()

    errors = {}
    with torch.no_grad():
        for name, p in registry.items():
            flat = p.view(-1)
            numeric = torch.empty(flat.numel(), dtype=torch.float64)
            for i in range(flat.numel()):
                v = flat[i].item()
                flat[i] = v + epsilon
                fp = float(f())
                flat[i] = v - epsilon
                fm = float(f())
                flat[i] = v
                numeric[i] = (fp - fm) / (2 * epsilon)
            a = analytic[name].reshape(-1).to(torch.float64)
            errors[name] = float(relative_error(a, numeric).max()) if flat.numel() else 0.0
    return errors


def finite_difference_check(f: Callable[[], Tensor], registry: ParamRegistry,
                            epsilon: float = 1e-5) -> float:
    """Max over all parameter coordinates of |analytic - numeric| / max(1e-8, |a| + |n|)."""
    errs = finite_difference_errors(f, registry, epsilon)
    return max(errs.values(), default=0.0)
