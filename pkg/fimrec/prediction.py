"""Pooling, alpha fusion, the MMoE stack with residual, and the BCE objective."""

import torch
from torch import nn

from .numerics import DTYPE

BCE_EPS = 1e-12


def mean_pool(x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
    """Average ``[..., N, D]`` over the unpadded rows."""
    if valid is None:
        return x.mean(dim=-2)
    counts = valid.sum(dim=-1, keepdim=True)
    if bool((counts == 0).any()):
        raise ValueError("cannot pool a sequence whose rows are all padding")
    weights = valid.to(x.dtype).unsqueeze(-1)
    return (x * weights).sum(dim=-2) / counts.to(x.dtype)


def project_h(h: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    """Map the concatenated view outputs down to the sequence width D."""
    return projection(h)


def fuse(h: torch.Tensor, f: torch.Tensor, alpha: float) -> torch.Tensor:
    """Z_u = (1 - alpha) * H + alpha * f."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if h.shape[-1] != f.shape[-1]:
        raise ValueError(f"cannot fuse widths {h.shape[-1]} and {f.shape[-1]}")
    if alpha == 0.0:
        return h
    if alpha == 1.0:
        return f
    return (1.0 - alpha) * h + alpha * f


class Mmoe(nn.Module):
    """Shared experts, one softmax gate and one sigmoid head per task.

    Each task reads the gate-mixed expert output plus the residual input.
    Heads start at zero so every initial prediction is exactly 0.5.
    """

    def __init__(self, width: int, experts: int, tasks: int) -> None:
        super().__init__()
        if experts < 1 or tasks < 1:
            raise ValueError("MMoE needs at least one expert and one task")
        self.experts = nn.ModuleList(
            nn.Sequential(
                nn.Linear(width, width, dtype=DTYPE),
                nn.ReLU(),
                nn.Linear(width, width, dtype=DTYPE),
            )
            for _ in range(experts)
        )
        self.gates = nn.ModuleList(
            nn.Linear(width, experts, dtype=DTYPE) for _ in range(tasks)
        )
        self.heads = nn.ModuleList(
            nn.Linear(width, 1, dtype=DTYPE) for _ in range(tasks)
        )
        for head in self.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def gate_weights(self, z: torch.Tensor) -> torch.Tensor:
        """``[..., T, E]`` mixture weights."""
        weights = [torch.softmax(gate(z), dim=-1) for gate in self.gates]
        return torch.stack(weights, dim=-2)

    def task_inputs(self, z: torch.Tensor) -> torch.Tensor:
        """``[..., T, D]``: mixed expert outputs plus the residual Z_u."""
        outputs = torch.stack([expert(z) for expert in self.experts], dim=-2)
        mixed = self.gate_weights(z) @ outputs
        return mixed + z.unsqueeze(-2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        inputs = self.task_inputs(z)
        logits = torch.cat(
            [head(inputs[..., t, :]) for t, head in enumerate(self.heads)], dim=-1
        )
        return torch.sigmoid(logits)


def mmoe_forward(z: torch.Tensor, mmoe: Mmoe) -> torch.Tensor:
    """Per-task probabilities ``[..., T]``."""
    return mmoe(z)


def bce_per_task(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over samples, one value per task."""
    probs = probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    losses = -(labels * torch.log(probs) + (1.0 - labels) * torch.log1p(-probs))
    return losses.mean(dim=0)


def bce_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Batch objective: mean over samples, summed over tasks."""
    return bce_per_task(probs, labels).sum()
