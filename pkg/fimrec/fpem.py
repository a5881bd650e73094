"""Frequency-domain perception: band split, side-info beta gates, residual fusion."""

from dataclasses import dataclass
from typing import Literal

import torch
from torch import nn

from .config import FpemConfig
from .embeddings import SideInfo, SideInfoMode, side_flags
from .numerics import (
    DTYPE,
    half_spectrum_length,
    irfft,
    layer_norm,
    rfft,
    stop_gradient,
)
from .prediction import mean_pool
from .registry import get_filter, register_filter

MaskKind = Literal[
    "trunc_low",
    "trunc_band",
    "trunc_high",
    "butter_low",
    "butter_band",
    "butter_high",
]
FusionMode = Literal["beta", "direct"]

Masks = tuple["BandMask", "BandMask", "BandMask"]


@dataclass(frozen=True)
class BandMask:
    """Per-bin gains in [0, 1] over a half spectrum."""

    gains: torch.Tensor
    kind: MaskKind

    def __len__(self) -> int:
        return self.gains.shape[-1]


def band_masks_trunc(length: int, p: int) -> Masks:
    """0/1 masks on ``[0, p)``, ``[p, L - p)`` and ``[L - p, L)``."""
    if not 1 <= p <= length // 2:
        raise ValueError(f"truncation position {p} outside [1, {length // 2}]")
    bins = torch.arange(length)
    low = (bins < p).to(DTYPE)
    high = (bins >= length - p).to(DTYPE)
    band = 1.0 - low - high
    return (
        BandMask(low, "trunc_low"),
        BandMask(band, "trunc_band"),
        BandMask(high, "trunc_high"),
    )


def band_masks_butter(length: int, fc: float, order: int) -> Masks:
    """Butterworth-shaped gains; the high mask mirrors the low one."""
    if not 0.0 < fc < 0.5:
        raise ValueError(f"cutoff fc must lie in (0, 0.5), got {fc}")
    if order < 1:
        raise ValueError(f"filter order must be at least 1, got {order}")
    bins = torch.arange(length, dtype=DTYPE)
    low = 1.0 / torch.sqrt(1.0 + (bins / (fc * length)) ** (2 * order))
    high = low.flip(0)
    band = (1.0 - low - high).clamp(0.0, 1.0)
    return (
        BandMask(low, "butter_low"),
        BandMask(band, "butter_band"),
        BandMask(high, "butter_high"),
    )


@register_filter("trunc")
def _trunc_filter(length: int, cfg: FpemConfig) -> Masks:
    return band_masks_trunc(length, cfg.p)


@register_filter("butter")
def _butter_filter(length: int, cfg: FpemConfig) -> Masks:
    return band_masks_butter(length, cfg.fc, cfg.order)


def split_bands(embedded: torch.Tensor, masks: Masks) -> tuple[torch.Tensor, ...]:
    """Filter every feature column of an ``[..., N, D]`` sequence by each mask."""
    n = embedded.shape[-2]
    length = half_spectrum_length(n)
    for mask in masks:
        if len(mask) != length:
            raise ValueError(
                f"{mask.kind} mask has {len(mask)} bins, N = {n} needs {length}"
            )
    spectrum = rfft(embedded, dim=-2)
    return tuple(
        irfft(spectrum * mask.gains.unsqueeze(-1), n, dim=-2) for mask in masks
    )


class BetaGate(nn.Module):
    """sigma(W2 relu(W1 x + B1) + B2) on x = [I_u, pooled band feature]."""

    def __init__(self, in_dim: int, hidden: int) -> None:
        super().__init__()
        self.w1 = nn.Linear(in_dim, hidden, dtype=DTYPE)
        self.w2 = nn.Linear(hidden, 1, dtype=DTYPE)


def gate_beta(
    band_pooled: torch.Tensor, side: torch.Tensor, gate: BetaGate
) -> torch.Tensor:
    """One gate value in (0, 1) per user, shaped ``[..., 1]``."""
    x = torch.cat([side, band_pooled], dim=-1)
    return torch.sigmoid(gate.w2(torch.relu(gate.w1(x))))


def stop_gradient_slices(side: SideInfo, mode: SideInfoMode) -> torch.Tensor:
    """I_u for the gates: slices kept by ``mode``, gradient stopped where flagged.

    Forward values never depend on the flags.
    """
    flags = side_flags(mode)
    parts = []
    for piece in side.slices:
        if piece.name not in flags:
            continue
        if flags[piece.name]:
            parts.append(piece.value)
        else:
            parts.append(stop_gradient(piece.value, [piece.source]))
    return torch.cat(parts, dim=-1)


class FrequencyPerception(nn.Module):
    """Band-split E_u, gate the band and high parts, fuse with a residual norm."""

    def __init__(self, width: int, side_width: int, cfg: FpemConfig) -> None:
        super().__init__()
        self.cfg = cfg
        hidden = max(width // 2, 1)
        self.band_gate = BetaGate(side_width + width, hidden)
        self.high_gate = (
            None if cfg.share_gates else BetaGate(side_width + width, hidden)
        )
        self.norm = nn.LayerNorm(width, eps=cfg.eps, dtype=DTYPE)

    def masks(self, n: int) -> Masks:
        return get_filter(self.cfg.mode)(half_spectrum_length(n), self.cfg)

    def gates(
        self,
        band: torch.Tensor,
        high: torch.Tensor,
        valid: torch.Tensor,
        side: SideInfo,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(beta_band, beta_high), each ``[B, 1]``."""
        gate_side = stop_gradient_slices(side, self.cfg.sideinfo)
        high_gate = self.band_gate if self.high_gate is None else self.high_gate
        beta_band = gate_beta(mean_pool(band, valid), gate_side, self.band_gate)
        beta_high = gate_beta(mean_pool(high, valid), gate_side, high_gate)
        return beta_band, beta_high

    def forward(
        self, embedded: torch.Tensor, valid: torch.Tensor, side: SideInfo
    ) -> torch.Tensor:
        # Padding rows are zeroed so they add no spectral energy.
        embedded = embedded * valid.unsqueeze(-1)
        low, band, high = split_bands(embedded, self.masks(embedded.shape[-2]))
        if self.cfg.fusion == "direct":
            fused = low + band + high
        else:
            beta_band, beta_high = self.gates(band, high, valid, side)
            fused = (
                low
                + beta_band.unsqueeze(-1) * band
                + beta_high.unsqueeze(-1) * high
            )
        return layer_norm(
            fused + embedded, self.norm.weight, self.norm.bias, self.cfg.eps
        )


def fpem_forward(
    perception: FrequencyPerception,
    embedded: torch.Tensor,
    valid: torch.Tensor,
    side: SideInfo,
) -> torch.Tensor:
    """f_u = LayerNorm(f_low + b_band * f_band + b_high * f_high + E_u)."""
    return perception(embedded, valid, side)
