"""The assembled network: embeddings, multi-view search, FPEM, fusion and MMoE."""

import torch
from torch import nn

from .config import RunConfig
from .embeddings import (
    Batch,
    Encoder,
    SequenceEmbedder,
    SideInfo,
    SideInfoEmbedder,
    embed_side_info,
    side_width,
)
from .fpem import FrequencyPerception
from .mss import MultiViewSearch
from .numerics import DTYPE
from .prediction import Mmoe, fuse, mean_pool, project_h
from .records import ATTRIBUTES

GROUPS = ("embeddings", "side_info", "mss", "fpem", "project", "mmoe", "heads")

# Parameter each side-information slice is read from.
SIDE_SOURCES = {
    "age": "side.profile.age.weight",
    "gender": "side.profile.gender.weight",
    "brand": "embedder.tables.brand.weight",
    "price": "embedder.tables.price.weight",
    "pay_len": "side.pay_len.weight",
}

_PREFIXES = (
    ("embedder.", "embeddings"),
    ("side.", "side_info"),
    ("search.", "mss"),
    ("fpem.", "fpem"),
    ("project.", "project"),
    ("mmoe.heads.", "heads"),
    ("mmoe.", "mmoe"),
)


def parameter_group(name: str) -> str:
    """The reporting group a named parameter belongs to."""
    for prefix, group in _PREFIXES:
        if name.startswith(prefix):
            return group
    raise ValueError(f"parameter {name!r} belongs to no group")


class FimModel(nn.Module):
    """Click and purchase probabilities for (behavior window, target) pairs."""

    def __init__(self, encoder: Encoder, cfg: RunConfig) -> None:
        super().__init__()
        if tuple(encoder.tasks) != tuple(cfg.mmoe.tasks):
            raise ValueError(
                f"encoder labels {encoder.tasks} but the model predicts "
                f"{cfg.mmoe.tasks}"
            )
        self.cfg = cfg
        self.embedder = SequenceEmbedder(encoder.table_sizes(), cfg.dims)
        width = self.embedder.width
        self.search = MultiViewSearch(cfg.dims, len(ATTRIBUTES), cfg.mss)
        self.project = nn.Linear(self.search.width, width, dtype=DTYPE)
        if cfg.fpem.enabled:
            self.side = SideInfoEmbedder(encoder.profile_sizes(), cfg.dims)
            self.fpem = FrequencyPerception(
                width, side_width(cfg.dims, cfg.fpem.sideinfo), cfg.fpem
            )
        else:
            self.side = None
            self.fpem = None
        self.mmoe = Mmoe(width, cfg.mmoe.experts, len(cfg.mmoe.tasks))

    def side_info(self, batch: Batch) -> SideInfo:
        if self.side is None:
            raise ValueError("side information is only built when FPEM is enabled")
        tables = {
            "age": self.side.profile["age"],
            "gender": self.side.profile["gender"],
            "brand": self.embedder.tables["brand"],
            "price": self.embedder.tables["price"],
            "pay_len": self.side.pay_len,
        }
        return embed_side_info(
            batch.profile,
            batch.target,
            batch.pay_len,
            tables,
            SIDE_SOURCES,
            self.cfg.fpem.sideinfo,
        )

    def fused(self, batch: Batch) -> torch.Tensor:
        """Z_u for every sample of the batch."""
        embedded = self.embedder(batch.tokens)
        target_embedded = self.embedder(batch.target)
        h = self.search(
            embedded, target_embedded, batch.tokens, batch.target, batch.valid
        )
        h = project_h(h, self.project)
        if self.fpem is None:
            return h
        f = self.fpem(embedded, batch.valid, self.side_info(batch))
        return fuse(h, mean_pool(f, batch.valid), self.cfg.alpha)

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.mmoe(self.fused(batch))

    def grouped_parameters(self) -> dict[str, dict[str, torch.Tensor]]:
        groups: dict[str, dict[str, torch.Tensor]] = {group: {} for group in GROUPS}
        for name, param in self.named_parameters():
            groups[parameter_group(name)][name] = param
        return groups

    def randomize_heads(self, generator: torch.Generator, std: float = 0.3) -> None:
        """Replace the zero heads so gradients reach every layer below them."""
        with torch.no_grad():
            for head in self.mmoe.heads:
                head.weight.normal_(0.0, std, generator=generator)
                head.bias.normal_(0.0, std, generator=generator)
