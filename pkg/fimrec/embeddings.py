"""Record encoding and the embedding tables behind E_u and I_u."""

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .numerics import DTYPE
from .records import (
    ATTRIBUTES,
    TASKS,
    InteractionRecord,
    Sample,
    TargetItem,
    Task,
)

PAD = "<pad>"
CATEGORICAL = ("goods_id", "author_id", "source_domain", "action", "brand", "category")
PROFILE = ("age", "gender")
MAX_TIME_SPAN = 63
PAY_LEN_EDGES = (0, 1, 2, 4, 8, 16, 32, 64)
SIDE_SLICES = ("age", "gender", "brand", "price", "pay_len")

SideInfoMode = Literal["none", "grad", "nograd"]


def price_edges(max_price: float, n_buckets: int = 10) -> np.ndarray:
    """Interior bucket edges, log-spaced over ``[0, max_price]``."""
    if max_price <= 0:
        raise ValueError(f"max_price must be positive, got {max_price}")
    if n_buckets < 1:
        raise ValueError(f"n_buckets must be positive, got {n_buckets}")
    grid = np.linspace(0.0, math.log1p(max_price), n_buckets + 1)
    return np.expm1(grid[1:-1])


def price_bucket(price: float, max_price: float, n_buckets: int = 10) -> int:
    """Bucket of a price; intervals are half-open, so an upper edge moves up one."""
    if price < 0:
        raise ValueError(f"price must be nonnegative, got {price}")
    edges = price_edges(max_price, n_buckets)
    return int(np.searchsorted(edges, price, side="right"))


def pay_len_bucket(count: int) -> int:
    """Bucket of a purchase count; counts past the last edge share its bucket."""
    if count < 0:
        raise ValueError(f"purchase count must be nonnegative, got {count}")
    return int(np.searchsorted(PAY_LEN_EDGES, count, side="right")) - 1


@dataclass(frozen=True)
class PriceBuckets:
    max_price: float
    n_buckets: int = 10
    edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", price_edges(self.max_price, self.n_buckets))

    def bucket(self, price: float) -> int:
        if price < 0:
            raise ValueError(f"price must be nonnegative, got {price}")
        return int(np.searchsorted(self.edges, price, side="right"))


@dataclass(frozen=True)
class Vocabulary:
    """Token to index map; index 0 is reserved for padding and unknown tokens."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("a vocabulary needs its reserved index-0 token")
        index = {token: i for i, token in enumerate(self.tokens) if i > 0}
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls((PAD, *sorted(set(tokens) - {PAD})))

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def __len__(self) -> int:
        return len(self.tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{token}\n" for token in self.tokens))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            return cls(tuple(Path(path).read_text().splitlines()))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read vocabulary {path}: {exc}") from None


@dataclass(frozen=True)
class Batch:
    """Index tensors for a set of samples, left-padded to a common length."""

    tokens: torch.Tensor  # [B, N, 9]
    valid: torch.Tensor  # [B, N], False on padding rows
    target: torch.Tensor  # [B, 9], zeros on attributes a target lacks
    profile: torch.Tensor  # [B, 2]
    pay_len: torch.Tensor  # [B]
    labels: torch.Tensor  # [B, T]
    user_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.user_ids)

    def take(self, index: torch.Tensor) -> "Batch":
        rows = index.tolist()
        return Batch(
            tokens=self.tokens[index],
            valid=self.valid[index],
            target=self.target[index],
            profile=self.profile[index],
            pay_len=self.pay_len[index],
            labels=self.labels[index],
            user_ids=tuple(self.user_ids[row] for row in rows),
        )


@dataclass(frozen=True)
class Encoder:
    """Vocabularies and price buckets fitted on training samples."""

    vocabularies: Mapping[str, Vocabulary]
    prices: PriceBuckets
    max_len: int
    tasks: tuple[Task, ...] = TASKS

    @classmethod
    def fit(
        cls,
        samples: Sequence[Sample],
        max_len: int,
        n_price_buckets: int = 10,
        tasks: tuple[Task, ...] = TASKS,
    ) -> "Encoder":
        tokens: dict[str, set[str]] = {name: set() for name in CATEGORICAL + PROFILE}
        max_price = 0.0
        seen: set[int] = set()
        for sample in samples:
            for record in sample.sequence.records:
                if id(record) in seen:
                    continue
                seen.add(id(record))
                for name in CATEGORICAL:
                    tokens[name].add(getattr(record, name))
                max_price = max(max_price, record.price, record.payment_amount)
            target = sample.target
            for name in ("goods_id", "author_id", "brand", "category"):
                tokens[name].add(getattr(target, name))
            max_price = max(max_price, target.price)
            tokens["age"].add(sample.profile.age)
            tokens["gender"].add(sample.profile.gender)
        vocabularies = {
            name: Vocabulary.build(values) for name, values in tokens.items()
        }
        prices = PriceBuckets(max(max_price, 1.0), n_price_buckets)
        return cls(vocabularies, prices, max_len, tasks)

    def table_sizes(self) -> dict[str, int]:
        """Rows needed by each of the nine attribute tables."""
        sizes = {name: len(self.vocabularies[name]) for name in CATEGORICAL}
        sizes["time_span"] = MAX_TIME_SPAN + 2
        sizes["price"] = self.prices.n_buckets + 1
        sizes["payment_amount"] = self.prices.n_buckets + 1
        return {name: sizes[name] for name in ATTRIBUTES}

    def profile_sizes(self) -> dict[str, int]:
        return {name: len(self.vocabularies[name]) for name in PROFILE}

    def encode_record(self, record: InteractionRecord) -> list[int]:
        vocab = self.vocabularies
        return [
            vocab["goods_id"].index(record.goods_id),
            vocab["author_id"].index(record.author_id),
            vocab["source_domain"].index(record.source_domain),
            vocab["action"].index(record.action),
            vocab["brand"].index(record.brand),
            vocab["category"].index(record.category),
            min(record.time_span, MAX_TIME_SPAN) + 1,
            self.prices.bucket(record.price) + 1,
            self.prices.bucket(record.payment_amount) + 1,
        ]

    def encode_target(self, target: TargetItem) -> list[int]:
        vocab = self.vocabularies
        return [
            vocab["goods_id"].index(target.goods_id),
            vocab["author_id"].index(target.author_id),
            0,
            0,
            vocab["brand"].index(target.brand),
            vocab["category"].index(target.category),
            0,
            self.prices.bucket(target.price) + 1,
            0,
        ]

    def encode(self, samples: Sequence[Sample]) -> Batch:
        """Encode samples, keeping the most recent ``max_len`` records of each."""
        size, length = len(samples), self.max_len
        tokens = np.zeros((size, length, len(ATTRIBUTES)), dtype=np.int64)
        valid = np.zeros((size, length), dtype=bool)
        target = np.zeros((size, len(ATTRIBUTES)), dtype=np.int64)
        profile = np.zeros((size, len(PROFILE)), dtype=np.int64)
        pay_len = np.zeros(size, dtype=np.int64)
        labels = np.zeros((size, len(self.tasks)), dtype=np.float64)
        cache: dict[int, list[int]] = {}
        for row, sample in enumerate(samples):
            records = sample.sequence.records[-length:]
            offset = length - len(records)
            for position, record in enumerate(records, start=offset):
                encoded = cache.get(id(record))
                if encoded is None:
                    encoded = cache[id(record)] = self.encode_record(record)
                tokens[row, position] = encoded
            valid[row, offset:] = True
            target[row] = self.encode_target(sample.target)
            profile[row] = [
                self.vocabularies["age"].index(sample.profile.age),
                self.vocabularies["gender"].index(sample.profile.gender),
            ]
            pay_len[row] = pay_len_bucket(sample.sequence.purchase_count)
            labels[row] = [getattr(sample, task) for task in self.tasks]
        return Batch(
            tokens=torch.from_numpy(tokens),
            valid=torch.from_numpy(valid),
            target=torch.from_numpy(target),
            profile=torch.from_numpy(profile),
            pay_len=torch.from_numpy(pay_len),
            labels=torch.from_numpy(labels),
            user_ids=tuple(sample.user_id for sample in samples),
        )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, vocabulary in self.vocabularies.items():
            vocabulary.save(directory / f"{name}.vocab")
        meta = {
            "max_price": self.prices.max_price,
            "n_buckets": self.prices.n_buckets,
            "max_len": self.max_len,
            "tasks": list(self.tasks),
        }
        (directory / "encoder.json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path) -> "Encoder":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "encoder.json").read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read encoder in {directory}: {exc}") from None
        vocabularies = {
            name: Vocabulary.load(directory / f"{name}.vocab")
            for name in CATEGORICAL + PROFILE
        }
        return cls(
            vocabularies,
            PriceBuckets(meta["max_price"], meta["n_buckets"]),
            meta["max_len"],
            tuple(meta["tasks"]),
        )


class PaddedEmbedding(nn.Embedding):
    """Lookup table whose padding index reads as the zero vector."""

    def forward(self, index: torch.Tensor) -> torch.Tensor:
        rows = super().forward(index)
        if self.padding_idx is None:
            return rows
        keep = (index != self.padding_idx).unsqueeze(-1)
        return rows * keep.to(rows.dtype)


def _table(rows: int, dim: int, padding_idx: int | None = 0) -> nn.Embedding:
    table = PaddedEmbedding(rows, dim, padding_idx=padding_idx, dtype=DTYPE)
    nn.init.normal_(table.weight, std=0.1)
    if padding_idx is not None:
        with torch.no_grad():
            table.weight[padding_idx].zero_()
    return table


def embed_sequence(
    tokens: torch.Tensor, tables: Mapping[str, nn.Module]
) -> torch.Tensor:
    """Concatenate the nine attribute embeddings of every record."""
    parts = []
    for column, name in enumerate(ATTRIBUTES):
        if name not in tables:
            raise ValueError(f"missing embedding table {name!r}")
        parts.append(tables[name](tokens[..., column]))
    return torch.cat(parts, dim=-1)


class SequenceEmbedder(nn.Module):
    """One table per attribute; row 0 is the fixed zero padding row."""

    def __init__(self, sizes: Mapping[str, int], dim: int) -> None:
        super().__init__()
        self.dim = dim
        self.tables = nn.ModuleDict(
            {name: _table(sizes[name], dim) for name in ATTRIBUTES}
        )

    @property
    def width(self) -> int:
        return self.dim * len(ATTRIBUTES)

    def attribute_slice(self, name: str) -> slice:
        start = ATTRIBUTES.index(name) * self.dim
        return slice(start, start + self.dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return embed_sequence(tokens, self.tables)


@dataclass(frozen=True)
class SideSlice:
    """One side-information embedding and the parameter it is read from."""

    name: str
    value: torch.Tensor
    source: str


@dataclass(frozen=True)
class SideInfo:
    """I_u: user and target-item side embeddings followed by pay_len."""

    slices: tuple[SideSlice, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(piece.name for piece in self.slices)

    def vector(self) -> torch.Tensor:
        return torch.cat([piece.value for piece in self.slices], dim=-1)


def side_width(dim: int, mode: SideInfoMode) -> int:
    return dim if mode == "none" else dim * len(SIDE_SLICES)


def side_flags(mode: SideInfoMode) -> dict[str, bool]:
    """Which slices are present and whether gradient flows through each."""
    if mode == "none":
        return {"pay_len": True}
    flows = mode == "grad"
    return {name: flows or name == "pay_len" for name in SIDE_SLICES}


def embed_side_info(
    profile: torch.Tensor,
    target: torch.Tensor,
    pay_len: torch.Tensor,
    tables: Mapping[str, nn.Module],
    sources: Mapping[str, str],
    mode: SideInfoMode = "nograd",
) -> SideInfo:
    """Assemble I_u in the fixed order age, gender, brand, price, pay_len.

    ``tables`` maps slice names to embedding tables; brand and price are the
    sequence tables, so side information shares them with E_u.
    """
    indices = {
        "age": profile[..., 0],
        "gender": profile[..., 1],
        "brand": target[..., ATTRIBUTES.index("brand")],
        "price": target[..., ATTRIBUTES.index("price")],
        "pay_len": pay_len,
    }
    slices = tuple(
        SideSlice(name, tables[name](indices[name]), sources[name])
        for name in side_flags(mode)
    )
    return SideInfo(slices)


class SideInfoEmbedder(nn.Module):
    """Tables owned by side information: user profile and pay_len buckets."""

    def __init__(self, profile_sizes: Mapping[str, int], dim: int) -> None:
        super().__init__()
        self.profile = nn.ModuleDict(
            {name: _table(profile_sizes[name], dim) for name in PROFILE}
        )
        self.pay_len = _table(len(PAY_LEN_EDGES), dim, padding_idx=None)
