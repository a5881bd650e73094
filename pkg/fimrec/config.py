"""Validated run and generator configuration loaded from flat ``key = value`` files.

Dotted keys address nested sections (``fpem.p = 5``). Lists are comma
separated, maps are ``name:value`` pairs, promo windows are ``start-end:boost``.
"""

import hashlib
import json
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any, Literal, TypeVar

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveInt,
    TypeAdapter,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError
from .numerics import half_spectrum_length
from .records import TASKS, Task

ViewKey = Literal["author", "brand", "category", "price"]
VIEW_ORDER: tuple[ViewKey, ...] = ("author", "brand", "category", "price")

Model = TypeVar("Model", bound=BaseModel)

_BOOL = TypeAdapter(bool)


def _split_list(value: object) -> object:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _split_pairs(value: object) -> object:
    if not isinstance(value, str):
        return value
    pairs = {}
    for item in _split_list(value):
        name, sep, rhs = item.partition(":")
        if not sep:
            raise ValueError(f"expected name:value, got {item!r}")
        pairs[name.strip()] = rhs.strip()
    return pairs


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MssConfig(_Section):
    views: tuple[ViewKey, ...] = VIEW_ORDER
    search_mode: Literal["hard", "soft"] = "hard"
    top_k: PositiveInt = 16
    view_attrs: Literal["own", "all"] = "all"
    attention: Literal["mlp", "dot"] = "mlp"
    attention_hidden: PositiveInt = 32
    share_projections: bool = False

    @field_validator("views", mode="before")
    @classmethod
    def _parse_views(cls, value: object) -> object:
        if isinstance(value, str) and value.strip().lower() in ("none", "-"):
            return ()
        return _split_list(value)

    @field_validator("views")
    @classmethod
    def _order_views(cls, value: tuple[ViewKey, ...]) -> tuple[ViewKey, ...]:
        return tuple(view for view in VIEW_ORDER if view in value)


class FpemConfig(_Section):
    enabled: bool = True
    mode: Literal["trunc", "butter"] = "trunc"
    p: PositiveInt = 5
    fc: float = Field(0.125, gt=0.0, lt=0.5)
    order: PositiveInt = 6
    fusion: Literal["beta", "direct"] = "beta"
    sideinfo: Literal["none", "grad", "nograd"] = "nograd"
    share_gates: bool = False
    eps: float = Field(1e-5, gt=0.0)


class MmoeConfig(_Section):
    experts: PositiveInt = 4
    tasks: tuple[Task, ...] = TASKS

    @field_validator("tasks", mode="before")
    @classmethod
    def _parse_tasks(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("tasks")
    @classmethod
    def _known_tasks(cls, value: tuple[Task, ...]) -> tuple[Task, ...]:
        if not value:
            raise ValueError("at least one task is required")
        return tuple(task for task in TASKS if task in value)


class RunConfig(_Section):
    lr: float = Field(0.01, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    batch_size: PositiveInt = 256
    epochs: PositiveInt = 1
    seed: int = 0
    dims: PositiveInt = 4
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    max_len: PositiveInt = 64
    price_buckets: PositiveInt = 10
    cutoff_step: int | None = None
    primary_task: Task = "purchase"
    baseline: bool = False
    threads: PositiveInt = 1
    mss: MssConfig = MssConfig()
    fpem: FpemConfig = FpemConfig()
    mmoe: MmoeConfig = MmoeConfig()

    @model_validator(mode="before")
    @classmethod
    def _apply_baseline(cls, data: object) -> object:
        # The baseline is category-only hard search without FPEM.
        if not isinstance(data, dict) or not _BOOL.validate_python(
            data.get("baseline", False)
        ):
            return data
        data = dict(data)
        fpem = dict(data.get("fpem") or {})
        mss = dict(data.get("mss") or {})
        fpem["enabled"] = False
        mss.update(views=("category",), search_mode="hard")
        data.update(fpem=fpem, mss=mss)
        return data

    @model_validator(mode="after")
    def _check_truncation(self) -> "RunConfig":
        if self.fpem.enabled and self.fpem.mode == "trunc":
            limit = half_spectrum_length(self.max_len) // 2
            if self.fpem.p > limit:
                raise ValueError(
                    f"fpem.p = {self.fpem.p} exceeds {limit}, the largest "
                    f"truncation position for max_len = {self.max_len}"
                )
        if self.primary_task not in self.mmoe.tasks:
            raise ValueError(f"primary_task {self.primary_task!r} is not a task")
        return self


class PromoWindow(_Section):
    start: NonNegativeInt
    end: NonNegativeInt
    boost: float = Field(ge=0.0)

    @model_validator(mode="before")
    @classmethod
    def _parse(cls, value: object) -> object:
        if not isinstance(value, str):
            return value
        span, sep, boost = value.partition(":")
        start, dash, end = span.partition("-")
        if not sep or not dash:
            raise ValueError(f"expected start-end:boost, got {value!r}")
        return {"start": start.strip(), "end": end.strip(), "boost": boost.strip()}

    def contains(self, step: int) -> bool:
        return self.start <= step < self.end


class SyntheticConfig(_Section):
    n_users: PositiveInt = 200
    seq_len: PositiveInt = 64
    samples_per_user: PositiveInt = 8
    periods: dict[str, PositiveInt] = {
        "coffee": 2,
        "groceries": 3,
        "snacks": 5,
        "cinema": 7,
        "haircut": 11,
        "travel": 13,
    }
    browse_categories: tuple[str, ...] = (
        "books",
        "garden",
        "music",
        "pets",
        "sports",
        "toys",
    )
    user_categories: PositiveInt = 2
    tempos: tuple[PositiveInt, ...] = (1,)
    exploration_rate: float = Field(0.1, ge=0.0, le=1.0)
    impulse_rate: float = Field(0.05, ge=0.0, le=1.0)
    browse_rate: float = Field(1.0, ge=0.0, le=1.0)
    positive_rate: float = Field(0.5, ge=0.0, le=1.0)
    own_target_rate: float = Field(0.8, ge=0.0, le=1.0)
    loyalty: float = Field(0.8, ge=0.0, le=1.0)
    promo_windows: tuple[PromoWindow, ...] = ()
    price_ranges: dict[str, tuple[float, float]] = {}
    goods_per_category: PositiveInt = 8
    authors_per_category: PositiveInt = 3
    brands_per_category: PositiveInt = 2
    seed: int = 0

    @field_validator("periods", mode="before")
    @classmethod
    def _parse_periods(cls, value: object) -> object:
        return _split_pairs(value)

    @field_validator("tempos", mode="before")
    @classmethod
    def _parse_tempos(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("browse_categories", mode="before")
    @classmethod
    def _parse_categories(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("promo_windows", mode="before")
    @classmethod
    def _parse_promos(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("price_ranges", mode="before")
    @classmethod
    def _parse_ranges(cls, value: object) -> object:
        pairs = _split_pairs(value)
        if not isinstance(pairs, dict):
            return pairs
        return {
            name: tuple(bound.split("-", 1)) if isinstance(bound, str) else bound
            for name, bound in pairs.items()
        }

    @model_validator(mode="after")
    def _check(self) -> "SyntheticConfig":
        if not self.periods:
            raise ValueError("periods must name at least one category")
        if self.user_categories > len(self.periods):
            raise ValueError(
                f"user_categories = {self.user_categories} exceeds the "
                f"{len(self.periods)} periodic categories"
            )
        if not self.tempos:
            raise ValueError("tempos must hold at least one multiplier")
        overlap = set(self.periods) & set(self.browse_categories)
        if overlap:
            raise ValueError(f"browse_categories repeat periodic ones: {overlap}")
        for name, (low, high) in self.price_ranges.items():
            if not 0 <= low <= high:
                raise ValueError(f"price_ranges.{name} must satisfy 0 <= low <= high")
        return self

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self.periods) + self.browse_categories

    def price_range(self, category: str) -> tuple[float, float]:
        return self.price_ranges.get(category, (5.0, 50.0))


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{number}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def nest(flat: Mapping[str, object]) -> dict[str, Any]:
    """Turn dotted keys into nested dictionaries."""
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        *parents, leaf = key.split(".")
        node = nested
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{key}: {part!r} is not a section")
            node = child
        if isinstance(node.get(leaf), dict):
            raise ConfigError(f"{key}: is a section, not a value")
        node[leaf] = value
    return nested


def build_config(model: type[Model], flat: Mapping[str, object]) -> Model:
    try:
        return model.model_validate(nest(flat))
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(
    model: type[Model],
    path: str | Path | None = None,
    overrides: Iterable[str] = (),
) -> Model:
    """Load a config file (optional) and apply ``key=value`` overrides on top."""
    flat: dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        flat.update(parse_flat(text, str(path)))
    for override in overrides:
        flat.update(parse_flat(override, "override"))
    return build_config(model, flat)


_SECTIONS = ("mss", "fpem", "mmoe")


def flatten(model: BaseModel) -> dict[str, object]:
    """Dotted-key view of a validated model, the inverse of :func:`nest`."""
    flat: dict[str, object] = {}
    for key, value in model.model_dump(mode="json").items():
        if key in _SECTIONS and isinstance(value, dict):
            flat.update({f"{key}.{child}": item for child, item in value.items()})
        else:
            flat[key] = value
    return flat


def dump_flat(model: BaseModel) -> str:
    """``key = value`` text that :func:`load_config` reads back to ``model``."""
    lines = []
    for key, value in flatten(model).items():
        if value is None:
            continue
        if isinstance(value, bool):
            text = str(value).lower()
        elif isinstance(value, list):
            text = ", ".join(str(item) for item in value) or "none"
        else:
            text = str(value)
        lines.append(f"{key} = {text}\n")
    return "".join(lines)


def config_hash(model: BaseModel) -> str:
    canonical = json.dumps(model.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _describe(exc: ValidationError) -> str:
    error = exc.errors()[0]
    key = ".".join(str(part) for part in error["loc"])
    message = error["msg"].removeprefix("Value error, ")
    return f"{key}: {message}" if key else message
