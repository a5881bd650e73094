"""Synthetic periodic behavior logs, JSONL ingestion, and temporal splits.

Files of a dataset directory::

    behaviors.jsonl   one LoggedEvent per line, users in order, steps ascending
    samples.jsonl     one (user, step, target, labels, profile) line per sample
    manifest.json     generator config, its hash, seed and counts
"""

import bisect
import json
import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from reprobate import render

from .config import SyntheticConfig, config_hash
from .errors import DataError
from .records import (
    PURCHASE,
    BehaviorSequence,
    InteractionRecord,
    LoggedEvent,
    Sample,
    TargetItem,
    UserProfile,
)

logger = logging.getLogger(__name__)

BEHAVIORS = "behaviors.jsonl"
SAMPLES = "samples.jsonl"
MANIFEST = "manifest.json"

CLICK = "click"
AGES = ("18-24", "25-34", "35-44", "45+")
GENDERS = ("f", "m")
DOMAINS = ("feed", "search", "live")

Catalog = dict[str, tuple[TargetItem, ...]]


@dataclass(frozen=True)
class Plant:
    """A planted category, due at every step congruent to ``phase`` mod ``period``."""

    period: int
    phase: int

    def due(self, step: int) -> bool:
        return step % self.period == self.phase


Schedule = dict[str, Plant]

Line = TypeVar("Line", bound=BaseModel)
Item = TypeVar("Item")


class _Line(BaseModel):
    model_config = ConfigDict(extra="ignore", coerce_numbers_to_str=True)


class EventLine(_Line):
    goods_id: str
    author_id: str
    source_domain: str
    action: str
    brand: str
    category: str
    time_span: int = Field(ge=0)
    price: float = Field(ge=0.0)
    payment_amount: float = Field(ge=0.0)
    user_id: str
    step: int

    @classmethod
    def from_event(cls, event: LoggedEvent) -> "EventLine":
        record = event.record
        return cls(
            **{name: getattr(record, name) for name in _RECORD_FIELDS},
            user_id=event.user_id,
            step=event.step,
        )

    def to_event(self) -> LoggedEvent:
        record = InteractionRecord(
            **{name: getattr(self, name) for name in _RECORD_FIELDS}
        )
        return LoggedEvent(self.user_id, self.step, record)


_RECORD_FIELDS = tuple(
    name for name in EventLine.model_fields if name not in ("user_id", "step")
)


class TargetLine(_Line):
    goods_id: str
    author_id: str
    brand: str
    category: str
    price: float = Field(ge=0.0)


class LabelLine(_Line):
    click: int = Field(ge=0, le=1)
    purchase: int = Field(ge=0, le=1)


class ProfileLine(_Line):
    age: str
    gender: str


class SampleLine(_Line):
    user_id: str
    step: int
    target: TargetLine
    labels: LabelLine
    profile: ProfileLine

    @classmethod
    def from_sample(cls, sample: Sample) -> "SampleLine":
        target = sample.target
        return cls(
            user_id=sample.user_id,
            step=sample.step,
            target=TargetLine(
                goods_id=target.goods_id,
                author_id=target.author_id,
                brand=target.brand,
                category=target.category,
                price=target.price,
            ),
            labels=LabelLine(click=sample.click, purchase=sample.purchase),
            profile=ProfileLine(age=sample.profile.age, gender=sample.profile.gender),
        )


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated events and samples plus each user's planted schedule."""

    events: tuple[LoggedEvent, ...]
    samples: tuple[Sample, ...]
    schedules: dict[str, Schedule]


def build_catalog(cfg: SyntheticConfig) -> Catalog:
    """Goods per category with a few authors and brands each."""
    rng = np.random.default_rng([cfg.seed, 0])
    catalog: Catalog = {}
    for category in cfg.categories:
        low, high = cfg.price_range(category)
        catalog[category] = tuple(
            TargetItem(
                goods_id=f"{category}-g{j}",
                author_id=f"{category}-a{j % cfg.authors_per_category}",
                brand=f"{category}-b{j % cfg.brands_per_category}",
                category=category,
                price=round(float(rng.uniform(low, high)), 2),
            )
            for j in range(cfg.goods_per_category)
        )
    return catalog


def promo_boost(cfg: SyntheticConfig, step: int) -> float:
    boost = 1.0
    for window in cfg.promo_windows:
        if window.contains(step):
            boost *= window.boost
    return boost


def due_categories(schedule: Schedule, step: int) -> list[str]:
    return [c for c, plant in schedule.items() if plant.due(step)]


def _pick(options: Sequence[Item], u: float) -> Item:
    return options[min(int(u * len(options)), len(options) - 1)]


def _plant(cfg: SyntheticConfig, rng: np.random.Generator) -> Schedule:
    """Planted categories and phases; one tempo scales all of a user's periods."""
    periodic = list(cfg.periods)
    chosen = sorted(rng.choice(len(periodic), size=cfg.user_categories, replace=False))
    tempo = cfg.tempos[int(rng.integers(len(cfg.tempos)))]
    schedule = {}
    for i in chosen:
        period = cfg.periods[periodic[i]] * tempo
        schedule[periodic[i]] = Plant(period, int(rng.integers(period)))
    return schedule


def _usual_goods(
    catalog: Catalog, schedule: Schedule, rng: np.random.Generator
) -> dict[str, tuple[TargetItem, ...]]:
    """Goods of the brand a user keeps buying in each planted category."""
    usual = {}
    for category in schedule:
        brand = _pick(catalog[category], rng.random()).brand
        usual[category] = tuple(g for g in catalog[category] if g.brand == brand)
    return usual


def _user_events(
    cfg: SyntheticConfig,
    catalog: Catalog,
    user_id: str,
    schedule: Schedule,
    usual: dict[str, tuple[TargetItem, ...]],
    rng: np.random.Generator,
) -> list[LoggedEvent]:
    categories = cfg.categories
    others = [c for c in categories if c not in schedule] or list(categories)
    events: list[LoggedEvent] = []
    last_step: int | None = None

    def emit(
        step: int, category: str, goods: TargetItem, action: str, u: float
    ) -> None:
        nonlocal last_step
        time_span = 0 if last_step is None else step - last_step
        last_step = step
        record = InteractionRecord(
            goods_id=goods.goods_id,
            author_id=goods.author_id,
            source_domain=_pick(DOMAINS, u),
            action=action,
            brand=goods.brand,
            category=category,
            time_span=time_span,
            price=goods.price,
            payment_amount=goods.price if action == PURCHASE else 0.0,
        )
        events.append(LoggedEvent(user_id, step, record))

    for step in range(cfg.seq_len + cfg.samples_per_user):
        # A fixed number of draws per step keeps streams aligned across configs.
        draws = rng.random((len(schedule) + 1, 5))
        due = set(due_categories(schedule, step))
        for planted, row in zip(schedule, draws):
            if planted not in due:
                continue
            explore, anycat, loyal, item, domain = row
            if explore < cfg.exploration_rate:
                category = _pick(categories, anycat)
                goods = _pick(catalog[category], item)
            else:
                category = planted
                stock = usual[planted] if loyal < cfg.loyalty else catalog[planted]
                goods = _pick(stock, item)
            emit(step, category, goods, PURCHASE, domain)
        if due:
            continue
        browse, anycat, buy, item, domain = draws[-1]
        if browse >= cfg.browse_rate:
            continue
        category = _pick(others, anycat)
        chance = min(1.0, cfg.impulse_rate * promo_boost(cfg, step))
        action = PURCHASE if buy < chance else CLICK
        emit(step, category, _pick(catalog[category], item), action, domain)
    return events


def _fresh_target(
    goods: Sequence[TargetItem],
    window: Sequence[InteractionRecord],
    u: float,
    step: int,
) -> TargetItem:
    """A category item the window has not seen; a new listing when none is left."""
    seen = {record.goods_id for record in window}
    fresh = [item for item in goods if item.goods_id not in seen]
    if fresh:
        return _pick(fresh, u)
    base = _pick(goods, u)
    return replace(base, goods_id=f"{base.category}-n{step}")


def _generate_user(
    cfg: SyntheticConfig, catalog: Catalog, index: int
) -> tuple[list[LoggedEvent], list[Sample], Schedule]:
    user_id = f"u{index:05d}"
    rng = np.random.default_rng([cfg.seed, index + 1])
    schedule = _plant(cfg, rng)
    usual = _usual_goods(catalog, schedule, rng)
    profile = UserProfile(
        age=AGES[int(rng.integers(len(AGES)))],
        gender=GENDERS[int(rng.integers(len(GENDERS)))],
    )
    events = _user_events(cfg, catalog, user_id, schedule, usual, rng)
    steps = [event.step for event in events]
    records = tuple(event.record for event in events)

    samples = []
    for step in range(cfg.seq_len, cfg.seq_len + cfg.samples_per_user):
        u_pos, u_own, u_cat, u_loyal, u_item = rng.random(5)
        end = bisect.bisect_left(steps, step)
        window = records[max(0, end - cfg.seq_len) : end]
        if not window:
            continue
        due = due_categories(schedule, step)
        idle = [c for c in schedule if c not in due]
        if due and u_pos < cfg.positive_rate:
            category = _pick(due, u_cat)
        elif idle and u_own < cfg.own_target_rate:
            category = _pick(idle, u_cat)
        else:
            category = _pick(cfg.categories, u_cat)
        stock = catalog[category]
        if category in due and u_loyal < cfg.loyalty:
            stock = usual[category]
        target = _fresh_target(stock, window, u_item, step)
        samples.append(
            Sample(
                user_id=user_id,
                step=step,
                sequence=BehaviorSequence(user_id, window),
                target=target,
                profile=profile,
                click=int(category in schedule),
                purchase=int(category in due),
            )
        )
    return events, samples, schedule


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticDataset:
    """Users with planted purchase periods; deterministic given ``cfg.seed``.

    Every user draws ``user_categories`` periodic categories, each with a
    random phase, and one tempo that multiplies all of their periods. At a
    step where planted categories are due the user buys each of them, mostly
    from a usual brand, unless that purchase explores a uniformly random
    category. Other steps are browsing events whose impulse purchases scale
    with promo boosts.

    A sample's purchase label is 1 exactly when its target category is due at
    the sample step; its click label marks the user's own periodic categories.
    Targets are due categories with ``positive_rate``, otherwise mostly the
    user's idle planted categories, so the label turns on timing rather than
    on which categories the user buys. Due targets come from the usual brand
    with probability ``loyalty``.
    """
    catalog = build_catalog(cfg)
    events: list[LoggedEvent] = []
    samples: list[Sample] = []
    schedules: dict[str, Schedule] = {}
    for index in range(cfg.n_users):
        user_events, user_samples, schedule = _generate_user(cfg, catalog, index)
        events.extend(user_events)
        samples.extend(user_samples)
        schedules[f"u{index:05d}"] = schedule
    logger.info(
        "generated %d events and %d samples for %d users",
        len(events),
        len(samples),
        cfg.n_users,
    )
    return SyntheticDataset(tuple(events), tuple(samples), schedules)


def purchase_indicator(
    events: Iterable[LoggedEvent], user_id: str, category: str, horizon: int
) -> np.ndarray:
    """1 at every step where ``user_id`` bought from ``category``."""
    indicator = np.zeros(horizon)
    for event in events:
        record = event.record
        if (
            event.user_id == user_id
            and record.category == category
            and record.action == PURCHASE
            and event.step < horizon
        ):
            indicator[event.step] = 1.0
    return indicator


def autocorrelation(signal: np.ndarray, max_lag: int) -> np.ndarray:
    """Unnormalized autocorrelation of the centered signal at lags ``0..max_lag``."""
    centered = np.asarray(signal, dtype=np.float64)
    centered = centered - centered.mean()
    full = np.correlate(centered, centered, mode="full")
    mid = len(centered) - 1
    return full[mid : mid + max_lag + 1]


def dominant_period(signal: np.ndarray, max_lag: int) -> int:
    """Lag in ``1..max_lag`` with the largest autocorrelation."""
    if max_lag < 1:
        raise ValueError(f"max_lag must be positive, got {max_lag}")
    return int(np.argmax(autocorrelation(signal, max_lag)[1:])) + 1


def write_dataset(
    directory: str | Path, dataset: SyntheticDataset, cfg: SyntheticConfig
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_lines(
        directory / BEHAVIORS, (EventLine.from_event(e) for e in dataset.events)
    )
    _write_lines(
        directory / SAMPLES, (SampleLine.from_sample(s) for s in dataset.samples)
    )
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "n_users": cfg.n_users,
        "n_events": len(dataset.events),
        "n_samples": len(dataset.samples),
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2))
    logger.debug("wrote dataset %s", render(manifest, 240))
    return directory


def _write_lines(path: Path, lines: Iterable[BaseModel]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(line.model_dump_json())
            handle.write("\n")


def _read_lines(path: str | Path, model: type[Line]) -> list[Line]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    parsed = []
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            parsed.append(model.model_validate_json(raw))
        except ValidationError as exc:
            raise DataError(f"{path}:{number}: {_line_error(exc)}") from None
    return parsed


def _line_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    field = ".".join(str(part) for part in error["loc"])
    if error["type"] == "missing":
        return f"missing field {field!r}"
    if not field:
        return f"malformed line: {error['msg']}"
    return f"{field}: {error['msg']}"


def load_jsonl(path: str | Path) -> list[LoggedEvent]:
    """Behavior events of a JSONL file, validated line by line."""
    return [line.to_event() for line in _read_lines(path, EventLine)]


def load_dataset(directory: str | Path, max_len: int) -> list[Sample]:
    """Rebuild samples: each window is the last ``max_len`` events before its step."""
    directory = Path(directory)
    timelines: dict[str, list[LoggedEvent]] = defaultdict(list)
    for event in load_jsonl(directory / BEHAVIORS):
        timelines[event.user_id].append(event)
    steps = {}
    for user_id, timeline in timelines.items():
        timeline.sort(key=lambda event: event.step)
        steps[user_id] = [event.step for event in timeline]

    samples: list[Sample] = []
    skipped = 0
    for line in _read_lines(directory / SAMPLES, SampleLine):
        timeline = timelines.get(line.user_id, [])
        end = bisect.bisect_left(steps.get(line.user_id, []), line.step)
        window = tuple(event.record for event in timeline[max(0, end - max_len) : end])
        if not window:
            skipped += 1
            continue
        samples.append(
            Sample(
                user_id=line.user_id,
                step=line.step,
                sequence=BehaviorSequence(line.user_id, window),
                target=TargetItem(**line.target.model_dump()),
                profile=UserProfile(**line.profile.model_dump()),
                click=line.labels.click,
                purchase=line.labels.purchase,
            )
        )
    if skipped:
        logger.warning("skipped %d samples with no earlier behavior", skipped)
    logger.info("loaded %d samples from %s", len(samples), directory)
    return samples


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None


def default_cutoff(samples: Sequence[Sample]) -> int:
    """Everything before the final sample step trains; the final step tests."""
    if not samples:
        raise DataError("cannot split an empty dataset")
    return max(sample.step for sample in samples) - 1


def split_temporal(
    samples: Sequence[Sample], cutoff: int
) -> tuple[list[Sample], list[Sample]]:
    """Samples at or before ``cutoff`` train, later ones test."""
    if samples:
        first = min(sample.step for sample in samples)
        last = max(sample.step for sample in samples)
        if not first - 1 <= cutoff <= last:
            raise DataError(
                f"cutoff step {cutoff} outside the observed range [{first - 1}, {last}]"
            )
    train = [sample for sample in samples if sample.step <= cutoff]
    test = [sample for sample in samples if sample.step > cutoff]
    return train, test
