"""Behavior records, targets, and training samples."""

from dataclasses import dataclass
from typing import Literal

ATTRIBUTES = (
    "goods_id",
    "author_id",
    "source_domain",
    "action",
    "brand",
    "category",
    "time_span",
    "price",
    "payment_amount",
)
TASKS = ("click", "purchase")
PURCHASE = "purchase"

Task = Literal["click", "purchase"]


@dataclass(frozen=True)
class InteractionRecord:
    """One behavior event with its nine attributes."""

    goods_id: str
    author_id: str
    source_domain: str
    action: str
    brand: str
    category: str
    time_span: int
    price: float
    payment_amount: float

    def __post_init__(self) -> None:
        if self.time_span < 0:
            raise ValueError(f"time_span must be nonnegative, got {self.time_span}")
        if self.price < 0:
            raise ValueError(f"price must be nonnegative, got {self.price}")
        if self.payment_amount < 0:
            raise ValueError(
                f"payment_amount must be nonnegative, got {self.payment_amount}"
            )


@dataclass(frozen=True)
class LoggedEvent:
    """A record placed on a user's timeline."""

    user_id: str
    step: int
    record: InteractionRecord


@dataclass(frozen=True)
class BehaviorSequence:
    """Chronologically ordered records of one user."""

    user_id: str
    records: tuple[InteractionRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def purchase_count(self) -> int:
        return sum(record.action == PURCHASE for record in self.records)


@dataclass(frozen=True)
class TargetItem:
    goods_id: str
    author_id: str
    brand: str
    category: str
    price: float


@dataclass(frozen=True)
class UserProfile:
    age: str
    gender: str


@dataclass(frozen=True)
class Sample:
    """A (user, window, target) triple with one binary label per task."""

    user_id: str
    step: int
    sequence: BehaviorSequence
    target: TargetItem
    profile: UserProfile
    click: int
    purchase: int
