"""Active gradient-tape routing for stop-gradient markers."""

from contextlib import contextmanager
from contextvars import ContextVar
from typing import TYPE_CHECKING, Iterator

if TYPE_CHECKING:
    from .numerics import GradTape

_active_tape: ContextVar["GradTape"] = ContextVar("fimrec_grad_tape")


@contextmanager
def activate_tape(tape: "GradTape") -> Iterator["GradTape"]:
    """Make a tape the recipient of stop-gradient markers in this context."""
    token = _active_tape.set(tape)
    try:
        yield tape
    finally:
        _active_tape.reset(token)


def get_active_tape() -> "GradTape | None":
    """Return the tape recording the current step, if any."""
    return _active_tape.get(None)
