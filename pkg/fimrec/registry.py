"""Band-filter builder registry keyed by ``fpem.mode``."""

from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from .config import FpemConfig
    from .fpem import BandMask

FilterBuilder = Callable[[int, "FpemConfig"], "tuple[BandMask, BandMask, BandMask]"]

_registry: dict[str, FilterBuilder] = {}


def register_filter(mode: str) -> Callable[[FilterBuilder], FilterBuilder]:
    """Register the (low, band, high) mask builder for a filter mode.

    Usage::

        @register_filter("trunc")
        def build_trunc(length: int, cfg: FpemConfig) -> tuple[BandMask, ...]:
            ...
    """

    def decorator(fn: FilterBuilder) -> FilterBuilder:
        _registry[mode] = fn
        return fn

    return decorator


def get_filter(mode: str) -> FilterBuilder:
    """Look up the builder for a mode."""
    try:
        return _registry[mode]
    except KeyError:
        raise ValueError(f"unknown filter mode: {mode!r}") from None


def filter_modes() -> tuple[str, ...]:
    return tuple(sorted(_registry))
