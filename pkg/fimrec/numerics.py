"""Float64 tensor substrate: real FFT pair, gradient tape, Adam, gradient checks.

Every tensor in the package is ``torch.float64`` (complex spectra are
``complex128``). Autograd records the operations; :class:`GradTape` names the
leaves, receives stop-gradient markers, and returns dense gradients.
"""

import math
from collections.abc import Callable, Iterable, Iterator, Mapping
from contextlib import contextmanager
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from ._tape import activate_tape, get_active_tape
from .errors import NumericError

DTYPE = torch.float64

GRAD_CHECK_FLOOR = 1e-5


def half_spectrum_length(n: int) -> int:
    """Number of bins kept by :func:`rfft` for a length-``n`` signal."""
    return math.ceil(n / 2) + 1


def rfft(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Half spectrum of a real signal along ``dim``.

    Bin ``k`` is ``sum_i x[i] * exp(-2j*pi*k*i/N)`` for ``k < ceil(N/2) + 1``.
    Odd lengths carry one extra bin, the conjugate of the last non-redundant
    one, so the bin count is the same formula for every ``N``.
    """
    if x.ndim == 0 or x.shape[dim] < 1:
        raise ValueError("rfft needs at least one sample")
    n = x.shape[dim]
    spectrum = torch.fft.rfft(x, dim=dim)
    if n % 2:
        last = spectrum.narrow(dim, spectrum.shape[dim] - 1, 1)
        spectrum = torch.cat([spectrum, last.conj()], dim=dim)
    return spectrum


def irfft(spectrum: torch.Tensor, n: int, dim: int = -1) -> torch.Tensor:
    """Real signal of length ``n`` whose :func:`rfft` is ``spectrum``.

    The full spectrum is rebuilt by Hermitian symmetry from the given bins,
    inverted, and the imaginary residue is dropped.
    """
    if n < 1:
        raise ValueError(f"signal length must be positive, got {n}")
    length = spectrum.shape[dim]
    expected = half_spectrum_length(n)
    if length != expected:
        raise ValueError(
            f"spectrum has {length} bins but a length-{n} signal needs {expected}"
        )
    moved = spectrum.movedim(dim, -1)
    head = moved[..., : min(length, n)]
    tail = moved[..., 1 : n - length + 1].flip(-1).conj()
    full = torch.cat([head, tail], dim=-1)
    return torch.fft.ifft(full, n=n, dim=-1).real.movedim(-1, dim)


def spectrum_weights(n: int) -> torch.Tensor:
    """Per-bin multiplicities that make the half spectrum satisfy Parseval."""
    weights = torch.full((half_spectrum_length(n),), 2.0, dtype=DTYPE)
    weights[0] = 1.0
    if n % 2:
        weights[-1] = 0.0
    else:
        weights[n // 2] = 1.0
    return weights


def layer_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    shift: torch.Tensor,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Normalize the last dimension to zero mean and unit variance, then scale."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return F.layer_norm(x, (x.shape[-1],), gamma, shift, eps)


class GradTape:
    """Named-parameter gradients for one training step.

    While recording, every stop-gradient output is kept as a snapshot. Inside
    :meth:`replay` the same calls return those snapshots, so a perturbed
    parameter reaches the loss only through its differentiable paths.
    """

    def __init__(self, params: Mapping[str, torch.Tensor]) -> None:
        self.params = dict(params)
        self.stopped: set[str] = set()
        self.snapshots: list[torch.Tensor] = []
        self._cursor: int | None = None

    def mark_stopped(self, source: str) -> None:
        """Record that ``source`` feeds the loss through a stop-gradient."""
        self.stopped.add(source)

    @contextmanager
    def record(self) -> Iterator["GradTape"]:
        with activate_tape(self) as tape:
            yield tape

    @contextmanager
    def replay(self) -> Iterator["GradTape"]:
        """Serve recorded stop-gradient values, in call order, to one forward."""
        self._cursor = 0
        try:
            with activate_tape(self) as tape:
                yield tape
        finally:
            self._cursor = None

    def stop(self, x: torch.Tensor, sources: Iterable[str]) -> torch.Tensor:
        if self._cursor is None:
            for source in sources:
                self.mark_stopped(source)
            self.snapshots.append(x.detach().clone())
            return x.detach()
        if self._cursor >= len(self.snapshots):
            raise ValueError("replayed forward stops more gradients than recorded")
        snapshot = self.snapshots[self._cursor]
        if snapshot.shape != x.shape:
            raise ValueError(
                f"replayed stop-gradient has shape {tuple(x.shape)}, "
                f"recorded {tuple(snapshot.shape)}"
            )
        self._cursor += 1
        return snapshot

    def gradient(self, loss: torch.Tensor) -> dict[str, torch.Tensor]:
        """Gradients of ``loss``; parameters it never touched get exact zeros."""
        if not torch.isfinite(loss).all():
            raise NumericError(f"non-finite loss: {loss.detach().tolist()}")
        grads = {name: torch.zeros_like(p) for name, p in self.params.items()}
        if not loss.requires_grad:
            return grads
        names = [name for name, p in self.params.items() if p.requires_grad]
        found = torch.autograd.grad(
            loss,
            [self.params[name] for name in names],
            allow_unused=True,
            retain_graph=True,
        )
        for name, grad in zip(names, found):
            if grad is not None:
                grads[name] = grad.detach()
        return grads


def stop_gradient(x: torch.Tensor, sources: Iterable[str] = ()) -> torch.Tensor:
    """Forward identity with no backward flow; marks ``sources`` on the tape."""
    tape = get_active_tape()
    if tape is None:
        return x.detach()
    return tape.stop(x, sources)


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed set of named parameters."""

    optimizer: torch.optim.Adam
    names: tuple[str, ...]
    t: int = 0

    @classmethod
    def create(
        cls,
        params: Mapping[str, torch.Tensor],
        lr: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        optimizer = torch.optim.Adam(
            list(params.values()),
            lr=lr,
            betas=(beta1, beta2),
            eps=eps,
            foreach=False,
        )
        return cls(optimizer, tuple(params))

    def moments(self, param: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """First and second moment estimates for ``param`` (zeros before step 1)."""
        state = self.optimizer.state.get(param)
        if not state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state["exp_avg"], state["exp_avg_sq"]


def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    state: AdamState,
) -> AdamState:
    """Apply one Adam update in place and advance the step counter."""
    if tuple(params) != state.names:
        raise ValueError("parameters do not match the optimizer state")
    for name, param in params.items():
        if name not in grads:
            raise ValueError(f"missing gradient for {name!r}")
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(
                f"gradient for {name!r} has shape {tuple(grad.shape)}, "
                f"parameter has {tuple(param.shape)}"
            )
        param.grad = grad.detach().clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.t += 1
    return state


@dataclass(frozen=True)
class GradCheckReport:
    """Max relative error per parameter.

    ``exempt`` names the parameters read through a stop-gradient. Those reads
    are exempt from perturbation: finite differences hold them at their
    recorded values and score the remaining paths.

    ``nonsmooth`` counts coordinates skipped because the step crossed a kink
    or a selection boundary of the loss.
    """

    errors: dict[str, float] = field(default_factory=dict)
    exempt: frozenset[str] = frozenset()
    nonsmooth: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    h: float = 1e-5,
    *,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = GRAD_CHECK_FLOOR,
    kink_tol: float | None = None,
) -> GradCheckReport:
    """Compare tape gradients with central differences, coordinate by coordinate.

    The relative error of a coordinate is ``|g - fd| / max(|g|, |fd|, floor)``.
    Every perturbed forward replays the stop-gradient values of the recorded
    one, so a parameter that also feeds a stopped path is scored on its
    differentiable paths alone.

    With ``kink_tol`` set, a coordinate whose forward and backward one-sided
    differences disagree by more than ``kink_tol`` (relative) is counted as
    nonsmooth instead of scored. A wrong tape gradient still shows up, since
    both one-sided differences then agree with each other and not with it.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")

    tape = GradTape(params)
    with tape.record():
        loss = loss_fn()
    grads = tape.gradient(loss)
    base = float(loss)
    exempt = frozenset(tape.stopped & params.keys())

    generator = torch.Generator().manual_seed(seed)
    errors: dict[str, float] = {}
    nonsmooth: dict[str, int] = {}
    with torch.no_grad():
        for name, param in params.items():
            flat = param.data.view(-1)
            analytic = grads[name].reshape(-1)
            worst = 0.0
            skipped = 0
            for index in _coordinates(analytic, max_coords, generator):
                original = flat[index].item()
                flat[index] = original + h
                plus = _finite_loss(loss_fn, tape)
                flat[index] = original - h
                minus = _finite_loss(loss_fn, tape)
                flat[index] = original
                numeric = (plus - minus) / (2 * h)
                exact = analytic[index].item()
                scale = max(abs(exact), abs(numeric), floor)
                if kink_tol is not None:
                    one_sided = abs((plus - base) - (base - minus)) / h
                    if one_sided > kink_tol * scale:
                        skipped += 1
                        continue
                worst = max(worst, abs(exact - numeric) / scale)
            errors[name] = worst
            if skipped:
                nonsmooth[name] = skipped
    return GradCheckReport(errors, exempt, nonsmooth)


def _finite_loss(loss_fn: Callable[[], torch.Tensor], tape: GradTape) -> float:
    with tape.replay():
        value = float(loss_fn())
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss during finite differences: {value}")
    return value


def _coordinates(
    analytic: torch.Tensor, max_coords: int | None, generator: torch.Generator
) -> list[int]:
    if max_coords is None or analytic.numel() <= max_coords:
        return list(range(analytic.numel()))
    # Prefer coordinates the loss actually reaches; keep a few untouched ones
    # to confirm their gradient is zero on both sides.
    touched = torch.nonzero(analytic).flatten()
    untouched = torch.nonzero(analytic == 0).flatten()
    touched = touched[torch.randperm(touched.numel(), generator=generator)]
    untouched = untouched[torch.randperm(untouched.numel(), generator=generator)]
    chosen = torch.cat([touched[:max_coords], untouched[: max(1, max_coords // 8)]])
    return sorted(chosen.tolist())
