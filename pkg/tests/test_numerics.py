"""Tests for the float64 substrate: FFT pair, tape, Adam and gradient checks."""

import math

import pytest
import torch

from fimrec.errors import NumericError
from fimrec.numerics import (
    DTYPE,
    AdamState,
    GradTape,
    adam_step,
    grad_check,
    half_spectrum_length,
    irfft,
    layer_norm,
    rfft,
    spectrum_weights,
    stop_gradient,
)

LENGTHS = [1, 2, 3, 4, 5, 7, 8, 16, 26, 31, 64, 100]


def _signal(n, seed=0, *shape):
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, n, generator=generator, dtype=DTYPE)


class TestRealFft:
    @pytest.mark.parametrize("n", LENGTHS)
    def test_bin_count(self, n):
        assert rfft(_signal(n)).shape[-1] == math.ceil(n / 2) + 1
        assert half_spectrum_length(n) == math.ceil(n / 2) + 1

    def test_impulse_is_flat(self):
        spectrum = rfft(torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE))
        assert torch.allclose(spectrum, torch.ones(3, dtype=spectrum.dtype))

    def test_known_values(self):
        spectrum = rfft(torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=DTYPE))
        expected = torch.tensor([10.0, -2.0 + 2.0j, -2.0], dtype=spectrum.dtype)
        assert torch.allclose(spectrum, expected, atol=1e-12)

    def test_odd_length_extra_bin_is_conjugate(self):
        spectrum = rfft(_signal(5))
        assert spectrum.shape[-1] == 4
        assert torch.allclose(spectrum[3], spectrum[2].conj())

    @pytest.mark.parametrize("n", LENGTHS)
    def test_roundtrip(self, n):
        x = _signal(n, n)
        assert torch.allclose(irfft(rfft(x), n), x, atol=1e-9)

    @pytest.mark.parametrize("n", LENGTHS)
    def test_parseval(self, n):
        x = _signal(n, n + 1)
        spectrum = rfft(x)
        energy = (spectrum_weights(n) * spectrum.abs() ** 2).sum() / n
        assert math.isclose(float(energy), float((x**2).sum()), rel_tol=1e-9)

    def test_linearity(self):
        x, y = _signal(26, 1), _signal(26, 2)
        combined = rfft(2.5 * x - 0.5 * y)
        assert torch.allclose(combined, 2.5 * rfft(x) - 0.5 * rfft(y), atol=1e-9)

    def test_along_sequence_axis(self):
        x = _signal(4, 3, 2, 26)  # [2, 26, 4]
        spectrum = rfft(x, dim=-2)
        assert spectrum.shape == (2, 14, 4)
        assert torch.allclose(irfft(spectrum, 26, dim=-2), x, atol=1e-9)

    def test_many_random_vectors(self):
        generator = torch.Generator().manual_seed(7)
        for _ in range(200):
            n = int(torch.randint(2, 65, (1,), generator=generator))
            x = torch.randn(n, generator=generator, dtype=DTYPE)
            assert torch.allclose(irfft(rfft(x), n), x, atol=1e-9)

    def test_empty_signal_rejected(self):
        with pytest.raises(ValueError):
            rfft(torch.zeros(0, dtype=DTYPE))

    def test_wrong_bin_count_rejected(self):
        with pytest.raises(ValueError, match="bins"):
            irfft(rfft(_signal(8)), 10)


class TestLayerNorm:
    def test_normalizes_last_dimension(self):
        x = _signal(6, 0, 3)
        out = layer_norm(x, torch.ones(6, dtype=DTYPE), torch.zeros(6, dtype=DTYPE))
        assert torch.allclose(out.mean(-1), torch.zeros(3, dtype=DTYPE), atol=1e-12)
        variance = out.var(-1, unbiased=False)
        assert torch.allclose(variance, torch.ones(3, dtype=DTYPE), atol=1e-4)

    def test_scale_and_shift(self):
        x = torch.tensor([[1.0, 3.0]], dtype=DTYPE)
        gamma = torch.tensor([2.0, 2.0], dtype=DTYPE)
        shift = torch.tensor([1.0, 1.0], dtype=DTYPE)
        out = layer_norm(x, gamma, shift, eps=1e-12)
        assert torch.allclose(out, torch.tensor([[-1.0, 3.0]], dtype=DTYPE))

    def test_nonpositive_eps_rejected(self):
        ones = torch.ones(2, dtype=DTYPE)
        with pytest.raises(ValueError, match="eps"):
            layer_norm(ones, ones, ones, eps=0.0)


class TestGradTape:
    def test_unused_parameter_gets_exact_zero(self):
        w = torch.tensor([1.0, 2.0], dtype=DTYPE, requires_grad=True)
        unused = torch.tensor([3.0], dtype=DTYPE, requires_grad=True)
        tape = GradTape({"w": w, "unused": unused})
        with tape.record():
            loss = (w**2).sum()
        grads = tape.gradient(loss)
        assert torch.equal(grads["w"], torch.tensor([2.0, 4.0], dtype=DTYPE))
        assert torch.equal(grads["unused"], torch.zeros(1, dtype=DTYPE))

    def test_stop_gradient_blocks_flow_and_marks_source(self):
        w = torch.tensor([2.0], dtype=DTYPE, requires_grad=True)
        tape = GradTape({"w": w})
        with tape.record():
            loss = w.sum() + stop_gradient(w * w, ["w"]).sum()
        assert float(loss) == 6.0
        assert tape.gradient(loss)["w"].item() == 1.0
        assert tape.stopped == {"w"}

    def test_stop_gradient_outside_a_tape_is_plain_detach(self):
        w = torch.tensor([2.0], dtype=DTYPE, requires_grad=True)
        assert not stop_gradient(w, ["w"]).requires_grad

    def test_constant_loss_gives_zero_gradients(self):
        w = torch.tensor([2.0], dtype=DTYPE, requires_grad=True)
        tape = GradTape({"w": w})
        with tape.record():
            loss = stop_gradient(w, ["w"]).sum()
        assert tape.gradient(loss)["w"].item() == 0.0

    def test_non_finite_loss_raises(self):
        w = torch.tensor([0.0], dtype=DTYPE, requires_grad=True)
        tape = GradTape({"w": w})
        with tape.record():
            loss = torch.log(w).sum()
        with pytest.raises(NumericError):
            tape.gradient(loss)

    def test_replay_is_deterministic(self):
        w = _signal(5).requires_grad_()
        first = GradTape({"w": w})
        second = GradTape({"w": w})
        grads = [
            tape.gradient(torch.sin(w).prod() + (w**3).sum())["w"]
            for tape in (first, second)
        ]
        assert torch.equal(grads[0], grads[1])


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        w = torch.tensor([1.0, -1.0], dtype=DTYPE, requires_grad=True)
        params = {"w": w}
        state = AdamState.create(params, lr=0.1)
        grads = {"w": torch.tensor([0.5, -2.0], dtype=DTYPE)}
        adam_step(params, grads, state)
        assert state.t == 1
        assert torch.allclose(w.detach(), torch.tensor([0.9, -0.9], dtype=DTYPE))

    def test_moments(self):
        w = torch.tensor([1.0], dtype=DTYPE, requires_grad=True)
        params = {"w": w}
        state = AdamState.create(params, beta1=0.9, beta2=0.999)
        m, v = state.moments(w)
        assert float(m) == 0.0 and float(v) == 0.0
        adam_step(params, {"w": torch.tensor([0.5], dtype=DTYPE)}, state)
        m, v = state.moments(w)
        assert math.isclose(float(m), 0.05)
        assert math.isclose(float(v), 0.00025)

    def test_zero_gradient_leaves_parameter(self):
        w = torch.tensor([1.0], dtype=DTYPE, requires_grad=True)
        params = {"w": w}
        state = AdamState.create(params)
        adam_step(params, {"w": torch.zeros(1, dtype=DTYPE)}, state)
        assert float(w) == 1.0

    def test_shape_mismatch_rejected(self):
        w = torch.zeros(2, dtype=DTYPE, requires_grad=True)
        state = AdamState.create({"w": w})
        with pytest.raises(ValueError, match="shape"):
            adam_step({"w": w}, {"w": torch.zeros(3, dtype=DTYPE)}, state)

    def test_missing_gradient_rejected(self):
        w = torch.zeros(2, dtype=DTYPE, requires_grad=True)
        state = AdamState.create({"w": w})
        with pytest.raises(ValueError, match="missing"):
            adam_step({"w": w}, {}, state)


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * 3.0 * x


class TestGradCheck:
    def test_smooth_function_passes(self):
        w = _signal(6).requires_grad_()
        report = grad_check(lambda: (torch.sin(w) * w**2).sum(), {"w": w})
        assert report.max_error < 1e-4

    def test_wrong_gradient_is_caught(self):
        w = (_signal(4) + 3.0).requires_grad_()
        report = grad_check(lambda: _WrongSquare.apply(w).sum(), {"w": w})
        assert report.max_error > 0.1

    def test_wrong_gradient_is_not_mistaken_for_a_kink(self):
        w = (_signal(4) + 3.0).requires_grad_()
        report = grad_check(
            lambda: _WrongSquare.apply(w).sum(), {"w": w}, kink_tol=1e-4
        )
        assert report.max_error > 0.1
        assert report.nonsmooth == {}

    def test_kink_crossing_is_counted_not_scored(self):
        w = torch.tensor([0.3e-5], dtype=DTYPE, requires_grad=True)
        loss_fn = lambda: torch.relu(w).sum()
        assert grad_check(loss_fn, {"w": w}).max_error > 0.1
        report = grad_check(loss_fn, {"w": w}, kink_tol=1e-4)
        assert report.nonsmooth == {"w": 1}
        assert report.errors["w"] == 0.0

    def test_stopped_reads_hold_still_under_perturbation(self):
        w = _signal(3).requires_grad_()
        v = _signal(3, 1).requires_grad_()
        report = grad_check(
            lambda: (w**2).sum()
            + (w * stop_gradient(v, ["v"])).sum()
            + (v**3).sum(),
            {"w": w, "v": v},
        )
        assert report.exempt == {"v"}
        assert set(report.errors) == {"w", "v"}
        assert report.max_error < 1e-4

    def test_replay_serves_the_recorded_values(self):
        w = _signal(3).requires_grad_()
        tape = GradTape({"w": w})
        with tape.record():
            recorded = stop_gradient(w * 2, ["w"])
        with torch.no_grad():
            w.add_(1.0)
        with tape.replay():
            replayed = stop_gradient(w * 2, ["w"])
        assert torch.equal(replayed, recorded)
        assert not torch.equal(stop_gradient(w * 2), recorded)

    def test_replay_rejects_an_extra_stop(self):
        w = _signal(3).requires_grad_()
        tape = GradTape({"w": w})
        with tape.replay(), pytest.raises(ValueError, match="more gradients"):
            stop_gradient(w, ["w"])

    def test_parameters_restored(self):
        w = _signal(5).requires_grad_()
        before = w.detach().clone()
        grad_check(lambda: (w**3).sum(), {"w": w})
        assert torch.equal(w.detach(), before)

    def test_coordinate_sampling(self):
        w = _signal(50).requires_grad_()
        report = grad_check(lambda: (w**2).sum(), {"w": w}, max_coords=5)
        assert report.max_error < 1e-4

    @pytest.mark.parametrize("h", [1e-8, 1e-2])
    def test_step_outside_range_rejected(self, h):
        w = _signal(2).requires_grad_()
        with pytest.raises(ValueError, match="step"):
            grad_check(lambda: w.sum(), {"w": w}, h)
