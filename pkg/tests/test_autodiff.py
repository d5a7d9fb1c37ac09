"""Reverse-mode tape: primal correctness, pullbacks vs finite differences."""

import numpy as np
import pytest

from spdelearn import autodiff as ad
from spdelearn.autodiff import Param, Tape, TapeError, grad_check
from spdelearn.grids import dft_raw, idft_raw


def rnd(shape, seed, complex_=False):
    rng = np.random.default_rng(seed)
    if complex_:
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return rng.standard_normal(shape)


class TestPrimals:
    def test_add_zero_is_identity(self):
        t = Tape()
        x = t.constant(rnd((3, 4), 0))
        z = t.constant(np.zeros((3, 4)))
        assert np.array_equal(ad.add(x, z).value, x.value)

    def test_identity_mode_matrices_leave_input_unchanged(self):
        t = Tape()
        modes, dh = (5,), 3
        k = np.broadcast_to(np.eye(dh), modes + (dh, dh)).astype(complex)
        x = t.constant(rnd((2, dh) + modes, 1, complex_=True))
        y = ad.matvec_modes(t.constant(k), x)
        assert np.allclose(y.value, x.value, atol=1e-14)

    def test_composite_matches_tape_free_evaluation(self):
        w = rnd((4, 4), 2)
        b = rnd(4, 3)
        x = rnd((2, 4, 5), 4)
        t = Tape()
        y = ad.tanh(ad.channel_linear(t.constant(x), t.constant(w), t.constant(b)))
        loss = ad.sum_all(ad.mul(y, y))
        direct = np.tanh(np.einsum("oi,bix->box", w, x) + b[None, :, None])
        assert float(loss.value) == np.sum(direct * direct)

    def test_rdft_matches_full_spectrum(self):
        x = rnd((3, 8), 5)
        t = Tape()
        half = ad.rdft(t.constant(x)).value
        full = dft_raw(x.astype(complex), (-1,))
        assert np.allclose(half, full[..., :5], atol=1e-12)

    def test_irdft_matches_full_spectrum(self):
        x = rnd((3, 9), 6)
        spec = dft_raw(x.astype(complex), (-1,))
        t = Tape()
        back = ad.irdft(t.constant(spec[..., :5]), 9).value
        assert np.allclose(back, x, atol=1e-12)

    def test_hermitianize_enables_real_convolution(self):
        rng = np.random.default_rng(7)
        w = 3
        k = rng.standard_normal((2 * w, 1, 1)) + 1j * rng.standard_normal((2 * w, 1, 1))
        t = Tape()
        kh = ad.hermitianize(t.constant(k), axes=(0,), widths=(w,)).value
        # K(-m) = conj(K(m)) and the unpaired -w band is zeroed
        assert np.allclose(kh[w], 0.0)
        for m in range(1, w):
            assert np.allclose(kh[2 * w - m], np.conj(kh[m]))
        # a real signal convolved through the projected kernel stays real
        x = rng.standard_normal(10)
        spec = dft_raw(x.astype(complex), (0,))
        box = np.concatenate([spec[:w], spec[-w:]])
        out_box = kh[:, 0, 0] * box
        full = np.zeros(10, dtype=complex)
        full[:w] = out_box[:w]
        full[-w:] = out_box[w:]
        y = idft_raw(full, (0,))
        assert np.max(np.abs(y.imag)) < 1e-12 * max(1.0, np.max(np.abs(y.real)))


class TestBackwardBasics:
    def test_quadratic_gradient_exact(self):
        x = Param("x", rnd(6, 8))
        t = Tape()
        xn = t.param(x)
        loss = ad.sum_all(ad.mul(xn, xn))
        t.backward(loss)
        assert np.array_equal(x.grad, 2.0 * x.value)

    def test_complex_modulus_gradient_convention(self):
        # loss = Re(conj(w) w) = |w|^2  ->  grad = dL/d conj(w) = w
        w = Param("w", np.array(1.5 - 0.5j))
        t = Tape()
        wn = t.param(w)
        loss = ad.sum_all(ad.real_part(ad.mul(ad.conj(wn), wn)))
        t.backward(loss)
        assert np.allclose(w.grad, w.value, atol=1e-14)

    def test_shared_parameter_accumulates_contributions(self):
        w = Param("w", rnd((3, 3), 9))
        x = rnd((1, 3, 2), 10)
        t = Tape()
        wn = t.param(w)
        h = ad.channel_linear(t.constant(x), wn)
        h = ad.channel_linear(h, wn)  # same weight twice
        t.backward(ad.sum_all(ad.mul(h, h)))
        got = w.grad.copy()

        def loss_fn(tape):
            wn = tape.param(w)
            h = ad.channel_linear(tape.constant(x), wn)
            h = ad.channel_linear(h, wn)
            return ad.sum_all(ad.mul(h, h))

        assert grad_check(loss_fn, [w], h=1e-6) < 1e-6
        assert np.array_equal(got, w.grad * 0 + got)  # grad was populated once

    def test_two_backward_passes_bit_identical(self):
        w = Param("w", rnd((4, 4), 11))
        x = rnd((2, 4, 3), 12)
        t = Tape()
        y = ad.tanh(ad.channel_linear(t.constant(x), t.param(w)))
        loss = ad.sum_all(ad.mul(y, y))
        t.backward(loss)
        first = w.grad.copy()
        w.zero_grad()
        t.backward(loss)
        assert np.array_equal(first, w.grad)

    def test_gradients_zeroed_only_explicitly(self):
        w = Param("w", rnd(3, 13))
        t = Tape()
        loss = ad.sum_all(ad.mul(t.param(w), t.param(w)))
        t.backward(loss)
        g1 = w.grad.copy()
        t2 = Tape()
        loss2 = ad.sum_all(ad.mul(t2.param(w), t2.param(w)))
        t2.backward(loss2)
        assert np.allclose(w.grad, 2 * g1)
        w.zero_grad()
        assert np.all(w.grad == 0)

    def test_backward_rejects_non_scalar(self):
        w = Param("w", rnd(3, 14))
        t = Tape()
        y = ad.mul(t.param(w), t.param(w))
        with pytest.raises(TapeError, match="scalar"):
            t.backward(y)

    def test_backward_rejects_complex_loss(self):
        w = Param("w", np.array(1.0 + 0j))
        t = Tape()
        y = ad.sum_all(ad.real_part(t.param(w)))
        t.backward(y)  # fine
        t2 = Tape()
        z = ad.mul(t2.param(w), t2.param(w))
        with pytest.raises(TapeError):
            t2.backward(z)  # complex non-scalar-real

    def test_topological_order_invariant(self):
        w = Param("w", rnd(3, 15))
        t = Tape()
        y = ad.mul(t.param(w), t.param(w))
        loss = ad.sum_all(y)
        assert loss is not None
        for op in t._ops:
            assert all(i < op.out for i in op.inputs)


def fd_check(loss_fn, params, tol, h=1e-6):
    err = grad_check(loss_fn, params, h=h)
    assert err < tol, f"max relative gradient error {err:.3e} >= {tol}"


class TestOpGradients:
    """Every op's pullback against central finite differences."""

    def test_add_sub_neg_scale(self):
        a = Param("a", rnd((2, 3), 20))
        b = Param("b", rnd((2, 3), 21))

        def loss_fn(t):
            x, y = t.param(a), t.param(b)
            z = ad.scale(ad.sub(ad.add(x, y), ad.neg(y)), 0.7)
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [a, b], 1e-7)

    def test_mul_const_and_tanh(self):
        a = Param("a", rnd((2, 5), 22))
        c = rnd((2, 5), 23)

        def loss_fn(t):
            z = ad.tanh(ad.mul_const(t.param(a), c))
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [a], 1e-6)

    def test_dft_idft_real_promote(self):
        a = Param("a", rnd((2, 6), 24))

        def loss_fn(t):
            spec = ad.dft(ad.promote(t.param(a)), axes=(1,))
            back = ad.real_part(ad.idft(spec, axes=(1,)))
            z = ad.real_part(spec)
            return ad.sum_all(ad.add(ad.mul(z, z), ad.mul(back, back)))

        fd_check(loss_fn, [a], 1e-6)

    def test_complex_param_through_dft(self):
        a = Param("a", rnd((4,), 25, complex_=True))

        def loss_fn(t):
            spec = ad.idft(t.param(a), axes=(0,))
            z = ad.real_part(spec)
            w = ad.real_part(ad.mul(spec, ad.conj(spec)))
            return ad.sum_all(ad.add(ad.mul(z, z), w))

        fd_check(loss_fn, [a], 1e-6)

    @pytest.mark.parametrize("n", [8, 9])
    def test_rdft_irdft_pipeline(self, n):
        a = Param("a", rnd((2, n), 26))
        k = rnd((2, n // 2 + 1), 27, complex_=True)

        def loss_fn(t):
            half = ad.rdft(t.param(a))
            y = ad.irdft(ad.mul_const(half, k), n)
            return ad.sum_all(ad.mul(y, y))

        fd_check(loss_fn, [a], 1e-6)

    @pytest.mark.parametrize("n", [8, 9])
    def test_irdft_of_complex_param(self, n):
        a = Param("a", rnd((n // 2 + 1,), 28, complex_=True))

        def loss_fn(t):
            y = ad.irdft(t.param(a), n)
            return ad.sum_all(ad.mul(y, y))

        fd_check(loss_fn, [a], 1e-6)

    def test_take_embed_box(self):
        a = Param("a", rnd((2, 10), 29, complex_=True))

        def loss_fn(t):
            block = ad.take_box(t.param(a), axes=(1,), widths=(3,))
            back = ad.embed_box(block, axes=(1,), widths=(3,), sizes=(10,))
            z = ad.real_part(back)
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [a], 1e-6)

    def test_half_take_embed(self):
        a = Param("a", rnd((2, 6), 30, complex_=True))

        def loss_fn(t):
            z = ad.real_part(ad.half_embed(ad.half_take(t.param(a), 4), 6))
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [a], 1e-6)

    def test_hermitianize(self):
        a = Param("a", rnd((4, 2, 2), 31, complex_=True))

        def loss_fn(t):
            kh = ad.hermitianize(t.param(a), axes=(0,), widths=(2,))
            z = ad.real_part(kh)
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [a], 1e-6)

    def test_channel_linear(self):
        w = Param("w", rnd((3, 2), 32))
        b = Param("b", rnd(3, 33))
        x = Param("x", rnd((2, 2, 4), 34))

        def loss_fn(t):
            y = ad.channel_linear(t.param(x), t.param(w), t.param(b))
            return ad.sum_all(ad.mul(y, y))

        fd_check(loss_fn, [w, b, x], 1e-6)

    def test_add_channel_bias(self):
        c = Param("c", rnd(3, 35))
        x = Param("x", rnd((2, 3, 4), 36))

        def loss_fn(t):
            y = ad.add_channel_bias(t.param(x), t.param(c))
            return ad.sum_all(ad.mul(y, y))

        fd_check(loss_fn, [c, x], 1e-7)

    def test_matvec_modes(self):
        k = Param("k", rnd((3, 2, 2), 37, complex_=True))
        x = Param("x", rnd((2, 2, 3), 38, complex_=True))

        def loss_fn(t):
            y = ad.matvec_modes(t.param(k), t.param(x))
            z = ad.real_part(y)
            w = ad.real_part(ad.mul(y, ad.conj(y)))
            return ad.sum_all(ad.add(ad.mul(z, z), w))

        fd_check(loss_fn, [k, x], 1e-6)

    def test_matvec_time(self):
        kt = Param("kt", rnd((4, 3, 2, 2), 39, complex_=True))
        x = Param("x", rnd((2, 2, 3), 40, complex_=True))

        def loss_fn(t):
            y = ad.matvec_time(t.param(kt), t.param(x))
            z = ad.real_part(y)
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [kt, x], 1e-6)

    def test_time_eval(self):
        k = Param("k", rnd((4, 2), 41, complex_=True))

        def loss_fn(t):
            kt = ad.time_eval(t.param(k), 6)
            z = ad.real_part(kt)
            return ad.sum_all(ad.mul(z, z))

        fd_check(loss_fn, [k], 1e-6)

    def test_concat_reshape_contract_noise(self):
        a = Param("a", rnd((2, 2, 5), 42))
        b = Param("b", rnd((2, 4, 5), 43))
        drive = rnd((2, 2, 5), 44)

        def loss_fn(t):
            cat = ad.concat_channels([t.param(a), t.param(b)])  # (2, 6, 5)
            resh = ad.reshape(cat, (2, 3, 2, 5))
            y = ad.contract_noise(resh, drive)  # (2, 3, 5)
            return ad.sum_all(ad.mul(y, y))

        fd_check(loss_fn, [a, b], 1e-6)

    def test_three_layer_composite(self):
        w1 = Param("w1", rnd((4, 3), 45))
        b1 = Param("b1", rnd(4, 46))
        w2 = Param("w2", rnd((4, 4), 47))
        b2 = Param("b2", rnd(4, 48))
        w3 = Param("w3", rnd((1, 4), 49))
        x = rnd((2, 3, 6), 50)

        def loss_fn(t):
            h = ad.tanh(ad.channel_linear(t.constant(x), t.param(w1), t.param(b1)))
            h = ad.tanh(ad.channel_linear(h, t.param(w2), t.param(b2)))
            y = ad.channel_linear(h, t.param(w3))
            return ad.sum_all(ad.mul(y, y))

        fd_check(loss_fn, [w1, b1, w2, b2, w3], 1e-5)


class TestGradCheckApi:
    def test_linear_function_machine_precision(self):
        a = Param("a", rnd(5, 51))
        c = rnd(5, 52)

        def loss_fn(t):
            return ad.sum_all(ad.mul_const(t.param(a), c))

        for h in (1e-4, 1e-6):
            assert grad_check(loss_fn, [a], h=h) < 1e-9

    def test_tanh_network(self):
        w = Param("w", rnd((3, 2), 53))
        b = Param("b", rnd(3, 54))
        x = rnd((1, 2, 7), 55)

        def loss_fn(t):
            return ad.sum_all(ad.tanh(ad.channel_linear(t.constant(x), t.param(w), t.param(b))))

        assert grad_check(loss_fn, [w, b], h=1e-6) < 1e-6

    def test_dft_adjoint_identity(self):
        # the vjp of dft is the appropriately scaled idft of the cotangent
        rng = np.random.default_rng(56)
        x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        cot = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        p = Param("p", x)
        t = Tape()
        y = ad.dft(t.param(p), axes=(0,))
        (rec,) = t._ops[-1].vjp(cot)
        assert np.allclose(rec, idft_raw(cot, (0,)) * 6.0, atol=1e-12)
