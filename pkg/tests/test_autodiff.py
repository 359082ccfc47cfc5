"""Reverse-mode gradients: each primitive against central finite differences."""

import numpy as np
import pytest

from floral import autodiff as ad
from floral.autodiff import Tensor


def fd_check(build, params, h=1e-6, rel_tol=1e-5, n_checks=20, seed=0):
    """Compare backward() gradients of a scalar loss with central differences.

    ``build`` maps the list of parameter Tensors to a scalar loss Tensor;
    ``params`` is a list of arrays used to create fresh leaf tensors.
    """
    leaves = [Tensor(p.copy(), requires_grad=True) for p in params]
    loss = build(leaves)
    loss.backward()
    rng = np.random.default_rng(seed)
    for leaf in leaves:
        flat = leaf.values.ravel()
        grad = leaf.grad.ravel()
        count = min(n_checks, flat.size)
        for i in rng.choice(flat.size, count, replace=False):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = float(build(leaves).values)
            flat[i] = saved - h
            f_minus = float(build(leaves).values)
            flat[i] = saved
            fd = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(fd), abs(grad[i]), 1e-8)
            assert abs(fd - grad[i]) / denom < rel_tol, \
                f"grad mismatch: analytic {grad[i]:.3e} vs fd {fd:.3e}"


RNG = np.random.default_rng(42)


class TestElementwise:
    def test_add_with_broadcast(self):
        a, b = RNG.normal(size=(3, 4)), RNG.normal(size=(4,))
        fd_check(lambda ls: ad.tsum(ad.mul(ad.add(ls[0], ls[1]), ls[0])), [a, b])

    def test_mul(self):
        a, b = RNG.normal(size=(5,)), RNG.normal(size=(5,))
        fd_check(lambda ls: ad.tsum(ad.mul(ls[0], ls[1])), [a, b])

    def test_square(self):
        a = RNG.normal(size=(6,))
        fd_check(lambda ls: ad.tsum(ad.square(ls[0])), [a])

    def test_silu(self):
        a = RNG.normal(size=(8,)) * 2.0
        fd_check(lambda ls: ad.tsum(ad.silu(ls[0])), [a])

    def test_mean_over_axis(self):
        a = RNG.normal(size=(4, 5))
        fd_check(lambda ls: ad.tsum(ad.square(ad.tmean(ls[0], axis=1))), [a])


class TestLinearMaps:
    def test_dense(self):
        x, w, b = RNG.normal(size=(3, 4)), RNG.normal(size=(2, 4)), RNG.normal(size=2)
        fd_check(lambda ls: ad.tsum(ad.square(ad.dense(ls[0], ls[1], ls[2]))),
                 [x, w, b])

    def test_linear_channels(self):
        x = RNG.normal(size=(2, 3, 8))
        w = RNG.normal(size=(5, 3))
        b = RNG.normal(size=5)
        fd_check(lambda ls: ad.tsum(ad.square(ad.linear_channels(ls[0], ls[1], ls[2]))),
                 [x, w, b])

    def test_concat(self):
        a, b = RNG.normal(size=(2, 3)), RNG.normal(size=(2, 2))
        fd_check(lambda ls: ad.tsum(ad.square(ad.concat(ls, axis=1))), [a, b])


class TestSpectralConv:
    def test_gradients_1d(self):
        x = RNG.normal(size=(2, 3, 16))
        w = RNG.normal(size=ad.spectral_weight_shape(3, 4, (5,)))
        fd_check(lambda ls: ad.tsum(ad.square(ad.spectral_conv(ls[0], ls[1], (5,)))),
                 [x, w])

    def test_gradients_2d(self):
        x = RNG.normal(size=(2, 2, 8, 6))
        w = RNG.normal(size=ad.spectral_weight_shape(2, 3, (3, 2)))
        fd_check(lambda ls: ad.tsum(ad.square(ad.spectral_conv(ls[0], ls[1], (3, 2)))),
                 [x, w])

    def test_identity_in_band(self):
        # Unit weights on retained modes act as the identity on band-limited input.
        n, m, c = 32, 5, 1
        x_grid = np.arange(n) / n
        signal = np.sin(2 * np.pi * 2 * x_grid) + 0.5 * np.cos(2 * np.pi * 4 * x_grid)
        x = Tensor(signal[None, None])
        w = np.zeros(ad.spectral_weight_shape(c, c, (m,)))
        w[0, 0, :, 0] = 1.0  # real part one on every slot
        out = ad.spectral_conv(x, Tensor(w), (m,))
        assert np.allclose(out.values[0, 0], signal, atol=1e-10)

    def test_resolution_invariance(self):
        # Same weights applied at two resolutions to one band-limited function.
        m = 4
        w = Tensor(RNG.normal(size=ad.spectral_weight_shape(1, 1, (m,))))

        def field(n):
            x = np.arange(n) / n
            return np.sin(2 * np.pi * x) - 0.3 * np.cos(2 * np.pi * 3 * x)

        out64 = ad.spectral_conv(Tensor(field(64)[None, None]), w, (m,)).values
        out128 = ad.spectral_conv(Tensor(field(128)[None, None]), w, (m,)).values
        # output is band-limited within m modes: compare via spectra
        up = np.fft.irfft(np.fft.rfft(out64[0, 0]) * 2.0, n=128)
        assert np.max(np.abs(up - out128[0, 0])) < 1e-8

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 8)))
        w = Tensor(np.zeros(ad.spectral_weight_shape(3, 3, (2,))))
        with pytest.raises(ValueError):
            ad.spectral_conv(x, w, (2,))


class TestTape:
    def test_no_grad_blocks_tape(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            out = ad.square(a)
        assert out._parents == ()

    def test_backward_requires_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.square(a).backward()

    def test_gradient_accumulates_over_reuse(self):
        a = Tensor(np.array(2.0), requires_grad=True)
        loss = ad.add(ad.square(a), ad.square(a))
        loss.backward()
        assert a.grad == pytest.approx(8.0)

    def test_head_slice_gradient(self):
        from floral.model import head_slice
        x = RNG.normal(size=(3, 6))
        fd_check(lambda ls: ad.tsum(ad.square(head_slice(ls[0], 1, 4))), [x])
