"""FiLM-FNO vector-field model: gradients, invariances, and state handling."""

import numpy as np
import pytest

from floral import autodiff as ad
from floral.grid import Domain, GridFunction, resample
from floral.model import FilmFnoConfig, VectorFieldModel, model_forward

DOMAIN_1D = Domain(bounds=((0.0, 1.0),), periodic=(True,))


def small_model(ndim=1, periodic=(True,), seed=0, hidden=6, modes=3):
    cfg = FilmFnoConfig(n_layers=2, hidden_channels=hidden,
                        modes_per_axis=(modes,) * ndim,
                        lifting_ratio=2, projection_ratio=2,
                        cond_width=8, cond_depth=2)
    return VectorFieldModel(cfg, w_channels=1, a_channels=1, ndim=ndim,
                            rng_seed=seed, periodic=periodic)


def perturb_heads(model, seed=1, scale=0.5):
    """Move the zero-initialised FiLM heads off the origin.

    At exactly zero the head gradients are orders of magnitude below the other
    parameters and finite differences are dominated by roundoff.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if ".head" in name:
            p.values = p.values + scale * rng.normal(size=p.values.shape)


class TestForward:
    def test_output_shape(self):
        model = small_model()
        out = model.forward(np.array([0.3, 0.7]), np.zeros((2, 1, 16)),
                            np.zeros((2, 1, 16)), DOMAIN_1D)
        assert out.values.shape == (2, 1, 16)

    def test_linear_part_exact(self):
        # With all nonlinear-branch output weights zeroed, H(w) = L w pointwise.
        model = small_model()
        for name in ("proj2.weight", "proj2.bias"):
            model.params[name].values = np.zeros_like(model.params[name].values)
        rng = np.random.default_rng(3)
        w = rng.normal(size=(1, 1, 16))
        out = model.forward(0.5, w, np.zeros((1, 1, 16)), DOMAIN_1D)
        expected = model.params["linear.weight"].values[0, 0] * w
        assert np.allclose(out.values, expected, atol=1e-14)

    def test_film_identity_at_init(self):
        # Zero-initialised heads: scale 1, shift 0, so conditioning MLP weights
        # upstream of the heads do not influence the output.
        model = small_model()
        rng = np.random.default_rng(5)
        w = rng.normal(size=(1, 1, 16))
        a = rng.normal(size=(1, 1, 16))
        base = model.forward(0.4, w, a, DOMAIN_1D).values
        model.params["cond.mlp0.weight"].values = rng.normal(
            size=model.params["cond.mlp0.weight"].values.shape)
        again = model.forward(0.4, w, a, DOMAIN_1D).values
        assert np.array_equal(base, again)

    def test_periodicity_mismatch_raises(self):
        model = small_model(periodic=(True,))
        bad = Domain(bounds=((0.0, 1.0),), periodic=(False,))
        with pytest.raises(ValueError, match="periodicity"):
            model.forward(0.5, np.zeros((1, 1, 8)), np.zeros((1, 1, 8)), bad)

    def test_tiny_resolution_raises(self):
        model = small_model()
        with pytest.raises(ValueError, match="resolution"):
            model.forward(0.5, np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), DOMAIN_1D)


class TestGradients:
    def test_full_model_finite_difference(self):
        model = small_model(hidden=4, modes=2)
        perturb_heads(model)
        rng = np.random.default_rng(7)
        w = rng.normal(size=(2, 1, 8))
        a = rng.normal(size=(2, 1, 8))
        tau = np.array([0.3, 0.8])

        def loss_value():
            out = model.forward(tau, w, a, DOMAIN_1D)
            return ad.tmean(ad.square(out))

        loss = loss_value()
        loss.backward()
        h = 1e-5
        checked = 0
        for name, p in model.params.items():
            assert p.grad is not None, name
            flat = p.values.ravel()
            grad = p.grad.ravel()
            for i in rng.choice(flat.size, min(3, flat.size), replace=False):
                saved = flat[i]
                flat[i] = saved + h
                f_plus = float(loss_value().values)
                flat[i] = saved - h
                f_minus = float(loss_value().values)
                flat[i] = saved
                fd = (f_plus - f_minus) / (2.0 * h)
                denom = max(abs(fd), abs(grad[i]), 1e-7)
                assert abs(fd - grad[i]) / denom < 1e-4, \
                    f"{name}[{i}]: analytic {grad[i]:.3e} vs fd {fd:.3e}"
                checked += 1
        assert checked > 30

    def test_zero_grad_resets(self):
        model = small_model(hidden=4, modes=2)
        out = model.forward(0.5, np.ones((1, 1, 8)), np.ones((1, 1, 8)), DOMAIN_1D)
        ad.tmean(ad.square(out)).backward()
        model.zero_grad()
        assert all(p.grad is None for p in model.params.values())


class TestResolutionInvariance:
    def test_band_limited_input_two_resolutions(self):
        model = small_model(hidden=8, modes=4, seed=11)
        perturb_heads(model, seed=12)
        domain = DOMAIN_1D

        def fields(n):
            x = np.arange(n) / n
            w = np.sin(2 * np.pi * x) + 0.2 * np.cos(2 * np.pi * 3 * x)
            a = np.cos(2 * np.pi * 2 * x)
            return w[None, None], a[None, None]

        outs = {}
        for n in (64, 128):
            w, a = fields(n)
            outs[n] = GridFunction.from_values(
                domain, model.forward(0.37, w, a, domain).values[0])
        upsampled = resample(outs[64], (128,))
        diff = np.max(np.abs(upsampled.values - outs[128].values[0]))
        ref = np.max(np.abs(outs[128].values))
        assert diff / ref < 1e-5

    def test_2d_output_shape(self):
        model = small_model(ndim=2, periodic=(True, True), hidden=4, modes=2)
        dom = Domain(bounds=((0.0, 1.0), (0.0, 1.0)), periodic=(True, True))
        out = model.forward(0.1, np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 8, 8)), dom)
        assert out.values.shape == (1, 1, 8, 8)


class TestState:
    def test_round_trip(self):
        a = small_model(seed=1)
        b = small_model(seed=2)
        b.load_state(a.state_arrays())
        rng = np.random.default_rng(0)
        w = rng.normal(size=(1, 1, 16))
        cond = rng.normal(size=(1, 1, 16))
        out_a = a.forward(0.5, w, cond, DOMAIN_1D).values
        out_b = b.forward(0.5, w, cond, DOMAIN_1D).values
        assert np.array_equal(out_a, out_b)

    def test_state_arrays_are_copies(self):
        model = small_model()
        state = model.state_arrays()
        state["linear.weight"][...] = 1e9
        assert np.max(np.abs(model.params["linear.weight"].values)) < 1e9

    def test_missing_parameter_rejected(self):
        model = small_model()
        state = model.state_arrays()
        del state["linear.weight"]
        with pytest.raises(KeyError):
            model.load_state(state)

    def test_shape_mismatch_rejected(self):
        model = small_model()
        state = model.state_arrays()
        state["linear.weight"] = np.zeros((3, 3))
        with pytest.raises(ValueError):
            model.load_state(state)

    def test_config_round_trip(self):
        cfg = FilmFnoConfig(n_layers=3, hidden_channels=12, modes_per_axis=(4, 5))
        assert FilmFnoConfig.from_dict(cfg.to_dict()) == cfg

    def test_modes_rank_mismatch(self):
        cfg = FilmFnoConfig(modes_per_axis=(4, 4))
        with pytest.raises(ValueError):
            VectorFieldModel(cfg, w_channels=1, a_channels=1, ndim=1)


def test_model_forward_wrapper():
    model = small_model()
    n = 16
    x = np.arange(n) / n
    w = GridFunction.from_values(DOMAIN_1D, np.sin(2 * np.pi * x)[None])
    a = GridFunction.from_values(DOMAIN_1D, np.cos(2 * np.pi * x)[None])
    out = model_forward(model, 0.5, w, a)
    expected = model.forward(0.5, w.values[None], a.values[None], DOMAIN_1D)
    assert np.array_equal(out.values, expected.values[0])
