"""Optimizer, training loop, and evaluation metrics."""

import numpy as np
import pytest

from floral.autodiff import Tensor
from floral.flow import FlowMode, PathConfig
from floral.grid import Domain, GridFunction
from floral.metrics import (
    EvalReport,
    SampleMetrics,
    crmse,
    ensemble_mean,
    ensemble_std,
    evaluate_sample,
    evaluate_set,
    nrmse,
    rmse,
)
from floral.model import FilmFnoConfig, VectorFieldModel
from floral.problems import ProblemConfig, generate_dataset
from floral.train import AdamState, TrainingError, adam_step, evaluate_loss, train

DOMAIN = Domain(bounds=((0.0, 1.0),), periodic=(True,))


def gf(values):
    return GridFunction.from_values(DOMAIN, np.atleast_2d(np.asarray(values, float)))


# ---------------------------------------------------------------------------
# Adam optimizer.

class TestAdam:
    def params(self, seed=0):
        rng = np.random.default_rng(seed)
        return {"w": Tensor(rng.normal(size=(3, 2)), requires_grad=True),
                "b": Tensor(rng.normal(size=2), requires_grad=True)}

    def test_zero_lr_is_noop(self):
        params = self.params()
        before = {k: p.values.copy() for k, p in params.items()}
        grads = {k: np.ones_like(p.values) for k, p in params.items()}
        adam_step(params, grads, AdamState(), lr=0.0)
        for k, p in params.items():
            assert np.array_equal(p.values, before[k])

    def test_first_step_magnitude(self):
        # With zero initialized moments the bias-corrected first update is
        # lr * g / (|g| + eps), i.e. close to lr * sign(g).
        params = self.params()
        before = {k: p.values.copy() for k, p in params.items()}
        grads = {k: np.full_like(p.values, 2.0) for k, p in params.items()}
        adam_step(params, grads, AdamState(), lr=1e-2)
        for k, p in params.items():
            step = before[k] - p.values
            assert np.allclose(step, 1e-2, rtol=1e-6)

    def test_weight_decay_shrinks_parameters(self):
        params = self.params()
        grads = {k: np.zeros_like(p.values) for k, p in params.items()}
        norm_before = float(np.sum(params["w"].values ** 2))
        adam_step(params, grads, AdamState(), lr=1e-3, weight_decay=1e-1)
        assert float(np.sum(params["w"].values ** 2)) < norm_before

    def test_nonfinite_gradient_raises(self):
        params = self.params()
        grads = {k: np.full_like(p.values, np.nan) for k, p in params.items()}
        with pytest.raises(TrainingError):
            adam_step(params, grads, AdamState(), lr=1e-3)

    def test_state_persists_between_steps(self):
        params = self.params()
        state = AdamState()
        grads = {k: np.ones_like(p.values) for k, p in params.items()}
        adam_step(params, grads, state, lr=1e-3)
        adam_step(params, grads, state, lr=1e-3)
        assert state.step == 2
        assert set(state.m) == set(params)


# ---------------------------------------------------------------------------
# Training loop on a miniature problem.

def tiny_setup(mode=FlowMode.FLORAL, count=4, seed=0):
    config = ProblemConfig(problem="benchmark1", nx_hf=16, nx_lf=16)
    dataset = generate_dataset(config, count, rng_seed=seed)
    cfg = FilmFnoConfig(n_layers=1, hidden_channels=4, modes_per_axis=(2,),
                        lifting_ratio=1, projection_ratio=1,
                        cond_width=4, cond_depth=1)
    model = VectorFieldModel(cfg, w_channels=1, a_channels=1, ndim=1,
                             periodic=(False,))
    return model, dataset, mode


class TestTrain:
    def test_loss_decreases(self):
        model, dataset, mode = tiny_setup()
        result = train(model, dataset, mode, epochs=25, batch_size=2, rng_seed=0)
        assert result.train_losses[-1] < result.train_losses[0]

    def test_deterministic(self):
        r1 = train(*tiny_setup(), epochs=3, batch_size=2, rng_seed=5)
        r2 = train(*tiny_setup(), epochs=3, batch_size=2, rng_seed=5)
        assert r1.train_losses == r2.train_losses
        for k in r1.best_state:
            assert np.array_equal(r1.best_state[k], r2.best_state[k])

    def test_single_batch_epoch_takes_one_step(self):
        model, dataset, mode = tiny_setup(count=2)
        start = model.state_arrays()
        train(model, dataset, mode, epochs=1, batch_size=2, rng_seed=0,
              weight_decay=0.0)
        changed = sum(not np.array_equal(model.params[k].values, start[k])
                      for k in start)
        assert changed > 0

    def test_validation_tracks_best_epoch(self):
        model, dataset, mode = tiny_setup()
        val = generate_dataset(ProblemConfig(problem="benchmark1", nx_hf=16,
                                             nx_lf=16), 2, rng_seed=99)
        result = train(model, dataset, mode, epochs=5, batch_size=2, rng_seed=0,
                       validation=val)
        assert len(result.validation_losses) == 5
        assert result.best_epoch == int(np.argmin(result.validation_losses))

    def test_bad_epochs_rejected(self):
        model, dataset, mode = tiny_setup()
        with pytest.raises(ValueError):
            train(model, dataset, mode, epochs=0, batch_size=2, rng_seed=0)

    def test_evaluate_loss_deterministic(self):
        model, dataset, mode = tiny_setup()
        assert (evaluate_loss(model, dataset, mode, PathConfig(), 3)
                == evaluate_loss(model, dataset, mode, PathConfig(), 3))


# ---------------------------------------------------------------------------
# Metrics against hand-computed oracles.

class TestMetrics:
    def test_rmse_hand_value(self):
        # prediction 1, reference 0 everywhere -> RMSE exactly 1.
        assert rmse(np.ones((1, 8)), np.zeros((1, 8))) == pytest.approx(1.0)

    def test_rmse_mixed_hand_value(self):
        # errors (3, 4) -> sqrt((9 + 16) / 2) = sqrt(12.5)
        pred = np.array([[3.0, 4.0]])
        assert rmse(pred, np.zeros_like(pred)) == pytest.approx(np.sqrt(12.5))

    def test_nrmse_scale_invariance(self):
        rng = np.random.default_rng(0)
        ref = rng.normal(size=(1, 32))
        pred = ref + rng.normal(size=(1, 32)) * 0.1
        assert nrmse(pred, ref) == pytest.approx(nrmse(5 * pred, 5 * ref))

    def test_nrmse_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            nrmse(np.ones((1, 4)), np.zeros((1, 4)))

    def test_crmse_hand_value(self):
        # channel means: prediction (2, 0), reference (0, 0) -> sqrt(4/2).
        pred = np.array([[2.0, 2.0], [1.0, -1.0]])
        ref = np.zeros_like(pred)
        assert crmse(pred, ref) == pytest.approx(np.sqrt(2.0))

    def test_crmse_below_rmse(self):
        # The mean-error norm never exceeds the full error norm.
        rng = np.random.default_rng(1)
        for _ in range(100):
            pred = rng.normal(size=(2, 16))
            ref = rng.normal(size=(2, 16))
            assert crmse(pred, ref) <= rmse(pred, ref) + 1e-12

    def test_ensemble_mean_and_std(self):
        members = [gf(np.full(4, 1.0)), gf(np.full(4, -1.0))]
        assert np.allclose(ensemble_mean(members).values, 0.0)
        assert np.allclose(ensemble_std(members).values, 1.0)

    def test_single_member_has_zero_spread(self):
        m = evaluate_sample([gf(np.arange(4.0) + 1.0)], gf(np.ones(4)))
        assert m.pred_std == 0.0

    def test_sample_oracle(self):
        # Two constant members (1 and -1) against zero reference: mean 0 so
        # rmse = l2_error = 0, and the pointwise std is exactly 1.
        members = [gf(np.full(8, 1.0)), gf(np.full(8, -1.0))]
        reference = gf(np.full(8, 2.0))
        m = evaluate_sample(members, reference)
        assert m.rmse == pytest.approx(2.0)
        assert m.l2_error == pytest.approx(2.0)
        assert m.crmse == pytest.approx(2.0)
        assert m.nrmse == pytest.approx(1.0)
        assert m.pred_std == pytest.approx(1.0)

    def test_set_aggregation(self):
        # Set-level RMSE aggregates in quadrature; l2 and std average plainly.
        rows = [SampleMetrics(rmse=1.0, nrmse=0.5, crmse=0.0, l2_error=1.0,
                              pred_std=0.2),
                SampleMetrics(rmse=3.0, nrmse=1.5, crmse=2.0, l2_error=3.0,
                              pred_std=0.4)]
        report = EvalReport(rows)
        assert report.rmse == pytest.approx(np.sqrt((1 + 9) / 2))
        assert report.crmse == pytest.approx(np.sqrt(2.0))
        assert report.nrmse == pytest.approx(1.0)
        assert report.mean_l2_error == pytest.approx(2.0)
        assert report.mean_predictive_std == pytest.approx(0.3)

    def test_evaluate_set_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_set([[gf(np.ones(4))]], [])

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluate_sample([gf(np.ones(4))], gf(np.ones(8)))
