import math

import numpy as np
import pytest
import torch

from trialemu.impute import (
    ImputerConfig, ImputerError, ImputerModel, gradient_check, impute, init_params, iw_bound, train_imputer,
)

from imputation_bench import correlated_gaussian

TOY = ImputerConfig(latent_dim=2, hidden_width=4, depth=3, epochs=20, importance_samples=10, train_samples=5, seed=3)


def toy_data(n=5, p=3, seed=0, missing=0.3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    mask = rng.random((n, p)) < missing
    mask[0] = False  # at least one full row keeps every column observed
    return x, mask


def test_config_defaults_match_published_hyperparameters():
    cfg = ImputerConfig()
    assert (cfg.latent_dim, cfg.hidden_width, cfg.depth, cfg.epochs, cfg.importance_samples) == (6, 32, 3, 500, 100)


@pytest.mark.parametrize("field", ["latent_dim", "hidden_width", "depth", "epochs", "importance_samples",
                                   "learning_rate"])
def test_config_rejects_non_positive(field):
    with pytest.raises(ValueError):
        ImputerConfig(**{field: 0})


def test_encoder_output_dimension():
    params = init_params(5, ImputerConfig(latent_dim=6))
    last = max(k for k in params if k.startswith("enc.") and k.endswith(".weight"))
    assert params[last].shape[1] == 12


def test_gradient_check_toy():
    x, mask = toy_data()
    model = train_imputer(x, mask, TOY)
    assert gradient_check(model, x, mask, epsilon=1e-6) < 1e-4


def test_gradient_check_rejects_zero_epsilon():
    x, mask = toy_data()
    model = train_imputer(x, mask, TOY)
    with pytest.raises(ImputerError):
        gradient_check(model, x, mask, epsilon=0)


def test_zero_weight_model_bias_gradient_closed_form():
    # all parameters zero: q(z|x) = p(z), decoder mean 0, variance 1 + floor, so the
    # bound is the masked Gaussian log-density and its gradients have closed forms
    cfg = ImputerConfig(latent_dim=2, hidden_width=4, depth=3)
    params = {k: torch.zeros_like(v, requires_grad=True) for k, v in init_params(2, cfg).items()}
    x = torch.tensor([[1.0, -1.0], [-1.0, 1.0], [2.0, -2.0], [-2.0, 2.0]], dtype=torch.float64)
    m = torch.tensor([[1.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    noise = torch.from_numpy(np.random.default_rng(0).standard_normal((7, 4, 2)))
    bound = iw_bound(params, x, m, noise, ["gaussian", "gaussian"], var_floor=1e-4)
    g_bias, g_logvar = torch.autograd.grad(bound, [params["dec.2.bias"], params["dec.logvar"]])
    v = 1.0 + 1e-4
    expect_bias = (m * x).sum(0) / (v * 4)
    expect_logvar = (m * 0.5 * (x ** 2 / v ** 2 - 1 / v)).sum(0) / 4
    assert torch.allclose(g_bias, expect_bias, atol=1e-12)
    assert torch.allclose(g_logvar, expect_logvar, atol=1e-12)
    const = (m * (-0.5 * (x ** 2 / v + math.log(v) + math.log(2 * math.pi)))).sum() / 4
    assert bound.item() == pytest.approx(const.item(), abs=1e-12)


def test_placeholder_invariance():
    x, mask = toy_data(n=6)
    model = train_imputer(x, mask, TOY)
    m = torch.from_numpy((~mask).astype(float))
    noise = torch.from_numpy(np.random.default_rng(1).standard_normal((4, 6, TOY.latent_dim)))
    a = torch.from_numpy(np.where(mask, 0.0, x))
    b = torch.from_numpy(np.where(mask, 123.0, x))
    la = iw_bound(model.params, a, m, noise, model.feature_spec).item()
    lb = iw_bound(model.params, b, m, noise, model.feature_spec).item()
    assert la == lb


def test_all_missing_column_raises():
    x, mask = toy_data()
    mask[:, 1] = True
    with pytest.raises(ImputerError, match=r"\[1\]"):
        train_imputer(x, mask, TOY)


def test_non_finite_loss_reports_epoch():
    x, mask = toy_data()
    x[0, 0] = 1e200
    with pytest.raises(ImputerError, match="epoch 0"):
        train_imputer(x, mask, TOY)


def test_fully_observed_bound_improves():
    full, _ = correlated_gaussian(n=200, seed=4)
    model = train_imputer(full, np.zeros_like(full, dtype=bool), ImputerConfig(epochs=150, seed=4))
    assert model.history[-1] < model.history[0]


def test_loss_moving_average_decreases():
    full, mask = correlated_gaussian(n=300, seed=1)
    model = train_imputer(np.where(mask, np.nan, full), mask, ImputerConfig(epochs=300, seed=1))
    blocks = np.asarray(model.history).reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(blocks) <= 0)


def test_training_deterministic():
    x, mask = toy_data(n=20)
    a = train_imputer(x, mask, TOY)
    b = train_imputer(x, mask, TOY)
    for k in a.params:
        assert torch.equal(a.params[k], b.params[k])
    assert np.array_equal(impute(a, x, mask), impute(b, x, mask))


def test_observed_entries_untouched_and_full_rows_unchanged():
    x, mask = toy_data(n=30, seed=2)
    model = train_imputer(x, mask, TOY)
    out = impute(model, x, mask)
    assert np.array_equal(out[~mask], x[~mask])
    full_rows = ~mask.any(axis=1)
    assert np.array_equal(out[full_rows], x[full_rows])
    assert np.all(np.isfinite(out))


def test_nan_marks_missing_when_no_mask():
    x, mask = toy_data(n=30, seed=2)
    model = train_imputer(x, mask, TOY)
    assert np.array_equal(impute(model, np.where(mask, np.nan, x)), impute(model, x, mask))


def test_k_below_one_raises():
    x, mask = toy_data()
    model = train_imputer(x, mask, TOY)
    with pytest.raises(ImputerError):
        impute(model, x, mask, K=0)


def test_bernoulli_columns_thresholded():
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.standard_normal(40), (rng.random(40) < 0.5).astype(float)])
    mask = np.zeros_like(x, dtype=bool)
    mask[::4, 1] = True
    model = train_imputer(x, mask, TOY)
    assert model.feature_spec == ["gaussian", "bernoulli"]
    out = impute(model, x, mask)
    assert set(np.unique(out[:, 1])) <= {0.0, 1.0}
    soft = impute(model, x, mask, threshold_bernoulli=False)
    assert np.all((soft[mask] > 0) & (soft[mask] < 1))


def test_monte_carlo_consistency():
    full, mask = correlated_gaussian(n=300, seed=5)
    data = np.where(mask, np.nan, full)
    model = train_imputer(data, mask, ImputerConfig(epochs=100, seed=5))
    a = impute(model, data, mask, K=100, seed=1)
    b = impute(model, data, mask, K=1000, seed=2)
    c = impute(model, data, mask, K=1000, seed=3)
    small = np.max(np.abs(a[mask] - b[mask]))
    large = np.max(np.abs(b[mask] - c[mask]))
    assert small < 0.3
    assert large < small


def test_save_load_round_trip(tmp_path):
    x, mask = toy_data(n=20)
    model = train_imputer(x, mask, TOY)
    model.save(tmp_path / "m.json")
    back = ImputerModel.load(tmp_path / "m.json")
    assert back.feature_spec == model.feature_spec and back.config == model.config
    assert np.array_equal(impute(back, x, mask), impute(model, x, mask))
