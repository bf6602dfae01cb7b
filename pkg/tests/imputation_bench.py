"""Correlated-Gaussian benchmark for the imputer against column-mean imputation."""
import numpy as np

from trialemu.impute import ImputerConfig, impute, train_imputer


def correlated_gaussian(n=1000, rho=0.9, missing_rate=0.3, seed=0):
    rng = np.random.default_rng(seed)
    cov = np.array([[1.0, rho], [rho, 1.0]])
    full = rng.multivariate_normal(np.zeros(2), cov, size=n)
    mask = np.zeros_like(full, dtype=bool)
    mask[:, 1] = rng.random(n) < missing_rate
    return full, mask


def rmse_ratio(n=1000, rho=0.9, missing_rate=0.3, seed=0, cfg=None):
    full, mask = correlated_gaussian(n, rho, missing_rate, seed)
    data = np.where(mask, np.nan, full)
    model = train_imputer(data, mask, cfg or ImputerConfig(seed=seed))
    filled = impute(model, data, mask)
    truth = full[mask]
    col_mean = np.nanmean(data[:, 1])
    rmse_model = float(np.sqrt(np.mean((filled[mask] - truth) ** 2)))
    rmse_mean = float(np.sqrt(np.mean((col_mean - truth) ** 2)))
    return rmse_model / rmse_mean, rmse_model, rmse_mean
