"""Importance-weighted autoencoder imputation against mean imputation."""
import time

import numpy as np

from trialemu.impute import ImputerConfig, impute, train_imputer

rng = np.random.default_rng(0)
n, rho = 1000, 0.9
x = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=n)
mask = np.zeros_like(x, dtype=bool)
mask[:, 1] = rng.random(n) < 0.3  # 30% MCAR on the second column
print(f"{mask.sum()} of {n} values missing in column 1")

t0 = time.perf_counter()
model = train_imputer(x, mask, ImputerConfig(seed=0))
filled = impute(model, x, mask, seed=0)
print(f"trained and imputed in {time.perf_counter() - t0:.1f}s")

truth = x[mask[:, 1], 1]
rmse_model = np.sqrt(np.mean((filled[mask[:, 1], 1] - truth) ** 2))
rmse_mean = np.sqrt(np.mean((x[~mask[:, 1], 1].mean() - truth) ** 2))
print(f"RMSE model {rmse_model:.3f}, mean imputation {rmse_mean:.3f}, ratio {rmse_model / rmse_mean:.3f}")
