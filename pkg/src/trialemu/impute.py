"""Importance-weighted latent-variable imputation of missing covariates.

A small variational auto-encoder is trained on the observed entries only:
the encoder sees the data with missing entries zeroed, the decoder
likelihood is summed over observed entries, and the objective is the
importance-weighted bound with ``K`` posterior samples.  Missing entries are
then filled with the self-normalized importance-sampling estimate of
``E[x_missing | x_observed]``.

Parameters are held as a flat dict of float64 tensors so the bound is a
pure function of ``(params, data, mask, noise)``; that is what the
gradient check perturbs.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

torch.set_default_dtype(torch.float64)

LOG_2PI = math.log(2 * math.pi)


class ImputerError(ValueError):
    pass


@dataclass(frozen=True)
class ImputerConfig:
    latent_dim: int = 6
    hidden_width: int = 32
    depth: int = 3
    epochs: int = 500
    importance_samples: int = 100
    train_samples: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 256
    full_batch_max: int = 4096
    variance_floor: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "hidden_width", "depth", "epochs", "importance_samples", "train_samples",
                     "batch_size"):
            if getattr(self, name) < 1:
                raise ImputerError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ImputerError("learning_rate must be positive")


@dataclass
class ImputerModel:
    params: dict[str, torch.Tensor]
    feature_spec: list[str]  # "gaussian" | "bernoulli" per column
    config: ImputerConfig
    history: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_spec)

    def to_json(self) -> str:
        return json.dumps({
            "config": asdict(self.config),
            "feature_spec": self.feature_spec,
            "params": {k: v.detach().tolist() for k, v in self.params.items()},
        })

    @classmethod
    def from_json(cls, text: str) -> "ImputerModel":
        obj = json.loads(text)
        params = {k: torch.tensor(v, dtype=torch.float64) for k, v in obj["params"].items()}
        return cls(params=params, feature_spec=obj["feature_spec"], config=ImputerConfig(**obj["config"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ImputerModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# --------------------------------------------------------------------------
# network


def _layer_sizes(n_in, width, depth, n_out):
    return [n_in] + [width] * (depth - 1) + [n_out]


def init_params(n_features: int, cfg: ImputerConfig) -> dict[str, torch.Tensor]:
    gen = torch.Generator().manual_seed(cfg.seed)
    params = {}
    for prefix, sizes in (
        ("enc", _layer_sizes(n_features, cfg.hidden_width, cfg.depth, 2 * cfg.latent_dim)),
        ("dec", _layer_sizes(cfg.latent_dim, cfg.hidden_width, cfg.depth, n_features)),
    ):
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(a)
            params[f"{prefix}.{i}.weight"] = (torch.rand(a, b, generator=gen) * 2 - 1) * bound
            params[f"{prefix}.{i}.bias"] = (torch.rand(b, generator=gen) * 2 - 1) * bound
    params["dec.logvar"] = torch.zeros(n_features)
    return params


def _mlp(params, prefix, h):
    i = 0
    while f"{prefix}.{i}.weight" in params:
        h = h @ params[f"{prefix}.{i}.weight"] + params[f"{prefix}.{i}.bias"]
        if f"{prefix}.{i + 1}.weight" in params:
            h = torch.relu(h)
        i += 1
    return h


def _log_weights(params, x, m, noise, is_gauss, var_floor):
    """log p(x_obs|z) + log p(z) - log q(z|x_obs) for every (sample, row)."""
    enc = _mlp(params, "enc", x * m)
    d = enc.shape[-1] // 2
    mu, logsig = enc[:, :d], enc[:, d:]
    z = mu + torch.exp(logsig) * noise  # (K, n, d)
    log_q = torch.sum(-0.5 * noise ** 2 - logsig - 0.5 * LOG_2PI, dim=-1)
    log_pz = torch.sum(-0.5 * z ** 2 - 0.5 * LOG_2PI, dim=-1)
    out = _mlp(params, "dec", z)  # (K, n, p)
    var = var_floor + torch.exp(params["dec.logvar"])
    gauss = -0.5 * ((x - out) ** 2 / var + torch.log(var) + LOG_2PI)
    bern = x * out - torch.nn.functional.softplus(out)
    log_px = torch.sum(m * torch.where(is_gauss, gauss, bern), dim=-1)
    return log_px + log_pz - log_q, out


def iw_bound(params, x, m, noise, feature_spec, var_floor=1e-4) -> torch.Tensor:
    """Mean over rows of the importance-weighted lower bound."""
    is_gauss = torch.tensor([f == "gaussian" for f in feature_spec])
    lw, _ = _log_weights(params, x, m, noise, is_gauss, var_floor)
    k = noise.shape[0]
    return torch.mean(torch.logsumexp(lw, dim=0) - math.log(k))


# --------------------------------------------------------------------------
# training / imputation


def _prepare(data, missing_mask):
    """(placeholder-zeroed data, observed indicator as float tensor, observed as bool array)."""
    x = np.asarray(data, dtype=float)
    if missing_mask is None:
        observed = ~np.isnan(x)
    else:
        observed = ~np.asarray(missing_mask, dtype=bool)
    x = np.where(observed, np.nan_to_num(x), 0.0)
    return torch.from_numpy(x), torch.from_numpy(observed.astype(float)), observed


def infer_feature_spec(data, observed) -> list[str]:
    x = np.asarray(data, dtype=float)
    spec = []
    for j in range(x.shape[1]):
        obs = x[observed[:, j], j]
        spec.append("bernoulli" if obs.size and np.all((obs == 0) | (obs == 1)) else "gaussian")
    return spec


def train_imputer(data, missing_mask=None, cfg: Optional[ImputerConfig] = None,
                  feature_spec: Optional[list[str]] = None) -> ImputerModel:
    """Fit the imputer by Adam on the negative importance-weighted bound.

    ``missing_mask`` is True where an entry is missing (the cohort
    convention); when omitted NaNs mark the missing entries.
    """
    cfg = cfg or ImputerConfig()
    x, m, mask_np = _prepare(data, missing_mask)
    n, p = x.shape
    empty = np.where(~mask_np.any(axis=0))[0]
    if empty.size:
        raise ImputerError(f"columns {empty.tolist()} have no observed entries")
    feature_spec = feature_spec or infer_feature_spec(x.numpy(), mask_np)
    params = init_params(p, cfg)
    for t in params.values():
        t.requires_grad_(True)
    opt = torch.optim.Adam(params.values(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    batch = n if n < cfg.full_batch_max else cfg.batch_size
    history = []
    for epoch in range(cfg.epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = torch.from_numpy(order[start:start + batch])
            noise = torch.from_numpy(rng.standard_normal((cfg.train_samples, len(idx), cfg.latent_dim)))
            opt.zero_grad()
            loss = -iw_bound(params, x[idx], m[idx], noise, feature_spec, cfg.variance_floor)
            if not torch.isfinite(loss):
                raise ImputerError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n)
    return ImputerModel(params={k: v.detach() for k, v in params.items()}, feature_spec=feature_spec,
                        config=cfg, history=history)


def row_noise(seed: int, row: int, k: int, latent_dim: int) -> np.ndarray:
    """Per-row posterior-sample noise from an RNG stream keyed on (seed, row)."""
    return np.random.default_rng([seed, row]).standard_normal((k, latent_dim))


def impute(model: ImputerModel, data, missing_mask=None, K: Optional[int] = None, seed: Optional[int] = None,
           threshold_bernoulli: bool = True) -> np.ndarray:
    """Fill missing entries with the importance-weighted posterior mean."""
    K = model.config.importance_samples if K is None else K
    if K < 1:
        raise ImputerError("K must be at least 1")
    seed = model.config.seed if seed is None else seed
    x, m, mask_np = _prepare(data, missing_mask)
    out = x.numpy().copy()
    rows = np.where(~mask_np.all(axis=1))[0]
    if rows.size == 0:
        return out
    d = model.config.latent_dim
    noise = torch.from_numpy(np.stack([row_noise(seed, int(r), K, d) for r in rows], axis=1))
    is_gauss = torch.tensor([f == "gaussian" for f in model.feature_spec])
    with torch.no_grad():
        lw, dec = _log_weights(model.params, x[rows], m[rows], noise, is_gauss, model.config.variance_floor)
        w = torch.softmax(lw, dim=0)  # (K, r)
        mean = torch.where(is_gauss, dec, torch.sigmoid(dec))
        est = torch.sum(w[:, :, None] * mean, dim=0).numpy()
    bern = np.array([f == "bernoulli" for f in model.feature_spec])
    if threshold_bernoulli:
        est[:, bern] = (est[:, bern] >= 0.5).astype(float)
    block = out[rows]
    miss = ~mask_np[rows]
    block[miss] = est[miss]
    out[rows] = block
    return out


def gradient_check(model: ImputerModel, data, missing_mask=None, epsilon: float = 1e-6, K: int = 5,
                   seed: int = 0) -> float:
    """Max relative error between autograd and central finite-difference gradients of the bound.

    The posterior noise is drawn once and held fixed so the bound is a
    deterministic function of the parameters.
    """
    if not epsilon > 0:
        raise ImputerError("epsilon must be positive")
    x, m, _ = _prepare(data, missing_mask)
    noise = torch.from_numpy(np.random.default_rng(seed).standard_normal((K, x.shape[0], model.config.latent_dim)))
    params = {k: v.detach().clone().requires_grad_(True) for k, v in model.params.items()}
    f = lambda ps: iw_bound(ps, x, m, noise, model.feature_spec, model.config.variance_floor)  # noqa: E731
    grads = torch.autograd.grad(f(params), list(params.values()))
    worst = 0.0
    with torch.no_grad():
        for (name, p), g in zip(params.items(), grads):
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + epsilon
                up = f(params).item()
                flat[i] = orig - epsilon
                down = f(params).item()
                flat[i] = orig
                num = (up - down) / (2 * epsilon)
                ana = gflat[i].item()
                denom = max(abs(num), abs(ana))
                if denom > 0:
                    worst = max(worst, abs(num - ana) / max(denom, 1e-8))
    return worst
