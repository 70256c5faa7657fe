"""Channel-aggregated losses, Adam, and the deterministic training loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import AsyncDataset, make_windows
from .errors import ConfigError, NumericalError
from .model import Forecast, ModelConfig, ModelParams, forward
from .patching import TokenLayout, plan_patches_dataset
from .attnmask import sample_dropout_mask
from .tensor import Tensor

# per-dataset initial learning rates
LEARNING_RATES = {"ett1": 1e-4, "solarwind": 1e-4, "weather": 1e-2, "chs": 1e-3}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 10
    patience: int = 3
    batch_size: int = 1
    train_stride: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        # lr == 0 is allowed as an explicit no-op optimizer
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.train_stride < 1:
            raise ConfigError("batch_size and train_stride must be >= 1")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "batch_size": self.batch_size,
            "train_stride": self.train_stride,
            "rng_seed": self.rng_seed,
        }


def default_learning_rate(style: str) -> float:
    return LEARNING_RATES.get(style.lower(), 1e-3)


def _check_lengths(targets, preds):
    if len(targets) != len(preds):
        raise ConfigError(f"{len(targets)} target channels vs {len(preds)} predictions")
    for i, (y, yhat) in enumerate(zip(targets, preds)):
        if len(y) != len(yhat):
            raise ConfigError(
                f"channel {i}: target length {len(y)} vs prediction length {len(yhat)}"
            )


def cmse(targets, preds) -> float:
    """Channel-aggregated MSE: per-channel mean over its own horizon, then
    mean over channels."""
    _check_lengths(targets, preds)
    per_channel = [
        float(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2))
        for y, yhat in zip(targets, preds)
    ]
    return float(np.mean(per_channel))


def cmae(targets, preds) -> float:
    """MAE variant of the channel-aggregated metric (evaluation only)."""
    _check_lengths(targets, preds)
    per_channel = [
        float(np.mean(np.abs(np.asarray(y) - np.asarray(yhat))))
        for y, yhat in zip(targets, preds)
    ]
    return float(np.mean(per_channel))


def cmse_loss(targets, forecast: Forecast) -> Tensor:
    """Differentiable channel-aggregated MSE on forecast tensors."""
    _check_lengths(targets, forecast.tensors)
    total = None
    for y, yhat in zip(targets, forecast.tensors):
        diff = T.sub(yhat, Tensor(y))
        err = T.mean_all(T.mul(diff, diff))
        total = err if total is None else T.add(total, err)
    return T.scale(total, 1.0 / len(targets))


class AdamState:
    """First/second moment buffers shaped like their parameters."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {
            name: np.zeros_like(p.data)
            for name, p in params.registry()
            if p.requires_grad
        }
        self.v = {name: np.zeros_like(buf) for name, buf in self.m.items()}


def adam_step(params: ModelParams, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update over the parameter registry."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.registry():
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class FitResult:
    params: ModelParams
    history: list
    best_epoch: int
    best_val: float
    plan: object
    diverged: bool = False
    message: str = ""


def validation_cmse(windows, params, config) -> float:
    scores = []
    with T.no_grad():
        for w in windows:
            pred = forward(w, params, config)
            scores.append(cmse(w.targets, pred.normalized))
    return float(np.mean(scores))


def fit(ds: AsyncDataset, model_config: ModelConfig, train_config: TrainConfig) -> FitResult:
    """Minimize training CMSE with Adam, random patch dropout, and early
    stopping on validation CMSE (clean inputs, no dropout). Everything is
    seeded, so two runs with identical configs match bitwise."""
    plan, _ = plan_patches_dataset(
        ds,
        model_config.input_len,
        kappa=model_config.kappa,
        base_patch_len=model_config.base_patch_len,
        dynamic=model_config.dynamic_patching,
    )
    params = ModelParams(model_config, plan, ds.factors, seed=train_config.rng_seed)
    state = AdamState(params)
    train_windows = make_windows(
        ds,
        model_config.input_len,
        model_config.horizon,
        stride=train_config.train_stride,
        split="train",
    )
    val_windows = make_windows(
        ds,
        model_config.input_len,
        model_config.horizon,
        stride=ds.max_factor,
        split="val",
    )
    if not train_windows or not val_windows:
        raise ConfigError(
            f"dataset too short: {len(train_windows)} train / {len(val_windows)} val windows"
        )
    layout = TokenLayout(plan.counts, model_config.channel_tokens)
    ratio = model_config.dropout_ratio if model_config.patch_masking else 0.0
    rng = np.random.default_rng(train_config.rng_seed)
    best_params = params.clone()
    best_val = float("inf")
    best_epoch = -1
    bad_epochs = 0
    history = []
    diverged = False
    message = ""
    for epoch in range(train_config.max_epochs):
        order = rng.permutation(len(train_windows))
        epoch_losses = []
        batch: list = []
        for pos, idx in enumerate(order):
            batch.append(train_windows[idx])
            if len(batch) < train_config.batch_size and pos != len(order) - 1:
                continue
            loss = None
            for w in batch:
                drop = None
                if ratio > 0:
                    drop = sample_dropout_mask(layout, ratio, int(rng.integers(2**63)))
                pred = forward(w, params, model_config, dropout_flags=drop)
                item = cmse_loss(w.targets, pred)
                loss = item if loss is None else T.add(loss, item)
            loss = T.scale(loss, 1.0 / len(batch))
            if not np.isfinite(loss.data):
                diverged = True
                message = f"training loss became non-finite at epoch {epoch}"
                break
            T.backward(loss)
            T.clear_tape()
            try:
                adam_step(params, state, train_config.learning_rate)
            except NumericalError as exc:
                diverged = True
                message = str(exc)
                break
            params.zero_grads()
            epoch_losses.append(float(loss.data))
            batch = []
        if diverged:
            T.clear_tape()
            params.zero_grads()
            break
        val = validation_cmse(val_windows, params, model_config)
        history.append(
            {
                "epoch": epoch,
                "train_cmse": float(np.mean(epoch_losses)),
                "val_cmse": val,
            }
        )
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = params.clone()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_config.patience:
                break
    if best_epoch < 0:
        best_params = params.clone()
    return FitResult(
        params=best_params,
        history=history,
        best_epoch=best_epoch,
        best_val=best_val,
        plan=plan,
        diverged=diverged,
        message=message,
    )
