"""Test-split evaluation, naive baselines, and spectral-fidelity reports."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import AsyncDataset, inject_block_missing, make_windows, truncate_inputs
from .errors import ConfigError
from .model import ModelConfig, ModelParams, forward
from .spectral import amplitude_spectrum, band_rmse
from .train import cmae, cmse

# Reference bands in cycles per channel sample (each channel's own grid is
# normalized to unit rate, so every band is populated regardless of factor).
DEFAULT_BANDS = {"low": (0.0, 0.10), "mid": (0.10, 0.25), "high": (0.25, 0.50)}


def _denorm_targets(ds: AsyncDataset, window) -> list[np.ndarray]:
    return [ds.denormalize(i, t) for i, t in enumerate(window.targets)]


def evaluate(
    ds: AsyncDataset,
    params: ModelParams,
    config: ModelConfig,
    missing_ratio: float = 0.0,
    protocol: str = "patch_aligned",
    seed: int = 0,
    input_len: int = None,
    normalized: bool = False,
    collect_forecasts: bool = False,
) -> dict:
    """Metrics over the test split (window origins strided by max factor).

    ``missing_ratio`` > 0 injects block-wise missing inputs, seeded per
    (window, channel) so reports do not depend on visit order. ``input_len``
    truncates inputs to the newest steps, exercising the variable-length
    path. Metrics are on denormalized values unless ``normalized`` is set.
    """
    if input_len is not None:
        if input_len % ds.max_factor:
            raise ConfigError(
                f"--input-length must be a multiple of {ds.max_factor}, got {input_len}"
            )
        if not 0 < input_len <= config.input_len:
            raise ConfigError(
                f"--input-length must be in (0, {config.input_len}], got {input_len}"
            )
    windows = make_windows(ds, config.input_len, config.horizon, split="test")
    if not windows:
        raise ConfigError("test split has no full windows")
    rows = []
    per_channel_sq = np.zeros(ds.n_channels)
    per_channel_abs = np.zeros(ds.n_channels)
    forecasts = []
    with T.no_grad():
        for w in windows:
            if input_len is not None:
                w = truncate_inputs(w, input_len)
            if missing_ratio > 0:
                w = inject_block_missing(
                    w,
                    protocol,
                    missing_ratio,
                    rng_seed=(seed * 1_000_003 + w.origin),
                    plan=params.plan,
                )
            pred = forward(w, params, config)
            if normalized:
                preds = pred.normalized
                targets = w.targets
            else:
                preds = pred.denormalized(ds.stats)
                targets = _denorm_targets(ds, w)
            rows.append(
                {
                    "origin": w.origin,
                    "cmse": cmse(targets, preds),
                    "cmae": cmae(targets, preds),
                }
            )
            for i in range(ds.n_channels):
                diff = targets[i] - preds[i]
                per_channel_sq[i] += float(np.mean(diff * diff))
                per_channel_abs[i] += float(np.mean(np.abs(diff)))
            if collect_forecasts:
                forecasts.append((preds, targets))
    n = len(windows)
    report = {
        "scenario": "clean" if missing_ratio == 0 else f"missing({protocol}, m={missing_ratio})",
        "missing_ratio": missing_ratio,
        "protocol": protocol,
        "input_len": input_len if input_len is not None else config.input_len,
        "seed": seed,
        "normalized": normalized,
        "n_windows": n,
        "aggregation": "mean over windows, then channels",
        "cmse": float(np.mean([r["cmse"] for r in rows])),
        "cmae": float(np.mean([r["cmae"] for r in rows])),
        "per_channel": [
            {
                "name": ds.channels[i].name,
                "mse": per_channel_sq[i] / n,
                "mae": per_channel_abs[i] / n,
            }
            for i in range(ds.n_channels)
        ],
        "windows": rows,
    }
    if collect_forecasts:
        report["forecasts"] = forecasts
    return report


def naive_baselines(ds: AsyncDataset, input_len: int, horizon: int) -> dict:
    """Two yardsticks over the same test windows: the per-channel training
    mean repeated, and the last observed input value repeated."""
    windows = make_windows(ds, input_len, horizon, split="test")
    if not windows:
        raise ConfigError("test split has no full windows")
    scores = {"mean": {"cmse": [], "cmae": []}, "persistence": {"cmse": [], "cmae": []}}
    for w in windows:
        targets = _denorm_targets(ds, w)
        mean_preds = [
            np.full(len(t), ds.stats[i][0]) for i, t in enumerate(targets)
        ]
        persist_preds = []
        for i, t in enumerate(targets):
            obs = w.observed[i]
            if obs.any():
                last = ds.denormalize(i, w.inputs[i][obs][-1])
            else:
                last = ds.stats[i][0]
            persist_preds.append(np.full(len(t), last))
        scores["mean"]["cmse"].append(cmse(targets, mean_preds))
        scores["mean"]["cmae"].append(cmae(targets, mean_preds))
        scores["persistence"]["cmse"].append(cmse(targets, persist_preds))
        scores["persistence"]["cmae"].append(cmae(targets, persist_preds))
    return {
        name: {metric: float(np.mean(vals)) for metric, vals in metrics.items()}
        for name, metrics in scores.items()
    }


def frequency_bias_report(
    forecasts,
    channel_names=None,
    bands: dict = None,
    min_len: int = 8,
) -> dict:
    """Spectral fidelity of predictions: dominant-bin offset plus banded
    amplitude RMSE, averaged over windows then channels.

    ``forecasts`` is a list of (preds, targets) pairs per window, each a list
    of per-channel arrays. Channels with horizons shorter than ``min_len``
    are skipped and listed in the report. Sequences are zero-centered before
    analysis; frequencies are in cycles per channel sample.
    """
    if bands is None:
        bands = DEFAULT_BANDS
    if not forecasts:
        raise ConfigError("no forecasts to analyze")
    n_channels = len(forecasts[0][0])
    if channel_names is None:
        channel_names = [f"ch{i}" for i in range(n_channels)]
    skipped = []
    per_channel = []
    for i in range(n_channels):
        horizon = len(forecasts[0][0][i])
        if horizon < min_len:
            skipped.append({"channel": channel_names[i], "horizon": horizon})
            continue
        freq_diffs = []
        band_errs = {name: [] for name in bands}
        for preds, targets in forecasts:
            p = preds[i] - preds[i].mean()
            t = targets[i] - targets[i].mean()
            spec_p = amplitude_spectrum(p)
            spec_t = amplitude_spectrum(t)
            k_p = int(np.argmax(spec_p.amplitudes[1:])) + 1
            k_t = int(np.argmax(spec_t.amplitudes[1:])) + 1
            freq_diffs.append(abs(k_p - k_t) / horizon)
            for name, band in bands.items():
                band_errs[name].append(band_rmse(spec_p, spec_t, band))
        per_channel.append(
            {
                "name": channel_names[i],
                "dominant_freq_diff": float(np.mean(freq_diffs)),
                **{f"{name}_band_rmse": float(np.mean(v)) for name, v in band_errs.items()},
            }
        )
    if not per_channel:
        raise ConfigError(f"every channel has horizon < {min_len}")
    report = {
        "aggregation": "mean over windows, then channels",
        "bands": {name: list(b) for name, b in bands.items()},
        "dominant_freq_diff": float(np.mean([c["dominant_freq_diff"] for c in per_channel])),
        "per_channel": per_channel,
        "skipped": skipped,
    }
    for name in bands:
        report[f"{name}_band_rmse"] = float(
            np.mean([c[f"{name}_band_rmse"] for c in per_channel])
        )
    return report
