"""Dataset model for channel-wise asynchronous sampling.

Each channel lives on its own regular grid (every ``r_i``-th step of the fine
grid). This module builds such datasets from dense fine-grid records or from
a seeded synthetic generator, slides aligned windows over them, injects
block-wise missing intervals, and provides the interpolation fills used by
the naive baselines and the spectral-distortion analysis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

DEFAULT_SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    sampling_factor: int
    index: int


@dataclass
class AsyncDataset:
    """Per-channel sequences over a shared fine-grid time window.

    ``values[i]`` holds channel i's raw samples at fine-grid steps
    0, r_i, 2*r_i, ...; ``observed[i]`` is the matching validity mask.
    Normalization stats come from observed training-split points only.
    """

    channels: list[ChannelSpec]
    values: list[np.ndarray]
    observed: list[np.ndarray]
    base_len: int
    train_end: int
    val_end: int
    stats: list[tuple[float, float]]
    name: str = "dataset"
    base_period_seconds: float = 60.0

    @property
    def factors(self) -> list[int]:
        return [c.sampling_factor for c in self.channels]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def max_factor(self) -> int:
        return max(self.factors)

    @property
    def alignment(self) -> int:
        return math.lcm(*self.factors)

    def split_bounds(self, split: str) -> tuple[int, int]:
        if split == "train":
            return 0, self.train_end
        if split == "val":
            return self.train_end, self.val_end
        if split == "test":
            return self.val_end, self.base_len
        raise ConfigError(f"unknown split {split!r}")

    def normalize(self, channel: int, raw: np.ndarray) -> np.ndarray:
        mean, std = self.stats[channel]
        return (np.asarray(raw, dtype=np.float64) - mean) / std

    def denormalize(self, channel: int, normed: np.ndarray) -> np.ndarray:
        mean, std = self.stats[channel]
        return np.asarray(normed, dtype=np.float64) * std + mean


def _train_stats(values, observed, factors, train_end):
    stats = []
    for vals, obs, r in zip(values, observed, factors):
        n_train = min(-(-train_end // r), len(vals))
        v = vals[:n_train][obs[:n_train]]
        if v.size == 0:
            stats.append((0.0, 1.0))
            continue
        mean = float(v.mean())
        std = float(v.std())
        stats.append((mean, std if std > 0 else 1.0))
    return stats


def build_dataset(
    channels,
    values,
    observed,
    base_len,
    split_fractions=DEFAULT_SPLIT_FRACTIONS,
    name="dataset",
    base_period_seconds=60.0,
) -> AsyncDataset:
    factors = [c.sampling_factor for c in channels]
    if min(factors) != 1:
        raise ConfigError("at least one channel must have sampling factor 1")
    for c, v, o in zip(channels, values, observed):
        expect = base_len // c.sampling_factor
        if len(v) != expect or len(o) != expect:
            raise ConfigError(
                f"channel {c.name}: got {len(v)} points, expected "
                f"floor({base_len}/{c.sampling_factor}) = {expect}"
            )
    f_train, f_val, f_test = split_fractions
    if not math.isclose(f_train + f_val + f_test, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ConfigError(f"split fractions must sum to 1, got {split_fractions}")
    train_end = int(base_len * f_train)
    val_end = train_end + int(base_len * f_val)
    values = [np.asarray(v, dtype=np.float64) for v in values]
    observed = [np.asarray(o, dtype=bool) for o in observed]
    stats = _train_stats(values, observed, factors, train_end)
    return AsyncDataset(
        channels=list(channels),
        values=values,
        observed=observed,
        base_len=base_len,
        train_end=train_end,
        val_end=val_end,
        stats=stats,
        name=name,
        base_period_seconds=base_period_seconds,
    )


def resample_practical(
    regular,
    factors,
    names=None,
    split_fractions=DEFAULT_SPLIT_FRACTIONS,
    phase: int = 0,
    name="dataset",
    base_period_seconds=60.0,
) -> AsyncDataset:
    """Turn a dense fine-grid record [T x N] into an asynchronous dataset by
    keeping every r_i-th point of channel i (offset ``phase``)."""
    regular = np.asarray(regular, dtype=np.float64)
    if regular.ndim != 2 or regular.size == 0:
        raise ContractError(f"resample_practical: need a non-empty TxN matrix, got shape {regular.shape}")
    base_len, n_channels = regular.shape
    if len(factors) != n_channels:
        raise ConfigError(f"{len(factors)} factors for {n_channels} channels")
    if any(r < 1 for r in factors):
        raise ConfigError(f"sampling factors must be >= 1, got {factors}")
    if names is None:
        names = [f"ch{i}" for i in range(n_channels)]
    channels, values, observed = [], [], []
    for i, r in enumerate(factors):
        if not 0 <= phase < r and r > 1:
            raise ConfigError(f"phase {phase} outside [0, {r})")
        keep = regular[phase if r > 1 else 0 :: r, i][: base_len // r]
        obs = ~np.isnan(keep)
        values.append(np.where(obs, keep, 0.0))
        observed.append(obs)
        channels.append(ChannelSpec(name=names[i], sampling_factor=int(r), index=i))
    return build_dataset(
        channels, values, observed, base_len, split_fractions, name, base_period_seconds
    )


@dataclass
class WindowSample:
    """One forecasting instance: aligned per-channel inputs and targets.

    Values are z-scored with the dataset's training stats; unobserved input
    points are zero-filled (the mean, in normalized units) and flagged in
    ``observed``. ``phases[i]`` is the fine-grid offset of channel i's first
    input sample relative to ``origin``. Targets are fully observed.
    """

    origin: int
    input_len: int
    horizon: int
    factors: list[int]
    inputs: list[np.ndarray]
    observed: list[np.ndarray]
    targets: list[np.ndarray]
    phases: list[int]

    @property
    def n_channels(self) -> int:
        return len(self.factors)

    def copy(self) -> "WindowSample":
        return WindowSample(
            origin=self.origin,
            input_len=self.input_len,
            horizon=self.horizon,
            factors=list(self.factors),
            inputs=[v.copy() for v in self.inputs],
            observed=[o.copy() for o in self.observed],
            targets=[t.copy() for t in self.targets],
            phases=list(self.phases),
        )


def _cut_window(ds: AsyncDataset, origin: int, input_len: int, horizon: int) -> WindowSample:
    inputs, observed, targets, phases = [], [], [], []
    for i, r in enumerate(ds.factors):
        s0 = -(-origin // r)  # ceil
        s1 = s0 + input_len // r
        t1 = s1 + horizon // r
        raw = ds.values[i][s0:s1]
        obs = ds.observed[i][s0:s1].copy()
        normed = np.where(obs, ds.normalize(i, raw), 0.0)
        inputs.append(normed)
        observed.append(obs)
        targets.append(ds.normalize(i, ds.values[i][s1:t1]))
        phases.append(s0 * r - origin)
    return WindowSample(
        origin=origin,
        input_len=input_len,
        horizon=horizon,
        factors=list(ds.factors),
        inputs=inputs,
        observed=observed,
        targets=targets,
        phases=phases,
    )


def make_windows(
    ds: AsyncDataset, input_len: int, horizon: int, stride: int = 1, split: str = "train"
) -> list[WindowSample]:
    """Sliding windows inside one split.

    Input and horizon lengths must be multiples of the factor alignment so
    every channel's slice covers the identical time span. For the test split
    the stride is forced to the maximum sampling factor, which subsamples the
    windows down to the distinct coarse-grid instants.
    """
    align = ds.alignment
    if input_len % align or horizon % align:
        raise ConfigError(
            f"input_len {input_len} and horizon {horizon} must be multiples of {align}"
        )
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if split == "test":
        stride = ds.max_factor
    start, end = ds.split_bounds(split)
    last = end - input_len - horizon
    return [
        _cut_window(ds, origin, input_len, horizon)
        for origin in range(start, last + 1, stride)
    ]


def inject_block_missing(
    window: WindowSample,
    protocol: str,
    ratio: float,
    rng_seed: int,
    plan=None,
) -> WindowSample:
    """Mark contiguous input blocks unobserved (and zero-fill their values).

    ``patch_aligned`` masks whole patches (block length = the channel's patch
    length, requires ``plan``); ``short_range`` draws block lengths uniformly
    from [5, 20] grid points. Targets are never touched. At least one fully
    observed patch per channel always survives.
    """
    if not 0 <= ratio < 1:
        raise ConfigError(f"missing ratio must be in [0, 1), got {ratio}")
    if protocol not in ("patch_aligned", "short_range"):
        raise ConfigError(f"unknown missing protocol {protocol!r}")
    out = window.copy()
    if ratio == 0:
        return out
    if protocol == "patch_aligned" and plan is None:
        raise ConfigError("patch_aligned injection needs the dataset's patch plan")
    for i in range(window.n_channels):
        rng = np.random.default_rng([int(rng_seed), i])
        obs = out.observed[i]
        length_i = len(obs)
        if protocol == "patch_aligned":
            patch_len = plan.lengths[i]
            count = plan.counts[i]
            dropped = plan.dropped[i]
            n_blocks = int(ratio * length_i / patch_len + 0.5)
            if n_blocks >= count:
                raise ConfigError(
                    f"missing ratio {ratio} would leave no fully observed patch "
                    f"on channel {i} ({count} patches)"
                )
            if n_blocks == 0:
                continue
            chosen = rng.choice(count, size=n_blocks, replace=False)
            for j in chosen:
                lo = dropped + j * patch_len
                obs[lo : lo + patch_len] = False
        else:
            target = ratio * length_i
            attempts = 0
            while (~obs).sum() < target and attempts < 200:
                attempts += 1
                blk = int(rng.integers(5, 21))
                blk = min(blk, length_i)
                start = int(rng.integers(0, length_i - blk + 1))
                cand = obs.copy()
                cand[start : start + blk] = False
                if plan is not None:
                    if not _any_full_patch(cand, plan, i):
                        continue
                elif not cand.any():
                    continue
                obs = cand
            out.observed[i] = obs
        out.inputs[i][~out.observed[i]] = 0.0
    return out


def _any_full_patch(obs, plan, channel) -> bool:
    patch_len = plan.lengths[channel]
    dropped = plan.dropped[channel]
    kept = obs[dropped:].reshape(plan.counts[channel], patch_len)
    return bool(kept.all(axis=1).any())


def truncate_inputs(window: WindowSample, input_len: int) -> WindowSample:
    """Keep only the newest ``input_len`` fine steps of the inputs by marking
    everything older unobserved; shapes are unchanged."""
    if input_len > window.input_len or input_len < 1:
        raise ConfigError(
            f"truncated length {input_len} outside (0, {window.input_len}]"
        )
    out = window.copy()
    for i, r in enumerate(window.factors):
        keep = input_len // r
        cut = len(out.inputs[i]) - keep
        if cut > 0:
            out.inputs[i][:cut] = 0.0
            out.observed[i][:cut] = False
    return out


def fill_baseline(window: WindowSample, method: str = "linear") -> list[np.ndarray]:
    """Expand each channel's input to the fine grid, filling the gaps between
    samples and any missing blocks by the chosen rule."""
    if method not in ("linear", "forward", "zero"):
        raise ConfigError(f"unknown fill method {method!r}")
    filled = []
    for i, r in enumerate(window.factors):
        vals = window.inputs[i]
        obs = window.observed[i]
        if not obs.any():
            raise ContractError(f"fill_baseline: channel {i} has no observed points")
        pos = window.phases[i] + r * np.arange(len(vals))
        obs_pos = pos[obs]
        obs_vals = vals[obs]
        grid = np.arange(window.input_len)
        if method == "linear":
            fine = np.interp(grid, obs_pos, obs_vals)
        elif method == "forward":
            idx = np.searchsorted(obs_pos, grid, side="right") - 1
            fine = obs_vals[np.clip(idx, 0, None)]
        else:
            fine = np.zeros(window.input_len)
            fine[obs_pos] = obs_vals
        filled.append(fine)
    return filled


def synth_coupled(
    n_channels: int,
    base_len: int,
    factors,
    coupling: float,
    noise_sd: float,
    rng_seed: int,
    lag: int = 48,
    split_fractions=DEFAULT_SPLIT_FRACTIONS,
    name: str = "synth_coupled",
) -> AsyncDataset:
    """Seeded coupled-sinusoid generator.

    Channel 0 is sin(period 24) + 0.4*sin(period 96) plus white noise. Every
    other channel mixes a ``lag``-step-delayed copy of channel 0 (weight
    ``coupling``, noise included through the copy) with its own seeded
    sinusoid (weight 1 - coupling), then gets resampled by its factor.
    """
    if not 0 <= coupling <= 1:
        raise ConfigError(f"coupling must be in [0, 1], got {coupling}")
    if len(factors) != n_channels:
        raise ConfigError(f"{len(factors)} factors for {n_channels} channels")
    if 1 not in factors:
        raise ConfigError("at least one sampling factor must be 1")
    if lag < 0:
        raise ConfigError("lag must be non-negative")
    rng = np.random.default_rng(rng_seed)
    t_ext = np.arange(base_len + lag, dtype=np.float64)
    phase_a, phase_b = rng.uniform(0, 2 * np.pi, size=2)
    base = np.sin(2 * np.pi * t_ext / 24 + phase_a) + 0.4 * np.sin(
        2 * np.pi * t_ext / 96 + phase_b
    )
    base = base + noise_sd * rng.standard_normal(base_len + lag)
    t = np.arange(base_len, dtype=np.float64)
    fine = [base[lag:]]
    for j in range(1, n_channels):
        period = rng.uniform(18.0, 42.0)
        phase = rng.uniform(0, 2 * np.pi)
        own = np.sin(2 * np.pi * t / period + phase)
        fine.append(coupling * base[:base_len] + (1 - coupling) * own)
    channels, values, observed = [], [], []
    for i, r in enumerate(factors):
        kept = fine[i][::r][: base_len // r]
        channels.append(ChannelSpec(name=f"ch{i}", sampling_factor=int(r), index=i))
        values.append(kept)
        observed.append(np.ones(kept.size, dtype=bool))
    return build_dataset(
        channels, values, observed, base_len, split_fractions, name=name
    )


# --- manifest + on-disk formats -------------------------------------------


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed manifest {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(manifest, dict):
        raise ConfigError(f"manifest {path}: top level must be an object")
    for key in ("name", "channels"):
        if key not in manifest:
            raise ConfigError(f"manifest {path}: missing field {key!r}")
    if "csv" not in manifest and "generator" not in manifest:
        raise ConfigError(f"manifest {path}: needs either 'csv' or 'generator'")
    for pos, ch in enumerate(manifest["channels"]):
        for key in ("name", "sampling_factor"):
            if key not in ch:
                raise ConfigError(
                    f"manifest {path}: channels[{pos}] missing field {key!r}"
                )
    return manifest


def read_fine_csv(path, columns) -> np.ndarray:
    """Read the fine-grid record: first column is the step index, one column
    per channel, empty cells mean unobserved (returned as nan)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty CSV")
        try:
            col_of = {name: header.index(name) for name in columns}
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    [float(row[col_of[c]]) if row[col_of[c]] != "" else np.nan for c in columns]
                )
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def dataset_from_manifest(manifest: dict, manifest_dir) -> AsyncDataset:
    manifest_dir = Path(manifest_dir)
    splits = manifest.get("splits", {})
    fractions = (
        splits.get("train", DEFAULT_SPLIT_FRACTIONS[0]),
        splits.get("val", DEFAULT_SPLIT_FRACTIONS[1]),
        splits.get("test", DEFAULT_SPLIT_FRACTIONS[2]),
    )
    if "generator" in manifest:
        gen = manifest["generator"]
        if gen.get("type", "coupled") != "coupled":
            raise ConfigError(f"unknown generator type {gen.get('type')!r}")
        factors = [int(ch["sampling_factor"]) for ch in manifest["channels"]]
        ds = synth_coupled(
            n_channels=len(factors),
            base_len=int(gen["base_len"]),
            factors=factors,
            coupling=float(gen.get("coupling", 0.8)),
            noise_sd=float(gen.get("noise_sd", 0.25)),
            rng_seed=int(gen.get("seed", 0)),
            lag=int(gen.get("lag", 48)),
            split_fractions=fractions,
            name=manifest["name"],
        )
        ds.channels = [
            ChannelSpec(name=ch["name"], sampling_factor=int(ch["sampling_factor"]), index=i)
            for i, ch in enumerate(manifest["channels"])
        ]
        ds.base_period_seconds = float(manifest.get("base_period_seconds", 60.0))
        return ds
    csv_path = manifest_dir / manifest["csv"]
    columns = [ch.get("column", ch["name"]) for ch in manifest["channels"]]
    matrix = read_fine_csv(csv_path, columns)
    factors = [int(ch["sampling_factor"]) for ch in manifest["channels"]]
    names = [ch["name"] for ch in manifest["channels"]]
    return resample_practical(
        matrix,
        factors,
        names=names,
        split_fractions=fractions,
        phase=int(manifest.get("phase", 0)),
        name=manifest["name"],
        base_period_seconds=float(manifest.get("base_period_seconds", 60.0)),
    )


def dump_split_csv(ds: AsyncDataset, split: str, path) -> None:
    """Write one split back out in the fine-grid input format: first column
    the step index, one column per channel, empty cells where a channel has
    no sample (or an unobserved one) at that fine step."""
    start, end = ds.split_bounds(split)
    lines = ["step," + ",".join(c.name for c in ds.channels)]
    for t in range(start, end):
        cells = [str(t)]
        for i, r in enumerate(ds.factors):
            if t % r == 0 and ds.observed[i][t // r]:
                cells.append(repr(float(ds.values[i][t // r])))
            else:
                cells.append("")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def save_dataset_dir(ds: AsyncDataset, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": ds.name,
        "base_period_seconds": ds.base_period_seconds,
        "base_len": ds.base_len,
        "train_end": ds.train_end,
        "val_end": ds.val_end,
        "channels": [
            {
                "name": c.name,
                "sampling_factor": c.sampling_factor,
                "n_points": int(len(ds.values[i])),
                "mean": ds.stats[i][0],
                "std": ds.stats[i][1],
            }
            for i, c in enumerate(ds.channels)
        ],
    }
    (out_dir / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    chan_dir = out_dir / "channels"
    chan_dir.mkdir(exist_ok=True)
    for i, c in enumerate(ds.channels):
        lines = ["index,value,observed"]
        for j, (v, o) in enumerate(zip(ds.values[i], ds.observed[i])):
            lines.append(f"{j},{float(v)!r},{int(o)}")
        (chan_dir / f"{c.name}.csv").write_text("\n".join(lines) + "\n")


def load_dataset_dir(path) -> AsyncDataset:
    path = Path(path)
    meta_path = path / "dataset.json"
    if not meta_path.exists():
        raise ConfigError(f"{path}: not a dataset directory (missing dataset.json)")
    meta = json.loads(meta_path.read_text())
    channels, values, observed, stats = [], [], [], []
    for i, ch in enumerate(meta["channels"]):
        channels.append(
            ChannelSpec(name=ch["name"], sampling_factor=int(ch["sampling_factor"]), index=i)
        )
        stats.append((float(ch["mean"]), float(ch["std"])))
        rows = (path / "channels" / f"{ch['name']}.csv").read_text().strip().splitlines()[1:]
        vals = np.empty(len(rows))
        obs = np.empty(len(rows), dtype=bool)
        for j, row in enumerate(rows):
            _, v, o = row.split(",")
            vals[j] = float(v)
            obs[j] = o == "1"
        values.append(vals)
        observed.append(obs)
    return AsyncDataset(
        channels=channels,
        values=values,
        observed=observed,
        base_len=int(meta["base_len"]),
        train_end=int(meta["train_end"]),
        val_end=int(meta["val_end"]),
        stats=stats,
        name=meta["name"],
        base_period_seconds=float(meta["base_period_seconds"]),
    )
