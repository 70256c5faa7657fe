"""Frequency-based dynamic patching and tokenization.

Each channel's input is cut into non-overlapping patches whose length tracks
the channel's dominant period (or, failing a clear peak, its sampling
factor). Patches are projected by length-specific shared linear layers and
laid out as [locals(ch0); channel-tokens(ch0); locals(ch1); ...].
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import AsyncDataset, WindowSample
from .errors import ConfigError, ContractError
from .spectral import amplitude_spectrum, dominant_frequency, dominant_peak
from .tensor import Tensor

LOCAL = 0
CHANNEL = 1


@dataclass(frozen=True)
class PatchPlan:
    """Per-channel patch length, patch count, and oldest points dropped."""

    lengths: tuple
    counts: tuple
    dropped: tuple

    @property
    def n_channels(self) -> int:
        return len(self.lengths)

    def to_json(self) -> str:
        return json.dumps(
            {
                "lengths": list(self.lengths),
                "counts": list(self.counts),
                "dropped": list(self.dropped),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PatchPlan":
        blob = json.loads(text)
        return cls(
            lengths=tuple(blob["lengths"]),
            counts=tuple(blob["counts"]),
            dropped=tuple(blob["dropped"]),
        )


class TokenLayout:
    """Index bookkeeping for the flat token sequence.

    Tokens are ordered channel by channel, local patch tokens first (oldest
    patch at the lowest index) followed by that channel's channel tokens.
    """

    def __init__(self, patch_counts, n_channel_tokens: int):
        if n_channel_tokens < 1:
            raise ConfigError("need at least one channel token per channel")
        self.patch_counts = list(patch_counts)
        self.n_channel_tokens = n_channel_tokens
        self.n_channels = len(self.patch_counts)
        self.total = sum(self.patch_counts) + self.n_channels * n_channel_tokens
        kinds, chans, index = [], [], []
        offsets_local, offsets_ct = [], []
        pos = 0
        for i, p in enumerate(self.patch_counts):
            offsets_local.append(pos)
            kinds.extend([LOCAL] * p)
            chans.extend([i] * p)
            index.extend(range(p))
            pos += p
            offsets_ct.append(pos)
            kinds.extend([CHANNEL] * n_channel_tokens)
            chans.extend([i] * n_channel_tokens)
            index.extend(range(n_channel_tokens))
            pos += n_channel_tokens
        self.token_kind = np.asarray(kinds, dtype=np.int64)
        self.token_channel = np.asarray(chans, dtype=np.int64)
        self.token_index = np.asarray(index, dtype=np.int64)
        self._offsets_local = offsets_local
        self._offsets_ct = offsets_ct

    def local_offset(self, channel: int) -> int:
        return self._offsets_local[channel]

    def channel_token_offset(self, channel: int) -> int:
        return self._offsets_ct[channel]

    def describe(self, token: int):
        """(channel, kind, within-kind index) for one token position."""
        return (
            int(self.token_channel[token]),
            int(self.token_kind[token]),
            int(self.token_index[token]),
        )


def _clamped_patch_length(raw: int, input_len: int) -> int:
    return int(np.clip(raw, 2, input_len // 2))


def _plan_channel(input_len: int, factor: int, peak_bin, base_patch_len: int):
    if input_len < 4:
        return input_len, 1, 0
    if peak_bin is not None:
        length = _clamped_patch_length(input_len // peak_bin, input_len)
    else:
        length = _clamped_patch_length(round(base_patch_len / factor), input_len)
    count = input_len // length
    return length, count, input_len - count * length


def plan_patches(
    window: WindowSample, kappa: float = 3.0, base_patch_len: int = 24
) -> PatchPlan:
    """Patch plan from a single window's own spectra."""
    lengths, counts, dropped = [], [], []
    for i, r in enumerate(window.factors):
        vals = window.inputs[i]
        if len(vals) < 2:
            raise ContractError(f"channel {i}: input too short to patch ({len(vals)})")
        peak = dominant_frequency(vals, kappa) if len(vals) >= 4 else None
        length, count, drop = _plan_channel(len(vals), r, peak, base_patch_len)
        lengths.append(length)
        counts.append(count)
        dropped.append(drop)
    return PatchPlan(tuple(lengths), tuple(counts), tuple(dropped))


def plan_patches_dataset(
    ds: AsyncDataset,
    input_len: int,
    kappa: float = 3.0,
    base_patch_len: int = 24,
    dynamic: bool = True,
    max_segments: int = 64,
):
    """Dataset-level patch plan from the training split's average spectrum.

    Channel spectra are averaged over non-overlapping training segments of
    the channel's window length, so the plan (and with it the parameter
    registry) is fixed for the whole dataset. Returns the plan plus the
    detected dominant bin per channel (None where the fallback applied).
    """
    if input_len % ds.alignment:
        raise ConfigError(f"input_len {input_len} not aligned to {ds.alignment}")
    lengths, counts, dropped, peaks = [], [], [], []
    for i, r in enumerate(ds.factors):
        chan_len = input_len // r
        peak = None
        if dynamic and chan_len >= 4:
            peak = _average_spectrum_peak(ds, i, chan_len, kappa, max_segments)
        if dynamic:
            length, count, drop = _plan_channel(chan_len, r, peak, base_patch_len)
        else:
            # fixed boundaries: ignore spectra and the sampling factor alike
            if chan_len < 4:
                length, count, drop = chan_len, 1, 0
            else:
                length = _clamped_patch_length(base_patch_len, chan_len)
                count = chan_len // length
                drop = chan_len - count * length
        lengths.append(length)
        counts.append(count)
        dropped.append(drop)
        peaks.append(peak)
    return PatchPlan(tuple(lengths), tuple(counts), tuple(dropped)), peaks


def _average_spectrum_peak(ds, channel, chan_len, kappa, max_segments):
    r = ds.factors[channel]
    n_train = -(-ds.train_end // r)
    vals = ds.values[channel][:n_train]
    n_seg = min(max_segments, len(vals) // chan_len)
    if n_seg < 1:
        return None
    acc = np.zeros(chan_len // 2 + 1)
    for s in range(n_seg):
        seg = vals[s * chan_len : (s + 1) * chan_len]
        acc += amplitude_spectrum(seg - seg.mean()).amplitudes
    acc /= n_seg
    return dominant_peak(acc, kappa)


def positional_table(max_patches: int, d: int) -> np.ndarray:
    """Fixed sinusoidal positional table, shape (max_patches, d)."""
    if d % 2:
        raise ConfigError(f"positional table needs an even width, got {d}")
    pos = np.arange(max_patches, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2 * k / d)
    table = np.empty((max_patches, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


class EmbeddingBank:
    """Learnable tokenization state shared across windows.

    Patch projections are keyed by patch length, so channels with equal
    patch lengths literally share one weight entry. Channel tokens for all
    channels live in one (N*C, d) matrix; channel embeddings in (N, d).
    """

    def __init__(self, plan: PatchPlan, n_channel_tokens: int, d: int, rng,
                 use_channel_embedding: bool = True):
        self.d = d
        self.n_channel_tokens = n_channel_tokens
        self.projections: dict[int, tuple[Tensor, Tensor]] = {}
        for length in sorted(set(plan.lengths)):
            bound = 1.0 / np.sqrt(length)
            w = Tensor(rng.uniform(-bound, bound, size=(length, d)), requires_grad=True)
            b = Tensor(np.zeros(d), requires_grad=True)
            self.projections[length] = (w, b)
        n = plan.n_channels
        if use_channel_embedding:
            self.channel_embed = Tensor(rng.normal(0.0, 0.02, size=(n, d)), requires_grad=True)
        else:
            self.channel_embed = Tensor(np.zeros((n, d)), requires_grad=False)
        self.channel_tokens = Tensor(
            rng.normal(0.0, 0.02, size=(n * n_channel_tokens, d)), requires_grad=True
        )
        self.pos_table = positional_table(max(plan.counts), d)

    def registry(self):
        entries = []
        for length in sorted(self.projections):
            w, b = self.projections[length]
            entries.append((f"patch_proj/{length}/weight", w))
            entries.append((f"patch_proj/{length}/bias", b))
        entries.append(("channel_embed", self.channel_embed))
        entries.append(("channel_tokens", self.channel_tokens))
        return entries


def tokenize(window: WindowSample, plan: PatchPlan, bank: EmbeddingBank):
    """Project patches into tokens and assemble the flat token sequence.

    Returns (tokens [T x d], layout, usable-flags [T]) where the flag of a
    local token is False iff its patch is fully unobserved; channel-token
    flags are always True.
    """
    if plan.n_channels != window.n_channels:
        raise ContractError(
            f"plan covers {plan.n_channels} channels, window has {window.n_channels}"
        )
    layout = TokenLayout(plan.counts, bank.n_channel_tokens)
    c = bank.n_channel_tokens
    pieces = []
    flags = []
    for i in range(window.n_channels):
        length, count, drop = plan.lengths[i], plan.counts[i], plan.dropped[i]
        vals = window.inputs[i]
        if len(vals) != length * count + drop:
            raise ContractError(
                f"channel {i}: window length {len(vals)} inconsistent with plan "
                f"({count} x {length} + {drop})"
            )
        w, b = bank.projections[length]
        patches = Tensor(vals[drop:].reshape(count, length))
        embed = T.reshape(T.gather_rows(bank.channel_embed, [i]), (bank.d,))
        local = T.add(T.add(T.matmul(patches, w), b), Tensor(bank.pos_table[:count]))
        local = T.add(local, embed)
        ct = T.slice_axis(bank.channel_tokens, 0, i * c, (i + 1) * c)
        ct = T.add(ct, embed)
        pieces.extend([local, ct])
        patch_obs = window.observed[i][drop:].reshape(count, length).any(axis=1)
        flags.append(patch_obs)
        flags.append(np.ones(c, dtype=bool))
    tokens = T.concat(pieces, axis=0)
    return tokens, layout, np.concatenate(flags)
