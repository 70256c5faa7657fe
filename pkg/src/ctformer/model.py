"""The channel-token transformer: stacked masked-attention blocks over the
unified token sequence, with per-sampling-period affine decoders reading
only the channel tokens."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .attnmask import MaskStrategy, build_mask
from .data import WindowSample
from .errors import ConfigError
from .patching import EmbeddingBank, PatchPlan, tokenize
from .tensor import Tensor


@dataclass
class ModelConfig:
    input_len: int
    horizon: int
    d_model: int = 32
    n_heads: int = 4
    n_blocks: int = 2
    ff_ratio: int = 2
    channel_tokens: int = 2
    mask_strategy: MaskStrategy = MaskStrategy.CD_READONLY
    use_channel_embedding: bool = True
    dropout_ratio: float = 0.4
    kappa: float = 3.0
    base_patch_len: int = 24
    dynamic_patching: bool = True
    patch_masking: bool = True
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if isinstance(self.mask_strategy, str):
            self.mask_strategy = MaskStrategy.parse(self.mask_strategy)
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.channel_tokens < 1:
            raise ConfigError("channel_tokens must be >= 1")
        if not 0 <= self.dropout_ratio < 1:
            raise ConfigError("dropout_ratio must be in [0, 1)")

    def to_dict(self) -> dict:
        blob = dataclasses.asdict(self)
        blob["mask_strategy"] = self.mask_strategy.value
        return blob

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelConfig":
        return cls(**blob)


ABLATIONS = (
    "no_channel_dependence",
    "no_dynamic_patching",
    "no_patch_masking",
    "no_channel_embedding",
)


def ablate(config: ModelConfig, toggle: str) -> ModelConfig:
    """Return a config with one architectural component switched off."""
    if toggle == "no_channel_dependence":
        return dataclasses.replace(
            config, mask_strategy=config.mask_strategy.channel_independent()
        )
    if toggle == "no_dynamic_patching":
        return dataclasses.replace(config, dynamic_patching=False)
    if toggle == "no_patch_masking":
        return dataclasses.replace(config, patch_masking=False, dropout_ratio=0.0)
    if toggle == "no_channel_embedding":
        return dataclasses.replace(config, use_channel_embedding=False)
    raise ConfigError(f"unknown ablation {toggle!r}; choose from {ABLATIONS}")


@dataclass
class BlockParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln1_gain: Tensor
    ln1_shift: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor


class ModelParams:
    """Every learnable array, enumerable exactly once via registry().

    Decoders are keyed by sampling factor, so channels sharing a factor share
    one decoder; the embedding bank shares patch projections by length.
    """

    def __init__(self, config: ModelConfig, plan: PatchPlan, factors, seed: int = 0):
        self.plan = plan
        self.factors = list(factors)
        d = config.d_model
        rng = np.random.default_rng(seed)
        self.bank = EmbeddingBank(
            plan,
            config.channel_tokens,
            d,
            rng,
            use_channel_embedding=config.use_channel_embedding,
        )
        self.blocks: list[BlockParams] = []
        bound = 1.0 / np.sqrt(d)
        hidden = config.ff_ratio * d
        for _ in range(config.n_blocks):
            self.blocks.append(
                BlockParams(
                    w_q=Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True),
                    w_k=Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True),
                    w_v=Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True),
                    w_o=Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True),
                    ln1_gain=Tensor(np.ones(d), requires_grad=True),
                    ln1_shift=Tensor(np.zeros(d), requires_grad=True),
                    ffn_w1=Tensor(rng.uniform(-bound, bound, (d, hidden)), requires_grad=True),
                    ffn_b1=Tensor(np.zeros(hidden), requires_grad=True),
                    ffn_w2=Tensor(
                        rng.uniform(-1 / np.sqrt(hidden), 1 / np.sqrt(hidden), (hidden, d)),
                        requires_grad=True,
                    ),
                    ffn_b2=Tensor(np.zeros(d), requires_grad=True),
                    ln2_gain=Tensor(np.ones(d), requires_grad=True),
                    ln2_shift=Tensor(np.zeros(d), requires_grad=True),
                )
            )
        self.decoders: dict[int, tuple[Tensor, Tensor]] = {}
        flat_width = config.channel_tokens * d
        dec_bound = 1.0 / np.sqrt(flat_width)
        for r in sorted(set(self.factors)):
            h_r = config.horizon // r
            w = Tensor(rng.uniform(-dec_bound, dec_bound, (flat_width, h_r)), requires_grad=True)
            b = Tensor(np.zeros(h_r), requires_grad=True)
            self.decoders[r] = (w, b)

    def registry(self) -> list[tuple[str, Tensor]]:
        entries = list(self.bank.registry())
        for bi, blk in enumerate(self.blocks):
            for fname in (
                "w_q", "w_k", "w_v", "w_o",
                "ln1_gain", "ln1_shift",
                "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
                "ln2_gain", "ln2_shift",
            ):
                entries.append((f"block{bi}/{fname}", getattr(blk, fname)))
        for r in sorted(self.decoders):
            w, b = self.decoders[r]
            entries.append((f"decoder/r{r}/weight", w))
            entries.append((f"decoder/r{r}/bias", b))
        return entries

    def clone(self) -> "ModelParams":
        dup = object.__new__(ModelParams)
        dup.plan = self.plan
        dup.factors = list(self.factors)
        dup.bank = object.__new__(EmbeddingBank)
        dup.bank.d = self.bank.d
        dup.bank.n_channel_tokens = self.bank.n_channel_tokens
        dup.bank.pos_table = self.bank.pos_table
        dup.bank.projections = {
            length: (_copy_tensor(w), _copy_tensor(b))
            for length, (w, b) in self.bank.projections.items()
        }
        dup.bank.channel_embed = _copy_tensor(self.bank.channel_embed)
        dup.bank.channel_tokens = _copy_tensor(self.bank.channel_tokens)
        dup.blocks = [
            BlockParams(**{
                f.name: _copy_tensor(getattr(blk, f.name))
                for f in dataclasses.fields(BlockParams)
            })
            for blk in self.blocks
        ]
        dup.decoders = {
            r: (_copy_tensor(w), _copy_tensor(b)) for r, (w, b) in self.decoders.items()
        }
        return dup

    def zero_grads(self) -> None:
        for _, p in self.registry():
            p.grad = None


def _copy_tensor(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=t.requires_grad)


def count_params(params: ModelParams) -> int:
    return sum(p.data.size for _, p in params.registry())


@dataclass
class Forecast:
    """Per-channel predictions in normalized units, graph-attached."""

    tensors: list[Tensor]
    factors: list[int]

    @property
    def normalized(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors]

    def denormalized(self, stats) -> list[np.ndarray]:
        return [
            t.data * std + mean for t, (mean, std) in zip(self.tensors, stats)
        ]


def forward(
    window: WindowSample,
    params: ModelParams,
    config: ModelConfig,
    dropout_flags=None,
) -> Forecast:
    """tokenize -> mask -> stacked pre-norm attention/FFN blocks -> decoders.

    Only the channel tokens reach the decoders; each head of every block
    applies the same admissibility mask.
    """
    tokens, layout, patch_obs = tokenize(window, params.plan, params.bank)
    if not config.patch_masking:
        patch_obs = np.ones(layout.total, dtype=bool)
        dropout_flags = None
    mask = build_mask(layout, config.mask_strategy, patch_obs, dropout_flags)
    d = config.d_model
    d_head = d // config.n_heads
    inv_sqrt = 1.0 / np.sqrt(d_head)
    x = tokens
    for blk in params.blocks:
        normed = T.layer_norm(x, blk.ln1_gain, blk.ln1_shift, config.layer_norm_eps)
        q = T.matmul(normed, blk.w_q)
        k = T.matmul(normed, blk.w_k)
        v = T.matmul(normed, blk.w_v)
        heads = []
        for h in range(config.n_heads):
            lo, hi = h * d_head, (h + 1) * d_head
            qh = T.slice_axis(q, 1, lo, hi)
            kh = T.slice_axis(k, 1, lo, hi)
            vh = T.slice_axis(v, 1, lo, hi)
            scores = T.scale(T.matmul(qh, T.transpose(kh)), inv_sqrt)
            weights = T.masked_softmax(scores, mask.bias)
            heads.append(T.matmul(weights, vh))
        attended = T.matmul(T.concat(heads, axis=1), blk.w_o)
        x = T.add(x, attended)
        normed2 = T.layer_norm(x, blk.ln2_gain, blk.ln2_shift, config.layer_norm_eps)
        hidden = T.relu(T.add(T.matmul(normed2, blk.ffn_w1), blk.ffn_b1))
        ff = T.add(T.matmul(hidden, blk.ffn_w2), blk.ffn_b2)
        x = T.add(x, ff)
    c = config.channel_tokens
    preds = []
    for i, r in enumerate(params.factors):
        if r not in params.decoders:
            raise ConfigError(f"no decoder for sampling factor {r}")
        w, b = params.decoders[r]
        offset = layout.channel_token_offset(i)
        ct = T.slice_axis(x, 0, offset, offset + c)
        flat = T.reshape(ct, (1, c * d))
        y = T.add(T.matmul(flat, w), b)
        preds.append(T.reshape(y, (y.data.shape[1],)))
    return Forecast(tensors=preds, factors=list(params.factors))


# --- checkpoint format ------------------------------------------------------
# One JSON header line listing tensor names/shapes in registry order, then
# the concatenated raw little-endian float64 buffers.


def save_checkpoint(params: ModelParams, path) -> None:
    entries = params.registry()
    header = {
        "tensors": [
            {"name": name, "shape": list(p.data.shape)} for name, p in entries
        ]
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, p in entries:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(params: ModelParams, path) -> None:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        listed = header["tensors"]
        entries = params.registry()
        if len(listed) != len(entries):
            raise ConfigError(
                f"checkpoint lists {len(listed)} tensors, model has {len(entries)}"
            )
        for meta, (name, p) in zip(listed, entries):
            if meta["name"] != name or tuple(meta["shape"]) != p.data.shape:
                raise ConfigError(
                    f"checkpoint entry {meta['name']} {meta['shape']} does not match "
                    f"model tensor {name} {list(p.data.shape)}"
                )
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ConfigError(f"checkpoint truncated at tensor {name}")
            p.data = np.frombuffer(buf, dtype="<f8").reshape(p.data.shape).copy()
