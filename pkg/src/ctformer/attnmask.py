"""Attention admissibility masks for the unified token sequence.

The rules, common to all strategies: local tokens attend only to observed
local tokens of their own channel; channel tokens read their own channel's
observed local tokens; channel tokens never target channel tokens of the
same channel (themselves included). Strategies differ in whether local
tokens may read back their channel tokens (Mutual), whether channel tokens
of different channels see each other (CD), and whether that cross-channel
link is restricted to equal token indices (Indexed).

A local token whose patch is unobserved or dropped is cut out entirely (as
query target and key source) and granted self-attention only so its softmax
row stays well defined; its output is never consumed downstream. The same
self-fallback applies to a channel token whose admissible set comes up empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError
from .patching import CHANNEL, LOCAL, TokenLayout
from .tensor import MASKED_BIAS


class MaskStrategy(Enum):
    CI_READONLY = "CI-ReadOnly"
    CI_MUTUAL = "CI-Mutual"
    CD_READONLY = "CD-ReadOnly"
    CD_MUTUAL = "CD-Mutual"
    CD_READONLY_INDEXED = "CD-ReadOnly-Indexed"
    CD_MUTUAL_INDEXED = "CD-Mutual-Indexed"

    @property
    def mutual(self) -> bool:
        return "Mutual" in self.value

    @property
    def cross_channel(self) -> bool:
        return self.value.startswith("CD")

    @property
    def indexed(self) -> bool:
        return self.value.endswith("Indexed")

    def channel_independent(self) -> "MaskStrategy":
        return MaskStrategy.CI_MUTUAL if self.mutual else MaskStrategy.CI_READONLY

    @classmethod
    def parse(cls, text: str) -> "MaskStrategy":
        key = text.strip().lower().replace("_", "-")
        for strategy in cls:
            if strategy.value.lower() == key:
                return strategy
        raise ConfigError(
            f"unknown mask strategy {text!r}; choose from "
            + ", ".join(s.value for s in cls)
        )


@dataclass
class AttentionMask:
    """Boolean query x key admissibility plus its additive-bias rendering."""

    allowed: np.ndarray
    bias: np.ndarray
    layout: TokenLayout
    usable: np.ndarray


def _effective_flags(layout: TokenLayout, patch_flags, dropout_flags=None) -> np.ndarray:
    patch_flags = np.asarray(patch_flags, dtype=bool)
    if patch_flags.shape != (layout.total,):
        raise ContractError(
            f"flags length {patch_flags.shape} != token count {layout.total}"
        )
    usable = patch_flags.copy()
    if dropout_flags is not None:
        dropout_flags = np.asarray(dropout_flags, dtype=bool)
        if dropout_flags.shape != (layout.total,):
            raise ContractError(
                f"dropout flags length {dropout_flags.shape} != token count {layout.total}"
            )
        usable &= dropout_flags
    usable[layout.token_kind == CHANNEL] = True
    return usable


def build_mask(
    layout: TokenLayout,
    strategy: MaskStrategy,
    patch_flags,
    dropout_flags=None,
) -> AttentionMask:
    """Construct the T x T admissibility matrix for one window."""
    usable = _effective_flags(layout, patch_flags, dropout_flags)
    local = layout.token_kind == LOCAL
    ctok = ~local
    same_channel = layout.token_channel[:, None] == layout.token_channel[None, :]
    allowed = local[:, None] & local[None, :] & same_channel
    allowed |= ctok[:, None] & local[None, :] & same_channel
    if strategy.mutual:
        allowed |= local[:, None] & ctok[None, :] & same_channel
    if strategy.cross_channel:
        cross = ctok[:, None] & ctok[None, :] & ~same_channel
        if strategy.indexed:
            cross &= layout.token_index[:, None] == layout.token_index[None, :]
        allowed |= cross
    dead = local & ~usable
    allowed[dead, :] = False
    allowed[:, dead] = False
    empty = ~allowed.any(axis=1)
    idx = np.where(empty)[0]
    allowed[idx, idx] = True
    bias = np.where(allowed, 0.0, MASKED_BIAS)
    return AttentionMask(allowed=allowed, bias=bias, layout=layout, usable=usable)


def sample_dropout_mask(layout: TokenLayout, ratio: float, rng_seed: int) -> np.ndarray:
    """Training-time random patch drops: floor(ratio * P_i) distinct patches
    per channel, uniformly without replacement; at least one patch survives.
    Returns keep-flags over the full token axis (channel tokens always kept).
    """
    if not 0 <= ratio < 1:
        raise ConfigError(f"dropout ratio must be in [0, 1), got {ratio}")
    keep = np.ones(layout.total, dtype=bool)
    rng = np.random.default_rng(rng_seed)
    for i, count in enumerate(layout.patch_counts):
        n_drop = int(ratio * count)
        if n_drop == 0:
            continue
        chosen = rng.choice(count, size=n_drop, replace=False)
        keep[layout.local_offset(i) + chosen] = False
    return keep


def reference_allowed(
    q: int,
    k: int,
    strategy: MaskStrategy,
    layout: TokenLayout,
    patch_flags,
    dropout_flags=None,
) -> bool:
    """Brute-force pairwise oracle restating the masking rules.

    Implemented token pair by token pair, independently of build_mask's
    vectorized boolean algebra; used only by tests.
    """
    usable = _effective_flags(layout, patch_flags, dropout_flags)

    def base(qi: int, ki: int) -> bool:
        q_ch, q_kind, _ = layout.describe(qi)
        k_ch, k_kind, _ = layout.describe(ki)
        if q_kind == LOCAL:
            if not usable[qi]:
                return False
            if k_kind == LOCAL:
                return q_ch == k_ch and bool(usable[ki])
            return strategy.mutual and q_ch == k_ch
        if k_kind == LOCAL:
            return q_ch == k_ch and bool(usable[ki])
        if q_ch == k_ch:
            return False
        if not strategy.cross_channel:
            return False
        if strategy.indexed and layout.describe(qi)[2] != layout.describe(ki)[2]:
            return False
        return True

    if base(q, k):
        return True
    if q != k:
        return False
    # empty row falls back to self-attention
    return not any(base(q, other) for other in range(layout.total))
