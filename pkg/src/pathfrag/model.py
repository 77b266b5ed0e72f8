"""Event encoder network: per-variable embeddings, fusion, and a transformer
encoder-decoder with windowed encoder attention, diagonal-masked decoder
attention, and relative positional bias.

The encoder mask lets each event attend to itself and ``window_w`` neighbors
per side; the decoder's self- and cross-attention masks are all-true except
the diagonal, so no information flows straight from an input position to the
same output position. Positions are injected only through a learned per-head
bias over clipped signed distances, which keeps the stack translation
equivariant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .events import TrainingWindow


class MaskError(ValueError):
    pass


class ModelError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32  # per-variable embedding size D
    model_dim: int = 64  # fused dimension d
    num_heads: int = 16
    num_encoder_layers: int = 4
    num_decoder_layers: int = 4
    feedforward_dim: int = 64
    dropout: float = 0.2
    window_w: int = 2
    rel_pos_clip: int = 8

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ModelError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.window_w < 0:
            raise ModelError(f"window_w must be >= 0, got {self.window_w}")
        if not (0 <= self.dropout < 1):
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class AttentionMaskSet:
    """Boolean masks, True = query position i may attend key position j."""

    encoder_self: np.ndarray
    decoder_self: np.ndarray
    decoder_cross: np.ndarray
    padding_mask: np.ndarray  # True = valid position


def build_masks(n: int, valid_len: int, w: int) -> AttentionMaskSet:
    """Windowed encoder mask and all-but-diagonal decoder masks for one window."""
    if not (0 < valid_len <= n):
        raise MaskError(f"need 0 < valid_len <= n, got valid_len={valid_len}, n={n}")
    pos = np.arange(n)
    valid = pos < valid_len
    both_valid = valid[:, None] & valid[None, :]
    dist = np.abs(pos[:, None] - pos[None, :])
    encoder_self = (dist <= w) & both_valid
    off_diag = pos[:, None] != pos[None, :]
    decoder = off_diag & both_valid
    return AttentionMaskSet(
        encoder_self=encoder_self,
        decoder_self=decoder.copy(),
        decoder_cross=decoder.copy(),
        padding_mask=valid,
    )


class RelativeBias(nn.Module):
    """Learned per-head additive attention bias over clipped signed distances."""

    def __init__(self, num_heads: int, clip: int):
        super().__init__()
        self.clip = clip
        self.table = nn.Parameter(torch.zeros(2 * clip + 1, num_heads))
        nn.init.normal_(self.table, std=0.02)

    def forward(self, n_q: int, n_k: int, device) -> torch.Tensor:
        q = torch.arange(n_q, device=device)
        k = torch.arange(n_k, device=device)
        dist = (k[None, :] - q[:, None]).clamp(-self.clip, self.clip) + self.clip
        return self.table[dist].permute(2, 0, 1)  # (heads, n_q, n_k)


class MaskedAttention(nn.Module):
    """Multi-head attention with an explicit boolean mask and relative bias.

    Query rows with no attendable keys produce zero attention output, so the
    residual path alone carries them.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.num_heads = config.num_heads
        self.head_dim = config.model_dim // config.num_heads
        self.q_proj = nn.Linear(config.model_dim, config.model_dim)
        self.k_proj = nn.Linear(config.model_dim, config.model_dim)
        self.v_proj = nn.Linear(config.model_dim, config.model_dim)
        self.out_proj = nn.Linear(config.model_dim, config.model_dim)
        self.bias = RelativeBias(config.num_heads, config.rel_pos_clip)
        self.drop = nn.Dropout(config.dropout)

    def forward(
        self,
        query: torch.Tensor,  # (B, n_q, d)
        memory: torch.Tensor,  # (B, n_k, d)
        mask: torch.Tensor,  # (B, n_q, n_k) bool
        return_weights: bool = False,
    ):
        batch, n_q, _ = query.shape
        n_k = memory.shape[1]

        def split(x):
            return x.view(batch, -1, self.num_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj(query)), split(self.k_proj(memory)), split(self.v_proj(memory))
        logits = q @ k.transpose(-1, -2) / self.head_dim**0.5
        logits = logits + self.bias(n_q, n_k, query.device)

        dead_rows = ~mask.any(dim=-1)  # (B, n_q)
        safe_mask = mask.clone()
        safe_mask[..., 0] |= dead_rows  # keep softmax finite; output zeroed below
        logits = logits.masked_fill(~safe_mask.unsqueeze(1), float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        weights = self.drop(weights)
        out = (weights @ v).transpose(1, 2).reshape(batch, n_q, -1)
        out = out * (~dead_rows).unsqueeze(-1)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


def _feedforward(config: ModelConfig) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(config.model_dim, config.feedforward_dim),
        nn.GELU(),
        nn.Dropout(config.dropout),
        nn.Linear(config.feedforward_dim, config.model_dim),
    )


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attn = MaskedAttention(config)
        self.ff = _feedforward(config)
        self.norm1 = nn.LayerNorm(config.model_dim)
        self.norm2 = nn.LayerNorm(config.model_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, mask))
        x = x + self.drop(self.ff(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.self_attn = MaskedAttention(config)
        self.cross_attn = MaskedAttention(config)
        self.ff = _feedforward(config)
        self.norm1 = nn.LayerNorm(config.model_dim)
        self.norm2 = nn.LayerNorm(config.model_dim)
        self.norm3 = nn.LayerNorm(config.model_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        self_mask: torch.Tensor,
        cross_mask: torch.Tensor,
    ) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.self_attn(h, h, self_mask))
        x = x + self.drop(self.cross_attn(self.norm2(x), memory, cross_mask))
        x = x + self.drop(self.ff(self.norm3(x)))
        return x


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, out_dim))


class EventEncoderModel(nn.Module):
    """Per-variable embeddings, fusion, and the transformer encoder-decoder."""

    def __init__(self, config: ModelConfig, cardinalities: Sequence[int]):
        super().__init__()
        self.config = config
        self.cardinalities = list(cardinalities)
        self.var_maps = nn.ModuleList(
            _mlp(m, config.embed_dim, config.embed_dim) for m in cardinalities
        )
        self.fuse = _mlp(len(cardinalities) * config.embed_dim, config.model_dim, config.model_dim)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(config) for _ in range(config.num_encoder_layers)
        )
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(config) for _ in range(config.num_decoder_layers)
        )
        self.encoder_norm = nn.LayerNorm(config.model_dim)
        self.decoder_norm = nn.LayerNorm(config.model_dim)

    # -- single-window API ---------------------------------------------------

    def embed(self, window: TrainingWindow) -> torch.Tensor:
        blocks = [torch.as_tensor(b, dtype=torch.float32) for b in window.one_hot_blocks]
        return self.embed_batch([b.unsqueeze(0) for b in blocks]).squeeze(0)

    def encode(self, s_vec: torch.Tensor, masks: AttentionMaskSet) -> torch.Tensor:
        mask = torch.as_tensor(masks.encoder_self, dtype=torch.bool).unsqueeze(0)
        return self.encode_batch(s_vec.unsqueeze(0), mask).squeeze(0)

    def decode(
        self, s_vec: torch.Tensor, s_enc: torch.Tensor, masks: AttentionMaskSet
    ) -> torch.Tensor:
        self_mask = torch.as_tensor(masks.decoder_self, dtype=torch.bool).unsqueeze(0)
        cross_mask = torch.as_tensor(masks.decoder_cross, dtype=torch.bool).unsqueeze(0)
        return self.decode_batch(
            s_vec.unsqueeze(0), s_enc.unsqueeze(0), self_mask, cross_mask
        ).squeeze(0)

    def run_window(self, window: TrainingWindow) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        masks = build_masks(window.length, window.valid_len, self.config.window_w)
        s_vec = self.embed(window)
        s_enc = self.encode(s_vec, masks)
        s_dec = self.decode(s_vec, s_enc, masks)
        return s_vec, s_enc, s_dec

    # -- batched API -----------------------------------------------------------

    def embed_batch(self, blocks: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(blocks) != len(self.var_maps):
            raise ModelError(f"got {len(blocks)} one-hot blocks for {len(self.var_maps)} variables")
        for block, m in zip(blocks, self.cardinalities):
            if block.shape[-1] != m:
                raise ModelError(f"one-hot block width {block.shape[-1]} != cardinality {m}")
        parts = [f(b) for f, b in zip(self.var_maps, blocks)]
        return self.fuse(torch.cat(parts, dim=-1))

    def encode_batch(self, s_vec: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = s_vec
        for layer in self.encoder_layers:
            x = layer(x, mask)
        return self.encoder_norm(x)

    def decode_batch(
        self,
        s_vec: torch.Tensor,
        s_enc: torch.Tensor,
        self_mask: torch.Tensor,
        cross_mask: torch.Tensor,
    ) -> torch.Tensor:
        x = s_vec
        for layer in self.decoder_layers:
            x = layer(x, s_enc, self_mask, cross_mask)
        return self.decoder_norm(x)

    def forward(
        self, blocks: Sequence[torch.Tensor], valid_lens: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        enc_mask, dec_mask = batched_masks(
            blocks[0].shape[1], valid_lens, self.config.window_w
        )
        s_vec = self.embed_batch(blocks)
        s_enc = self.encode_batch(s_vec, enc_mask)
        s_dec = self.decode_batch(s_vec, s_enc, dec_mask, dec_mask)
        return s_vec, s_enc, s_dec


def batched_masks(
    n: int, valid_lens: torch.Tensor, w: int
) -> tuple[torch.Tensor, torch.Tensor]:
    pos = torch.arange(n, device=valid_lens.device)
    valid = pos.unsqueeze(0) < valid_lens.unsqueeze(1)  # (B, n)
    both = valid.unsqueeze(2) & valid.unsqueeze(1)  # (B, n, n)
    dist = (pos.unsqueeze(0) - pos.unsqueeze(1)).abs()
    enc = (dist <= w).unsqueeze(0) & both
    dec = (dist > 0).unsqueeze(0) & both
    return enc, dec


# ---------------------------------------------------------------------------
# Checkpoints: torch container with an embedded JSON header.

def save_checkpoint(
    model: EventEncoderModel,
    path: Path | str,
    schema_fingerprint: str,
    extra: Optional[dict] = None,
) -> None:
    header = {
        "model_config": asdict(model.config),
        "cardinalities": model.cardinalities,
        "schema_fingerprint": schema_fingerprint,
    }
    if extra:
        header.update(extra)
    torch.save(
        {"header_json": json.dumps(header), "state_dict": model.state_dict()}, path
    )


def load_checkpoint(
    path: Path | str, expected_fingerprint: Optional[str] = None
) -> tuple[EventEncoderModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    header = json.loads(payload["header_json"])
    if (
        expected_fingerprint is not None
        and header["schema_fingerprint"] != expected_fingerprint
    ):
        raise CheckpointError(
            "checkpoint schema fingerprint does not match the cohort "
            f"({header['schema_fingerprint'][:12]}... vs {expected_fingerprint[:12]}...)"
        )
    model = EventEncoderModel(ModelConfig(**header["model_config"]), header["cardinalities"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, header
