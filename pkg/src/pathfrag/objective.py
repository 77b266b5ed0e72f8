"""Contrastive segmentation objective and the MSE reconstruction ablation.

The objective splits a window into two contiguous groups at the largest
adjacent-representation distance: closeness pulls the remaining adjacent
distances down, separation pushes the split distance up, and consistency
regularizes the spread of the non-split distances. The combined training
loss is closeness(decoder) + separation(decoder) + consistency(encoder).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class LossUndefinedError(ValueError):
    """Raised for windows too short to define adjacent distances."""


@dataclass(frozen=True)
class LossConfig:
    zeta: float = 10.0
    eta: float = 20.0
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.zeta <= 0 or self.eta <= 0 or self.epsilon <= 0:
            raise ValueError("zeta, eta, epsilon must all be positive")


@dataclass
class DistanceProfile:
    dists: torch.Tensor  # (valid_len - 1,)
    argmax_index: int

    @property
    def dist_max(self) -> torch.Tensor:
        return self.dists[self.argmax_index]

    @property
    def dist_mean(self) -> torch.Tensor:
        # Sum excludes the argmax term but divides by the full count.
        total = self.dists.sum() - self.dist_max
        return total / self.dists.numel()

    @property
    def non_argmax(self) -> torch.Tensor:
        keep = torch.ones(self.dists.numel(), dtype=torch.bool)
        keep[self.argmax_index] = False
        return self.dists[keep]


@dataclass
class LossComponents:
    clo: torch.Tensor
    sep: torch.Tensor
    con: torch.Tensor


def _smooth_norm(diff: torch.Tensor) -> torch.Tensor:
    """Euclidean norm over the last dim with a smoothing term inside the sqrt.

    The plain norm has an undefined gradient at zero, which identical adjacent
    representations (e.g. repeated events) hit exactly; the 1e-14 offset keeps
    values within 1e-7 of exact while making the gradient zero there.
    """
    return torch.sqrt((diff * diff).sum(dim=-1) + 1e-14)


def adjacent_distances(s_rep: torch.Tensor, valid_len: int) -> DistanceProfile:
    """Euclidean distances between adjacent valid rows; argmax ties -> lowest index."""
    s_rep = torch.as_tensor(s_rep)
    if valid_len < 2:
        raise LossUndefinedError(f"need valid_len >= 2, got {valid_len}")
    rows = s_rep[:valid_len]
    dists = _smooth_norm(rows[1:] - rows[:-1])
    return DistanceProfile(dists=dists, argmax_index=int(torch.argmax(dists)))


def stlo_components(profile: DistanceProfile, config: LossConfig = LossConfig()) -> LossComponents:
    d_mean, d_max = profile.dist_mean, profile.dist_max
    clo = d_mean / torch.clamp(d_max + config.epsilon, max=config.zeta)
    sep = 1 - torch.tanh((d_max - d_mean) / config.eta)
    rest = profile.non_argmax
    if rest.numel() < 2:
        con = torch.zeros((), dtype=profile.dists.dtype)
    else:
        # population std with the same smoothing as _smooth_norm: a zero
        # variance (all rest distances equal) must not NaN the gradient
        var = ((rest - rest.mean()) ** 2).mean()
        con = torch.sqrt(var + 1e-14)
    return LossComponents(clo=clo, sep=sep, con=con)


def stlo_loss(
    s_enc: torch.Tensor,
    s_dec: torch.Tensor,
    valid_len: int,
    config: LossConfig = LossConfig(),
) -> torch.Tensor:
    """Combined loss for one window: clo(dec) + sep(dec) + con(enc)."""
    dec = stlo_components(adjacent_distances(s_dec, valid_len), config)
    enc = stlo_components(adjacent_distances(s_enc, valid_len), config)
    return dec.clo + dec.sep + enc.con


def _batched_stats(s_rep: torch.Tensor, valid_lens: torch.Tensor):
    """dist_mean, dist_max, con for each window in a right-padded batch."""
    batch, n, _ = s_rep.shape
    dists = _smooth_norm(s_rep[:, 1:] - s_rep[:, :-1])  # (B, n-1)
    idx = torch.arange(n - 1, device=s_rep.device).expand(batch, -1)
    counts = (valid_lens - 1).clamp(min=1)
    valid = idx < counts.unsqueeze(1)
    neg_inf = torch.finfo(dists.dtype).min
    masked = torch.where(valid, dists, torch.full_like(dists, neg_inf))
    d_max, argmax = masked.max(dim=1)
    is_max = torch.zeros_like(valid)
    is_max[torch.arange(batch), argmax] = True
    rest_mask = valid & ~is_max
    rest_sum = torch.where(rest_mask, dists, torch.zeros_like(dists)).sum(dim=1)
    d_mean = rest_sum / counts
    rest_n = rest_mask.sum(dim=1).clamp(min=1)
    rest_mean = rest_sum / rest_n
    sq_dev = torch.where(
        rest_mask, (dists - rest_mean.unsqueeze(1)) ** 2, torch.zeros_like(dists)
    ).sum(dim=1)
    # Guard sqrt(0): its infinite slope would leak NaN through where() backward.
    has_spread = rest_mask.sum(dim=1) >= 2
    safe_var = torch.where(has_spread, sq_dev / rest_n, torch.ones_like(sq_dev))
    con = torch.where(
        has_spread, torch.sqrt(safe_var + 1e-14), torch.zeros_like(d_mean)
    )
    return d_mean, d_max, con


def stlo_loss_batch(
    s_enc: torch.Tensor,
    s_dec: torch.Tensor,
    valid_lens: torch.Tensor,
    config: LossConfig = LossConfig(),
) -> tuple[torch.Tensor, dict[str, float]]:
    """Batch-mean loss over right-padded windows; all valid_lens must be >= 2."""
    dec_mean, dec_max, _ = _batched_stats(s_dec, valid_lens)
    _, _, enc_con = _batched_stats(s_enc, valid_lens)
    clo = dec_mean / torch.clamp(dec_max + config.epsilon, max=config.zeta)
    sep = 1 - torch.tanh((dec_max - dec_mean) / config.eta)
    loss = (clo + sep + enc_con).mean()
    parts = {
        "clo": float(clo.detach().mean()),
        "sep": float(sep.detach().mean()),
        "con": float(enc_con.detach().mean()),
    }
    return loss, parts


def mse_objective(s_dec: torch.Tensor, s_vec: torch.Tensor, valid_len: int) -> torch.Tensor:
    """Reconstruction MSE over valid rows only."""
    if s_dec.shape != s_vec.shape:
        raise ValueError(f"shape mismatch: {tuple(s_dec.shape)} vs {tuple(s_vec.shape)}")
    return ((s_dec[:valid_len] - s_vec[:valid_len]) ** 2).mean()


def mse_objective_batch(
    s_dec: torch.Tensor, s_vec: torch.Tensor, valid_lens: torch.Tensor
) -> torch.Tensor:
    batch, n, d = s_dec.shape
    idx = torch.arange(n, device=s_dec.device).expand(batch, -1)
    mask = (idx < valid_lens.unsqueeze(1)).unsqueeze(-1).to(s_dec.dtype)
    per_window = ((s_dec - s_vec) ** 2 * mask).sum(dim=(1, 2)) / (
        mask.sum(dim=(1, 2)).clamp(min=1) * d
    )
    return per_window.mean()
