"""VQ prosody codec: low-band extraction, latent encoding, quantization.

The quantizer follows the straight-through VQ recipe: nearest-entry lookup
(ties break to the lowest index), a stop-gradient codebook term plus a
commitment term, and identity gradient from quantized output back to the
encoder latents.

Codebook lifecycle: during warmup the quantizer is bypassed while latents are
reservoir-sampled; finalization runs seeded k-means over the reservoir and
marks the codebook usable. Entries that stay unused for a full epoch can be
reseeded from recent latents to keep perplexity up on tiny corpora.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .checkpoints import load_arrays, save_arrays
from .data_model import MelSpectrogram, ProsodyCodeSequence
from .errors import ContractViolation

DEFAULT_BETA_COMMIT = 0.25


def extract_low_band(mel: MelSpectrogram, cut: int) -> MelSpectrogram:
    """Rows [0, cut) of the mel, frames untouched."""
    if not 0 < cut <= mel.n_mels:
        raise ContractViolation(f"cut {cut} outside (0, n_mels={mel.n_mels}]")
    return MelSpectrogram(
        values=mel.values[:cut, :].copy(), n_mels=cut, frame_hop_s=mel.frame_hop_s
    )


class ProsodyEncoder(nn.Module):
    """Strided-conv encoder: (cut, T) mel band -> (ceil(T / rate), d_code)."""

    def __init__(self, in_rows: int, d_code: int, downsample_rate: int):
        super().__init__()
        if downsample_rate < 1:
            raise ContractViolation(f"downsample_rate must be >= 1, got {downsample_rate}")
        self.in_rows = in_rows
        self.downsample_rate = downsample_rate
        self.down = nn.Conv1d(in_rows, d_code, kernel_size=downsample_rate, stride=downsample_rate)
        self.mix = nn.Conv1d(d_code, d_code, kernel_size=3, padding=1)

    def forward(self, low_band: torch.Tensor) -> torch.Tensor:
        if low_band.ndim != 2 or low_band.shape[0] != self.in_rows:
            raise ContractViolation(
                f"expected ({self.in_rows}, T) low band, got {tuple(low_band.shape)}"
            )
        x = low_band.unsqueeze(0)
        rate = self.downsample_rate
        pad = (-x.shape[-1]) % rate
        if pad:
            x = F.pad(x, (0, pad), mode="replicate")
        h = self.down(x)
        h = self.mix(F.gelu(h))
        return h.squeeze(0).transpose(0, 1)


def encode_prosody(low_band: MelSpectrogram, encoder: ProsodyEncoder) -> torch.Tensor:
    """Latent sequence (T', d_code) for a low-band mel; deterministic."""
    with torch.no_grad():
        values = torch.from_numpy(np.array(low_band.values, copy=True))
        return encoder(values.to(next(encoder.parameters()).dtype))


class ProsodyCodebook(nn.Module):
    """Learned codebook entries plus usage counters and a finalized flag."""

    def __init__(self, entries: torch.Tensor, finalized: bool = False):
        super().__init__()
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise ContractViolation(f"entries must be (K, d), got {tuple(entries.shape)}")
        if not torch.isfinite(entries).all():
            raise ContractViolation("codebook entries contain non-finite values")
        self.entries = nn.Parameter(entries.clone())
        self.register_buffer("usage_counts", torch.zeros(entries.shape[0]))
        self.finalized = finalized

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def d_code(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_entries(cls, entries, finalized: bool = True) -> "ProsodyCodebook":
        return cls(torch.as_tensor(entries, dtype=torch.float32), finalized=finalized)


@dataclass
class QuantizeResult:
    codes: ProsodyCodeSequence
    quantized: torch.Tensor
    vq_loss: torch.Tensor


def quantize(
    latents: torch.Tensor,
    codebook: ProsodyCodebook,
    beta_commit: float = DEFAULT_BETA_COMMIT,
    update_usage: bool = False,
) -> QuantizeResult:
    """Nearest-entry quantization with straight-through gradients.

    codes[t] = argmin_k ||latents[t] - entries[k]||  (ties -> lowest index)
    vq_loss  = mean_t ||sg(z_t) - e_t||^2 + beta * mean_t ||z_t - sg(e_t)||^2
    where the squared norm sums over the code dimension.
    """
    if latents.ndim != 2 or latents.shape[0] < 1:
        raise ContractViolation(f"latents must be (T', d), got {tuple(latents.shape)}")
    if latents.shape[1] != codebook.d_code:
        raise ContractViolation(
            f"latent dim {latents.shape[1]} != codebook dim {codebook.d_code}"
        )
    if not codebook.finalized:
        raise ContractViolation("codebook not finalized (warmup bypass still active)")

    entries = codebook.entries
    dist = (
        latents.pow(2).sum(1, keepdim=True)
        - 2.0 * latents @ entries.t()
        + entries.pow(2).sum(1)
    )
    idx = torch.argmin(dist, dim=1)
    chosen = entries[idx]

    codebook_term = (latents.detach() - chosen).pow(2).sum(1).mean()
    commit_term = (latents - chosen.detach()).pow(2).sum(1).mean()
    vq_loss = codebook_term + beta_commit * commit_term

    # Value is exactly the chosen entry (bitwise); gradient w.r.t. latents is
    # the identity because (latents - latents.detach()) is identically zero.
    quantized = chosen.detach() + (latents - latents.detach())
    if update_usage:
        with torch.no_grad():
            codebook.usage_counts.index_add_(
                0, idx, torch.ones_like(idx, dtype=codebook.usage_counts.dtype)
            )
    codes = ProsodyCodeSequence(tuple(int(i) for i in idx), codebook.size)
    return QuantizeResult(codes=codes, quantized=quantized, vq_loss=vq_loss)


def lookup(codes: ProsodyCodeSequence, codebook: ProsodyCodebook) -> torch.Tensor:
    """Row gather: lookup(quantize(x).codes) == quantize(x).quantized."""
    if len(codes) < 1:
        raise ContractViolation("empty code sequence")
    if codes.codebook_size != codebook.size:
        raise ContractViolation(
            f"codes expect codebook of size {codes.codebook_size}, have {codebook.size}"
        )
    idx = torch.tensor(codes.codes, dtype=torch.long)
    return codebook.entries[idx]


# ---------------------------------------------------------------------------
# Warmup reservoir + k-means finalization
# ---------------------------------------------------------------------------


class WarmupState:
    """Reservoir sample (algorithm R) of latent vectors seen during warmup."""

    def __init__(self, codebook_size: int, d_code: int, seed: int, capacity: int = 4096):
        if capacity < codebook_size:
            capacity = codebook_size
        self.codebook_size = codebook_size
        self.d_code = d_code
        self.capacity = capacity
        self.rng = np.random.default_rng([seed, 808])
        self.buffer = np.zeros((0, d_code), dtype=np.float64)
        self.n_seen = 0
        self.finalized = False


def warmup_accumulate(latents: torch.Tensor, state: WarmupState) -> WarmupState:
    if state.finalized:
        raise ContractViolation("warmup already finalized")
    if latents.ndim != 2 or latents.shape[1] != state.d_code:
        raise ContractViolation(f"latents must be (T', {state.d_code})")
    vectors = latents.detach().cpu().numpy().astype(np.float64)
    for v in vectors:
        if state.buffer.shape[0] < state.capacity:
            state.buffer = np.concatenate([state.buffer, v[None, :]], axis=0)
        else:
            j = int(state.rng.integers(state.n_seen + 1))
            if j < state.capacity:
                state.buffer[j] = v
        state.n_seen += 1
    return state


def kmeans_fit(
    points: np.ndarray, k: int, rng: np.random.Generator, n_iters: int = 50
) -> np.ndarray:
    """Seeded k-means++ / Lloyd. Empty clusters reseed to the farthest point."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest / total))
        centers[i] = points[pick]
        closest = np.minimum(closest, np.sum((points - centers[i]) ** 2, axis=1))

    assign = np.full(n, -1)
    for _ in range(n_iters):
        dists = (
            np.sum(points**2, axis=1)[:, None]
            - 2.0 * points @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        new_assign = np.argmin(dists, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
            else:
                worst = int(np.argmax(np.min(dists, axis=1)))
                centers[c] = points[worst]
    return centers


def finalize_codebook(state: WarmupState, n_iters: int = 50) -> ProsodyCodebook:
    """k-means over the reservoir; marks the warmup state consumed."""
    if state.finalized:
        raise ContractViolation("finalize called twice on the same warmup state")
    if state.buffer.shape[0] == 0:
        raise ContractViolation("cannot finalize an empty reservoir")
    points = state.buffer
    k = state.codebook_size
    if points.shape[0] < k:
        # Fewer observations than entries: tile the data with seeded jitter so
        # every entry still derives from data statistics.
        reps = int(np.ceil(k / points.shape[0]))
        tiled = np.tile(points, (reps, 1))[:k]
        scale = points.std(axis=0, keepdims=True)
        jitter = state.rng.normal(0.0, 1e-3, tiled.shape) * np.maximum(scale, 1e-6)
        entries = tiled + jitter
        entries[: points.shape[0]] = points
    else:
        entries = kmeans_fit(points, k, state.rng, n_iters=n_iters)
    state.finalized = True
    return ProsodyCodebook(torch.tensor(entries, dtype=torch.float32), finalized=True)


def reseed_dead_codes(
    codebook: ProsodyCodebook, recent_latents: torch.Tensor, rng: np.random.Generator
) -> int:
    """Replace entries with zero usage by random recent latents; resets counts."""
    if recent_latents.ndim != 2 or recent_latents.shape[0] < 1:
        raise ContractViolation("recent_latents must be a non-empty (N, d) matrix")
    dead = (codebook.usage_counts == 0).nonzero(as_tuple=True)[0]
    with torch.no_grad():
        for idx in dead.tolist():
            pick = int(rng.integers(recent_latents.shape[0]))
            codebook.entries[idx] = recent_latents[pick].detach()
        codebook.usage_counts.zero_()
    return len(dead.tolist())


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_codebook(ckpt_dir: str | Path, codebook: ProsodyCodebook, meta: dict[str, Any]) -> Path:
    payload = dict(meta)
    payload.update(
        {"size": codebook.size, "dim": codebook.d_code, "finalized": codebook.finalized}
    )
    return save_arrays(
        ckpt_dir,
        {"entries": codebook.entries, "usage_counts": codebook.usage_counts},
        payload,
    )


def load_codebook(ckpt_dir: str | Path) -> tuple[ProsodyCodebook, dict[str, Any]]:
    arrays, meta = load_arrays(ckpt_dir)
    codebook = ProsodyCodebook(
        torch.from_numpy(arrays["entries"].copy()), finalized=bool(meta["finalized"])
    )
    with torch.no_grad():
        codebook.usage_counts.copy_(torch.from_numpy(arrays["usage_counts"].copy()).reshape(-1))
    return codebook, meta
