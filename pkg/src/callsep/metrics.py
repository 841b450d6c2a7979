"""Scale-invariant SNR and permutation-invariant loss.

Both signals are normalized to zero mean, the estimate is projected onto
the reference, and the ratio of projected power to residual power gives the
metric in dB. The guard inside the log is relative (eps * target power) so
the metric stays exactly scale invariant, and values are capped at +-60 dB
so perfect reconstruction stays finite.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np
import torch

from .errors import AlignmentError, UndefinedReferenceError

EPS = 1e-8
DB_CAP = 60.0


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=torch.float32)


def si_snr(estimate, reference, eps: float = EPS, cap: float = DB_CAP) -> torch.Tensor:
    """Scale-invariant SNR in dB over the last dimension.

    estimate, reference: [..., T] with matching shapes, T >= 2. Returns a
    tensor with the last dimension reduced. Differentiable in both inputs.
    """
    est = _as_tensor(estimate)
    ref = _as_tensor(reference)
    if est.shape != ref.shape:
        raise AlignmentError(f"shape mismatch: {tuple(est.shape)} vs {tuple(ref.shape)}")
    if est.shape[-1] < 2:
        raise AlignmentError("signals must have at least 2 samples")
    est = est - est.mean(dim=-1, keepdim=True)
    ref = ref - ref.mean(dim=-1, keepdim=True)
    ref_power = (ref ** 2).sum(dim=-1, keepdim=True)
    if bool((ref_power == 0).any()):
        raise UndefinedReferenceError("reference is identically zero after zero-meaning")
    target = (est * ref).sum(dim=-1, keepdim=True) / ref_power * ref
    noise = est - target
    target_power = (target ** 2).sum(dim=-1)
    noise_power = (noise ** 2).sum(dim=-1)
    ratio = (target_power + 1e-30) / (noise_power + eps * target_power)
    return torch.clamp(10.0 * torch.log10(ratio), -cap, cap)


def pit_loss(estimates, references) -> tuple[torch.Tensor, tuple[int, ...]]:
    """Best-permutation negative mean SI-SNR for a single utterance.

    estimates, references: [C, T]. Evaluates every source-to-reference
    assignment at the utterance level and returns (loss, permutation) for
    the best one; loss = -mean(SI-SNR) under that assignment. The identity
    permutation wins ties.
    """
    est = _as_tensor(estimates)
    ref = _as_tensor(references)
    if est.dim() != 2 or est.shape != ref.shape:
        raise AlignmentError(f"expected matching [C, T], got {tuple(est.shape)} vs {tuple(ref.shape)}")
    c = est.shape[0]
    best_loss = None
    best_perm: tuple[int, ...] = tuple(range(c))
    for perm in permutations(range(c)):
        scores = torch.stack([si_snr(est[i], ref[j]) for i, j in enumerate(perm)])
        loss = -scores.mean()
        if best_loss is None or bool(loss < best_loss):
            best_loss = loss
            best_perm = perm
    return best_loss, best_perm


def pit_si_snr(estimates, references) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched best-of-two-permutations mean SI-SNR.

    estimates, references: [B, 2, T]. Returns (si_snr [B], swapped [B] bool).
    Specialized to two sources, which keeps the permutation search a single
    comparison.
    """
    est = _as_tensor(estimates)
    ref = _as_tensor(references)
    if est.shape[-2] != 2:
        raise AlignmentError(f"pit_si_snr expects 2 sources, got {est.shape[-2]}")
    pair_00 = si_snr(est[..., 0, :], ref[..., 0, :])
    pair_11 = si_snr(est[..., 1, :], ref[..., 1, :])
    pair_01 = si_snr(est[..., 0, :], ref[..., 1, :])
    pair_10 = si_snr(est[..., 1, :], ref[..., 0, :])
    keep = (pair_00 + pair_11) / 2
    swap = (pair_01 + pair_10) / 2
    swapped = swap > keep
    return torch.where(swapped, swap, keep), swapped


def si_sdr_improvement(mixture, estimates, references) -> torch.Tensor:
    """Best-permutation mean SI-SDR of the estimates minus the mixture baseline.

    mixture: [T]; estimates, references: [2, T]. The baseline scores the
    unprocessed mixture against each reference.
    """
    mix = _as_tensor(mixture)
    ref = _as_tensor(references)
    best, _ = pit_si_snr(_as_tensor(estimates).unsqueeze(0), ref.unsqueeze(0))
    baseline = torch.stack([si_snr(mix, ref[j]) for j in range(ref.shape[0])]).mean()
    return best[0] - baseline
