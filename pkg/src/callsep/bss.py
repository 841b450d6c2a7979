"""Four-term decomposition of an estimated source and the SDR built on it.

An estimate splits into the true-source component, interference leaked from
the other references, noise, and algorithmic artifacts:

    estimate = s_target + e_interf + e_noise + e_artif

s_target is the orthogonal projection onto the target reference, e_interf
is the remainder of the projection onto the span of all references, and
e_artif is what lies outside that span. Mixtures in this toolkit are
noiseless sums of the references, so e_noise is identically zero; the term
stays in the data model so the decomposition is represented in full.

This module is deliberately numpy-only: it is the evaluation-side oracle,
independent of the tensor code path used by the training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, RankDeficiencyError, UndefinedReferenceError

EPS = 1e-8
DB_CAP = 60.0


@dataclass
class DecompositionResult:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_noise: np.ndarray
    e_artif: np.ndarray
    sdr_db: float
    si_sdr_db: float
    target_index: int

    def reconstruction(self) -> np.ndarray:
        """Sum of the four terms; equals the zero-meaned estimate."""
        return self.s_target + self.e_interf + self.e_noise + self.e_artif


def _ratio_db(num: float, den: float, eps: float, cap: float) -> float:
    with np.errstate(divide="ignore"):
        value = 10.0 * np.log10((num + 1e-300) / (den + eps * num))
    return float(np.clip(value, -cap, cap))


def bss_decompose(
    estimate,
    references,
    target_index: int = 0,
    eps: float = EPS,
    cap: float = DB_CAP,
) -> DecompositionResult:
    """Decompose an estimate against its references and score it.

    estimate: [T]; references: list/array of [T] signals, linearly
    independent, with references[target_index] the true source. All signals
    are zero-meaned before projection, so the four terms reconstruct the
    zero-meaned estimate exactly.
    """
    est = np.asarray(estimate, dtype=np.float64)
    refs = np.asarray(references, dtype=np.float64)
    if refs.ndim != 2 or est.ndim != 1 or refs.shape[1] != est.shape[0]:
        raise AlignmentError(
            f"expected estimate [T] and references [C, T], got {est.shape} and {refs.shape}"
        )
    if not 0 <= target_index < refs.shape[0]:
        raise ValueError(f"target_index {target_index} out of range for {refs.shape[0]} references")

    est = est - est.mean()
    refs = refs - refs.mean(axis=1, keepdims=True)
    if np.linalg.matrix_rank(refs) < refs.shape[0]:
        raise RankDeficiencyError("references are collinear after zero-meaning")

    own = refs[target_index]
    own_power = float(own @ own)
    if own_power == 0.0:
        raise UndefinedReferenceError("target reference is identically zero after zero-meaning")

    s_target = (est @ own) / own_power * own
    coeffs, *_ = np.linalg.lstsq(refs.T, est, rcond=None)
    proj_all = coeffs @ refs
    e_interf = proj_all - s_target
    e_noise = np.zeros_like(est)
    e_artif = est - proj_all

    target_power = float(s_target @ s_target)
    error = e_interf + e_noise + e_artif
    sdr = _ratio_db(target_power, float(error @ error), eps, cap)
    noise = est - s_target
    si_sdr = _ratio_db(target_power, float(noise @ noise), eps, cap)
    return DecompositionResult(
        s_target=s_target,
        e_interf=e_interf,
        e_noise=e_noise,
        e_artif=e_artif,
        sdr_db=sdr,
        si_sdr_db=si_sdr,
        target_index=target_index,
    )
