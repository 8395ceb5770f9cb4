"""Training objectives for the two-stage network and their gradients.

Stage 1 trains on the squared Frobenius distance between estimated and
clean magnitudes; joint training adds the real/imaginary and magnitude
distances of the refined spectrum, with the stage-1 term weighted by 0.1:

    total = ri + mag + 0.1 * cm

Frobenius norms are plain sums by default; a mean reduction (per-element)
is available for scale-stable micro-training and is recorded in the
report. Loss values use exact magnitudes; only the magnitude-loss
gradient smooths the square root with mag_epsilon so it stays finite at
zero bins.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    lambda_cm: float = 0.1
    mag_epsilon: float = 1e-8
    reduction: str = "sum"

    def __post_init__(self):
        if self.lambda_cm < 0:
            raise ValueError("lambda_cm must be >= 0")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass(frozen=True)
class LossReport:
    l_cm: float
    l_ri: float
    l_mag: float
    l_total: float
    reduction: str = "sum"


@dataclass(frozen=True)
class LossGradients:
    """d(loss)/d(estimate); real part is d/d(est_r), imag part d/d(est_i)."""

    ri: np.ndarray
    mag: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.ri + self.mag


_DEFAULT = LossConfig()


def _check_match(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def _scale(arr: np.ndarray, cfg: LossConfig) -> float:
    return 1.0 / arr.size if cfg.reduction == "mean" else 1.0


def loss_cm(est_mag: np.ndarray, clean_mag: np.ndarray,
            cfg: LossConfig = _DEFAULT) -> float:
    """Squared Frobenius distance between magnitude spectrograms."""
    est_mag, clean_mag = np.asarray(est_mag), np.asarray(clean_mag)
    _check_match(est_mag, clean_mag, "magnitude")
    d = (est_mag - clean_mag).astype(np.float64, copy=False)
    return float(np.sum(d * d) * _scale(d, cfg))


def loss_ri(est: np.ndarray, clean: np.ndarray, cfg: LossConfig = _DEFAULT) -> float:
    """Squared Frobenius distance of real and imaginary parts."""
    est, clean = np.asarray(est), np.asarray(clean)
    _check_match(est, clean, "spectrum")
    dr = (est.real - clean.real).astype(np.float64, copy=False)
    di = (est.imag - clean.imag).astype(np.float64, copy=False)
    return float((np.sum(dr * dr) + np.sum(di * di)) * _scale(dr, cfg))


def loss_mag(est: np.ndarray, clean: np.ndarray, cfg: LossConfig = _DEFAULT) -> float:
    """Squared Frobenius distance of spectral magnitudes.

    Invariant under any per-bin phase rotation of either argument.
    """
    est, clean = np.asarray(est), np.asarray(clean)
    _check_match(est, clean, "spectrum")
    d = np.abs(est).astype(np.float64) - np.abs(clean).astype(np.float64)
    return float(np.sum(d * d) * _scale(d, cfg))


def loss_joint(est: np.ndarray, clean: np.ndarray, est_mag_stage1: np.ndarray,
               clean_mag: np.ndarray, cfg: LossConfig = _DEFAULT) -> LossReport:
    """Joint objective: ri + mag on the refined spectrum plus the weighted
    stage-1 magnitude term."""
    l_cm = loss_cm(est_mag_stage1, clean_mag, cfg)
    l_ri = loss_ri(est, clean, cfg)
    l_mag = loss_mag(est, clean, cfg)
    return LossReport(l_cm, l_ri, l_mag,
                      l_ri + l_mag + cfg.lambda_cm * l_cm, cfg.reduction)


def loss_cm_gradient(est_mag: np.ndarray, clean_mag: np.ndarray,
                     cfg: LossConfig = _DEFAULT) -> np.ndarray:
    est_mag, clean_mag = np.asarray(est_mag), np.asarray(clean_mag)
    _check_match(est_mag, clean_mag, "magnitude")
    d = (est_mag - clean_mag).astype(np.float64, copy=False)
    return 2.0 * d * _scale(d, cfg)


def loss_gradients(est: np.ndarray, clean: np.ndarray,
                   cfg: LossConfig = _DEFAULT) -> LossGradients:
    """Analytic gradients of loss_ri and loss_mag with respect to `est`.

    The magnitude gradient evaluates |est| as sqrt(r^2 + i^2 + mag_epsilon),
    so it is zero (not undefined) at exactly-zero bins.
    """
    est, clean = np.asarray(est), np.asarray(clean)
    _check_match(est, clean, "spectrum")
    er = est.real.astype(np.float64)
    ei = est.imag.astype(np.float64)
    s = _scale(er, cfg)

    g_ri = (2.0 * (er - clean.real) + 2.0j * (ei - clean.imag)) * s

    m_est = np.sqrt(er * er + ei * ei + cfg.mag_epsilon)
    m_clean = np.abs(clean).astype(np.float64)
    coeff = 2.0 * (m_est - m_clean) / m_est * s
    g_mag = coeff * er + 1.0j * (coeff * ei)
    return LossGradients(ri=g_ri, mag=g_mag)
