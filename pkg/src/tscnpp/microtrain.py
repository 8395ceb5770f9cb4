"""Micro-scale overfit harness.

Runs the two-phase curriculum on a tiny model configuration and one fixed
synthetic noisy/clean pair: the magnitude stage is trained alone first,
then both stages jointly. Updates come from simultaneous-perturbation
finite differences with greedy acceptance (a candidate step is kept only
if it does not increase the objective), so trajectories are monotone and
bit-reproducible for a fixed seed. This exercises the loss curriculum at
desk scale; it is not a substitute for full training.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .losses import LossConfig, LossReport, loss_joint
from .model import ModelConfig, TscnModel, couple_phase, mag_phase, micro_config
from .params import ParamStore


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    phase: int
    l_cm: float
    l_ri: float
    l_mag: float
    l_total: float


def synthetic_pair(cfg: ModelConfig | None = None, n_frames: int = 20,
                   seed: int = 7, noise_scale: float = 0.3):
    """Fixed (noisy, clean) complex spectrogram pair for the harness.

    The clean spectrum is a pair of slowly drifting spectral ridges with
    smooth phase; the noisy one adds complex white noise.
    """
    cfg = cfg or micro_config()
    rng = np.random.default_rng(seed)
    T, F = n_frames, cfg.n_bins
    t = np.arange(T)[:, None]
    k = np.arange(F)[None, :]
    mag = np.zeros((T, F))
    for amp, k0, width, drift in ((1.0, F * 0.25, F / 8, 0.05),
                                  (0.6, F * 0.65, F / 10, -0.08)):
        center = k0 + drift * t
        mag += amp * np.exp(-((k - center) ** 2) / (2 * width ** 2))
    phase = np.cumsum(rng.uniform(-0.5, 0.5, size=(T, F)), axis=0)
    clean = mag * np.exp(1j * phase)
    noise = noise_scale * (rng.standard_normal((T, F))
                           + 1j * rng.standard_normal((T, F))) / np.sqrt(2)
    return clean + noise, clean


class _Evaluator:
    """Joint-loss evaluation of the micro model for a given parameter store."""

    def __init__(self, cfg: ModelConfig, store: ParamStore, noisy, clean,
                 loss_cfg: LossConfig):
        self.cfg = cfg
        self.store = store
        self.loss_cfg = loss_cfg
        self.noisy = noisy
        self.clean = clean
        self.mag_x, self.phase_x = mag_phase(noisy)
        self.mag_s = np.abs(clean)

    def joint(self) -> LossReport:
        # Rebind on every call: gated blocks cache stacked weights, so the
        # model must be rebuilt after in-place parameter writes.
        model = TscnModel(self.cfg, store=self.store, dtype=np.float64)
        est_mag = model.cme_forward(self.mag_x)
        ccs = couple_phase(est_mag, self.phase_x)
        refined = ccs + model.csr_forward(ccs, self.noisy)
        return loss_joint(refined, self.clean, est_mag, self.mag_s, self.loss_cfg)


def _flatten(store: ParamStore, names: list[str]) -> np.ndarray:
    return np.concatenate([store[n].ravel() for n in names])


def _write_back(store: ParamStore, names: list[str], vec: np.ndarray):
    pos = 0
    for n in names:
        t = store[n]
        t.flat[:] = vec[pos : pos + t.size]
        pos += t.size


def _spsa_phase(ev: _Evaluator, names: list[str], rng, n_steps: int,
                phase: int, objective, records: list[TrajectoryPoint],
                step0: float, c0: float):
    theta = _flatten(ev.store, names)
    report = ev.joint()
    cur = objective(report)
    if not np.isfinite(cur):
        raise DivergenceError(f"non-finite loss at start of phase {phase}")
    for k in range(n_steps):
        c = c0 / (1.0 + k) ** 0.101
        a = step0 / (1.0 + k) ** 0.602
        delta = rng.integers(0, 2, size=theta.size).astype(np.float64) * 2.0 - 1.0
        _write_back(ev.store, names, theta + c * delta)
        lp = objective(ev.joint())
        _write_back(ev.store, names, theta - c * delta)
        lm = objective(ev.joint())
        if np.isfinite(lp) and np.isfinite(lm):
            ghat = (lp - lm) / (2.0 * c) * delta
            trial = a
            for _ in range(3):
                cand = theta - trial * ghat
                _write_back(ev.store, names, cand)
                rep = ev.joint()
                val = objective(rep)
                if np.isfinite(val) and val <= cur:
                    theta, cur, report = cand, val, rep
                    break
                trial *= 0.25
        _write_back(ev.store, names, theta)
        if not np.isfinite(cur):
            raise DivergenceError(f"loss diverged at step {len(records)}")
        records.append(TrajectoryPoint(len(records), phase, report.l_cm,
                                       report.l_ri, report.l_mag, report.l_total))
    return records


def micro_overfit(cfg: ModelConfig | None = None, pair=None, steps: int = 200,
                  seed: int = 0, loss_cfg: LossConfig | None = None,
                  phase1_frac: float = 0.4):
    """Run the two-phase curriculum; returns (trajectory, trained model).

    Point 0 records the untrained joint loss; the remaining `steps` points
    split between the magnitude-only phase (1) and the joint phase (2).
    """
    cfg = cfg or micro_config()
    loss_cfg = loss_cfg or LossConfig(reduction="mean")
    noisy, clean = pair if pair is not None else synthetic_pair(cfg)
    model = TscnModel(cfg, seed=seed, dtype=np.float64)
    ev = _Evaluator(cfg, model.store, noisy, clean, loss_cfg)
    rng = np.random.default_rng(seed + 1)

    start = ev.joint()
    if not np.isfinite(start.l_total):
        raise DivergenceError("non-finite loss on the synthetic pair")
    records = [TrajectoryPoint(0, 0, start.l_cm, start.l_ri, start.l_mag,
                               start.l_total)]
    n1 = int(steps * phase1_frac)
    cme_names = [n for n in ev.store.names() if n.startswith("cme.")]
    _spsa_phase(ev, cme_names, rng, n1, phase=1,
                objective=lambda r: r.l_cm, records=records,
                step0=0.08, c0=0.02)
    _spsa_phase(ev, ev.store.names(), rng, steps - n1, phase=2,
                objective=lambda r: r.l_total, records=records,
                step0=0.04, c0=0.02)
    return records, TscnModel(cfg, store=ev.store, dtype=np.float64)


def write_trajectory_csv(path, records: list[TrajectoryPoint]):
    """Loss trajectory as CSV with columns step,l_cm,l_ri,l_mag,l_total."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "l_cm", "l_ri", "l_mag", "l_total"])
        for r in records:
            w.writerow([r.step, repr(r.l_cm), repr(r.l_ri), repr(r.l_mag),
                        repr(r.l_total)])
