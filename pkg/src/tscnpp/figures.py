"""Matplotlib renderings saved next to the delimited diagnostics."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .stft import StftConfig


def save_spectrogram_png(path, spectrogram: np.ndarray,
                         cfg: StftConfig | None = None,
                         title: str = "enhanced magnitude") -> None:
    """Heatmap of a magnitude (or complex) spectrogram in dB."""
    cfg = cfg or StftConfig()
    mag = np.abs(np.asarray(spectrogram))
    db = np.maximum(20.0 * np.log10(np.maximum(mag, 1e-30)), -120.0)
    fig, ax = plt.subplots(figsize=(8, 4))
    extent = [0.0, max(db.shape[0], 1) * cfg.hop / cfg.sample_rate,
              0.0, cfg.sample_rate / 2.0 / 1000.0]
    im = ax.imshow(db.T, origin="lower", aspect="auto", extent=extent,
                   cmap="magma", vmin=-100, vmax=db.max() if db.size else 0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency [kHz]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curves_png(path, records) -> None:
    """Loss trajectory of the overfit harness, phase boundary marked."""
    steps = [r.step for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, style in (("l_total", "-"), ("l_ri", "--"), ("l_mag", ":"),
                       ("l_cm", "-.")):
        ax.plot(steps, [getattr(r, key) for r in records], style, label=key)
    phase2 = [r.step for r in records if r.phase == 2]
    if phase2:
        ax.axvline(phase2[0], color="gray", lw=0.8)
        ax.text(phase2[0], ax.get_ylim()[1], " joint phase", va="top", fontsize=8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
