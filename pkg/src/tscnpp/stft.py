"""Short-time Fourier analysis/synthesis frontend.

Framing follows the engine's fixed setup: 20 ms periodic Hann window,
50% overlap, 320-point FFT at 16 kHz, i.e. 161 frequency bins and an
algorithmic delay of window + hop = 30 ms.

FFT normalization convention: unnormalized forward transform, 1/N on the
inverse (numpy's default). Parseval then reads

    sum_k weight_k * |X_k|^2 == N * sum_n (w_n * x_n)^2

with weight 1 for the DC and Nyquist bins and 2 elsewhere (one-sided
spectrum of a real signal).

Synthesis reuses the analysis window and normalizes every output sample
by the accumulated squared-window sum, so reconstruction is exact on the
interior regardless of the window's own overlap-add behaviour. The
first/last partial windows carry zero-padded context and are outside the
reconstruction guarantee.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import WavRateError

SAMPLE_RATE = 16000

# Guards the per-sample window-sum division on edge samples where the
# accumulated Hann^2 mass is (near) zero.
_WSUM_FLOOR = 1e-8


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann taper 0.5 - 0.5*cos(2*pi*k/n), k = 0..n-1."""
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


@dataclass(frozen=True)
class WaveBuffer:
    """Mono waveform with its sample rate.

    Samples are nominally in [-1, 1]; mixtures may exceed that and are
    saturated only on 16-bit output. All samples must be finite.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis framing parameters.

    win_len must be twice hop (50% overlap) and fft_size must cover the
    window. Defaults give the 320/160/320 setup used everywhere.
    """

    win_len: int = 320
    hop: int = 160
    fft_size: int = 320
    sample_rate: int = SAMPLE_RATE
    window: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.hop * 2 != self.win_len:
            raise ValueError(f"hop must be win_len/2, got {self.hop} vs {self.win_len}")
        if self.fft_size < self.win_len:
            raise ValueError("fft_size must be >= win_len")
        object.__setattr__(self, "window", hann_periodic(self.win_len))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def delay_samples(self) -> int:
        """Algorithmic delay: one window plus one hop."""
        return self.win_len + self.hop

    @property
    def delay_ms(self) -> float:
        return 1000.0 * self.delay_samples / self.sample_rate

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.win_len:
            return 0
        return (n_samples - self.win_len) // self.hop + 1


def _check_wave(wave: WaveBuffer, cfg: StftConfig):
    if wave.sample_rate != cfg.sample_rate:
        raise WavRateError(
            f"expected {cfg.sample_rate} Hz input, got {wave.sample_rate} Hz"
        )
    if len(wave.samples) < cfg.win_len:
        raise ValueError(
            f"waveform too short: {len(wave.samples)} samples < one window "
            f"({cfg.win_len})"
        )


def analyze(wave: WaveBuffer, cfg: StftConfig | None = None) -> np.ndarray:
    """Complex spectrogram of `wave`, shape (T, n_bins).

    Frame t is the unnormalized FFT of window * samples[t*hop : t*hop+win_len],
    so it depends only on samples strictly before t*hop + win_len. No padding
    is applied; trailing samples that do not fill a window are dropped.
    """
    cfg = cfg or StftConfig()
    _check_wave(wave, cfg)
    x = np.asarray(wave.samples)
    n_frames = cfg.num_frames(len(x))
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * cfg.window[None, :].astype(x.dtype, copy=False)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def synthesize(spec: np.ndarray, cfg: StftConfig | None = None) -> WaveBuffer:
    """Overlap-add inverse of `analyze`.

    Per-sample normalization divides by the accumulated squared analysis
    window, which makes analyze->synthesize exact on the interior. Output
    spans (T-1)*hop + win_len samples.
    """
    cfg = cfg or StftConfig()
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.n_bins:
        raise ValueError(
            f"expected spectrogram with {cfg.n_bins} bins, got shape {spec.shape}"
        )
    n_frames = spec.shape[0]
    out_len = (n_frames - 1) * cfg.hop + cfg.win_len
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, : cfg.win_len]
    y = np.zeros(out_len, dtype=frames.real.dtype)
    wsum = np.zeros(out_len, dtype=y.dtype)
    w = cfg.window.astype(y.dtype, copy=False)
    w2 = w * w
    for t in range(n_frames):
        start = t * cfg.hop
        y[start : start + cfg.win_len] += frames[t] * w
        wsum[start : start + cfg.win_len] += w2
    y /= np.maximum(wsum, _WSUM_FLOOR)
    return WaveBuffer(y, cfg.sample_rate)


def mag_phase(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and phase of a complex spectrogram; zero bins get phase 0."""
    spec = np.asarray(spec)
    mag = np.abs(spec)
    phase = np.arctan2(spec.imag, spec.real)
    return mag, phase


def couple_phase(mag: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Recombine a magnitude estimate with a phase field: mag * e^{j*phase}."""
    mag = np.asarray(mag)
    phase = np.asarray(phase)
    if mag.shape != phase.shape:
        raise ValueError(f"shape mismatch: mag {mag.shape} vs phase {phase.shape}")
    return mag * np.cos(phase) + 1j * (mag * np.sin(phase))


class StftStream:
    """Causal streaming analyzer: push samples, collect finished frames.

    A frame is emitted exactly when win_len samples past the next hop
    boundary are available; the emitted rows are bit-identical to the
    corresponding rows of batch `analyze`. One instance per stream.
    """

    def __init__(self, cfg: StftConfig | None = None):
        self.cfg = cfg or StftConfig()
        self._buf: np.ndarray | None = None
        self._frames_out = 0

    @property
    def frames_emitted(self) -> int:
        return self._frames_out

    def push(self, samples: np.ndarray) -> list[np.ndarray]:
        """Append samples; return the list of newly completed frames."""
        samples = np.asarray(samples)
        if self._buf is None:
            self._buf = samples.copy()
        elif samples.size:
            self._buf = np.concatenate([self._buf, samples])
        cfg = self.cfg
        out = []
        window = cfg.window.astype(self._buf.dtype, copy=False)
        while self._buf.size >= cfg.win_len:
            frame = np.fft.rfft(self._buf[: cfg.win_len] * window, n=cfg.fft_size)
            out.append(frame)
            self._buf = self._buf[cfg.hop :]
            self._frames_out += 1
        return out


class OlaStream:
    """Streaming overlap-add synthesizer, the inverse of `StftStream`.

    `push(spec_frame)` returns the hop-sized block of output samples that
    became final with that frame; `flush()` returns the tail covered only
    by the last window.
    """

    def __init__(self, cfg: StftConfig | None = None, dtype=np.float64):
        self.cfg = cfg or StftConfig()
        self._acc = np.zeros(self.cfg.win_len, dtype=dtype)
        self._wsum = np.zeros(self.cfg.win_len, dtype=dtype)
        self._w = self.cfg.window.astype(dtype)
        self._w2 = self._w * self._w
        self._frames_in = 0

    def push(self, spec_frame: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        frame = np.fft.irfft(spec_frame, n=cfg.fft_size)[: cfg.win_len]
        self._acc += frame * self._w
        self._wsum += self._w2
        self._frames_in += 1
        block = self._acc[: cfg.hop] / np.maximum(self._wsum[: cfg.hop], _WSUM_FLOOR)
        self._acc = np.concatenate([self._acc[cfg.hop :], np.zeros(cfg.hop, dtype=self._acc.dtype)])
        self._wsum = np.concatenate([self._wsum[cfg.hop :], np.zeros(cfg.hop, dtype=self._wsum.dtype)])
        return block

    def flush(self) -> np.ndarray:
        """Remaining half-window of samples after the final frame."""
        if self._frames_in == 0:
            return np.zeros(0, dtype=self._acc.dtype)
        tail = self._acc[: self.cfg.hop] / np.maximum(self._wsum[: self.cfg.hop], _WSUM_FLOOR)
        self._acc[:] = 0.0
        self._wsum[:] = 0.0
        return tail
