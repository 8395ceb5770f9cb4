"""End-to-end streaming enhancement engine.

Frames flow strictly causally: STFT push, stage-1 magnitude estimate
coupled with the noisy phase, optional stage-2 residual refinement,
optional statistical post-processing, inverse overlap-add. The engine
never reads input sample t + 480 before output sample t is final, i.e.
the algorithmic delay is exactly one window plus one hop (30 ms);
per-frame wall-clock cost is metered separately.

Oracle-gain mode replaces the network mask with min(1, |clean|/|noisy|)
computed from an aligned clean reference, which isolates the
post-processor from model quality.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, WavFormatError
from .model import ModelConfig, TscnModel
from .params import load_params
from .postproc import PpConfig, PpState, pp_frame
from .stft import OlaStream, StftConfig, StftStream, WaveBuffer
from .wavio import read_wav, write_wav

_ORACLE_EPS = 1e-12


@dataclass
class EngineConfig:
    """Run configuration; exactly one of weights_path / seed must be set."""

    weights_path: str | None = None
    seed: int | None = None
    stage: int = 2
    pp: bool = True
    oracle_gain: str | None = None
    precision: str = "single"
    pp_cfg: PpConfig = field(default_factory=PpConfig)

    def __post_init__(self):
        if (self.weights_path is None) == (self.seed is None):
            raise ValueError("exactly one of weights_path / seed must be given")
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be single or double, got {self.precision!r}")


@dataclass(frozen=True)
class LatencyReport:
    frames: int
    mean_ms: float
    p95_ms: float
    max_ms: float
    algorithmic_delay_ms: float = 30.0

    def to_json(self) -> str:
        return json.dumps({
            "frames": self.frames,
            "mean_ms": round(self.mean_ms, 4),
            "p95_ms": round(self.p95_ms, 4),
            "max_ms": round(self.max_ms, 4),
            "algorithmic_delay_ms": self.algorithmic_delay_ms,
        })


def oracle_gains(clean_spec: np.ndarray, noisy_spec: np.ndarray) -> np.ndarray:
    """Ideal magnitude-ratio mask min(1, |S|/|X|) per bin and frame."""
    clean_spec, noisy_spec = np.asarray(clean_spec), np.asarray(noisy_spec)
    if clean_spec.shape != noisy_spec.shape:
        raise ValueError(
            f"shape mismatch: clean {clean_spec.shape} vs noisy {noisy_spec.shape}"
        )
    return np.minimum(1.0, np.abs(clean_spec) / (np.abs(noisy_spec) + _ORACLE_EPS))


class Engine:
    """Single-stream enhancement state machine.

    Push raw samples in arbitrary chunk sizes; enhanced samples come back
    as soon as they are final. One engine per stream.
    """

    def __init__(self, cfg: EngineConfig, model_cfg: ModelConfig | None = None,
                 stft_cfg: StftConfig | None = None,
                 clean_ref: WaveBuffer | None = None,
                 collect_spectra: bool = False):
        self.cfg = cfg
        self.stft_cfg = stft_cfg or StftConfig()
        self.model_cfg = model_cfg or ModelConfig()
        self._dtype = np.float32 if cfg.precision == "single" else np.float64

        self._oracle_samples = None
        if cfg.oracle_gain is not None:
            if clean_ref is None:
                raise ValueError("oracle-gain mode needs the clean reference")
            self._oracle_samples = np.asarray(clean_ref.samples)
            self._stream = None
        else:
            if cfg.weights_path is not None:
                store = load_params(cfg.weights_path, dtype=self._dtype)
            else:
                store = None
            model = TscnModel(self.model_cfg, store=store,
                              seed=cfg.seed, dtype=self._dtype)
            self._stream = model.new_stream()
            # throwaway stream warms per-layer gather caches and BLAS paths
            # so first-frame latency is paid at load time, not while streaming
            warmup = model.new_stream()
            warmup.step(np.zeros(self.stft_cfg.n_bins,
                                 dtype=np.complex64 if cfg.precision == "single"
                                 else np.complex128))

        self._stft = StftStream(self.stft_cfg)
        self._clean_stft = StftStream(self.stft_cfg) if self._oracle_samples is not None else None
        self._ola = OlaStream(self.stft_cfg, dtype=np.float64)
        self._pp_state = PpState(self.stft_cfg.n_bins) if cfg.pp else None
        self._pos = 0
        self._frame_idx = 0
        self._times: list[float] = []
        self._spectra: list[np.ndarray] | None = [] if collect_spectra else None

    def push(self, samples: np.ndarray) -> np.ndarray:
        """Feed input samples; return every output sample now final."""
        samples = np.asarray(samples, dtype=self._dtype)
        frames = self._stft.push(samples)
        if self._clean_stft is not None:
            end = self._pos + len(samples)
            if end > len(self._oracle_samples):
                raise ValueError(
                    "clean reference shorter than input "
                    f"({len(self._oracle_samples)} < {end})"
                )
            clean_frames = self._clean_stft.push(
                self._oracle_samples[self._pos : end].astype(self._dtype))
        else:
            clean_frames = [None] * len(frames)
        self._pos += len(samples)
        blocks = [self._process_frame(x, s) for x, s in zip(frames, clean_frames)]
        if not blocks:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate(blocks)

    def flush(self) -> np.ndarray:
        """Tail samples covered only by the final window."""
        return self._ola.flush()

    def _process_frame(self, x: np.ndarray, s: np.ndarray | None) -> np.ndarray:
        t0 = time.perf_counter()
        if self._oracle_samples is not None:
            gain = np.minimum(1.0, np.abs(s) / (np.abs(x) + _ORACLE_EPS))
            enhanced = gain * x
        else:
            ccs, refined = self._stream.step(x)
            enhanced = ccs if self.cfg.stage == 1 else refined
        if self._pp_state is not None:
            enhanced = pp_frame(self._pp_state, enhanced, x, self.cfg.pp_cfg)
        if not np.all(np.isfinite(enhanced)):
            raise NumericalError(
                f"non-finite spectrum in frame {self._frame_idx}", self._frame_idx)
        if self._spectra is not None:
            self._spectra.append(np.abs(enhanced))
        block = self._ola.push(enhanced)
        self._times.append(time.perf_counter() - t0)
        self._frame_idx += 1
        return block

    @property
    def spectra(self) -> np.ndarray:
        if self._spectra is None:
            raise ValueError("engine was not created with collect_spectra=True")
        return np.stack(self._spectra) if self._spectra else np.zeros((0, self.stft_cfg.n_bins))

    def latency_report(self) -> LatencyReport:
        if not self._times:
            return LatencyReport(0, 0.0, 0.0, 0.0, self.stft_cfg.delay_ms)
        ms = np.asarray(self._times) * 1000.0
        return LatencyReport(
            frames=len(ms),
            mean_ms=float(ms.mean()),
            p95_ms=float(np.percentile(ms, 95)),
            max_ms=float(ms.max()),
            algorithmic_delay_ms=self.stft_cfg.delay_ms,
        )


def run_enhance(cfg: EngineConfig, in_path, out_path,
                model_cfg: ModelConfig | None = None,
                stft_cfg: StftConfig | None = None,
                chunk_size: int = 1600,
                dump_spectra_path=None) -> LatencyReport:
    """File-to-file enhancement through the streaming engine.

    Output covers the per-frame span (T-1)*hop + win_len; trailing input
    samples that never fill a window are dropped. BLAS pools are pinned
    to one thread for the duration: the per-frame matrices are small
    enough that threading only adds latency jitter.
    """
    from threadpoolctl import threadpool_limits

    wave = read_wav(in_path)
    stft_cfg = stft_cfg or StftConfig()
    if len(wave.samples) < stft_cfg.win_len:
        raise WavFormatError(
            f"{in_path}: {len(wave.samples)} samples is shorter than one "
            f"analysis window ({stft_cfg.win_len})"
        )
    clean_ref = None
    if cfg.oracle_gain is not None:
        clean_ref = read_wav(cfg.oracle_gain)
        if len(clean_ref.samples) != len(wave.samples):
            raise ValueError(
                f"clean reference length {len(clean_ref.samples)} != "
                f"input length {len(wave.samples)}"
            )
    engine = Engine(cfg, model_cfg, stft_cfg, clean_ref,
                    collect_spectra=dump_spectra_path is not None)
    x = wave.samples
    out_blocks = []
    with threadpool_limits(limits=1, user_api="blas"):
        for start in range(0, len(x), chunk_size):
            out_blocks.append(engine.push(x[start : start + chunk_size]))
        out_blocks.append(engine.flush())
    out = np.concatenate(out_blocks)
    write_wav(out_path, WaveBuffer(out.astype(np.float64), wave.sample_rate))
    if dump_spectra_path is not None:
        dump_spectra(dump_spectra_path, engine.spectra, stft_cfg)
        from .figures import save_spectrogram_png
        png = str(dump_spectra_path)
        png = png[: png.rfind(".")] + ".png" if "." in png else png + ".png"
        save_spectrogram_png(png, engine.spectra, stft_cfg)
    return engine.latency_report()


def dump_spectra(path, spectrogram: np.ndarray,
                 cfg: StftConfig | None = None) -> None:
    """Write magnitudes as CSV: one row per frame, one column per bin,
    values in dB floored at -120, header row carrying bin frequencies."""
    cfg = cfg or StftConfig()
    mag = np.abs(np.asarray(spectrogram))
    if mag.ndim != 2 or mag.shape[1] != cfg.n_bins:
        raise ValueError(f"expected (T, {cfg.n_bins}) spectrogram, got {mag.shape}")
    db = np.maximum(20.0 * np.log10(np.maximum(mag, 1e-30)), -120.0)
    freqs = np.arange(cfg.n_bins) * (cfg.sample_rate / cfg.fft_size)
    with open(path, "w") as f:
        f.write(",".join(f"{fr:g}" for fr in freqs) + "\n")
        for row in db:
            f.write(",".join(f"{v:.6f}" for v in row) + "\n")
