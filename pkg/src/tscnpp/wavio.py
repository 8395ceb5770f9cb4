"""Minimal RIFF/WAVE reader and writer for 16-bit PCM mono at 16 kHz.

Hand-rolled so malformed containers, wrong rates, channel counts and bit
depths each surface as their own exception type (the CLI turns these
into exit code 3). Reading maps int16 to float as s/32768; writing
rounds back with saturation, so in-range samples round-trip bit-exactly.
"""

import struct

import numpy as np

from .errors import (
    WavBitDepthError, WavChannelsError, WavHeaderError, WavRateError,
)
from .stft import SAMPLE_RATE, WaveBuffer

_PCM16_SCALE = 32768.0


def read_wav(path) -> WaveBuffer:
    """Read a 16-bit PCM mono 16 kHz WAV file into float32 samples."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavHeaderError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavHeaderError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavHeaderError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise WavHeaderError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise WavChannelsError(f"{path}: expected mono, got {channels} channels")
    if audio_format != 1 or bits != 16:
        raise WavBitDepthError(
            f"{path}: expected 16-bit PCM, got format tag {audio_format} "
            f"with {bits} bits"
        )
    if rate != SAMPLE_RATE:
        raise WavRateError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    ints = np.frombuffer(payload[: len(payload) - (len(payload) % 2)], dtype="<i2")
    return WaveBuffer((ints / _PCM16_SCALE).astype(np.float32), rate)


def write_wav(path, wave: WaveBuffer) -> None:
    """Write 16-bit PCM mono; out-of-range samples saturate."""
    ints = np.clip(
        np.rint(np.asarray(wave.samples, dtype=np.float64) * _PCM16_SCALE),
        -32768, 32767,
    ).astype("<i2")
    payload = ints.tobytes()
    rate = wave.sample_rate
    header = b"".join([
        b"RIFF", struct.pack("<I", 36 + len(payload)), b"WAVE",
        b"fmt ", struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16),
        b"data", struct.pack("<I", len(payload)),
    ])
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def mix_at_snr(clean: WaveBuffer, noise: WaveBuffer, snr_db: float) -> WaveBuffer:
    """clean + scaled noise so the clean/noise power ratio is snr_db.

    Noise must be at least as long as clean and is truncated to match.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rate mismatch: {clean.sample_rate} vs {noise.sample_rate}"
        )
    c = np.asarray(clean.samples, dtype=np.float64)
    n = np.asarray(noise.samples, dtype=np.float64)
    if len(n) < len(c):
        raise ValueError(f"noise ({len(n)}) shorter than clean ({len(c)})")
    n = n[: len(c)]
    p_clean = float(np.mean(c * c))
    p_noise = float(np.mean(n * n))
    if p_clean == 0.0:
        raise ValueError("clean signal has zero power")
    if p_noise == 0.0:
        raise ValueError("noise signal has zero power")
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return WaveBuffer(c + scale * n, clean.sample_rate)
