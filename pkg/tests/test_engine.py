import json

import numpy as np
import pytest

from oracles import segmental_snr, synth_speech
from tscnpp.engine import (
    Engine, EngineConfig, LatencyReport, dump_spectra, oracle_gains,
    run_enhance,
)
from tscnpp.errors import NumericalError, WavFormatError
from tscnpp.model import ModelConfig, init_params
from tscnpp.params import save_params
from tscnpp.stft import StftConfig, WaveBuffer, analyze
from tscnpp.wavio import mix_at_snr, read_wav, write_wav

FS = 16000


@pytest.fixture(scope="module")
def speech_mixture(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("mix")
    clean = synth_speech(2.0, seed=3)
    rng = np.random.default_rng(7)
    noise = rng.standard_normal(len(clean))
    clean_buf = WaveBuffer(clean)
    noisy = mix_at_snr(clean_buf, WaveBuffer(noise), 0.0)
    paths = {"clean": tmp / "clean.wav", "noisy": tmp / "noisy.wav"}
    write_wav(paths["clean"], clean_buf)
    write_wav(paths["noisy"], noisy)
    return paths


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig()                      # neither weights nor seed
    with pytest.raises(ValueError):
        EngineConfig(weights_path="x", seed=1)
    with pytest.raises(ValueError):
        EngineConfig(seed=1, stage=3)
    with pytest.raises(ValueError):
        EngineConfig(seed=1, precision="half")


def test_oracle_gains_cases(rng):
    spec = rng.standard_normal((5, 161)) + 1j * rng.standard_normal((5, 161))
    g = oracle_gains(spec, spec)
    assert np.all(g > 0.999) and np.all(g <= 1.0)
    assert np.all(oracle_gains(np.zeros_like(spec), spec) == 0.0)
    with pytest.raises(ValueError):
        oracle_gains(spec, spec[:4])


def test_oracle_gains_track_speech_activity(speech_mixture):
    clean = read_wav(speech_mixture["clean"])
    noisy = read_wav(speech_mixture["noisy"])
    S = analyze(clean)
    X = analyze(noisy)
    g = oracle_gains(S, X)
    assert np.all(g >= 0) and np.all(g <= 1)
    frame_energy = np.sum(np.abs(S) ** 2, axis=1)
    active = frame_energy > np.percentile(frame_energy, 75)
    quiet = frame_energy < np.percentile(frame_energy, 25)
    assert g[active].mean() > g[quiet].mean() + 0.1


def test_passthrough_identity_rig(speech_mixture, tmp_path):
    # oracle gain against the input itself forces G = 1: the engine reduces
    # to an STFT round trip
    cfg = EngineConfig(seed=0, stage=1, pp=False,
                       oracle_gain=str(speech_mixture["noisy"]))
    out = tmp_path / "pass.wav"
    run_enhance(cfg, speech_mixture["noisy"], out)
    x = read_wav(speech_mixture["noisy"]).samples
    y = read_wav(out).samples
    n = len(y)
    err = x[320 : n - 320] - y[320 : n - 320]
    rms = np.sqrt(np.mean(err ** 2) / np.mean(x[320 : n - 320] ** 2))
    assert rms <= 1e-4  # PCM16 quantization dominates


def test_chunking_invariance(speech_mixture):
    cfg_kwargs = dict(seed=3, stage=2, pp=True)
    x = read_wav(speech_mixture["noisy"]).samples[: FS]
    outputs = []
    for chunk in (160, 7, 1000):
        engine = Engine(EngineConfig(**cfg_kwargs), micro_cfg_full())
        blocks = []
        for start in range(0, len(x), chunk):
            blocks.append(engine.push(x[start : start + chunk]))
        blocks.append(engine.flush())
        outputs.append(np.concatenate(blocks))
    np.testing.assert_array_equal(outputs[0], outputs[1])
    np.testing.assert_array_equal(outputs[0], outputs[2])


def micro_cfg_full():
    # reduced-size full pipeline config for fast engine tests: real bin
    # count, fewer channels/TCMs
    return ModelConfig(n_bins=161, channels=8, enc_blocks=5,
                       tcm_dilations=(1, 2, 4, 8, 16, 32), tcm_bottleneck=4,
                       cme_groups=1, csr_groups=1)


def test_end_to_end_causality(speech_mixture):
    # truncating the input to n hops leaves all earlier emitted samples
    # bit-identical through stage 2 + PP
    x = read_wav(speech_mixture["noisy"]).samples[: FS]
    n = 40
    full = Engine(EngineConfig(seed=11, stage=2, pp=True), micro_cfg_full())
    y_full = full.push(x)
    trunc = Engine(EngineConfig(seed=11, stage=2, pp=True), micro_cfg_full())
    y_trunc = trunc.push(x[: n * 160])
    m = (n - 2) * 160
    np.testing.assert_array_equal(y_full[:m], y_trunc[:m])


def test_algorithmic_delay_is_30ms():
    cfg = StftConfig()
    assert cfg.delay_samples == 480
    assert cfg.delay_ms == 30.0
    engine = Engine(EngineConfig(seed=0, pp=False), micro_cfg_full())
    # no output can appear before win_len samples arrived
    assert engine.push(np.zeros(319)).size == 0
    first = engine.push(np.zeros(1))
    assert first.size == 160  # samples [0, hop) finalized at t=320


def test_delay_budget_sweep(rng):
    # once input sample t + 480 is in, output sample t must be out
    engine = Engine(EngineConfig(seed=0, pp=True), micro_cfg_full())
    pushed = emitted = 0
    x = rng.standard_normal(6400).astype(np.float32)
    for chunk in (320, 13, 480, 159, 1, 800, 160, 2000, 1000):
        emitted += engine.push(x[pushed : pushed + chunk]).size
        pushed += chunk
        assert emitted >= pushed - 480


def test_oracle_mode_improves_segsnr(speech_mixture, tmp_path):
    # -5 dB mixture, oracle mask + PP: at least 3 dB segmental improvement
    clean = read_wav(speech_mixture["clean"])
    rng = np.random.default_rng(17)
    noise = rng.standard_normal(len(clean.samples))
    noisy = mix_at_snr(clean, WaveBuffer(noise), -5.0)
    noisy_p = tmp_path / "n5.wav"
    write_wav(noisy_p, noisy)
    out_p = tmp_path / "o5.wav"
    cfg = EngineConfig(seed=0, pp=True, oracle_gain=str(speech_mixture["clean"]))
    run_enhance(cfg, noisy_p, out_p)
    y = read_wav(out_p).samples
    ref = read_wav(speech_mixture["clean"]).samples
    noisy_snr = segmental_snr(ref, read_wav(noisy_p).samples)
    out_snr = segmental_snr(ref[: len(y)], y)
    assert out_snr >= noisy_snr + 3.0


def test_oracle_length_mismatch(speech_mixture, tmp_path):
    short = tmp_path / "short.wav"
    write_wav(short, WaveBuffer(read_wav(speech_mixture["clean"]).samples[:8000]))
    cfg = EngineConfig(seed=0, oracle_gain=str(short))
    with pytest.raises(ValueError):
        run_enhance(cfg, speech_mixture["noisy"], tmp_path / "x.wav")


def test_deterministic_output(speech_mixture, tmp_path):
    cfg = EngineConfig(seed=5, stage=2, pp=True)
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    run_enhance(cfg, speech_mixture["noisy"], a, model_cfg=micro_cfg_full())
    run_enhance(cfg, speech_mixture["noisy"], b, model_cfg=micro_cfg_full())
    assert a.read_bytes() == b.read_bytes()


def test_double_precision_path(speech_mixture, tmp_path):
    cfg = EngineConfig(seed=2, stage=2, pp=True, precision="double")
    out = tmp_path / "d.wav"
    report = run_enhance(cfg, speech_mixture["noisy"], out,
                         model_cfg=micro_cfg_full())
    assert out.exists() and report.frames > 0
    y = read_wav(out).samples
    assert np.all(np.isfinite(y))


def test_weights_file_load_path(speech_mixture, tmp_path):
    store = init_params(micro_cfg_full(), seed=5)
    wpath = tmp_path / "w.tscnw"
    save_params(store, wpath)
    out_seed, out_file = tmp_path / "s.wav", tmp_path / "w.wav"
    run_enhance(EngineConfig(seed=5, pp=False), speech_mixture["noisy"],
                out_seed, model_cfg=micro_cfg_full())
    run_enhance(EngineConfig(weights_path=str(wpath), pp=False),
                speech_mixture["noisy"], out_file, model_cfg=micro_cfg_full())
    assert out_seed.read_bytes() == out_file.read_bytes()


@pytest.mark.filterwarnings("ignore:invalid value")
def test_nan_guard(speech_mixture, tmp_path):
    store = init_params(micro_cfg_full(), seed=0)
    store["cme.enc0.main.w"][0, 0, 0, 0] = np.nan
    wpath = tmp_path / "nan.tscnw"
    save_params(store, wpath)
    cfg = EngineConfig(weights_path=str(wpath), pp=False)
    with pytest.raises(NumericalError) as exc_info:
        run_enhance(cfg, speech_mixture["noisy"], tmp_path / "out.wav",
                    model_cfg=micro_cfg_full())
    assert exc_info.value.frame_index == 0


def test_too_short_input(tmp_path):
    p = tmp_path / "tiny.wav"
    write_wav(p, WaveBuffer(np.zeros(200)))
    with pytest.raises(WavFormatError):
        run_enhance(EngineConfig(seed=0), p, tmp_path / "o.wav")


def test_latency_report(speech_mixture, tmp_path):
    cfg = EngineConfig(seed=0, pp=True)
    report = run_enhance(cfg, speech_mixture["noisy"], tmp_path / "o.wav",
                         model_cfg=micro_cfg_full())
    assert isinstance(report, LatencyReport)
    assert report.frames == (2 * FS - 320) // 160 + 1
    assert report.algorithmic_delay_ms == 30.0
    assert 0 < report.mean_ms <= report.p95_ms <= report.max_ms
    parsed = json.loads(report.to_json())
    assert parsed["frames"] == report.frames
    assert parsed["algorithmic_delay_ms"] == 30.0


def test_output_length(speech_mixture, tmp_path):
    out = tmp_path / "len.wav"
    run_enhance(EngineConfig(seed=0, pp=False), speech_mixture["noisy"], out,
                model_cfg=micro_cfg_full())
    n_in = len(read_wav(speech_mixture["noisy"]).samples)
    n_frames = (n_in - 320) // 160 + 1
    assert len(read_wav(out).samples) == (n_frames - 1) * 160 + 320


def test_dump_spectra(tmp_path, rng):
    spec = np.zeros((5, 161), dtype=complex)
    path = tmp_path / "z.csv"
    dump_spectra(path, spec)
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    assert len(header) == 161
    assert float(header[0]) == 0.0 and float(header[1]) == 50.0
    assert float(header[160]) == 8000.0
    rows = [list(map(float, ln.split(","))) for ln in lines[1:]]
    assert len(rows) == 5
    assert all(v == -120.0 for row in rows for v in row)

    vals = np.abs(rng.standard_normal((3, 161))) + 0.01
    path2 = tmp_path / "v.csv"
    dump_spectra(path2, vals)
    lines = path2.read_text().strip().split("\n")
    parsed = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    np.testing.assert_allclose(parsed, 20 * np.log10(vals), atol=5e-7)


def test_dump_spectra_writes_png(speech_mixture, tmp_path):
    out = tmp_path / "o.wav"
    csv_path = tmp_path / "spec.csv"
    cfg = EngineConfig(seed=0, pp=False,
                       oracle_gain=str(speech_mixture["noisy"]))
    run_enhance(cfg, speech_mixture["noisy"], out, dump_spectra_path=csv_path)
    assert csv_path.exists()
    assert (tmp_path / "spec.png").exists()
    assert (tmp_path / "spec.png").stat().st_size > 1000
