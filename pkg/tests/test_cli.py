import csv
import json

import numpy as np
import pytest

from oracles import synth_speech
from tscnpp.cli import main
from tscnpp.model import init_params
from tscnpp.params import save_params
from tscnpp.stft import WaveBuffer
from tscnpp.wavio import write_wav


@pytest.fixture(scope="module")
def wavs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    clean = synth_speech(1.0, seed=1)
    rng = np.random.default_rng(2)
    noise = rng.standard_normal(len(clean)) * 0.1
    paths = {
        "clean": tmp / "clean.wav",
        "noise": tmp / "noise.wav",
        "tmp": tmp,
    }
    write_wav(paths["clean"], WaveBuffer(clean))
    write_wav(paths["noise"], WaveBuffer(noise))
    return paths


def test_usage_errors():
    assert main([]) == 2
    assert main(["enhance"]) == 2
    assert main(["enhance", "--in", "a.wav"]) == 2


def test_mix_and_enhance_oracle(wavs, capsys):
    tmp = wavs["tmp"]
    noisy = tmp / "noisy.wav"
    rc = main(["mix", "--clean", str(wavs["clean"]), "--noise",
               str(wavs["noise"]), "--snr", "0", "--out", str(noisy)])
    assert rc == 0
    out = tmp / "out.wav"
    rc = main(["enhance", "--in", str(noisy), "--out", str(out),
               "--seed", "1", "--oracle-gain", str(wavs["clean"]),
               "--report-latency"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["algorithmic_delay_ms"] == 30.0
    assert report["frames"] > 0
    assert out.exists()


def test_both_weight_sources_is_usage_error(wavs):
    rc = main(["enhance", "--in", str(wavs["clean"]), "--out", "/tmp/x.wav",
               "--seed", "1", "--weights", "w.bin"])
    assert rc == 2


def test_neither_weight_source_is_usage_error(wavs):
    rc = main(["enhance", "--in", str(wavs["clean"]),
               "--out", "/tmp/x.wav"])
    assert rc == 2


def test_missing_input_is_format_error(wavs):
    rc = main(["enhance", "--in", str(wavs["tmp"] / "nope.wav"),
               "--out", "/tmp/x.wav", "--seed", "1"])
    assert rc == 2 or rc == 3  # OSError surfaces before engine start


def test_bad_wav_is_exit_3(wavs):
    bad = wavs["tmp"] / "bad.wav"
    bad.write_bytes(b"not a wav at all, definitely not RIFF data")
    rc = main(["enhance", "--in", str(bad), "--out", "/tmp/x.wav",
               "--seed", "1"])
    assert rc == 3


def test_bad_weights_is_exit_4(wavs):
    w = wavs["tmp"] / "garbage.tscnw"
    w.write_bytes(b"JUNKJUNKJUNK" * 10)
    rc = main(["enhance", "--in", str(wavs["clean"]), "--out", "/tmp/x.wav",
               "--weights", str(w)])
    assert rc == 4


@pytest.mark.filterwarnings("ignore:invalid value")
def test_nan_weights_is_exit_5(wavs):
    # full-size weights with a NaN planted in the first conv
    store = init_params(seed=0)
    store["cme.enc0.main.w"][0, 0, 0, 0] = np.nan
    w = wavs["tmp"] / "nan.tscnw"
    save_params(store, w)
    rc = main(["enhance", "--in", str(wavs["clean"]),
               "--out", str(wavs["tmp"] / "x.wav"), "--weights", str(w)])
    assert rc == 5


def test_config_file_with_flag_override(wavs, capsys):
    tmp = wavs["tmp"]
    cfg = tmp / "engine.cfg"
    cfg.write_text(
        "# engine setup\n"
        "seed = 9\n"
        "stage = 1\n"
        "pp = off\n"
        "gain_min = 0.2\n"
        "alpha_d = 0.9\n"
    )
    out1, out2 = tmp / "c1.wav", tmp / "c2.wav"
    rc = main(["enhance", "--in", str(wavs["clean"]), "--out", str(out1),
               "--config", str(cfg), "--oracle-gain", str(wavs["clean"])])
    assert rc == 0
    # flag overrides file: pp handling differs -> different output
    rc = main(["enhance", "--in", str(wavs["clean"]), "--out", str(out2),
               "--config", str(cfg), "--oracle-gain", str(wavs["clean"]),
               "--pp", "on"])
    assert rc == 0
    assert out1.read_bytes() != out2.read_bytes()


def test_config_file_unknown_key(wavs):
    cfg = wavs["tmp"] / "bad.cfg"
    cfg.write_text("bogus_key = 1\n")
    rc = main(["enhance", "--in", str(wavs["clean"]), "--out", "/tmp/x.wav",
               "--config", str(cfg)])
    assert rc == 2


def test_dump_spectra_flag(wavs):
    tmp = wavs["tmp"]
    spec_csv = tmp / "dump.csv"
    rc = main(["enhance", "--in", str(wavs["clean"]),
               "--out", str(tmp / "d.wav"), "--seed", "1", "--pp", "off",
               "--oracle-gain", str(wavs["clean"]),
               "--dump-spectra", str(spec_csv)])
    assert rc == 0
    assert spec_csv.exists() and (tmp / "dump.png").exists()
    with open(spec_csv) as f:
        rows = list(csv.reader(f))
    assert len(rows[0]) == 161


def test_mix_zero_power_noise_is_exit_3(wavs):
    silent = wavs["tmp"] / "silent.wav"
    write_wav(silent, WaveBuffer(np.zeros(16000)))
    rc = main(["mix", "--clean", str(wavs["clean"]), "--noise", str(silent),
               "--snr", "0", "--out", "/tmp/x.wav"])
    assert rc == 3


def test_micro_overfit_subcommand(wavs, capsys):
    tmp = wavs["tmp"]
    out_csv = tmp / "traj.csv"
    rc = main(["micro-overfit", "--out-csv", str(out_csv), "--steps", "10",
               "--seed", "3"])
    assert rc == 0
    assert out_csv.exists() and (tmp / "traj.png").exists()
    with open(out_csv) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "l_cm", "l_ri", "l_mag", "l_total"]
    assert len(rows) == 12  # header + point 0 + 10 steps
    assert "final/initial joint loss" in capsys.readouterr().out
