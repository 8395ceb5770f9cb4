"""Streaming two-stage complex-spectrum speech denoiser with statistical
post-processing."""

__version__ = "0.1.0"

from .stft import (  # noqa: F401
    StftConfig, StftStream, OlaStream, WaveBuffer,
    analyze, synthesize, mag_phase, couple_phase,
)
from .params import ParamStore, load_params, param_count, save_params  # noqa: F401
from .model import ModelConfig, TscnModel, init_params, micro_config  # noqa: F401
from .losses import (  # noqa: F401
    LossConfig, LossReport, loss_cm, loss_ri, loss_mag, loss_joint,
    loss_gradients,
)
from .postproc import (  # noqa: F401
    PpConfig, PpState, derive_spp, cepstral_preprocess, update_npsd,
    expint_e1, lsa_gain, pp_frame,
)
from .wavio import mix_at_snr, read_wav, write_wav  # noqa: F401
from .engine import (  # noqa: F401
    Engine, EngineConfig, LatencyReport, dump_spectra, oracle_gains,
    run_enhance,
)
from .microtrain import micro_overfit, synthetic_pair, write_trajectory_csv  # noqa: F401
