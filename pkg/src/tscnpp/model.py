"""Two-stage denoising network: coarse magnitude stage and complex
residual refinement stage.

Stage 1 maps the noisy magnitude to a clean-magnitude estimate, which is
recombined with the noisy phase into a coarse complex spectrum. Stage 2
receives that spectrum stacked with the noisy one (4 real channels) and
predicts a complex residual that is added back, refining magnitude and
phase together.

Both stages share the encoder/TCM/decoder topology: gated convolutional
encoder (stride 2 along frequency, no padding), a stack of temporal
convolution modules on the flattened encoder output, and a gated
transposed-convolution decoder with skip concatenation from the mirrored
encoder block. Stage 1 uses light TCMs, stage 2 dual-dilation TCMs.
"""

from dataclasses import dataclass

import numpy as np

from .layers import DualTcm, GatedConv2dBlock, GatedDeconv2dBlock, TcmGroupSpec, TcmLight
from .params import ParamBuilder, ParamStore
from .stft import couple_phase, mag_phase

__all__ = [
    "ModelConfig", "micro_config", "TscnModel", "TscnStream", "init_params",
    "couple_phase", "mag_phase",
]


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 161
    channels: int = 64
    enc_blocks: int = 5
    kernel_t: int = 2
    kernel_f: int = 3
    stride_f: int = 2
    tcm_dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    tcm_bottleneck: int = 64
    cme_groups: int = 3
    csr_groups: int = 2

    def freq_chain(self) -> list[int]:
        """Frequency sizes through the encoder, input first."""
        dims = [self.n_bins]
        for _ in range(self.enc_blocks):
            f = (dims[-1] - self.kernel_f) // self.stride_f + 1
            if f < 1:
                raise ValueError(f"encoder chain collapses below 1 bin: {dims}")
            dims.append(f)
        return dims

    @property
    def tcm_outer(self) -> int:
        """Width of the flattened encoder output feeding the TCM stack."""
        return self.channels * self.freq_chain()[-1]

    def tcm_group_spec(self) -> TcmGroupSpec:
        return TcmGroupSpec(self.tcm_dilations, self.tcm_bottleneck, self.tcm_outer)


def micro_config() -> ModelConfig:
    """Tiny configuration exercising the same code paths as the full net;
    used by the oracle comparisons and the overfit harness."""
    return ModelConfig(
        n_bins=9, channels=4, enc_blocks=2,
        tcm_dilations=(1, 2), tcm_bottleneck=2,
        cme_groups=1, csr_groups=1,
    )


class _EncDecNet:
    """Encoder / TCM stack / decoder(s) shared by both stages.

    `n_decoders` parallel decoders consume the same TCM output and skip
    frames; their outputs are concatenated along the channel axis. Stage 1
    uses one (magnitude), stage 2 uses two (real and imaginary residual).
    """

    def __init__(self, cfg: ModelConfig, pb: ParamBuilder, prefix: str,
                 in_ch: int, out_ch: int, tcm_kind: str, groups: int,
                 out_act: str, n_decoders: int = 1):
        self.cfg = cfg
        chain = cfg.freq_chain()
        self.chain = chain
        self.enc = []
        c_prev = in_ch
        for i in range(cfg.enc_blocks):
            self.enc.append(GatedConv2dBlock.build(
                pb, f"{prefix}.enc{i}", c_prev, cfg.channels,
                cfg.kernel_t, cfg.kernel_f, cfg.stride_f))
            c_prev = cfg.channels

        spec = cfg.tcm_group_spec()
        self.tcms = []
        for g in range(groups):
            for r in range(spec.unit_count):
                name = f"{prefix}.tcm{g}_{r}"
                if tcm_kind == "light":
                    self.tcms.append(TcmLight.build(pb, name, spec, spec.dilations[r]))
                else:
                    self.tcms.append(DualTcm.build(pb, name, spec, r))

        self.decoders = []
        for k in range(n_decoders):
            blocks = []
            for j in range(cfg.enc_blocks):
                f_in = chain[cfg.enc_blocks - j]
                f_out = chain[cfg.enc_blocks - j - 1]
                extra = f_out - ((f_in - 1) * cfg.stride_f + cfg.kernel_f)
                if extra not in (0, 1):
                    raise ValueError(
                        f"cannot invert {f_in}->{f_out} with stride {cfg.stride_f}")
                last = j == cfg.enc_blocks - 1
                blocks.append(GatedDeconv2dBlock.build(
                    pb, f"{prefix}.dec{k}_{j}", 2 * cfg.channels,
                    out_ch if last else cfg.channels,
                    cfg.kernel_t, cfg.kernel_f, cfg.stride_f, extra,
                    post=out_act if last else "norm_act"))
            self.decoders.append(blocks)

    def new_state(self):
        enc_states = [blk.new_state(self.chain[i]) for i, blk in enumerate(self.enc)]
        tcm_states = [unit.new_state() for unit in self.tcms]
        n = self.cfg.enc_blocks
        dec_states = [
            [blk.new_state(self.chain[n - j]) for j, blk in enumerate(blocks)]
            for blocks in self.decoders
        ]
        return (enc_states, tcm_states, dec_states)

    def step(self, state, frame: np.ndarray) -> np.ndarray:
        enc_states, tcm_states, dec_states = state
        skips = []
        h = frame
        for blk, st in zip(self.enc, enc_states):
            h = blk.step(st, h)
            skips.append(h)
        v = h.reshape(-1)
        for unit, st in zip(self.tcms, tcm_states):
            v = unit.step(st, v)
        bottom = v.reshape(self.cfg.channels, self.chain[-1])
        outs = []
        for blocks, states in zip(self.decoders, dec_states):
            h = bottom
            for j, (blk, st) in enumerate(zip(blocks, states)):
                h = blk.step(st, np.concatenate([h, skips[-1 - j]], axis=0))
            outs.append(h)
        return outs[0] if len(outs) == 1 else np.concatenate(outs, axis=0)


class TscnModel:
    """Both stages bound to one parameter store.

    Construct with `store=None` and a seed to initialize fresh parameters,
    or with a loaded store to bind (shapes are validated against the
    configuration).
    """

    def __init__(self, cfg: ModelConfig | None = None,
                 store: ParamStore | None = None, seed: int | None = None,
                 dtype=np.float32):
        self.cfg = cfg or ModelConfig()
        pb = ParamBuilder(store, seed=seed, dtype=dtype)
        self.cme = _EncDecNet(self.cfg, pb, "cme", in_ch=1, out_ch=1,
                              tcm_kind="light", groups=self.cfg.cme_groups,
                              out_act="softplus", n_decoders=1)
        self.csr = _EncDecNet(self.cfg, pb, "csr", in_ch=4, out_ch=1,
                              tcm_kind="dual", groups=self.cfg.csr_groups,
                              out_act="linear", n_decoders=2)
        self.store = pb.store
        self.dtype = np.dtype(dtype)

    def param_count(self, prefix: str = "") -> int:
        return sum(int(t.size) for name, t in self.store.items()
                   if name.startswith(prefix))

    def _check_bins(self, arr: np.ndarray):
        if arr.ndim != 2 or arr.shape[1] != self.cfg.n_bins:
            raise ValueError(
                f"expected (T, {self.cfg.n_bins}) spectrogram, got shape {arr.shape}"
            )

    def cme_forward(self, noisy_mag: np.ndarray) -> np.ndarray:
        """Coarse magnitude estimate, (T, n_bins) -> (T, n_bins), causal."""
        noisy_mag = np.asarray(noisy_mag)
        self._check_bins(noisy_mag)
        state = self.cme.new_state()
        rows = [
            self.cme.step(state, noisy_mag[t][None, :].astype(self.dtype, copy=False))[0]
            for t in range(noisy_mag.shape[0])
        ]
        return np.stack(rows, axis=0)

    def csr_forward(self, ccs: np.ndarray, noisy: np.ndarray) -> np.ndarray:
        """Complex residual from the coarse spectrum and the noisy one."""
        ccs, noisy = np.asarray(ccs), np.asarray(noisy)
        self._check_bins(ccs)
        if noisy.shape != ccs.shape:
            raise ValueError(f"shape mismatch: ccs {ccs.shape} vs noisy {noisy.shape}")
        state = self.csr.new_state()
        rows = []
        for t in range(ccs.shape[0]):
            stacked = np.stack([
                ccs[t].real, ccs[t].imag, noisy[t].real, noisy[t].imag,
            ]).astype(self.dtype, copy=False)
            out = self.csr.step(state, stacked)
            rows.append(out[0] + 1j * out[1])
        return np.stack(rows, axis=0)

    def tscn_forward(self, noisy: np.ndarray) -> np.ndarray:
        """Refined complex spectrum for a noisy complex spectrogram."""
        return self.tscn_forward_stages(noisy)[2]

    def tscn_forward_stages(self, noisy: np.ndarray):
        """(coarse complex spectrum, residual, refined) for instrumentation."""
        noisy = np.asarray(noisy)
        self._check_bins(noisy)
        stream = self.new_stream()
        rows = [stream.step_stages(noisy[t]) for t in range(noisy.shape[0])]
        ccs, resid, refined = (np.stack(part, axis=0) for part in zip(*rows))
        return ccs, resid, refined

    def new_stream(self) -> "TscnStream":
        return TscnStream(self)


class TscnStream:
    """Per-stream inference state; feed frames strictly in order."""

    def __init__(self, model: TscnModel):
        self.model = model
        self._cme_state = model.cme.new_state()
        self._csr_state = model.csr.new_state()

    def step(self, noisy_frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One complex input frame -> (coarse, refined) complex frames."""
        ccs, _, refined = self.step_stages(noisy_frame)
        return ccs, refined

    def step_stages(self, noisy_frame: np.ndarray):
        """One frame -> (coarse, residual, refined); refined = coarse + residual."""
        model = self.model
        mag = np.abs(noisy_frame).astype(model.dtype, copy=False)
        phase = np.arctan2(noisy_frame.imag, noisy_frame.real)
        est = model.cme.step(self._cme_state, mag[None, :])[0]
        ccs = couple_phase(est, phase)
        stacked = np.stack([
            ccs.real, ccs.imag, noisy_frame.real, noisy_frame.imag,
        ]).astype(model.dtype, copy=False)
        out = model.csr.step(self._csr_state, stacked)
        resid = out[0] + 1j * out[1]
        return ccs, resid, ccs + resid


def init_params(cfg: ModelConfig | None = None, seed: int = 0,
                dtype=np.float32) -> ParamStore:
    """Deterministic Xavier-uniform initialization of all model tensors."""
    return TscnModel(cfg, store=None, seed=seed, dtype=dtype).store
