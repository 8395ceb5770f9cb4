"""Causal convolution layers and temporal convolution modules.

Every layer processes one time frame at a time through `step(state, frame)`;
ring-buffer states carry exactly the left context the kernel needs, so
causality is structural rather than asserted. Batch helpers
(`conv2d_causal` etc.) run the same per-frame arithmetic over a whole
tensor, which keeps streaming and batch outputs bit-identical.

Conventions, shared with the brute-force oracles in the test suite:
  * conv weights are (c_out, c_in, k_t, k_f); time index 0 is the oldest
    tap, so y[t] = sum_dt w[..,dt,..] * x[t - (k_t-1-dt)*dilation_t];
  * the time axis is left-padded with (k_t-1)*dilation_t zeros, the
    frequency axis is never padded;
  * transposed (frequency) convolution scatters x[f_in] into output bins
    f_in*stride + df; `extra_f` appends trailing bias-only bins where the
    encoder chain needs an odd inverse size.
"""

from dataclasses import dataclass

import numpy as np

from .params import ParamBuilder

LN_EPS = 1e-5


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-safe for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class _Ring:
    """Circular history of the last `length` frames, zero-initialized.

    Zero prefill doubles as the causal left padding: slots that have not
    been written yet read back as zero frames.
    """

    __slots__ = ("buf", "n", "length")

    def __init__(self, length: int, frame_shape: tuple[int, ...], dtype):
        self.length = length
        self.buf = np.zeros((length,) + frame_shape, dtype=dtype)
        self.n = 0

    def push(self, frame: np.ndarray):
        self.buf[self.n % self.length] = frame
        self.n += 1

    def gather(self, ages: np.ndarray) -> np.ndarray:
        # ages are offsets back from the most recent frame (0 = current)
        return self.buf[(self.n - 1 - ages) % self.length]


class CausalConv2d:
    """2-D convolution, causal in time, valid (unpadded) in frequency."""

    def __init__(self, w: np.ndarray, b: np.ndarray, stride_f: int = 1,
                 dilation_t: int = 1):
        w = np.asarray(w)
        if w.ndim != 4:
            raise ValueError(f"conv weight must be 4-D, got shape {w.shape}")
        self.w, self.b = w, np.asarray(b)
        self.c_out, self.c_in, self.k_t, self.k_f = w.shape
        if self.b.shape != (self.c_out,):
            raise ValueError(f"bias shape {self.b.shape} != ({self.c_out},)")
        self.stride_f = stride_f
        self.dilation_t = dilation_t
        self.left_context = (self.k_t - 1) * dilation_t
        # dt axis runs oldest -> newest; ages run newest -> oldest
        self._ages = np.arange(self.k_t - 1, -1, -1) * dilation_t
        self._wmat = np.ascontiguousarray(w.reshape(self.c_out, -1))
        self._fidx_cache: dict[int, np.ndarray] = {}

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, c_in: int, c_out: int,
              k_t: int, k_f: int, stride_f: int = 1, dilation_t: int = 1):
        w = pb.tensor(f"{prefix}.w", (c_out, c_in, k_t, k_f))
        b = pb.tensor(f"{prefix}.b", (c_out,), init="zeros")
        return cls(w, b, stride_f, dilation_t)

    def out_freq(self, f_in: int) -> int:
        if f_in < self.k_f:
            raise ValueError(f"frequency dim {f_in} smaller than kernel {self.k_f}")
        return (f_in - self.k_f) // self.stride_f + 1

    def _freq_idx(self, f_in: int) -> np.ndarray:
        idx = self._fidx_cache.get(f_in)
        if idx is None:
            f_out = self.out_freq(f_in)
            idx = self.stride_f * np.arange(f_out)[None, :] + np.arange(self.k_f)[:, None]
            self._fidx_cache[f_in] = idx
        return idx

    def new_state(self, f_in: int) -> _Ring:
        if f_in != 0 and f_in < self.k_f:
            raise ValueError(f"frequency dim {f_in} smaller than kernel {self.k_f}")
        return _Ring(self.left_context + 1, (self.c_in, f_in), self.w.dtype)

    def step(self, state: _Ring, frame: np.ndarray) -> np.ndarray:
        if frame.shape[0] != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {frame.shape[0]}")
        state.push(frame)
        xk = state.gather(self._ages)            # (k_t, c_in, F)
        patches = xk.transpose(1, 0, 2)[:, :, self._freq_idx(frame.shape[1])]
        y = self._wmat @ patches.reshape(self._wmat.shape[1], -1)
        y += self.b[:, None]
        return y


class CausalDeconv2d:
    """Frequency-transposed convolution, causal in time."""

    def __init__(self, w: np.ndarray, b: np.ndarray, stride_f: int = 2,
                 extra_f: int = 0):
        w = np.asarray(w)
        if w.ndim != 4:
            raise ValueError(f"deconv weight must be 4-D, got shape {w.shape}")
        self.w, self.b = w, np.asarray(b)
        self.c_out, self.c_in, self.k_t, self.k_f = w.shape
        self.stride_f = stride_f
        self.extra_f = extra_f
        self.left_context = self.k_t - 1
        self._ages = np.arange(self.k_t - 1, -1, -1)
        # (c_out*k_f, c_in*k_t) so one matmul yields all scatter slices
        self._wmat = np.ascontiguousarray(
            w.transpose(0, 3, 1, 2).reshape(self.c_out * self.k_f, -1)
        )

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, c_in: int, c_out: int,
              k_t: int, k_f: int, stride_f: int = 2, extra_f: int = 0):
        w = pb.tensor(f"{prefix}.w", (c_out, c_in, k_t, k_f))
        b = pb.tensor(f"{prefix}.b", (c_out,), init="zeros")
        return cls(w, b, stride_f, extra_f)

    def out_freq(self, f_in: int) -> int:
        return (f_in - 1) * self.stride_f + self.k_f + self.extra_f

    def new_state(self, f_in: int) -> _Ring:
        return _Ring(self.left_context + 1, (self.c_in, f_in), self.w.dtype)

    def step(self, state: _Ring, frame: np.ndarray) -> np.ndarray:
        if frame.shape[0] != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {frame.shape[0]}")
        state.push(frame)
        f_in = frame.shape[1]
        xk = state.gather(self._ages).transpose(1, 0, 2)   # (c_in, k_t, F)
        z = self._wmat @ xk.reshape(self.c_in * self.k_t, f_in)
        z = z.reshape(self.c_out, self.k_f, f_in)
        y = np.empty((self.c_out, self.out_freq(f_in)), dtype=z.dtype)
        y[:] = self.b[:, None]
        s = self.stride_f
        for df in range(self.k_f):
            y[:, df : df + s * f_in : s] += z[:, df, :]
        return y


class CausalConv1d:
    """Time-only causal convolution on per-frame channel vectors."""

    def __init__(self, w: np.ndarray, b: np.ndarray, dilation: int = 1):
        w = np.asarray(w)
        if w.ndim != 3:
            raise ValueError(f"conv1d weight must be 3-D, got shape {w.shape}")
        self.w, self.b = w, np.asarray(b)
        self.c_out, self.c_in, self.k_t = w.shape
        self.dilation = dilation
        self.left_context = (self.k_t - 1) * dilation
        self._ages = np.arange(self.k_t - 1, -1, -1) * dilation
        # flat order (c_in, k_t), matching the gathered tap matrix below
        self._wmat = np.ascontiguousarray(w.reshape(self.c_out, -1))

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, c_in: int, c_out: int,
              k_t: int, dilation: int = 1):
        w = pb.tensor(f"{prefix}.w", (c_out, c_in, k_t))
        b = pb.tensor(f"{prefix}.b", (c_out,), init="zeros")
        return cls(w, b, dilation)

    def new_state(self) -> _Ring:
        return _Ring(self.left_context + 1, (self.c_in,), self.w.dtype)

    def step(self, state: _Ring, frame: np.ndarray) -> np.ndarray:
        if frame.shape[0] != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {frame.shape[0]}")
        if self.k_t == 1:  # pointwise conv carries no history
            return self._wmat @ frame + self.b
        state.push(frame)
        xk = state.gather(self._ages)            # (k_t, c_in), oldest first
        return self._wmat @ xk.T.ravel() + self.b


class FrameLayerNorm:
    """Layer norm with statistics over everything within one time frame.

    Normalizing over (channels x frequency) of the current frame keeps the
    operation causal; gain/bias are per-channel.
    """

    def __init__(self, g: np.ndarray, b: np.ndarray, per_freq: bool):
        self.g, self.b = np.asarray(g), np.asarray(b)
        self._gc = self.g[:, None] if per_freq else self.g
        self._bc = self.b[:, None] if per_freq else self.b

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, channels: int, per_freq: bool):
        g = pb.tensor(f"{prefix}.g", (channels,), init="ones")
        b = pb.tensor(f"{prefix}.b", (channels,), init="zeros")
        return cls(g, b, per_freq)

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        mu = frame.mean()
        xc = frame - mu
        flat = xc.ravel()
        inv = 1.0 / np.sqrt(flat.dot(flat) / flat.size + LN_EPS)
        return xc * (inv * self._gc) + self._bc


class PRelu:
    def __init__(self, a: np.ndarray, per_freq: bool):
        self.a = np.asarray(a)
        self._ac = self.a[:, None] if per_freq else self.a

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, channels: int, per_freq: bool):
        return cls(pb.tensor(f"{prefix}.a", (channels,), init="prelu"), per_freq)

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        return np.where(frame > 0, frame, self._ac * frame)


class GatedConv2dBlock:
    """conv_a(x) * sigmoid(conv_b(x)) followed by a configurable head.

    `post` selects what follows the gate: "norm_act" (frame layer norm +
    PReLU) inside the network, "softplus" or "linear" on output layers.
    Both convolutions share geometry and run as one stacked matmul.
    """

    def __init__(self, conv_a: CausalConv2d, conv_b: CausalConv2d,
                 post: str = "norm_act", norm: FrameLayerNorm | None = None,
                 act: PRelu | None = None):
        if conv_a.w.shape != conv_b.w.shape:
            raise ValueError("gate conv must match main conv geometry")
        self.conv_a, self.conv_b = conv_a, conv_b
        self.post = post
        self.norm, self.act = norm, act
        self.c_out = conv_a.c_out
        self._stacked = CausalConv2d(
            np.concatenate([conv_a.w, conv_b.w], axis=0),
            np.concatenate([conv_a.b, conv_b.b]),
            conv_a.stride_f, conv_a.dilation_t,
        )

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, c_in: int, c_out: int,
              k_t: int, k_f: int, stride_f: int = 1, post: str = "norm_act"):
        conv_a = CausalConv2d.build(pb, f"{prefix}.main", c_in, c_out, k_t, k_f, stride_f)
        conv_b = CausalConv2d.build(pb, f"{prefix}.gate", c_in, c_out, k_t, k_f, stride_f)
        norm = act = None
        if post == "norm_act":
            norm = FrameLayerNorm.build(pb, f"{prefix}.norm", c_out, per_freq=True)
            act = PRelu.build(pb, f"{prefix}.prelu", c_out, per_freq=True)
        return cls(conv_a, conv_b, post, norm, act)

    def out_freq(self, f_in: int) -> int:
        return self.conv_a.out_freq(f_in)

    def new_state(self, f_in: int) -> _Ring:
        return self._stacked.new_state(f_in)

    def step(self, state: _Ring, frame: np.ndarray) -> np.ndarray:
        y = self._stacked.step(state, frame)
        h = y[: self.c_out] * sigmoid(y[self.c_out :])
        return self._post(h)

    def _post(self, h: np.ndarray) -> np.ndarray:
        if self.post == "norm_act":
            return self.act(self.norm(h))
        if self.post == "softplus":
            return softplus(h)
        return h


class GatedDeconv2dBlock:
    """Gated block whose convolutions are frequency-transposed."""

    def __init__(self, conv_a: CausalDeconv2d, conv_b: CausalDeconv2d,
                 post: str = "norm_act", norm: FrameLayerNorm | None = None,
                 act: PRelu | None = None):
        if conv_a.w.shape != conv_b.w.shape:
            raise ValueError("gate deconv must match main deconv geometry")
        self.conv_a, self.conv_b = conv_a, conv_b
        self.post = post
        self.norm, self.act = norm, act
        self.c_out = conv_a.c_out
        self._stacked = CausalDeconv2d(
            np.concatenate([conv_a.w, conv_b.w], axis=0),
            np.concatenate([conv_a.b, conv_b.b]),
            conv_a.stride_f, conv_a.extra_f,
        )

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, c_in: int, c_out: int,
              k_t: int, k_f: int, stride_f: int = 2, extra_f: int = 0,
              post: str = "norm_act"):
        conv_a = CausalDeconv2d.build(pb, f"{prefix}.main", c_in, c_out, k_t, k_f,
                                      stride_f, extra_f)
        conv_b = CausalDeconv2d.build(pb, f"{prefix}.gate", c_in, c_out, k_t, k_f,
                                      stride_f, extra_f)
        norm = act = None
        if post == "norm_act":
            norm = FrameLayerNorm.build(pb, f"{prefix}.norm", c_out, per_freq=True)
            act = PRelu.build(pb, f"{prefix}.prelu", c_out, per_freq=True)
        return cls(conv_a, conv_b, post, norm, act)

    def out_freq(self, f_in: int) -> int:
        return self.conv_a.out_freq(f_in)

    def new_state(self, f_in: int) -> _Ring:
        return self._stacked.new_state(f_in)

    def step(self, state: _Ring, frame: np.ndarray) -> np.ndarray:
        y = self._stacked.step(state, frame)
        h = y[: self.c_out] * sigmoid(y[self.c_out :])
        if self.post == "norm_act":
            return self.act(self.norm(h))
        if self.post == "softplus":
            return softplus(h)
        return h


class _GatedDConv1d:
    """Dilated 1-D conv multiplied by the sigmoid of a parallel one."""

    def __init__(self, main: CausalConv1d, gate: CausalConv1d):
        self.c_out = main.c_out
        self._stacked = CausalConv1d(
            np.concatenate([main.w, gate.w], axis=0),
            np.concatenate([main.b, gate.b]),
            main.dilation,
        )
        self.left_context = self._stacked.left_context

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, channels: int, k_t: int,
              dilation: int):
        main = CausalConv1d.build(pb, f"{prefix}.main", channels, channels, k_t, dilation)
        gate = CausalConv1d.build(pb, f"{prefix}.gate", channels, channels, k_t, dilation)
        return cls(main, gate)

    def new_state(self) -> _Ring:
        return self._stacked.new_state()

    def step(self, state: _Ring, frame: np.ndarray) -> np.ndarray:
        y = self._stacked.step(state, frame)
        return y[: self.c_out] * sigmoid(y[self.c_out :])


@dataclass(frozen=True)
class TcmGroupSpec:
    """Dilation schedule for one group of temporal convolution modules."""

    dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    bottleneck: int = 64
    outer: int = 256
    kernel_t: int = 3

    def __post_init__(self):
        for r, d in enumerate(self.dilations):
            if d != 2 ** r:
                raise ValueError(f"dilations must be 1,2,4,...: got {self.dilations}")

    @property
    def unit_count(self) -> int:
        return len(self.dilations)

    @property
    def max_exponent(self) -> int:
        """M such that dilations run 2^0 .. 2^M; mates pair 2^r with 2^(M-r)."""
        return len(self.dilations) - 1

    def complement(self, r: int) -> int:
        return 2 ** (self.max_exponent - r)


class TcmLight:
    """Light temporal convolution module: bottleneck, gated dilated conv,
    expansion, residual add."""

    def __init__(self, in1x1, norm1, act1, gated, norm2, act2, out1x1):
        self.in1x1, self.norm1, self.act1 = in1x1, norm1, act1
        self.gated = gated
        self.norm2, self.act2 = norm2, act2
        self.out1x1 = out1x1
        self.outer = in1x1.c_in

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, spec: TcmGroupSpec, dilation: int):
        in1x1 = CausalConv1d.build(pb, f"{prefix}.in", spec.outer, spec.bottleneck, 1)
        norm1 = FrameLayerNorm.build(pb, f"{prefix}.norm1", spec.bottleneck, per_freq=False)
        act1 = PRelu.build(pb, f"{prefix}.prelu1", spec.bottleneck, per_freq=False)
        gated = _GatedDConv1d.build(pb, f"{prefix}.dconv", spec.bottleneck,
                                    spec.kernel_t, dilation)
        norm2 = FrameLayerNorm.build(pb, f"{prefix}.norm2", spec.bottleneck, per_freq=False)
        act2 = PRelu.build(pb, f"{prefix}.prelu2", spec.bottleneck, per_freq=False)
        out1x1 = CausalConv1d.build(pb, f"{prefix}.out", spec.bottleneck, spec.outer, 1)
        return cls(in1x1, norm1, act1, gated, norm2, act2, out1x1)

    def new_state(self) -> tuple:
        return (self.in1x1.new_state(), self.gated.new_state(), self.out1x1.new_state())

    def step(self, state: tuple, frame: np.ndarray) -> np.ndarray:
        s_in, s_g, s_out = state
        u = self.act1(self.norm1(self.in1x1.step(s_in, frame)))
        v = self.act2(self.norm2(self.gated.step(s_g, u)))
        return frame + self.out1x1.step(s_out, v)


class DualTcm:
    """TCM with two gated dilated branches at complementary rates.

    Branch A dilates by 2^r, branch B by 2^(M-r); the normalized branch
    outputs are concatenated before the expansion conv, so short- and
    long-range context are learned jointly.
    """

    def __init__(self, in1x1, norm1, act1, branch_a, norm_a, act_a,
                 branch_b, norm_b, act_b, out1x1, dilations):
        self.in1x1, self.norm1, self.act1 = in1x1, norm1, act1
        self.branch_a, self.norm_a, self.act_a = branch_a, norm_a, act_a
        self.branch_b, self.norm_b, self.act_b = branch_b, norm_b, act_b
        self.out1x1 = out1x1
        self.dilations = dilations
        self.outer = in1x1.c_in

    @classmethod
    def build(cls, pb: ParamBuilder, prefix: str, spec: TcmGroupSpec, r: int):
        d_a = spec.dilations[r]
        d_b = spec.complement(r)
        in1x1 = CausalConv1d.build(pb, f"{prefix}.in", spec.outer, spec.bottleneck, 1)
        norm1 = FrameLayerNorm.build(pb, f"{prefix}.norm1", spec.bottleneck, per_freq=False)
        act1 = PRelu.build(pb, f"{prefix}.prelu1", spec.bottleneck, per_freq=False)
        branch_a = _GatedDConv1d.build(pb, f"{prefix}.a", spec.bottleneck, spec.kernel_t, d_a)
        norm_a = FrameLayerNorm.build(pb, f"{prefix}.norma", spec.bottleneck, per_freq=False)
        act_a = PRelu.build(pb, f"{prefix}.prelua", spec.bottleneck, per_freq=False)
        branch_b = _GatedDConv1d.build(pb, f"{prefix}.b", spec.bottleneck, spec.kernel_t, d_b)
        norm_b = FrameLayerNorm.build(pb, f"{prefix}.normb", spec.bottleneck, per_freq=False)
        act_b = PRelu.build(pb, f"{prefix}.prelub", spec.bottleneck, per_freq=False)
        out1x1 = CausalConv1d.build(pb, f"{prefix}.out", 2 * spec.bottleneck, spec.outer, 1)
        return cls(in1x1, norm1, act1, branch_a, norm_a, act_a,
                   branch_b, norm_b, act_b, out1x1, (d_a, d_b))

    def new_state(self) -> tuple:
        return (self.in1x1.new_state(), self.branch_a.new_state(),
                self.branch_b.new_state(), self.out1x1.new_state())

    def step(self, state: tuple, frame: np.ndarray) -> np.ndarray:
        s_in, s_a, s_b, s_out = state
        u = self.act1(self.norm1(self.in1x1.step(s_in, frame)))
        va = self.act_a(self.norm_a(self.branch_a.step(s_a, u)))
        vb = self.act_b(self.norm_b(self.branch_b.step(s_b, u)))
        return frame + self.out1x1.step(s_out, np.concatenate([va, vb]))


# ---------------------------------------------------------------------------
# Batch entry points: run the streaming step over a (C, T, F) tensor.

def _run_frames(layer, x: np.ndarray, state=None) -> np.ndarray:
    state = layer.new_state(x.shape[2]) if state is None else state
    cols = [layer.step(state, x[:, t, :]) for t in range(x.shape[1])]
    return np.stack(cols, axis=1)


def conv2d_causal(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride_f: int = 1, dilation_t: int = 1) -> np.ndarray:
    """Causal 2-D convolution of x (c_in, T, F) -> (c_out, T, F').

    F' = (F - k_f)//stride_f + 1; output frame t depends only on input
    frames <= t.
    """
    x = np.asarray(x)
    layer = CausalConv2d(w, b, stride_f, dilation_t)
    if x.ndim != 3 or x.shape[0] != layer.c_in:
        raise ValueError(
            f"input shape {x.shape} incompatible with weight {layer.w.shape}"
        )
    return _run_frames(layer, x)


def deconv2d_causal(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    stride_f: int = 2, extra_f: int = 0) -> np.ndarray:
    """Causal frequency-transposed convolution of x (c_in, T, F).

    Output frequency size is (F-1)*stride_f + k_f + extra_f.
    """
    x = np.asarray(x)
    layer = CausalDeconv2d(w, b, stride_f, extra_f)
    if x.ndim != 3 or x.shape[0] != layer.c_in:
        raise ValueError(
            f"input shape {x.shape} incompatible with weight {layer.w.shape}"
        )
    return _run_frames(layer, x)


def gated_conv_block(x: np.ndarray, w_a, b_a, w_b, b_b, norm_g, norm_b,
                     prelu_a, stride_f: int = 1) -> np.ndarray:
    """Batch form of the gated convolution block (norm_act head)."""
    x = np.asarray(x)
    block = GatedConv2dBlock(
        CausalConv2d(w_a, b_a, stride_f), CausalConv2d(w_b, b_b, stride_f),
        post="norm_act",
        norm=FrameLayerNorm(norm_g, norm_b, per_freq=True),
        act=PRelu(prelu_a, per_freq=True),
    )
    return _run_frames(block, x)


def _run_vectors(unit, x: np.ndarray) -> np.ndarray:
    state = unit.new_state()
    cols = [unit.step(state, x[:, t]) for t in range(x.shape[1])]
    return np.stack(cols, axis=1)


def tcm_light(x: np.ndarray, unit: TcmLight) -> np.ndarray:
    """Run one light TCM over x (outer, T)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != unit.outer:
        raise ValueError(f"expected ({unit.outer}, T) input, got {x.shape}")
    return _run_vectors(unit, x)


def dtcm(x: np.ndarray, unit: DualTcm) -> np.ndarray:
    """Run one dual TCM over x (outer, T)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != unit.outer:
        raise ValueError(f"expected ({unit.outer}, T) input, got {x.shape}")
    return _run_vectors(unit, x)
