"""Statistical residual-noise suppressor applied after the network.

Per frame, the stage-1/2 spectral gain (|enhanced| / |noisy|) is reused
as a speech-presence probability, which steers a recursive noise-PSD
estimate over the enhanced power spectrum. Before that update, harmonic
ripple is flattened by notching the pitch peak of the cepstrum so voiced
frames do not inflate the noise estimate. The final gain is the MMSE
log-spectral-amplitude estimator driven by the decision-directed a-priori
SNR, floored and applied to the enhanced spectrum with phase untouched.

All constants live in `PpConfig`; the state is single-owner per stream
and must be fed frames in order.
"""

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12
_EULER_GAMMA = 0.57721566490153286


@dataclass(frozen=True)
class PpConfig:
    alpha_d: float = 0.85          # noise-PSD smoothing base
    beta_dd: float = 0.98          # decision-directed weight
    xi_min: float = 10.0 ** -2.5   # a-priori SNR floor
    gain_min: float = 0.1          # final gain floor
    quefrency_min: int = 40        # 400 Hz pitch at 16 kHz
    quefrency_max: int = 160       # 100 Hz pitch at 16 kHz
    notch_halfwidth: int = 2
    peak_threshold: float = 3.0    # peak vs median of the search range

    def __post_init__(self):
        if not 0.0 < self.alpha_d < 1.0:
            raise ValueError("alpha_d must be in (0, 1)")
        if not 0.0 < self.beta_dd < 1.0:
            raise ValueError("beta_dd must be in (0, 1)")
        if not 0.0 < self.gain_min <= 1.0:
            raise ValueError("gain_min must be in (0, 1]")
        if self.xi_min <= 0.0:
            raise ValueError("xi_min must be positive")
        if not 0 < self.quefrency_min < self.quefrency_max:
            raise ValueError("invalid quefrency range")


class PpState:
    """Recursive per-stream state: noise PSD, previous gain and a-posteriori
    SNR, frame counter."""

    def __init__(self, n_bins: int = 161):
        self.n_bins = n_bins
        self.npsd: np.ndarray | None = None
        self.prev_gain = np.ones(n_bins)
        self.prev_gamma = np.ones(n_bins)
        self.frame_index = 0


def derive_spp(enhanced_mag: np.ndarray, noisy_mag: np.ndarray) -> np.ndarray:
    """Speech-presence probability from the realized spectral gain,
    clamped to [0, 1]."""
    ratio = np.asarray(enhanced_mag) / (np.asarray(noisy_mag) + _EPS)
    return np.clip(ratio, 0.0, 1.0)


def cepstral_preprocess(power: np.ndarray, cfg: PpConfig = PpConfig()) -> np.ndarray:
    """Flatten harmonic ripple in a power spectrum via a cepstral notch.

    The real cepstrum of the log power (symmetric 2*(n_bins-1)-point
    extension) is searched for a pitch peak inside the quefrency range;
    if the peak exceeds peak_threshold times the median magnitude of that
    range, the bins around it (and their mirror) are zeroed and the
    spectrum is rebuilt. Without a detected pitch the input is returned
    unchanged.
    """
    power = np.asarray(power)
    n_bins = power.shape[-1]
    n_fft = 2 * (n_bins - 1)
    log_p = np.log(np.maximum(power, _EPS))
    cep = np.fft.irfft(log_p, n=n_fft)
    q_lo, q_hi = cfg.quefrency_min, min(cfg.quefrency_max, n_fft // 2)
    seg = cep[q_lo : q_hi + 1]
    q_star = q_lo + int(np.argmax(seg))
    peak = cep[q_star]
    if peak <= cfg.peak_threshold * np.median(np.abs(seg)):
        return power
    h = cfg.notch_halfwidth
    qs = np.arange(q_star - h, q_star + h + 1)
    qs = np.concatenate([qs, n_fft - qs])
    qs = qs[(qs >= 1) & (qs <= n_fft - 1)]
    cep[qs] = 0.0
    return np.exp(np.fft.rfft(cep).real)


def update_npsd(state: PpState, preprocessed_power: np.ndarray,
                spp: np.ndarray, cfg: PpConfig = PpConfig()) -> np.ndarray:
    """SPP-weighted first-order recursion of the noise PSD.

    The effective smoothing factor alpha_d + (1-alpha_d)*spp reaches
    exactly 1 where speech is certain, freezing the estimate there. The
    first call adopts the input power as the initial estimate.
    """
    pre = np.asarray(preprocessed_power, dtype=np.float64)
    if state.npsd is None:
        state.npsd = np.maximum(pre, _EPS).copy()
        return state.npsd
    alpha = cfg.alpha_d + (1.0 - cfg.alpha_d) * np.asarray(spp)
    state.npsd = alpha * state.npsd + (1.0 - alpha) * pre
    return state.npsd


def expint_e1(v) -> np.ndarray | float:
    """Exponential integral E1(v) = int_v^inf exp(-t)/t dt for v > 0.

    Power series below 1, modified-Lentz continued fraction above;
    relative accuracy well under 1e-9 across [1e-6, 50].
    """
    arr = np.asarray(v, dtype=np.float64)
    scalar = arr.ndim == 0
    x = np.atleast_1d(arr).copy()
    if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
        raise ValueError("expint_e1 requires finite v > 0")
    out = np.empty_like(x)

    small = x <= 1.0
    if np.any(small):
        xs = x[small]
        acc = np.zeros_like(xs)
        term = xs.copy()            # k = 1 term: v / (1*1!)
        k = 1
        while True:
            acc += term
            k += 1
            term *= -xs * (k - 1) / (k * k)
            if np.all(np.abs(term) < 1e-18 * np.maximum(np.abs(acc), 1e-3)) or k > 60:
                break
        out[small] = -_EULER_GAMMA - np.log(xs) + acc

    big = ~small
    if np.any(big):
        xb = x[big]
        # E1(x) = exp(-x) / (x + 1 - 1/(x + 3 - 4/(x + 5 - 9/(...)))),
        # modified Lentz; converged lanes are retired so the slowest value
        # (near x = 1) does not keep the whole array iterating
        tiny = 1e-300
        f = xb + 1.0
        c = f.copy()
        d = np.zeros_like(xb)
        idx = np.arange(xb.size)
        xa, fa, ca, da = xb, f, c, d
        for n in range(1, 300):
            b = xa + (2.0 * n + 1.0)
            a = -float(n * n)
            da = b + a * da
            da[da == 0.0] = tiny
            ca = b + a / ca
            ca[ca == 0.0] = tiny
            da = 1.0 / da
            delta = ca * da
            fa *= delta
            done = np.abs(delta - 1.0) < 1e-16
            if np.all(done):
                f[idx] = fa
                break
            if np.any(done):
                f[idx[done]] = fa[done]
                keep = ~done
                idx, xa, fa, ca, da = idx[keep], xa[keep], fa[keep], ca[keep], da[keep]
        else:
            f[idx] = fa
        with np.errstate(under="ignore"):
            out[big] = np.exp(-xb) / f

    return float(out[0]) if scalar else out.reshape(arr.shape)


def lsa_gain(xi: np.ndarray, gamma: np.ndarray,
             cfg: PpConfig = PpConfig()) -> np.ndarray:
    """MMSE log-spectral-amplitude gain, clamped to [gain_min, 1].

    G = xi/(1+xi) * exp(E1(v)/2) with v = xi*gamma/(1+xi).
    """
    xi = np.asarray(xi, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    wiener = xi / (1.0 + xi)
    v = np.maximum(wiener * gamma, 1e-50)
    # E1 underflows past ~700; exp(E1/2) is then exactly 1
    e1 = np.zeros_like(v)
    mod = v < 700.0
    if np.any(mod):
        e1[mod] = expint_e1(v[mod])
    gain = wiener * np.exp(0.5 * e1)
    return np.clip(gain, cfg.gain_min, 1.0)


def pp_frame(state: PpState, enhanced_frame: np.ndarray,
             noisy_frame: np.ndarray, cfg: PpConfig = PpConfig(),
             spp: np.ndarray | None = None) -> np.ndarray:
    """Suppress residual noise in one enhanced complex frame.

    Returns gain * enhanced_frame (phase untouched) and advances the
    recursive state. By default the speech-presence probability is the
    realized gain |enhanced|/|noisy|; pass `spp` to substitute an external
    estimate (e.g. an ideal mask when isolating the suppressor).
    """
    enhanced_mag = np.abs(enhanced_frame)
    noisy_mag = np.abs(noisy_frame)
    if spp is None:
        spp = derive_spp(enhanced_mag, noisy_mag)
    power = (enhanced_mag * enhanced_mag).astype(np.float64)
    pre = cepstral_preprocess(power, cfg)
    npsd = update_npsd(state, pre, spp, cfg)
    gamma = power / np.maximum(npsd, _EPS)
    xi = (cfg.beta_dd * state.prev_gain ** 2 * state.prev_gamma
          + (1.0 - cfg.beta_dd) * np.maximum(gamma - 1.0, 0.0))
    xi = np.maximum(xi, cfg.xi_min)
    gain = lsa_gain(xi, gamma, cfg)
    out = gain * np.asarray(enhanced_frame)
    state.prev_gain = gain
    state.prev_gamma = gamma
    state.frame_index += 1
    return out
