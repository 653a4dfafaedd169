"""STFT analysis/synthesis and power-law magnitude compression.

Every public function accepts either numpy arrays or torch tensors and
returns the same kind. numpy input is promoted to float64/complex128, so
oracle-level checks run in double precision; torch input keeps its dtype
and stays differentiable, which is what the training path relies on.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidInput

SAMPLE_RATE = 16000
DEFAULT_EXPONENT = 0.3

_WINDOWS = {
    "hamming": torch.hamming_window,
    "hann": torch.hann_window,
}


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop: int = 256
    window: str = "hamming"
    centered: bool = True
    drop_nyquist: bool = True
    # with drop_nyquist, carry the (real) Nyquist value in the imaginary part of
    # the (real) DC bin so the 512-bin grid stays lossless
    pack_nyquist: bool = True
    # floor for the squared-window envelope in the overlap-add division
    envelope_floor: float = 1e-10

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0 or self.hop > self.fft_size:
            raise InvalidInput(f"invalid fft_size/hop: {self.fft_size}/{self.hop}")
        if self.window not in _WINDOWS:
            raise InvalidInput(f"unknown window {self.window!r}")

    @property
    def num_bins(self):
        n = self.fft_size // 2 + 1
        return n - 1 if self.drop_nyquist else n

    def window_tensor(self, dtype=torch.float64, device=None):
        return _WINDOWS[self.window](self.fft_size, periodic=True, dtype=dtype, device=device)

    def num_frames(self, length):
        if self.centered:
            return length // self.hop + 1
        return (length - self.fft_size) // self.hop + 1


PIPELINE_STFT = StftConfig()


@dataclass
class CompressedSpecTriplet:
    """Compressed magnitude together with its real and imaginary planes."""

    mag: object
    re: object
    im: object
    c: float = DEFAULT_EXPONENT

    @property
    def shape(self):
        return tuple(self.mag.shape)


def _to_tensor(x, real=True):
    if isinstance(x, torch.Tensor):
        return x, False
    arr = np.asarray(x)
    if real:
        return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64)), True
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.complex128)), True


def stft(x, cfg=PIPELINE_STFT):
    """Complex STFT of ``x`` with shape ``(..., L)`` -> ``(..., T, F)``."""
    xt, was_numpy = _to_tensor(x)
    if xt.shape[-1] == 0:
        raise InvalidInput("stft of an empty signal")
    if not torch.isfinite(xt).all():
        raise InvalidInput("stft input contains non-finite samples")
    lead = xt.shape[:-1]
    flat = xt.reshape(-1, xt.shape[-1])
    if cfg.centered:
        pad = cfg.fft_size // 2
        if flat.shape[-1] <= pad:
            raise InvalidInput(
                f"signal of {flat.shape[-1]} samples is too short for reflection padding of {pad}"
            )
        flat = F.pad(flat.unsqueeze(1), (pad, pad), mode="reflect").squeeze(1)
    if flat.shape[-1] < cfg.fft_size:
        raise InvalidInput("signal shorter than one frame")
    frames = flat.unfold(-1, cfg.fft_size, cfg.hop)
    win = cfg.window_tensor(dtype=flat.dtype, device=flat.device)
    spec = torch.fft.rfft(frames * win, dim=-1)
    if cfg.drop_nyquist:
        nyq = spec[..., -1].real
        spec = spec[..., :-1]
        if cfg.pack_nyquist:
            spec = torch.cat([torch.complex(spec[..., :1].real, nyq[..., None]), spec[..., 1:]], dim=-1)
    spec = spec.reshape(*lead, *spec.shape[-2:])
    return spec.numpy() if was_numpy else spec


def istft(spec, cfg=PIPELINE_STFT, length=None):
    """Least-squares overlap-add inverse of :func:`stft`.

    ``length`` defaults to ``(T - 1) * hop`` samples.
    """
    st, was_numpy = _to_tensor(spec, real=False)
    if not torch.isfinite(torch.view_as_real(st)).all():
        raise InvalidInput("istft input contains non-finite values")
    if cfg.drop_nyquist:
        if cfg.pack_nyquist:
            dc = st[..., :1]
            st = torch.cat([dc.real.to(st.dtype), st[..., 1:], dc.imag.to(st.dtype)], dim=-1)
        else:
            st = F.pad(st, (0, 1))
    lead = st.shape[:-2]
    n_frames = st.shape[-2]
    st = st.reshape(-1, n_frames, st.shape[-1])
    real_dtype = st.real.dtype
    win = cfg.window_tensor(dtype=real_dtype, device=st.device)
    frames = torch.fft.irfft(st, n=cfg.fft_size, dim=-1) * win
    total = (n_frames - 1) * cfg.hop + cfg.fft_size
    ola = F.fold(
        frames.transpose(1, 2),
        output_size=(1, total),
        kernel_size=(1, cfg.fft_size),
        stride=(1, cfg.hop),
    ).reshape(frames.shape[0], total)
    env = F.fold(
        (win * win).reshape(1, -1, 1).expand(1, cfg.fft_size, n_frames),
        output_size=(1, total),
        kernel_size=(1, cfg.fft_size),
        stride=(1, cfg.hop),
    ).reshape(total)
    y = ola / env.clamp(min=cfg.envelope_floor)
    start = cfg.fft_size // 2 if cfg.centered else 0
    if length is None:
        length = (n_frames - 1) * cfg.hop
    y = y[:, start : start + length]
    if y.shape[-1] < length:
        y = F.pad(y, (0, length - y.shape[-1]))
    y = y.reshape(*lead, length)
    return y.numpy() if was_numpy else y


def _safe_pow(x, p):
    """``x ** p`` for ``x >= 0`` with value and gradient 0 at ``x == 0``."""
    if p == 0:
        return torch.ones_like(x)
    pos = x > 0
    return torch.where(pos, torch.where(pos, x, torch.ones_like(x)) ** p, torch.zeros_like(x))


def compress(spec, c=DEFAULT_EXPONENT):
    """Raise magnitudes to the power ``c`` while keeping phase."""
    if not 0 < c <= 1:
        raise InvalidInput(f"compression exponent must be in (0, 1], got {c}")
    st, was_numpy = _to_tensor(spec, real=False)
    mag = _safe_pow(st.abs(), c)
    phase = torch.angle(st)
    re = mag * torch.cos(phase)
    im = mag * torch.sin(phase)
    if was_numpy:
        return CompressedSpecTriplet(mag.numpy(), re.numpy(), im.numpy(), c)
    return CompressedSpecTriplet(mag, re, im, c)


def magnitude(re, im):
    """sqrt(re^2 + im^2) with a zero (not NaN) gradient at the origin."""
    if isinstance(re, np.ndarray):
        return np.hypot(re, im)
    return _safe_pow(re * re + im * im, 0.5)


def decompress(re, im, c=DEFAULT_EXPONENT):
    """Undo the power law: returns the complex linear-magnitude spectrogram."""
    rt, was_numpy = _to_tensor(re)
    it, _ = _to_tensor(im)
    factor = _safe_pow(rt * rt + it * it, (1.0 - c) / (2.0 * c))
    out = torch.complex(rt * factor, it * factor)
    return out.numpy() if was_numpy else out


def resynthesize(est, cfg=PIPELINE_STFT, length=None):
    """Waveform from a compressed estimate; magnitude is recomputed from re/im."""
    return istft(decompress(est.re, est.im, est.c), cfg, length=length)


def analyze(x, cfg=PIPELINE_STFT, c=DEFAULT_EXPONENT):
    """Waveform -> (compressed triplet, phase of the uncompressed STFT)."""
    spec = stft(x, cfg)
    trip = compress(spec, c)
    phase = np.angle(spec) if isinstance(spec, np.ndarray) else torch.angle(spec)
    return trip, phase
