"""Waveform-level enhancement with a trained generator."""

import numpy as np
import torch

from .degrade import normalize_peak
from .spectral import PIPELINE_STFT, SAMPLE_RATE, analyze, resynthesize

LONG_FILE_SECONDS = 30.0
WINDOW_SECONDS = 3.0
FADE_SECONDS = 0.25


@torch.no_grad()
def enhance_segment(model, x, stft_cfg=PIPELINE_STFT):
    model.eval()
    dtype = next(model.parameters()).dtype
    y = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=dtype)[None]
    noisy, phase = analyze(y, stft_cfg, model.config.exponent)
    out = resynthesize(model(noisy, phase), stft_cfg, length=y.shape[-1])
    return out[0].to(torch.float64).numpy()


def window_starts(length, window, fade):
    if length <= window:
        return [0]
    hop = window - fade
    starts = list(range(0, length - window, hop))
    starts.append(length - window)
    return starts


def crossfade_gains(starts, length, window, fade):
    """Per-window gains: sine fade-in and cosine fade-out over ``fade`` samples."""
    theta = np.linspace(0.0, np.pi / 2, fade)
    gains = []
    for i, start in enumerate(starts):
        g = np.ones(min(window, length - start))
        if i + 1 < len(starts):
            rel = starts[i + 1] - start
            g[rel : rel + fade] *= np.cos(theta)[: max(0, min(fade, g.size - rel))]
            g[rel + fade :] = 0.0
        if i > 0:
            g[:fade] *= np.sin(theta)
        gains.append(g)
    return gains


def enhance_waveform(model, x, stft_cfg=PIPELINE_STFT, peak_target=0.95):
    """Enhance a clip of any length; the output has exactly ``len(x)`` samples.

    Input is peak-normalized like the training data and the original level is
    restored afterwards. Clips longer than 30 s are processed in 3 s windows
    joined with 0.25 s equal-power crossfades.
    """
    x = np.asarray(x, dtype=np.float64)
    normed, silent = normalize_peak(x, peak_target)
    if silent:
        return np.zeros_like(x)
    scale = np.max(np.abs(x)) / peak_target
    if x.size <= LONG_FILE_SECONDS * SAMPLE_RATE:
        return enhance_segment(model, normed, stft_cfg) * scale
    window = int(WINDOW_SECONDS * SAMPLE_RATE)
    fade = int(FADE_SECONDS * SAMPLE_RATE)
    starts = window_starts(x.size, window, fade)
    out = np.zeros_like(x)
    for start, gain in zip(starts, crossfade_gains(starts, x.size, window, fade)):
        seg = normed[start : start + gain.size]
        out[start : start + gain.size] += enhance_segment(model, seg, stft_cfg) * gain
    return out * scale
