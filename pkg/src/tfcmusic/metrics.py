"""Objective metrics: fwSNR, multi-resolution spectrogram loss, L1 spectrogram
distance and SDR, plus directory-level evaluation reports."""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import audio
from .errors import ConfigError, DegenerateReference, InvalidInput
from .spectral import DEFAULT_EXPONENT, PIPELINE_STFT, SAMPLE_RATE, StftConfig, compress, stft

FWSNR_FRAME = 480  # 30 ms at 16 kHz
FWSNR_HOP = FWSNR_FRAME // 4
FWSNR_NFFT = 1024
FWSNR_BANDS = 25
FWSNR_GAMMA = 0.2
FWSNR_CLIP_DB = (-10.0, 35.0)
MRS_FFT_SIZES = (512, 1024, 2048)
MRS_FLOOR = 1e-7
METRIC_NAMES = ("fwsnr_db", "mrs", "l1_spec", "sdr_db")
SDR_NOTE = (
    "sdr_db is the plain energy ratio 10*log10(sum(ref^2) / sum((ref - est)^2)), "
    "not the BSS-Eval projection family"
)


def _pair(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise InvalidInput(f"length mismatch: {ref.shape} vs {est.shape}")
    return ref, est


def sdr(ref, est):
    ref, est = _pair(ref, est)
    num = float(np.sum(ref**2))
    if num == 0.0:
        raise DegenerateReference("reference is silent")
    den = float(np.sum((ref - est) ** 2))
    if den == 0.0:
        return math.inf
    return 10.0 * math.log10(num / den)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bands=FWSNR_BANDS, n_fft=FWSNR_NFFT, sample_rate=SAMPLE_RATE):
    """Triangular filters equally spaced on the mel scale, shape ``(n_bands, n_fft//2 + 1)``."""
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def fwsnr(ref, est):
    """Frequency-weighted segmental SNR in dB.

    Per 30 ms Hann frame and mel band: SNR of the reference band energy over
    the band energy of the complex spectral error, clipped to [-10, 35] dB,
    weighted by the reference band magnitude to the power 0.2.
    """
    ref, est = _pair(ref, est)
    if ref.size < FWSNR_FRAME:
        raise InvalidInput(f"signals shorter than one {FWSNR_FRAME}-sample frame")
    window = np.hanning(FWSNR_FRAME + 1)[:-1]
    idx = np.arange(FWSNR_FRAME)[None, :] + FWSNR_HOP * np.arange((ref.size - FWSNR_FRAME) // FWSNR_HOP + 1)[:, None]
    r = np.fft.rfft(ref[idx] * window, FWSNR_NFFT)
    e = np.fft.rfft(est[idx] * window, FWSNR_NFFT)
    bank = mel_filterbank()
    p_ref = np.abs(r) ** 2 @ bank.T
    p_err = np.abs(r - e) ** 2 @ bank.T
    weight = (np.abs(r) @ bank.T) ** FWSNR_GAMMA
    with np.errstate(divide="ignore", invalid="ignore"):
        band_snr = 10.0 * np.log10(p_ref / p_err)
    band_snr[p_err == 0] = np.inf
    band_snr[(p_ref == 0) & (p_err > 0)] = -np.inf
    band_snr = np.clip(band_snr, *FWSNR_CLIP_DB)
    total_weight = weight.sum(axis=1)
    valid = total_weight > 0
    if not valid.any():
        raise DegenerateReference("reference is silent in every frame")
    per_frame = (weight[valid] * band_snr[valid]).sum(axis=1) / total_weight[valid]
    return float(per_frame.mean())


def mrs(ref, est, fft_sizes=MRS_FFT_SIZES):
    """Sum over resolutions of spectral convergence plus mean log-magnitude L1."""
    ref, est = _pair(ref, est)
    total = 0.0
    for n_fft in fft_sizes:
        cfg = StftConfig(fft_size=n_fft, hop=n_fft // 4, window="hann", drop_nyquist=False)
        mr = np.abs(stft(ref, cfg))
        me = np.abs(stft(est, cfg))
        denom = np.linalg.norm(mr)
        diff = np.linalg.norm(mr - me)
        total += diff / denom if denom > 0 else (0.0 if diff == 0 else math.inf)
        total += float(np.mean(np.abs(np.log(np.maximum(mr, MRS_FLOOR)) - np.log(np.maximum(me, MRS_FLOOR)))))
    return float(total)


def l1_spec_distance(mag_a, mag_b):
    return float(np.mean(np.abs(np.asarray(mag_a, dtype=np.float64) - np.asarray(mag_b, dtype=np.float64))))


def l1_spec(ref, est, cfg=PIPELINE_STFT, c=DEFAULT_EXPONENT):
    ref, est = _pair(ref, est)
    return l1_spec_distance(compress(stft(ref, cfg), c).mag, compress(stft(est, cfg), c).mag)


def pair_metrics(ref, est):
    return {
        "fwsnr_db": fwsnr(ref, est),
        "mrs": mrs(ref, est),
        "l1_spec": l1_spec(ref, est),
        "sdr_db": sdr(ref, est),
    }


# -- reports --------------------------------------------------------------


@dataclass
class MetricsReport:
    pairs: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    fad: object = None
    note: str = SDR_NOTE

    @property
    def ok(self):
        return not self.errors

    def to_dict(self):
        return asdict(self)


def aggregate(records):
    """Mean and 95% Student-t confidence half-width per metric."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([rec[name] for rec in records], dtype=np.float64)
        mean = float(np.mean(vals)) if vals.size else math.nan
        ci = None
        if vals.size >= 2 and np.all(np.isfinite(vals)):
            ci = float(stats.t.ppf(0.975, vals.size - 1) * np.std(vals, ddof=1) / math.sqrt(vals.size))
        out[name] = {"mean": mean, "ci95": ci, "n": int(vals.size)}
    return out


def build_report(records, errors=()):
    records = sorted(records, key=lambda r: r["id"])
    return MetricsReport(
        pairs=records,
        errors=sorted(errors, key=lambda e: e["id"]),
        aggregates=aggregate(records),
    )


def _wav_ids(directory, suffix):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    found = {}
    for path in sorted(directory.glob(f"*{suffix}.wav")):
        stem = path.stem
        found[stem[: len(stem) - len(suffix)] if suffix else stem] = path
    return found


def evaluate(ref_dir, est_dir, ref_suffix="", est_suffix=""):
    """Score every ``est_dir`` WAV against the ``ref_dir`` WAV with the same id."""
    refs = _wav_ids(ref_dir, ref_suffix)
    ests = _wav_ids(est_dir, est_suffix)
    if not refs:
        raise ConfigError(f"no reference WAVs in {ref_dir}")
    if not ests:
        raise ConfigError(f"no estimate WAVs in {est_dir}")
    records, errors = [], []
    for pid in sorted(set(refs) | set(ests)):
        if pid not in ests:
            errors.append({"id": pid, "error": "missing estimate"})
            continue
        if pid not in refs:
            errors.append({"id": pid, "error": "missing reference"})
            continue
        try:
            ref = audio.read_wav(refs[pid])
            est = audio.read_wav(ests[pid])
            if ref.shape != est.shape:
                raise InvalidInput(f"length mismatch: {ref.size} vs {est.size} samples")
            records.append({"id": pid, **pair_metrics(ref, est)})
        except (InvalidInput, DegenerateReference, audio.AudioFormatError) as exc:
            errors.append({"id": pid, "error": str(exc)})
    return build_report(records, errors)
