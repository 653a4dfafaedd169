"""Seeded simulation of low-quality recordings.

Pipeline per clip: reverberation (RIR convolution) -> additive noise at a
sampled SNR -> four-band EQ -> 35 Hz low-cut -> peak normalization. The clean
target gets the same low-cut and normalization so both sides are level
matched. All random draws come from a Philox counter-based generator keyed by
the spec seed, with the example index in the counter, so every example is
reproducible regardless of the order in which examples are generated.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from . import audio
from .errors import ConfigError, DegenerateNoise, InvalidInput
from .spectral import SAMPLE_RATE, StftConfig, istft, stft

BAND_EDGES_HZ = ((0.0, 200.0), (200.0, 1000.0), (1000.0, 4000.0), (4000.0, 8000.0))
EQ_STFT = StftConfig(drop_nyquist=False)
SYNTHETIC_BANK_SIZE = 8
SYNTHETIC_NOISE_SECONDS = 10.0


@dataclass
class DegradationSpec:
    rir_source: str = "synthetic"
    noise_source: str = "synthetic"
    snr_range_db: tuple = (5.0, 30.0)
    band_gain_range_db: tuple = (-15.0, 15.0)
    band_edges_hz: tuple = BAND_EDGES_HZ
    lowcut_hz: float = 35.0
    peak_target: float = 0.95
    seed: int = 0

    def __post_init__(self):
        self.snr_range_db = tuple(float(v) for v in self.snr_range_db)
        self.band_gain_range_db = tuple(float(v) for v in self.band_gain_range_db)
        self.band_edges_hz = tuple(tuple(float(v) for v in band) for band in self.band_edges_hz)
        lo, hi = self.snr_range_db
        if not lo <= hi:
            raise ConfigError(f"snr_range_db low {lo} exceeds high {hi}")
        glo, ghi = self.band_gain_range_db
        if not glo <= ghi:
            raise ConfigError(f"band_gain_range_db low {glo} exceeds high {ghi}")
        if self.band_edges_hz != BAND_EDGES_HZ:
            raise ConfigError(f"band edges must be {BAND_EDGES_HZ}")
        if not 0 < self.peak_target <= 1:
            raise ConfigError("peak_target must be in (0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        d = asdict(self)
        d["snr_range_db"] = list(self.snr_range_db)
        d["band_gain_range_db"] = list(self.band_gain_range_db)
        d["band_edges_hz"] = [list(b) for b in self.band_edges_hz]
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown degradation keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AppliedDegradation:
    """Everything needed to re-derive a degraded clip from its clean source."""

    rir_id: str
    noise_id: str
    snr_db: float
    band_gains_db: list
    noise_offset: int
    seed: int
    index: int

    def to_dict(self):
        d = asdict(self)
        # JSON has no infinity; keep the sentinel readable
        if math.isinf(self.snr_db):
            d["snr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["snr_db"] = float(d["snr_db"])
        return cls(**d)


@dataclass
class PairedExample:
    clean: np.ndarray
    degraded: np.ndarray
    applied: AppliedDegradation
    silent: dict = field(default_factory=dict)


def example_rng(seed, index=0):
    """Counter-based generator for example ``index`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(index)]))


# -- primitive operations -------------------------------------------------


def convolve_rir(x, h):
    """Full linear convolution truncated to ``len(x)`` (no delay compensation)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0 or not np.all(np.isfinite(h)):
        raise InvalidInput("impulse response must be nonempty and finite")
    method = "direct" if h.size <= 256 else "fft"
    return signal.convolve(x, h, mode="full", method=method)[: x.size]


def noise_gain(s, n, snr_db):
    es = float(np.sum(np.square(s)))
    en = float(np.sum(np.square(n)))
    if en == 0.0:
        raise DegenerateNoise("noise clip is silent")
    return math.sqrt(es / (en * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(s, n, snr_db):
    s = np.asarray(s, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if s.shape != n.shape:
        raise InvalidInput(f"signal and noise lengths differ: {s.shape} vs {n.shape}")
    return s + noise_gain(s, n, snr_db) * n


def band_index(freqs_hz):
    """Band of each frequency; band ``k`` covers ``[lo_k, hi_k)`` except the last, which is closed."""
    idx = np.searchsorted([hi for _, hi in BAND_EDGES_HZ[:-1]], freqs_hz, side="right")
    return np.minimum(idx, len(BAND_EDGES_HZ) - 1)


def band_eq(x, gains_db):
    gains_db = np.asarray(gains_db, dtype=np.float64)
    if gains_db.shape != (4,) or not np.all(np.isfinite(gains_db)):
        raise InvalidInput("band_eq needs four finite gains")
    x = np.asarray(x, dtype=np.float64)
    spec = stft(x, EQ_STFT)
    freqs = np.arange(spec.shape[-1]) * SAMPLE_RATE / EQ_STFT.fft_size
    per_bin = 10.0 ** (gains_db[band_index(freqs)] / 20.0)
    return istft(spec * per_bin, EQ_STFT, length=x.size)


def lowcut(x, cutoff_hz=35.0, order=4):
    sos = signal.butter(order, cutoff_hz, btype="highpass", fs=SAMPLE_RATE, output="sos")
    return signal.sosfilt(sos, np.asarray(x, dtype=np.float64))


def normalize_peak(x, target=0.95):
    """Scale so that max |y| == target. Returns ``(y, silent)``."""
    x = np.asarray(x, dtype=np.float64)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        return x.copy(), True
    return x * (target / peak), False


# -- RIR / noise banks ----------------------------------------------------


def synthetic_rir(item, sample_rate=SAMPLE_RATE):
    """Unit direct path plus an exponentially decaying white-noise tail.

    RT60 is drawn from [0.2, 0.8] s and the direct-to-reverberant energy
    ratio from [0, 10] dB.
    """
    rng = np.random.Generator(np.random.Philox(key=1_000_003 + item))
    rt60 = rng.uniform(0.2, 0.8)
    drr_db = rng.uniform(0.0, 10.0)
    n = int(rt60 * sample_rate)
    t = np.arange(1, n) / sample_rate
    tail = rng.standard_normal(n - 1) * np.exp(-6.908 * t / rt60)
    tail *= math.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail**2))
    return np.concatenate([[1.0], tail])


def synthetic_noise(item, seconds=SYNTHETIC_NOISE_SECONDS, sample_rate=SAMPLE_RATE):
    """Pink (1/f power) noise via spectral shaping of white noise."""
    rng = np.random.Generator(np.random.Philox(key=2_000_003 + item))
    n = int(seconds * sample_rate)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    f[0] = f[1]
    pink = np.fft.irfft(spec / np.sqrt(f), n)
    return pink / np.max(np.abs(pink))


class Bank:
    """Ordered collection of named signals loaded lazily."""

    def __init__(self, items):
        self._items = dict(items)
        self._cache = {}
        if not self._items:
            raise ConfigError("empty RIR/noise bank")
        self.ids = sorted(self._items)

    def __len__(self):
        return len(self.ids)

    def get(self, item_id):
        if item_id not in self._cache:
            if item_id not in self._items:
                raise ConfigError(f"unknown bank item {item_id!r}")
            self._cache[item_id] = np.asarray(self._items[item_id](), dtype=np.float64)
        return self._cache[item_id]

    @classmethod
    def from_source(cls, source, kind):
        if source == "synthetic":
            make = synthetic_rir if kind == "rir" else synthetic_noise
            return cls({f"synthetic-{kind}-{i}": (lambda i=i: make(i)) for i in range(SYNTHETIC_BANK_SIZE)})
        if source == "identity" and kind == "rir":
            return cls({"identity": lambda: np.array([1.0])})
        path = Path(source)
        if not path.is_dir():
            raise ConfigError(f"{kind} source {source!r} is neither a directory nor a built-in bank")
        files = sorted(path.glob("*.wav"))
        return cls({f.stem: (lambda f=f: audio.read_wav(f)) for f in files})


def load_banks(spec):
    return Bank.from_source(spec.rir_source, "rir"), Bank.from_source(spec.noise_source, "noise")


# -- pipeline -------------------------------------------------------------


def _uniform(rng, lo, hi, size=None):
    if lo == hi:
        return np.full(size, lo) if size else lo
    return rng.uniform(lo, hi, size)


def sample_degradation(spec, rir_bank, noise_bank, index=0):
    rng = example_rng(spec.seed, index)
    rir_id = rir_bank.ids[int(rng.integers(len(rir_bank)))]
    noise_id = noise_bank.ids[int(rng.integers(len(noise_bank)))]
    snr = float(_uniform(rng, *spec.snr_range_db))
    gains = [float(g) for g in _uniform(rng, *spec.band_gain_range_db, size=4)]
    offset = int(rng.integers(len(noise_bank.get(noise_id))))
    return AppliedDegradation(rir_id, noise_id, snr, gains, offset, int(spec.seed), int(index))


def tile_noise(noise, length, offset=0):
    if noise.size == 0:
        raise DegenerateNoise("noise clip is empty")
    return np.resize(np.roll(noise, -offset), length)


def replay(clean, spec, applied, rir_bank, noise_bank):
    """Apply a recorded degradation to ``clean``; bit-exact with :func:`degrade`."""
    clean = np.asarray(clean, dtype=np.float64)
    x = convolve_rir(clean, rir_bank.get(applied.rir_id))
    if not math.isinf(applied.snr_db):
        n = tile_noise(noise_bank.get(applied.noise_id), x.size, applied.noise_offset)
        x = mix_at_snr(x, n, applied.snr_db)
    x = band_eq(x, applied.band_gains_db)
    degraded, deg_silent = normalize_peak(lowcut(x, spec.lowcut_hz), spec.peak_target)
    target, clean_silent = normalize_peak(lowcut(clean, spec.lowcut_hz), spec.peak_target)
    return PairedExample(target, degraded, applied, {"clean": clean_silent, "degraded": deg_silent})


def degrade(clean, spec, index=0, banks=None):
    clean = np.asarray(clean, dtype=np.float64)
    if clean.size < SAMPLE_RATE:
        raise InvalidInput(f"clean clip must be at least 1 s, got {clean.size} samples")
    rir_bank, noise_bank = banks if banks is not None else load_banks(spec)
    applied = sample_degradation(spec, rir_bank, noise_bank, index)
    return replay(clean, spec, applied, rir_bank, noise_bank)


# -- dataset generation ---------------------------------------------------


def write_pair(out_dir, pair_id, example, spec):
    pairs = Path(out_dir) / "pairs"
    clean_path = pairs / f"{pair_id}_clean.wav"
    degraded_path = pairs / f"{pair_id}_degraded.wav"
    meta_path = pairs / f"{pair_id}_meta.json"
    audio.write_wav(clean_path, example.clean)
    audio.write_wav(degraded_path, example.degraded)
    meta = {"id": pair_id, "applied": example.applied.to_dict(), "spec": spec.to_dict(), "silent": example.silent}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return {
        "id": pair_id,
        "clean": str(clean_path.relative_to(out_dir)),
        "degraded": str(degraded_path.relative_to(out_dir)),
        "meta": str(meta_path.relative_to(out_dir)),
    }


def synthetic_music(seconds=3.0, seed=0, sample_rate=SAMPLE_RATE):
    """Harmonic note sequence with decaying envelopes; a stand-in for a solo clip."""
    rng = np.random.Generator(np.random.Philox(key=3_000_017 + int(seed)))
    n = int(seconds * sample_rate)
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    onset = 0.0
    while onset < seconds:
        dur = rng.uniform(0.25, 0.8)
        f0 = 110.0 * 2.0 ** (rng.integers(0, 36) / 12.0)
        local = t - onset
        env = np.where(local >= 0, np.exp(-3.0 * np.clip(local, 0, None) / dur), 0.0)
        env *= np.clip(local / 0.01, 0.0, 1.0)
        for k in range(1, 9):
            if k * f0 < sample_rate / 2:
                x += env * (0.6 ** k) * np.sin(2 * np.pi * k * f0 * local + rng.uniform(0, 2 * np.pi))
        onset += dur
    return 0.9 * x / np.max(np.abs(x))
