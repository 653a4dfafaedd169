"""16-bit PCM mono WAV input/output at the pipeline sample rate."""

import wave
from pathlib import Path

import numpy as np

from .errors import AudioFormatError
from .spectral import SAMPLE_RATE


def read_wav(path):
    """Read a 16 kHz mono 16-bit WAV as float64 samples in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    problems = []
    if rate != SAMPLE_RATE:
        problems.append(f"sample rate {rate} Hz (expected {SAMPLE_RATE}; resample beforehand, e.g. `sox in.wav -r 16000 out.wav`)")
    if channels != 1:
        problems.append(f"{channels} channels (expected mono)")
    if width != 2:
        problems.append(f"{8 * width}-bit samples (expected 16-bit PCM)")
    if problems:
        raise AudioFormatError(f"{path}: " + "; ".join(problems))
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def to_pcm16(x):
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, x):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(to_pcm16(x).tobytes())
