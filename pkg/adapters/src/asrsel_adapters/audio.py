"""PCM16 mono 16 kHz audio I/O and the input perturbations: tempo change
(phase-vocoder time stretch) followed by pitch shift (stretch plus
resample).

Output lengths are exact: a tempo factor a maps N samples to
round(N / a), and a pitch shift preserves N, so chained shifts round-trip
to the original duration.  The identity configuration copies the file
verbatim.
"""

from __future__ import annotations

import shutil
import wave
from pathlib import Path

import numpy as np

from .wire import Config, validate_config

SAMPLE_RATE = 16000
_NFFT = 1024
_HOP = 256


def read_wav(path: str | Path) -> np.ndarray:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2 or wf.getcomptype() != "NONE":
            raise ValueError("%s: need mono 16-bit PCM" % (path,))
        if wf.getframerate() != SAMPLE_RATE:
            raise ValueError(
                "%s: need %d Hz input, got %d" % (path, SAMPLE_RATE, wf.getframerate())
            )
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path: str | Path, samples: np.ndarray) -> None:
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())


def _stft(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    pad = np.concatenate([np.zeros(_NFFT // 2), x, np.zeros(_NFFT)])
    n_frames = 1 + (len(pad) - _NFFT) // _HOP
    idx = np.arange(_NFFT)[None, :] + _HOP * np.arange(n_frames)[:, None]
    return np.fft.rfft(pad[idx] * window[None, :], axis=1).T  # bins x frames


def _istft(spec: np.ndarray, window: np.ndarray, length: int) -> np.ndarray:
    frames = np.fft.irfft(spec.T, n=_NFFT, axis=1) * window[None, :]
    n_frames = frames.shape[0]
    out = np.zeros(_NFFT + _HOP * (n_frames - 1))
    norm = np.zeros_like(out)
    wsq = window * window
    for f in range(n_frames):
        at = f * _HOP
        out[at : at + _NFFT] += frames[f]
        norm[at : at + _NFFT] += wsq
    out = out / np.maximum(norm, 1e-8)
    out = out[_NFFT // 2 :]
    if len(out) < length:
        out = np.concatenate([out, np.zeros(length - len(out))])
    return out[:length]


def time_stretch(x: np.ndarray, factor: float) -> np.ndarray:
    """Change duration by `factor` at constant pitch; output length is
    exactly round(len(x) * factor)."""
    target = int(round(len(x) * factor))
    if factor == 1.0 or len(x) == 0:
        return x[:target].copy()
    window = np.hanning(_NFFT)
    spec = _stft(x, window)
    n_bins, n_frames = spec.shape

    steps = np.arange(0, n_frames, 1.0 / factor)
    omega = 2.0 * np.pi * _HOP * np.arange(n_bins) / _NFFT
    out = np.zeros((n_bins, len(steps)), dtype=np.complex128)
    phase = np.angle(spec[:, 0])
    for k, t in enumerate(steps):
        lo = min(int(t), n_frames - 1)
        hi = min(lo + 1, n_frames - 1)
        frac = t - lo
        mag = (1.0 - frac) * np.abs(spec[:, lo]) + frac * np.abs(spec[:, hi])
        out[:, k] = mag * np.exp(1j * phase)
        dphi = np.angle(spec[:, hi]) - np.angle(spec[:, lo]) - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase = phase + omega + dphi
    return _istft(out, window, target)


def pitch_shift(x: np.ndarray, semitones: int) -> np.ndarray:
    """Shift pitch without changing duration: stretch by the frequency
    ratio, then resample back to the original length."""
    if semitones == 0 or len(x) == 0:
        return x.copy()
    ratio = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(x, ratio)
    positions = np.arange(len(x)) * (len(stretched) / len(x))
    lo = np.minimum(positions.astype(int), len(stretched) - 1)
    hi = np.minimum(lo + 1, len(stretched) - 1)
    frac = positions - lo
    return (1.0 - frac) * stretched[lo] + frac * stretched[hi]


def apply_input_perturbation(x: np.ndarray, cfg: Config) -> np.ndarray:
    """Tempo factor first, then pitch shift."""
    validate_config(cfg)
    y = x
    if cfg.atempo != 1.0:
        y = time_stretch(y, 1.0 / cfg.atempo)
    if cfg.pitch_semitones != 0:
        y = pitch_shift(y, cfg.pitch_semitones)
    return y


def perturb_audio(in_path: str | Path, cfg: Config, out_path: str | Path) -> None:
    """Write the input-perturbed version of a WAV file.  The identity
    configuration copies the file bytes verbatim."""
    validate_config(cfg)
    if not cfg.has_input_perturbation:
        shutil.copyfile(in_path, out_path)
        return
    write_wav(out_path, apply_input_perturbation(read_wav(in_path), cfg))
