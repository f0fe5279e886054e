"""Utterance-level 39-d mean MFCC features used by the preselection stage.

Recipe: pre-emphasis, 25 ms Hamming windows at a 10 ms hop, 512-point
power spectrum, 26 triangular filters on the HTK mel scale spanning 0 to
Nyquist, log with floor, orthonormal DCT-II keeping coefficients 0..12,
then delta and delta-delta via +/-2-frame regression with edge
replication.  The output is the arithmetic mean over frames.  c0 is kept
as-is (no energy replacement); a final incomplete frame is dropped.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EmbeddingMatrix, UtteranceRecord
from .errors import DataFormatError


@dataclass(frozen=True)
class MfccConfig:
    sample_rate_hz: int = 16000
    preemphasis: float = 0.97
    window_ms: int = 25
    hop_ms: int = 10
    fft_size: int = 512
    n_mels: int = 26
    n_ceps: int = 13
    delta_window: int = 2
    log_floor: float = 1e-10

    @property
    def window_samples(self) -> int:
        return self.sample_rate_hz * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return self.sample_rate_hz * self.hop_ms // 1000

    def validate(self) -> "MfccConfig":
        if self.n_ceps > self.n_mels:
            raise DataFormatError("n_ceps must not exceed n_mels")
        if self.fft_size < self.window_samples:
            raise DataFormatError("fft_size smaller than the analysis window")
        if not (self.log_floor > 0):
            raise DataFormatError("log_floor must be positive")
        return self


def read_wav_pcm16(
    path: str | Path, expected_rate: int | None = 16000
) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM RIFF/WAVE file; samples scaled by 1/32768.

    No resampling: anything but PCM16 mono at expected_rate raises.  Pass
    expected_rate=None to accept any rate.
    """
    try:
        wf = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise DataFormatError("%s: not a readable WAV file: %s" % (path, exc)) from None
    with wf:
        if wf.getcomptype() != "NONE":
            raise DataFormatError("%s: unsupported encoding %r" % (path, wf.getcomptype()))
        if wf.getnchannels() != 1:
            raise DataFormatError(
                "%s: unsupported channel count %d (mono only)" % (path, wf.getnchannels())
            )
        if wf.getsampwidth() != 2:
            raise DataFormatError(
                "%s: unsupported sample width %d (16-bit only)" % (path, wf.getsampwidth())
            )
        rate = wf.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise DataFormatError(
                "%s: unsupported sample rate %d (expected %d, no resampling)"
                % (path, rate, expected_rate)
            )
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def _mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """n_mels x (fft_size/2 + 1) triangular weights, edges equally spaced
    on the HTK mel scale between 0 Hz and Nyquist, bins floored."""
    nyquist = cfg.sample_rate_hz / 2.0
    mel_points = np.linspace(_mel(0.0), _mel(nyquist), cfg.n_mels + 2)
    bins = np.floor((cfg.fft_size + 1) * _mel_inv(mel_points) / cfg.sample_rate_hz).astype(int)
    fbank = np.zeros((cfg.n_mels, cfg.fft_size // 2 + 1), dtype=np.float64)
    for j in range(cfg.n_mels):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            fbank[j, i] = (i - left) / max(center - left, 1)
        for i in range(center, right):
            fbank[j, i] = (right - i) / max(right - center, 1)
    return fbank


def _dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    # Orthonormal DCT-II rows 0..n_out-1.
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


def _deltas(feats: np.ndarray, window: int) -> np.ndarray:
    """Regression deltas over +/-window frames with edge replication."""
    n = feats.shape[0]
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    padded = np.concatenate(
        [np.repeat(feats[:1], window, axis=0), feats, np.repeat(feats[-1:], window, axis=0)]
    )
    out = np.zeros_like(feats)
    for k in range(1, window + 1):
        out += k * (padded[window + k : window + k + n] - padded[window - k : window - k + n])
    return out / denom


def mfcc39(samples: np.ndarray, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Mean 39-d MFCC (13 static + delta + delta-delta) of a waveform."""
    cfg.validate()
    x = np.asarray(samples, dtype=np.float64)
    win, hop = cfg.window_samples, cfg.hop_samples
    if x.size < win:
        raise DataFormatError(
            "input of %d samples is shorter than one %d-sample window" % (x.size, win)
        )

    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - cfg.preemphasis * x[:-1]

    n_frames = 1 + (x.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emph[idx] * np.hamming(win)[None, :]

    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = (spec.real**2 + spec.imag**2)

    mel_energy = power @ mel_filterbank(cfg).T
    log_mel = np.log(np.maximum(mel_energy, cfg.log_floor))

    static = log_mel @ _dct_matrix(cfg.n_ceps, cfg.n_mels).T
    d1 = _deltas(static, cfg.delta_window)
    d2 = _deltas(d1, cfg.delta_window)
    feats = np.concatenate([static, d1, d2], axis=1)

    mean = feats.mean(axis=0)
    if not np.isfinite(mean).all():
        raise DataFormatError("non-finite MFCC output")
    return mean


def features_for_manifest(
    records: list[UtteranceRecord],
    audio_root: str | Path | None = None,
    cfg: MfccConfig = MfccConfig(),
) -> EmbeddingMatrix:
    """Mean-MFCC matrix (dim 39) for every manifest utterance, keyed by
    utt_id.  audio_path entries resolve relative to audio_root."""
    root = Path(audio_root) if audio_root is not None else None
    rows = []
    for rec in records:
        if rec.audio_path is None:
            raise DataFormatError("utt %r has no audio_path" % (rec.utt_id,))
        path = Path(rec.audio_path)
        if root is not None and not path.is_absolute():
            path = root / path
        samples, _ = read_wav_pcm16(path, expected_rate=cfg.sample_rate_hz)
        rows.append((rec.utt_id, mfcc39(samples, cfg).astype(np.float32)))
    return EmbeddingMatrix.from_rows(3 * cfg.n_ceps, rows)
