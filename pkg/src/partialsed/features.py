"""Time-frequency features: log-mel extraction, normalization, caching.

The default configuration (10 s clips, 40 ms frames, 20 ms hop, 64 mel
bins at 44.1 kHz) yields exactly 500 x 64 matrices. Framing is centered
with reflective padding so the frame count is clip_length / hop.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Clip, Recording
from .errors import ConfigError, ContractError, IntegrityError
from .synth import SynthDescriptor

NORMALIZATION_MODES = ("none", "per-corpus-zscore")


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 44100
    frame_length: float = 0.040
    hop: float = 0.020
    mel_bins: int = 64
    log_offset: float = 1e-10
    normalization: str = "per-corpus-zscore"
    clip_length: float = 10.0
    fmin: float = 0.0
    fmax: float | None = None

    def __post_init__(self):
        if self.hop <= 0 or self.frame_length < self.hop:
            raise ConfigError("need frame_length >= hop > 0")
        if self.mel_bins < 1:
            raise ConfigError("mel_bins must be >= 1")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(f"unknown normalization {self.normalization!r}")

    @property
    def frames(self) -> int:
        return int(round(self.clip_length / self.hop))

    @property
    def win_samples(self) -> int:
        return int(round(self.frame_length * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "FeatureConfig":
        return cls(**payload)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular, area-normalized mel filters over the rfft bins.

    Returns (filterbank of shape mel_bins x n_freqs, band center
    frequencies in Hz).
    """
    n_fft = config.win_samples
    fmax = config.fmax if config.fmax is not None else config.sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(config.fmin), hz_to_mel(fmax), config.mel_bins + 2)
    hz_pts = mel_to_hz(mel_pts)
    freqs = np.linspace(0.0, config.sample_rate / 2.0, n_fft // 2 + 1)
    fb = np.zeros((config.mel_bins, freqs.size), dtype=np.float64)
    for m in range(config.mel_bins):
        f_lo, f_c, f_hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - f_lo) / (f_c - f_lo)
        falling = (f_hi - freqs) / (f_hi - f_c)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        fb[m] *= 2.0 / (f_hi - f_lo)
    return fb, hz_pts[1:-1]


def logmel(waveform: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Log mel-band power spectrogram, shape (frames, mel_bins), float32."""
    waveform = np.asarray(waveform)
    if waveform.ndim != 1:
        raise ContractError(f"waveform must be mono 1-D, got shape {waveform.shape}")
    clip_samples = int(round(config.clip_length * config.sample_rate))
    if waveform.size > clip_samples:
        raise ContractError(
            f"waveform longer than clip length: {waveform.size} > {clip_samples} samples"
        )
    wave = np.zeros(clip_samples, dtype=np.float64)
    wave[: waveform.size] = waveform

    win = config.win_samples
    hop = config.hop_samples
    t = config.frames
    pad = win // 2
    padded = np.pad(wave, pad, mode="reflect")
    centers = np.arange(t) * hop + hop // 2
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[centers]
    window = np.hanning(win + 1)[:win]
    spectra = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    fb, _ = mel_filterbank(config)
    mel = spectra @ fb.T
    return np.log(mel + config.log_offset).astype(np.float32)


def load_waveform(path: str | Path, config: FeatureConfig) -> np.ndarray:
    """Read a mono PCM wav; refuses multi-channel or mismatched rates."""
    rate, data = wavfile.read(path)
    if rate != config.sample_rate:
        raise ContractError(
            f"{path}: sample rate {rate} != configured {config.sample_rate} "
            "(no silent resampling)"
        )
    if data.ndim != 1:
        raise ContractError(f"{path}: expected mono audio, got shape {data.shape}")
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    return np.asarray(data, dtype=np.float64)


def clip_features(clip: Clip, recording: Recording, config: FeatureConfig) -> np.ndarray:
    """Features for one clip, from wav audio or a synthetic descriptor."""
    source = recording.audio_source
    frames = int(round(clip.length / config.hop))
    if isinstance(source, SynthDescriptor):
        if source.mel_bins != config.mel_bins or abs(source.hop - config.hop) > 1e-9:
            raise ContractError(
                f"synthetic descriptor geometry ({source.frames}x{source.mel_bins}, "
                f"hop {source.hop}) does not match feature config "
                f"({config.frames}x{config.mel_bins}, hop {config.hop})"
            )
        full = source.render()
        lo = int(round(clip.start / config.hop))
        out = np.zeros((frames, config.mel_bins), dtype=np.float32)
        chunk = full[lo : lo + frames]
        out[: chunk.shape[0]] = chunk
        return out
    wave = load_waveform(source, config)
    lo = int(round(clip.start * config.sample_rate))
    hi = min(int(round((clip.start + clip.length) * config.sample_rate)), wave.size)
    return logmel(wave[lo:hi], config)


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Per-mel-bin z-scoring fitted on training features only."""

    def __init__(self, std_floor: float = 1e-6):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        frames = _stack_frames(X)
        self.mean_ = frames.mean(axis=0)
        self.std_ = np.maximum(frames.std(axis=0), self.std_floor)
        return self

    def transform(self, X):
        if not hasattr(self, "mean_"):
            raise ContractError("normalizer used before fit")
        X = np.asarray(X)
        return ((X - self.mean_) / self.std_).astype(np.float32)

    def save(self, path: str | Path) -> None:
        if not hasattr(self, "mean_"):
            raise ContractError("normalizer used before fit")
        np.savez(path, mean=self.mean_, std=self.std_, std_floor=self.std_floor)

    @classmethod
    def load(cls, path: str | Path) -> "FeatureNormalizer":
        payload = np.load(path)
        norm = cls(std_floor=float(payload["std_floor"]))
        norm.mean_ = payload["mean"]
        norm.std_ = payload["std"]
        return norm

    def state(self) -> dict:
        return {"mean": self.mean_.tolist(), "std": self.std_.tolist(),
                "std_floor": self.std_floor}

    @classmethod
    def from_state(cls, payload: dict) -> "FeatureNormalizer":
        norm = cls(std_floor=payload["std_floor"])
        norm.mean_ = np.asarray(payload["mean"], dtype=np.float64)
        norm.std_ = np.asarray(payload["std"], dtype=np.float64)
        return norm


def _stack_frames(X) -> np.ndarray:
    if isinstance(X, (list, tuple)):
        X = np.concatenate([np.asarray(m) for m in X], axis=0)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(-1, X.shape[-1])
    if X.ndim != 2:
        raise ContractError(f"expected (frames, bins) data, got shape {X.shape}")
    return X


# ---------------------------------------------------------------------------
# On-disk cache: raw little-endian float32 per clip plus one shared header
# ---------------------------------------------------------------------------

CACHE_HEADER = "header.json"


class FeatureCache:
    """Directory of <clip-id>.f32 files tied to one feature config."""

    def __init__(self, directory: str | Path, frames: int, mel_bins: int, config_hash: str):
        self.directory = Path(directory)
        self.frames = frames
        self.mel_bins = mel_bins
        self.config_hash = config_hash

    @classmethod
    def create(cls, directory: str | Path, config: FeatureConfig) -> "FeatureCache":
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cache = cls(directory, config.frames, config.mel_bins, config.hash())
        header = {
            "frames": cache.frames,
            "mel_bins": cache.mel_bins,
            "config_hash": cache.config_hash,
            "dtype": "<f4",
        }
        (directory / CACHE_HEADER).write_text(
            json.dumps(header, indent=2) + "\n", encoding="utf-8"
        )
        return cache

    @classmethod
    def open(cls, directory: str | Path, config: FeatureConfig | None = None) -> "FeatureCache":
        directory = Path(directory)
        header_path = directory / CACHE_HEADER
        if not header_path.is_file():
            raise IntegrityError(f"no feature cache header at {header_path}")
        header = json.loads(header_path.read_text(encoding="utf-8"))
        if config is not None and header["config_hash"] != config.hash():
            raise IntegrityError(
                f"feature cache at {directory} was built with a different "
                f"config (hash {header['config_hash']} != {config.hash()}); rebuild it"
            )
        return cls(directory, header["frames"], header["mel_bins"], header["config_hash"])

    def _path(self, clip_id: str) -> Path:
        return self.directory / f"{clip_id}.f32"

    def write(self, clip_id: str, matrix: np.ndarray) -> None:
        matrix = np.asarray(matrix, dtype="<f4")
        if matrix.shape != (self.frames, self.mel_bins):
            raise ContractError(
                f"feature shape {matrix.shape} != cache shape "
                f"({self.frames}, {self.mel_bins})"
            )
        self._path(clip_id).write_bytes(matrix.tobytes())

    def read(self, clip_id: str) -> np.ndarray:
        path = self._path(clip_id)
        if not path.is_file():
            raise IntegrityError(f"no cached features for clip {clip_id!r}")
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        expected = self.frames * self.mel_bins
        if raw.size != expected:
            raise IntegrityError(
                f"cached features for {clip_id!r} truncated: "
                f"{raw.size} values, expected {expected}"
            )
        return raw.reshape(self.frames, self.mel_bins)

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.f32"))
